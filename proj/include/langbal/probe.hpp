#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "langbal/corpus.hpp"
#include "langbal/model.hpp"

namespace langbal {

// Dense row-major matrix.
struct FeatureMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  std::span<const double> row(int i) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(i) * cols, cols);
  }
};

struct ProbeData {
  FeatureMatrix features;   // one pooled vector per example
  std::vector<int> labels;  // language ids
};

ProbeData extract_features(const ModelParams& params, const std::vector<Example>& data);

struct LogRegConfig {
  double l2 = 1.0;
  int max_iters = 1000;
  double tolerance = 1e-6;
};

void to_json(nlohmann::json& j, const LogRegConfig& c);
void from_json(const nlohmann::json& j, LogRegConfig& c);

// Multinomial logistic regression. Weights are class-major
// (n_classes x n_features); the intercept is not regularized.
struct LogRegModel {
  int n_classes = 0;
  int n_features = 0;
  std::vector<double> weights;
  std::vector<double> bias;
  int iterations = 0;
  bool converged = false;

  std::vector<double> predict_proba(std::span<const double> x) const;
  int predict(std::span<const double> x) const;
};

// Minimizes mean cross-entropy + l2 / (2n) * ||W||^2 by full-batch gradient
// descent with backtracking, from zero, until the gradient norm drops below
// `tolerance` or `max_iters` is reached.
LogRegModel fit_logreg(const FeatureMatrix& features, std::span<const int> labels,
                       const LogRegConfig& config = {});

double accuracy(const LogRegModel& model, const FeatureMatrix& features, std::span<const int> labels);

// Fold index per example. Each label's examples are shuffled, then dealt
// round-robin with one counter shared across labels.
std::vector<int> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed);

struct ProbeReport {
  std::vector<double> fold_accuracies;
  double mean_accuracy = 0.0;
  std::vector<int> n_per_language;
  double l2 = 1.0;
  int folds = 5;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const ProbeReport& report);

// Stratified k-fold accuracy of the language probe.
ProbeReport cross_validate(const FeatureMatrix& features, std::span<const int> labels, int k,
                           std::uint64_t seed, const LogRegConfig& config = {});

}  // namespace langbal
