#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "langbal/corpus.hpp"
#include "langbal/model.hpp"
#include "langbal/sampler.hpp"

namespace langbal {

// Per-language class weights w[l][c] = n_l / (C * n_{c,l}).
struct WeightTable {
  int n_languages = 0;
  int n_classes = 0;
  std::vector<double> w;

  double at(int l, int c) const { return w[static_cast<std::size_t>(l) * n_classes + c]; }
};

nlohmann::json to_json(const WeightTable& table);

// Throws Error("training") if any cell is empty.
WeightTable compute_weights(const CountTable& counts);

enum class Weighting { none, per_language };

Weighting parse_weighting(std::string_view name);
std::string_view to_string(Weighting weighting);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 0.1;  // decays linearly to 0 over all steps
  Weighting weighting = Weighting::none;
  double mask_entropy_coeff = 0.0;
  std::uint64_t seed = 0;
  // Initialization stream; defaults to `seed`. Arms that should start from
  // the same weights share it.
  std::optional<std::uint64_t> init_seed;
  int validation_every = 1;  // epochs between validation passes
  InitConfig init;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// lr0 * (1 - step / total_steps).
double learning_rate_at(double lr0, long step, long total_steps);

// Sum_c p_c log p_c with p clamped to >= 1e-12 inside the log. Lies in
// [-ln C, 0].
double mask_entropy_term(std::span<const double> probs);

struct LossParts {
  double classification = 0.0;  // batch mean of w * -log p[y]
  double mask_entropy = 0.0;    // unscaled masked-input term
  double total = 0.0;           // classification + lambda * mask_entropy
};

// `weights` may be null (all weights 1). The masked-input term is evaluated
// on `mask_length` mask tokens and skipped when lambda is 0.
LossParts loss(const ModelParams& params, std::span<const Example* const> batch,
               const WeightTable* weights, double lambda, int mask_length);
LossParts loss(const ModelParams& params, std::span<const Example> batch,
               const WeightTable* weights, double lambda, int mask_length);

// Same value as loss(); accumulates d total / d params into `grad`, which
// must have the dims of `params` and is zeroed first.
LossParts loss_and_gradient(const ModelParams& params, std::span<const Example* const> batch,
                            const WeightTable* weights, double lambda, int mask_length,
                            ModelParams& grad);

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  int checked = 0;
};

// Central differences with `step` on `samples` parameters drawn from the
// rows the batch touches plus all dense parameters. Relative error is
// |a - n| / max(|a|, |n|, 1e-6).
GradCheckResult grad_check(const ModelParams& params, std::span<const Example> batch,
                           const WeightTable* weights, double lambda, int samples = 200,
                           std::uint64_t seed = 0, double step = 1e-4);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int selected_epoch = 0;  // 0 = initialization (no validated epoch)
  std::optional<double> selected_val_loss;
  std::optional<double> selected_val_accuracy;
  long total_steps = 0;
  std::optional<WeightTable> weights;
};

nlohmann::json to_json(const TrainReport& report);

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

// Mini-batch SGD over shuffled data; returns the parameters of the validated
// epoch with the lowest validation loss (earliest on ties).
TrainResult train(const std::vector<Example>& data, const std::vector<Example>& val,
                  const Schema& schema, const TrainConfig& config);

// Mean unweighted cross-entropy and accuracy.
struct DatasetScore {
  double loss = 0.0;
  double accuracy = 0.0;
};
DatasetScore score(const ModelParams& params, const std::vector<Example>& data);

int predict(const ModelParams& params, std::span<const TokenId> tokens);

struct Metrics {
  double accuracy = 0.0;
  std::vector<double> language_accuracy;
  CountTable truth;        // examples per (language, true label)
  CountTable predictions;  // examples per (language, predicted label)

  // Percentage of a language's examples predicted as `label`.
  double predicted_percent(int language, int label) const;
};

Metrics evaluate(const ModelParams& params, const std::vector<Example>& test, int n_languages,
                 int n_classes);

nlohmann::json to_json(const Metrics& metrics, const Schema& schema);
// Rows = languages, columns = labels, values = percentages.
std::string prediction_distribution_csv(const Metrics& metrics, const Schema& schema);

// Spearman correlation between the per-language predicted-label frequencies
// and the cells of a training joint table.
double prediction_skew(const Metrics& metrics, const CountTable& training_counts);

}  // namespace langbal
