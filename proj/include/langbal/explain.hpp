#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "langbal/corpus.hpp"
#include "langbal/model.hpp"

namespace langbal {

// Shapley attribution of probs[label] over token positions, with masking as
// the removal operation: sum(values) + base == prediction.
struct ShapExplanation {
  std::vector<double> values;
  double base = 0.0;        // probs[label] on the all-mask input of equal length
  double prediction = 0.0;  // probs[label] on the input
  int label = 0;
  std::string model_tag;
};

inline constexpr int kDefaultExactLimit = 12;
inline constexpr int kMaxExactTokens = 20;

// Subset enumeration over all 2^n coalitions; one explanation per class.
// Throws if n > exact_limit.
std::vector<ShapExplanation> shapley_exact_all(const ModelParams& params,
                                               std::span<const TokenId> tokens,
                                               int exact_limit = kDefaultExactLimit);
ShapExplanation shapley_exact(const ModelParams& params, std::span<const TokenId> tokens,
                              int label, int exact_limit = kDefaultExactLimit);

// Average marginal contribution over seeded uniform permutations. The
// additivity residual is spread evenly over the tokens afterwards.
std::vector<ShapExplanation> shapley_sampled_all(const ModelParams& params,
                                                 std::span<const TokenId> tokens,
                                                 int n_permutations, std::uint64_t seed);
ShapExplanation shapley_sampled(const ModelParams& params, std::span<const TokenId> tokens,
                                int label, int n_permutations, std::uint64_t seed);

// The permutation estimator run over every one of the n! orderings. n <= 10.
ShapExplanation shapley_all_permutations(const ModelParams& params,
                                         std::span<const TokenId> tokens, int label);

enum class ShapCategory { neg, neutral, pos };

std::string_view to_string(ShapCategory category);

struct TokenCategories {
  std::vector<ShapCategory> categories;
  double threshold = 0.01;
};

// pos iff S > threshold, neg iff S < -threshold, neutral otherwise.
TokenCategories categorize(const ShapExplanation& balanced, double threshold = 0.01);

enum class LabelMode { fixed, true_label };

struct ExplainConfig {
  double threshold = 0.01;
  int exact_limit = kDefaultExactLimit;
  int permutations = 2000;  // sampled engine, used above exact_limit
  std::uint64_t seed = 0;
  LabelMode label_mode = LabelMode::fixed;
  std::vector<int> target_labels;  // fixed mode; empty means every label
};

void to_json(nlohmann::json& j, const ExplainConfig& c);
void from_json(const nlohmann::json& j, ExplainConfig& c);

struct CumulativeDiffRow {
  int language = 0;
  int label = 0;
  ShapCategory category = ShapCategory::neutral;
  double mean_cum_diff = 0.0;
  int n_datapoints = 0;
};

struct BaseValueRow {
  int language = 0;
  int label = 0;
  double base_balanced = 0.0;
  double base_imbalanced = 0.0;
  int n_datapoints = 0;
};

struct CumulativeDiffReport {
  std::vector<CumulativeDiffRow> rows;  // by label, language, then neg/neutral/pos
  std::vector<BaseValueRow> base_values;
  double threshold = 0.01;
  // Fractions of explained tokens per balanced-model category.
  double split_neg = 0.0;
  double split_neutral = 0.0;
  double split_pos = 0.0;
  int exact_explanations = 0;
  int sampled_explanations = 0;
  // max over datapoints of |sum of category sums - (dp - db)|
  double max_efficiency_error = 0.0;
  ExplainConfig config;

  const CumulativeDiffRow& row(int language, int label, ShapCategory category) const;
};

// For each datapoint and explained label: categorize tokens by the balanced
// model's Shapley values and sum S_imbal - S_bal per category; then average
// within (language, label) groups. In fixed mode a group holds every
// datapoint of the language; in true_label mode only those with that label.
CumulativeDiffReport cumulative_diff(const ModelParams& balanced, const ModelParams& imbalanced,
                                     const std::vector<Example>& data, int n_languages,
                                     const ExplainConfig& config);

// Columns: language,label,category,mean_cum_diff,n_datapoints
std::string cumulative_diff_csv(const CumulativeDiffReport& report, const Schema& schema);
nlohmann::json cumulative_diff_sidecar(const CumulativeDiffReport& report, const Schema& schema);

}  // namespace langbal
