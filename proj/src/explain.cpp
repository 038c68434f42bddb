#include "langbal/explain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include "langbal/error.hpp"
#include "langbal/rng.hpp"

namespace langbal {

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("explain", message); }

// Evaluates coalitions A of token positions: positions outside A hold the
// mask token. Coalitions are built incrementally from per-position deltas
// E[t_i] - E[mask].
class CoalitionGame {
 public:
  CoalitionGame(const ModelParams& params, std::span<const TokenId> tokens)
      : params_(params), n_(tokens.size()), embed_(params.dims().embed) {
    if (tokens.empty()) fail("cannot explain an empty input");
    for (TokenId t : tokens) {
      if (t >= static_cast<TokenId>(params.dims().vocab)) {
        fail("token id " + std::to_string(t) + " out of range");
      }
    }
    const auto mask = params.embedding_row(params.mask_id());
    mask_.assign(mask.begin(), mask.end());
    deltas_.resize(n_ * embed_);
    for (std::size_t i = 0; i < n_; ++i) {
      const auto row = params.embedding_row(tokens[i]);
      for (int k = 0; k < embed_; ++k) deltas_[i * embed_ + k] = row[k] - mask_[k];
    }
    sum_.assign(embed_, 0.0);
    mean_.assign(embed_, 0.0);
  }

  std::size_t size() const { return n_; }
  void reset() { std::fill(sum_.begin(), sum_.end(), 0.0); }
  void add(std::size_t i) { step(i, 1.0); }
  void remove(std::size_t i) { step(i, -1.0); }

  // Class probabilities for the current coalition.
  std::vector<double> value() {
    const double inv = 1.0 / static_cast<double>(n_);
    for (int k = 0; k < embed_; ++k) mean_[k] = mask_[k] + sum_[k] * inv;
    return forward_from_mean(params_, mean_).probs;
  }

 private:
  void step(std::size_t i, double sign) {
    for (int k = 0; k < embed_; ++k) sum_[k] += sign * deltas_[i * embed_ + k];
  }

  const ModelParams& params_;
  std::size_t n_;
  int embed_;
  std::vector<double> mask_;
  std::vector<double> deltas_;
  std::vector<double> sum_;
  std::vector<double> mean_;
};

std::vector<ShapExplanation> blank_explanations(const ModelParams& params,
                                                std::span<const TokenId> tokens) {
  const int C = params.dims().classes;
  const auto full = forward(params, tokens).probs;
  const std::vector<TokenId> masked(tokens.size(), params.mask_id());
  const auto base = forward(params, masked).probs;
  std::vector<ShapExplanation> out(C);
  for (int c = 0; c < C; ++c) {
    out[c].values.assign(tokens.size(), 0.0);
    out[c].base = base[c];
    out[c].prediction = full[c];
    out[c].label = c;
  }
  return out;
}

// Runs the permutation estimator over whatever orderings `next` yields.
template <typename NextPermutation>
std::vector<ShapExplanation> permutation_engine(const ModelParams& params,
                                                std::span<const TokenId> tokens,
                                                NextPermutation&& next) {
  CoalitionGame game(params, tokens);
  auto out = blank_explanations(params, tokens);
  const std::size_t n = tokens.size();
  const int C = params.dims().classes;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  game.reset();
  const std::vector<double> empty = game.value();
  long count = 0;
  while (next(order)) {
    game.reset();
    std::vector<double> prev = empty;
    for (std::size_t i : order) {
      game.add(i);
      std::vector<double> cur = game.value();
      for (int c = 0; c < C; ++c) out[c].values[i] += cur[c] - prev[c];
      prev = std::move(cur);
    }
    ++count;
  }
  if (count == 0) fail("no permutations evaluated");
  for (auto& e : out) {
    for (double& v : e.values) v /= static_cast<double>(count);
    const double total = std::accumulate(e.values.begin(), e.values.end(), 0.0);
    const double residual = (e.prediction - e.base) - total;
    for (double& v : e.values) v += residual / static_cast<double>(n);
  }
  return out;
}

void check_label(const ModelParams& params, int label) {
  if (label < 0 || label >= params.dims().classes) {
    fail("label " + std::to_string(label) + " out of range");
  }
}

void check_compatible(const ModelParams& a, const ModelParams& b) {
  if (!(a.dims() == b.dims()) || a.mask_id() != b.mask_id()) {
    fail("vocabulary mismatch: models have different dimensions or mask ids");
  }
}

}  // namespace

std::vector<ShapExplanation> shapley_exact_all(const ModelParams& params,
                                               std::span<const TokenId> tokens, int exact_limit) {
  const int limit = std::min(exact_limit, kMaxExactTokens);
  if (static_cast<int>(tokens.size()) > limit) {
    fail("input of length " + std::to_string(tokens.size()) + " exceeds the exact limit of " +
         std::to_string(limit) + "; use shapley_sampled");
  }
  CoalitionGame game(params, tokens);
  auto out = blank_explanations(params, tokens);
  const int n = static_cast<int>(tokens.size());
  const int C = params.dims().classes;
  const std::uint32_t subsets = 1u << n;

  // v[mask * C + c], visiting masks in Gray-code order so each step flips
  // one position.
  std::vector<double> v(static_cast<std::size_t>(subsets) * C);
  game.reset();
  std::uint32_t mask = 0;
  for (std::uint32_t i = 0; i < subsets; ++i) {
    if (i > 0) {
      const int bit = std::countr_zero(i);
      const std::uint32_t next = mask ^ (1u << bit);
      if (next & (1u << bit)) {
        game.add(bit);
      } else {
        game.remove(bit);
      }
      mask = next;
    }
    const auto probs = game.value();
    std::copy(probs.begin(), probs.end(), v.begin() + static_cast<std::size_t>(mask) * C);
  }

  // weight(s) = s! (n-1-s)! / n! = 1 / (n * binom(n-1, s))
  std::vector<double> weight(n);
  double binom = 1.0;
  for (int s = 0; s < n; ++s) {
    weight[s] = 1.0 / (n * binom);
    binom = binom * (n - 1 - s) / (s + 1);
  }
  for (std::uint32_t m = 0; m < subsets; ++m) {
    const double w = weight[std::popcount(m)];
    const double* without = v.data() + static_cast<std::size_t>(m) * C;
    for (int i = 0; i < n; ++i) {
      if (m & (1u << i)) continue;
      const double* with = v.data() + static_cast<std::size_t>(m | (1u << i)) * C;
      for (int c = 0; c < C; ++c) out[c].values[i] += w * (with[c] - without[c]);
    }
  }
  return out;
}

ShapExplanation shapley_exact(const ModelParams& params, std::span<const TokenId> tokens,
                              int label, int exact_limit) {
  check_label(params, label);
  return std::move(shapley_exact_all(params, tokens, exact_limit)[label]);
}

std::vector<ShapExplanation> shapley_sampled_all(const ModelParams& params,
                                                 std::span<const TokenId> tokens,
                                                 int n_permutations, std::uint64_t seed) {
  if (n_permutations < 1) fail("need at least one permutation");
  Rng rng(derive_seed(seed, "shapley/permutations"));
  int remaining = n_permutations;
  return permutation_engine(params, tokens, [&](std::vector<std::size_t>& order) {
    if (remaining-- == 0) return false;
    shuffle(order, rng);
    return true;
  });
}

ShapExplanation shapley_sampled(const ModelParams& params, std::span<const TokenId> tokens,
                                int label, int n_permutations, std::uint64_t seed) {
  check_label(params, label);
  return std::move(shapley_sampled_all(params, tokens, n_permutations, seed)[label]);
}

ShapExplanation shapley_all_permutations(const ModelParams& params,
                                         std::span<const TokenId> tokens, int label) {
  check_label(params, label);
  if (tokens.size() > 10) fail("full permutation enumeration is limited to 10 tokens");
  bool first = true;
  auto all = permutation_engine(params, tokens, [&](std::vector<std::size_t>& order) {
    if (first) {
      first = false;
      return true;
    }
    return std::next_permutation(order.begin(), order.end());
  });
  return std::move(all[label]);
}

std::string_view to_string(ShapCategory category) {
  switch (category) {
    case ShapCategory::neg: return "neg";
    case ShapCategory::neutral: return "neutral";
    case ShapCategory::pos: return "pos";
  }
  return "neutral";
}

TokenCategories categorize(const ShapExplanation& balanced, double threshold) {
  if (!(threshold > 0.0)) fail("threshold must be positive");
  TokenCategories out{{}, threshold};
  out.categories.reserve(balanced.values.size());
  for (double s : balanced.values) {
    out.categories.push_back(s > threshold    ? ShapCategory::pos
                             : s < -threshold ? ShapCategory::neg
                                              : ShapCategory::neutral);
  }
  return out;
}

void to_json(nlohmann::json& j, const ExplainConfig& c) {
  j = nlohmann::json{{"threshold", c.threshold},
                     {"exact_limit", c.exact_limit},
                     {"permutations", c.permutations},
                     {"seed", c.seed},
                     {"label_mode", c.label_mode == LabelMode::fixed ? "fixed" : "true_label"},
                     {"target_labels", c.target_labels}};
}

void from_json(const nlohmann::json& j, ExplainConfig& c) {
  ExplainConfig d;
  c.threshold = j.value("threshold", d.threshold);
  c.exact_limit = j.value("exact_limit", d.exact_limit);
  c.permutations = j.value("permutations", d.permutations);
  c.seed = j.value("seed", d.seed);
  const std::string mode = j.value("label_mode", std::string("fixed"));
  if (mode == "fixed") {
    c.label_mode = LabelMode::fixed;
  } else if (mode == "true_label") {
    c.label_mode = LabelMode::true_label;
  } else {
    fail("unknown label_mode \"" + mode + "\"");
  }
  c.target_labels = j.value("target_labels", d.target_labels);
}

const CumulativeDiffRow& CumulativeDiffReport::row(int language, int label,
                                                   ShapCategory category) const {
  for (const auto& r : rows) {
    if (r.language == language && r.label == label && r.category == category) return r;
  }
  fail("no report row for language " + std::to_string(language) + ", label " +
       std::to_string(label));
}

CumulativeDiffReport cumulative_diff(const ModelParams& balanced, const ModelParams& imbalanced,
                                     const std::vector<Example>& data, int n_languages,
                                     const ExplainConfig& config) {
  check_compatible(balanced, imbalanced);
  if (!(config.threshold > 0.0)) fail("threshold must be positive");
  const int C = balanced.dims().classes;
  std::vector<int> labels = config.target_labels;
  if (labels.empty()) {
    labels.resize(C);
    std::iota(labels.begin(), labels.end(), 0);
  }
  for (int y : labels) check_label(balanced, y);

  // Accumulators indexed [language][label][category].
  const std::size_t groups = static_cast<std::size_t>(n_languages) * C;
  std::vector<double> sums(groups * 3, 0.0);
  std::vector<double> base_bal(groups, 0.0), base_imb(groups, 0.0);
  std::vector<int> counts(groups, 0);
  long category_tokens[3] = {0, 0, 0};

  CumulativeDiffReport report;
  report.threshold = config.threshold;
  report.config = config;

  for (std::size_t idx = 0; idx < data.size(); ++idx) {
    const Example& ex = data[idx];
    if (ex.language < 0 || ex.language >= n_languages) {
      fail("example \"" + ex.id + "\" has language outside [0, " + std::to_string(n_languages) + ")");
    }
    std::vector<int> explain_labels;
    if (config.label_mode == LabelMode::fixed) {
      explain_labels = labels;
    } else if (std::find(labels.begin(), labels.end(), ex.label) != labels.end()) {
      explain_labels = {ex.label};
    }
    if (explain_labels.empty()) continue;

    std::vector<ShapExplanation> bal, imb;
    if (static_cast<int>(ex.tokens.size()) <= std::min(config.exact_limit, kMaxExactTokens)) {
      bal = shapley_exact_all(balanced, ex.tokens, config.exact_limit);
      imb = shapley_exact_all(imbalanced, ex.tokens, config.exact_limit);
      report.exact_explanations += 2;
    } else {
      const std::uint64_t seed = derive_seed(config.seed, static_cast<std::uint64_t>(idx));
      bal = shapley_sampled_all(balanced, ex.tokens, config.permutations, seed);
      imb = shapley_sampled_all(imbalanced, ex.tokens, config.permutations, seed);
      report.sampled_explanations += 2;
    }

    for (int y : explain_labels) {
      const TokenCategories cats = categorize(bal[y], config.threshold);
      double per_category[3] = {0.0, 0.0, 0.0};
      for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
        const int k = static_cast<int>(cats.categories[i]);
        per_category[k] += imb[y].values[i] - bal[y].values[i];
        ++category_tokens[k];
      }
      const double expected = (imb[y].prediction - bal[y].prediction) - (imb[y].base - bal[y].base);
      const double got = per_category[0] + per_category[1] + per_category[2];
      report.max_efficiency_error = std::max(report.max_efficiency_error, std::abs(got - expected));

      const std::size_t g = static_cast<std::size_t>(ex.language) * C + y;
      for (int k = 0; k < 3; ++k) sums[g * 3 + k] += per_category[k];
      base_bal[g] += bal[y].base;
      base_imb[g] += imb[y].base;
      ++counts[g];
    }
  }

  const double total_tokens =
      static_cast<double>(category_tokens[0] + category_tokens[1] + category_tokens[2]);
  if (total_tokens > 0) {
    report.split_neg = category_tokens[0] / total_tokens;
    report.split_neutral = category_tokens[1] / total_tokens;
    report.split_pos = category_tokens[2] / total_tokens;
  }
  for (int y : labels) {
    for (int l = 0; l < n_languages; ++l) {
      const std::size_t g = static_cast<std::size_t>(l) * C + y;
      const int n = counts[g];
      for (int k = 0; k < 3; ++k) {
        report.rows.push_back({l, y, static_cast<ShapCategory>(k), n ? sums[g * 3 + k] / n : 0.0, n});
      }
      report.base_values.push_back(
          {l, y, n ? base_bal[g] / n : 0.0, n ? base_imb[g] / n : 0.0, n});
    }
  }
  return report;
}

std::string cumulative_diff_csv(const CumulativeDiffReport& report, const Schema& schema) {
  std::ostringstream out;
  out.precision(10);
  out << "language,label,category,mean_cum_diff,n_datapoints\n";
  for (const auto& r : report.rows) {
    out << schema.languages.at(r.language) << ',' << schema.labels.at(r.label) << ','
        << to_string(r.category) << ',' << r.mean_cum_diff << ',' << r.n_datapoints << '\n';
  }
  return out.str();
}

nlohmann::json cumulative_diff_sidecar(const CumulativeDiffReport& report, const Schema& schema) {
  nlohmann::json j;
  j["threshold"] = report.threshold;
  j["engine"] = report.config;
  j["split"] = {{"neg", report.split_neg}, {"neutral", report.split_neutral}, {"pos", report.split_pos}};
  j["explanations"] = {{"exact", report.exact_explanations}, {"sampled", report.sampled_explanations}};
  j["max_efficiency_error"] = report.max_efficiency_error;
  auto bases = nlohmann::json::array();
  for (const auto& b : report.base_values) {
    bases.push_back({{"language", schema.languages.at(b.language)},
                     {"label", schema.labels.at(b.label)},
                     {"base_balanced", b.base_balanced},
                     {"base_imbalanced", b.base_imbalanced},
                     {"n_datapoints", b.n_datapoints}});
  }
  j["base_values"] = std::move(bases);
  return j;
}

}  // namespace langbal
