#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "langbal/corpus.hpp"

namespace langbal {

// L x C table of integers, row-major by language.
struct CountTable {
  int n_languages = 0;
  int n_classes = 0;
  std::vector<int> cells;

  CountTable() = default;
  CountTable(int languages, int classes)
      : n_languages(languages), n_classes(classes),
        cells(static_cast<std::size_t>(languages) * classes, 0) {}

  int& at(int l, int c) { return cells[static_cast<std::size_t>(l) * n_classes + c]; }
  int at(int l, int c) const { return cells[static_cast<std::size_t>(l) * n_classes + c]; }
  int row_sum(int l) const;
  int col_sum(int c) const;
  int total() const;

  bool operator==(const CountTable&) const = default;
};

CountTable count_cells(const std::vector<Example>& examples, int n_languages, int n_classes);
nlohmann::json to_json(const CountTable& table);

// Joint distribution over (language, label). With `uniform_marginals` set,
// every row must sum to 1/L and every column to 1/C.
struct JointSpec {
  int n_languages = 0;
  int n_classes = 0;
  std::vector<double> probs;
  bool uniform_marginals = true;

  double at(int l, int c) const { return probs[static_cast<std::size_t>(l) * n_classes + c]; }
  void validate() const;
};

JointSpec make_joint(const std::vector<std::vector<double>>& rows,
                     bool uniform_marginals = true);

enum class Preset { amazon_skew, xnli_skew, uniform };

Preset parse_preset(std::string_view name);
std::string_view to_string(Preset preset);

// amazon_skew: C = 5 and even L; the first half of the languages get label
// fractions (1,2,3,4,5)/15, the second half the reverse.
// xnli_skew: L = 2, C = 3; (3,2,1)/6 for language 0 and (1,2,3)/6 for 1.
// uniform: 1/(L*C) everywhere.
JointSpec preset(Preset preset, int n_languages, int n_classes);

struct SubsetPlan {
  CountTable counts;
  int total = 0;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const SubsetPlan& plan);

// Integer counts approximating n * probs. Row totals are fixed first (exactly
// n / L under uniform marginals), then each row is rounded by largest
// remainder with ties going to the lower label.
SubsetPlan plan_counts(const JointSpec& spec, int n);

struct OverlapReport {
  SubsetPlan balanced;
  SubsetPlan imbalanced;
  int overlap = 0;      // |ids(balanced) ∩ ids(imbalanced)|
  int max_overlap = 0;  // sum over cells of min(n_bal, n_imbal)
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const OverlapReport& report);

struct PairedSubsets {
  std::vector<Example> balanced;
  std::vector<Example> imbalanced;
  OverlapReport report;
};

// Draws a uniform-joint subset and a `imbalanced`-joint subset of size n
// that share min(n_bal, n_imbal) examples in every cell. Each cell uses its
// own derived random stream.
PairedSubsets sample_paired(const std::vector<Example>& pool, const JointSpec& imbalanced,
                            int n, std::uint64_t seed);

struct EvalSplits {
  std::vector<Example> val;
  std::vector<Example> test;
};

// Balanced validation and test splits. `pool` must not contain any id from
// `training_ids`; both sizes must be multiples of L * C.
EvalSplits split_eval(const std::vector<Example>& pool,
                      const std::unordered_set<std::string>& training_ids, int n_languages,
                      int n_classes, int n_val, int n_test, std::uint64_t seed);

std::unordered_set<std::string> id_set(const std::vector<Example>& examples);

}  // namespace langbal
