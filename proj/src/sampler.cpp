#include "langbal/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "langbal/error.hpp"
#include "langbal/rng.hpp"

namespace langbal {

namespace {

constexpr double kTolerance = 1e-9;

[[noreturn]] void fail(const std::string& message) { throw Error("sampler", message); }

std::string cell_name(int l, int c) {
  return "(language " + std::to_string(l) + ", label " + std::to_string(c) + ")";
}

// Rounds `quotas` to integers summing to `total` by largest remainder.
std::vector<int> largest_remainder(std::vector<double> quotas, int total) {
  std::vector<int> out(quotas.size());
  std::vector<double> rem(quotas.size());
  int assigned = 0;
  for (std::size_t i = 0; i < quotas.size(); ++i) {
    double q = quotas[i];
    // Snap values that are integers up to rounding error.
    if (std::abs(q - std::round(q)) < kTolerance) q = std::round(q);
    out[i] = static_cast<int>(std::floor(q));
    rem[i] = q - out[i];
    assigned += out[i];
  }
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) {
    ++out[order[k % order.size()]];
  }
  return out;
}

std::uint64_t cell_stream(std::uint64_t seed, std::string_view purpose, int l, int c) {
  return derive_seed(derive_seed(seed, purpose), static_cast<std::uint64_t>(l) * 1000003u + c);
}

// Pool indices grouped per cell, in pool order.
std::vector<std::vector<std::size_t>> group_cells(const std::vector<Example>& pool, int L,
                                                  int C) {
  std::vector<std::vector<std::size_t>> cells(static_cast<std::size_t>(L) * C);
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const Example& ex = pool[i];
    if (ex.language < 0 || ex.language >= L || ex.label < 0 || ex.label >= C) {
      fail("example \"" + ex.id + "\" lies outside the " + std::to_string(L) + "x" +
           std::to_string(C) + " table");
    }
    if (!ids.insert(ex.id).second) fail("duplicate id \"" + ex.id + "\" in pool");
    cells[static_cast<std::size_t>(ex.language) * C + ex.label].push_back(i);
  }
  return cells;
}

}  // namespace

int CountTable::row_sum(int l) const {
  int s = 0;
  for (int c = 0; c < n_classes; ++c) s += at(l, c);
  return s;
}

int CountTable::col_sum(int c) const {
  int s = 0;
  for (int l = 0; l < n_languages; ++l) s += at(l, c);
  return s;
}

int CountTable::total() const { return std::accumulate(cells.begin(), cells.end(), 0); }

CountTable count_cells(const std::vector<Example>& examples, int L, int C) {
  CountTable t(L, C);
  for (const Example& ex : examples) {
    if (ex.language < 0 || ex.language >= L || ex.label < 0 || ex.label >= C) {
      fail("example \"" + ex.id + "\" lies outside the count table");
    }
    ++t.at(ex.language, ex.label);
  }
  return t;
}

nlohmann::json to_json(const CountTable& table) {
  auto rows = nlohmann::json::array();
  for (int l = 0; l < table.n_languages; ++l) {
    auto row = nlohmann::json::array();
    for (int c = 0; c < table.n_classes; ++c) row.push_back(table.at(l, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

void JointSpec::validate() const {
  if (n_languages < 1 || n_classes < 1) fail("joint table must be non-empty");
  if (probs.size() != static_cast<std::size_t>(n_languages) * n_classes) {
    fail("joint table has the wrong number of entries");
  }
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) fail("joint table entries must be finite and >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > kTolerance) fail("joint table must sum to 1");
  if (!uniform_marginals) return;
  for (int l = 0; l < n_languages; ++l) {
    double row = 0.0;
    for (int c = 0; c < n_classes; ++c) row += at(l, c);
    if (std::abs(row - 1.0 / n_languages) > kTolerance) {
      fail("language marginal is not uniform for language " + std::to_string(l));
    }
  }
  for (int c = 0; c < n_classes; ++c) {
    double col = 0.0;
    for (int l = 0; l < n_languages; ++l) col += at(l, c);
    if (std::abs(col - 1.0 / n_classes) > kTolerance) {
      fail("label marginal is not uniform for label " + std::to_string(c));
    }
  }
}

JointSpec make_joint(const std::vector<std::vector<double>>& rows, bool uniform_marginals) {
  JointSpec spec;
  spec.n_languages = static_cast<int>(rows.size());
  spec.n_classes = rows.empty() ? 0 : static_cast<int>(rows.front().size());
  spec.uniform_marginals = uniform_marginals;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != spec.n_classes) fail("ragged joint table");
    spec.probs.insert(spec.probs.end(), row.begin(), row.end());
  }
  spec.validate();
  return spec;
}

Preset parse_preset(std::string_view name) {
  if (name == "amazon_skew") return Preset::amazon_skew;
  if (name == "xnli_skew") return Preset::xnli_skew;
  if (name == "uniform") return Preset::uniform;
  fail("unknown preset \"" + std::string(name) + "\"");
}

std::string_view to_string(Preset p) {
  switch (p) {
    case Preset::amazon_skew: return "amazon_skew";
    case Preset::xnli_skew: return "xnli_skew";
    case Preset::uniform: return "uniform";
  }
  return "uniform";
}

JointSpec preset(Preset p, int L, int C) {
  if (L < 1 || C < 1) fail("preset needs positive dimensions");
  std::vector<std::vector<double>> rows(L, std::vector<double>(C));
  switch (p) {
    case Preset::uniform:
      for (auto& row : rows) std::fill(row.begin(), row.end(), 1.0 / (L * C));
      break;
    case Preset::amazon_skew:
      if (C != 5 || L % 2 != 0) fail("amazon_skew needs C = 5 and an even number of languages");
      for (int l = 0; l < L; ++l) {
        for (int c = 0; c < C; ++c) {
          const int k = l < L / 2 ? c + 1 : C - c;
          rows[l][c] = k / 15.0 / L;
        }
      }
      break;
    case Preset::xnli_skew:
      if (L != 2 || C != 3) fail("xnli_skew needs L = 2 and C = 3");
      rows = {{3.0 / 12, 2.0 / 12, 1.0 / 12}, {1.0 / 12, 2.0 / 12, 3.0 / 12}};
      break;
  }
  return make_joint(rows, true);
}

nlohmann::json to_json(const SubsetPlan& plan) {
  return {{"counts", to_json(plan.counts)}, {"total", plan.total}, {"seed", plan.seed}};
}

SubsetPlan plan_counts(const JointSpec& spec, int n) {
  spec.validate();
  const int L = spec.n_languages;
  const int C = spec.n_classes;
  if (n < L * C) fail("subset size " + std::to_string(n) + " is below L*C");

  std::vector<double> row_mass(L, 0.0);
  for (int l = 0; l < L; ++l) {
    for (int c = 0; c < C; ++c) row_mass[l] += spec.at(l, c);
  }
  std::vector<int> row_totals;
  if (spec.uniform_marginals) {
    if (n % L != 0) {
      fail("subset size " + std::to_string(n) + " is not divisible by " + std::to_string(L) +
           " languages");
    }
    row_totals.assign(L, n / L);
  } else {
    std::vector<double> quotas(L);
    for (int l = 0; l < L; ++l) quotas[l] = n * row_mass[l];
    row_totals = largest_remainder(quotas, n);
  }

  SubsetPlan plan{CountTable(L, C), n, 0};
  for (int l = 0; l < L; ++l) {
    if (row_mass[l] <= 0.0) continue;
    std::vector<double> quotas(C);
    for (int c = 0; c < C; ++c) quotas[c] = row_totals[l] * spec.at(l, c) / row_mass[l];
    const auto row = largest_remainder(quotas, row_totals[l]);
    for (int c = 0; c < C; ++c) plan.counts.at(l, c) = row[c];
  }
  return plan;
}

nlohmann::json to_json(const OverlapReport& r) {
  return {{"balanced", to_json(r.balanced)},
          {"imbalanced", to_json(r.imbalanced)},
          {"overlap", r.overlap},
          {"max_overlap", r.max_overlap},
          {"seed", r.seed}};
}

PairedSubsets sample_paired(const std::vector<Example>& pool, const JointSpec& imbalanced,
                            int n, std::uint64_t seed) {
  const int L = imbalanced.n_languages;
  const int C = imbalanced.n_classes;
  SubsetPlan bal = plan_counts(preset(Preset::uniform, L, C), n);
  SubsetPlan imb = plan_counts(imbalanced, n);
  bal.seed = imb.seed = seed;
  const auto cells = group_cells(pool, L, C);

  PairedSubsets out;
  out.balanced.reserve(n);
  out.imbalanced.reserve(n);
  for (int l = 0; l < L; ++l) {
    for (int c = 0; c < C; ++c) {
      const int nb = bal.counts.at(l, c);
      const int ni = imb.counts.at(l, c);
      const int shared = std::min(nb, ni);
      std::vector<std::size_t> order = cells[static_cast<std::size_t>(l) * C + c];
      const int needed = std::max(nb, ni);
      if (static_cast<int>(order.size()) < needed) {
        fail("insufficient pool for cell " + cell_name(l, c) + ": need " +
             std::to_string(needed) + ", have " + std::to_string(order.size()));
      }
      Rng rng(cell_stream(seed, "sampler/paired", l, c));
      shuffle(order, rng);
      // Draw order: shared block, then balanced-only, then imbalanced-only.
      std::size_t next = 0;
      for (int k = 0; k < shared; ++k, ++next) {
        out.balanced.push_back(pool[order[next]]);
        out.imbalanced.push_back(pool[order[next]]);
      }
      for (int k = shared; k < nb; ++k, ++next) out.balanced.push_back(pool[order[next]]);
      for (int k = shared; k < ni; ++k, ++next) out.imbalanced.push_back(pool[order[next]]);
      out.report.max_overlap += shared;
    }
  }

  const auto bal_ids = id_set(out.balanced);
  for (const Example& ex : out.imbalanced) out.report.overlap += bal_ids.count(ex.id);
  out.report.balanced = std::move(bal);
  out.report.imbalanced = std::move(imb);
  out.report.seed = seed;
  return out;
}

EvalSplits split_eval(const std::vector<Example>& pool,
                      const std::unordered_set<std::string>& training_ids, int L, int C,
                      int n_val, int n_test, std::uint64_t seed) {
  const int cells_count = L * C;
  if (n_val < 0 || n_test < 0) fail("split sizes must be non-negative");
  if (n_val % cells_count != 0) {
    fail("validation size " + std::to_string(n_val) + " is not divisible by L*C = " +
         std::to_string(cells_count));
  }
  if (n_test % cells_count != 0) {
    fail("test size " + std::to_string(n_test) + " is not divisible by L*C = " +
         std::to_string(cells_count));
  }
  for (const Example& ex : pool) {
    if (training_ids.count(ex.id)) {
      fail("evaluation pool contains training id \"" + ex.id + "\"");
    }
  }
  const auto cells = group_cells(pool, L, C);
  const int val_per_cell = n_val / cells_count;
  const int test_per_cell = n_test / cells_count;

  EvalSplits out;
  for (int l = 0; l < L; ++l) {
    for (int c = 0; c < C; ++c) {
      std::vector<std::size_t> order = cells[static_cast<std::size_t>(l) * C + c];
      if (static_cast<int>(order.size()) < val_per_cell + test_per_cell) {
        fail("insufficient pool for cell " + cell_name(l, c) + ": need " +
             std::to_string(val_per_cell + test_per_cell) + ", have " +
             std::to_string(order.size()));
      }
      Rng rng(cell_stream(seed, "sampler/eval", l, c));
      shuffle(order, rng);
      std::size_t next = 0;
      for (int k = 0; k < val_per_cell; ++k) out.val.push_back(pool[order[next++]]);
      for (int k = 0; k < test_per_cell; ++k) out.test.push_back(pool[order[next++]]);
    }
  }
  return out;
}

std::unordered_set<std::string> id_set(const std::vector<Example>& examples) {
  std::unordered_set<std::string> ids;
  ids.reserve(examples.size());
  for (const Example& ex : examples) ids.insert(ex.id);
  return ids;
}

}  // namespace langbal
