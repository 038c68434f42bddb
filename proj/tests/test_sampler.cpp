#include <algorithm>
#include <set>

#include "doctest.h"
#include "langbal/error.hpp"
#include "langbal/sampler.hpp"

using namespace langbal;

namespace {

std::vector<Example> pool(int L, int C, int per_cell) {
  std::vector<Example> out;
  for (int l = 0; l < L; ++l)
    for (int c = 0; c < C; ++c)
      for (int k = 0; k < per_cell; ++k)
        out.push_back({std::to_string(l) + ":" + std::to_string(c) + ":" + std::to_string(k), l, c, {0}});
  return out;
}

std::set<std::string> ids(const std::vector<Example>& xs) {
  std::set<std::string> s;
  for (const auto& x : xs) s.insert(x.id);
  return s;
}

}  // namespace

TEST_CASE("presets") {
  const JointSpec amazon = preset(Preset::amazon_skew, 2, 5);
  for (int c = 0; c < 5; ++c) {
    CHECK(amazon.at(0, c) == doctest::Approx((c + 1) / 15.0 / 2.0).epsilon(1e-12));
    CHECK(amazon.at(1, c) == doctest::Approx((5 - c) / 15.0 / 2.0).epsilon(1e-12));
  }
  // 6.6% / 13.3% / 20% ... of a language's data
  CHECK(amazon.at(0, 0) * 2 == doctest::Approx(0.0667).epsilon(1e-2));

  const JointSpec xnli = preset(Preset::xnli_skew, 2, 3);
  CHECK(xnli.at(0, 0) == doctest::Approx(0.25));
  CHECK(xnli.at(0, 1) == doctest::Approx(1.0 / 6));
  CHECK(xnli.at(0, 2) == doctest::Approx(1.0 / 12));
  for (int c = 0; c < 3; ++c) CHECK(xnli.at(0, c) + xnli.at(1, c) == doctest::Approx(1.0 / 3));

  const JointSpec u = preset(Preset::uniform, 3, 4);
  for (double p : u.probs) CHECK(p == doctest::Approx(1.0 / 12));

  CHECK_THROWS_AS(preset(Preset::xnli_skew, 3, 3), Error);
  CHECK_THROWS_AS(preset(Preset::amazon_skew, 3, 5), Error);
  CHECK_THROWS_AS(preset(Preset::amazon_skew, 2, 4), Error);
  CHECK_THROWS_AS(parse_preset("bogus"), Error);
}

TEST_CASE("make_joint validates entries and marginals") {
  CHECK_THROWS_AS(make_joint({{0.5, 0.5}, {0.0, 0.0}}), Error);
  CHECK_NOTHROW(make_joint({{0.5, 0.5}, {0.0, 0.0}}, false));
  CHECK_THROWS_AS(make_joint({{0.6, -0.1}, {0.25, 0.25}}, false), Error);
  CHECK_THROWS_AS(make_joint({{0.4, 0.4}, {0.4, 0.4}}, false), Error);
  CHECK_THROWS_AS(make_joint({{0.3, 0.2}, {0.2, 0.3}, {0.0}}, false), Error);
}

TEST_CASE("plan_counts") {
  const SubsetPlan u = plan_counts(preset(Preset::uniform, 2, 2), 60);
  for (int v : u.counts.cells) CHECK(v == 15);

  const SubsetPlan x = plan_counts(preset(Preset::xnli_skew, 2, 3), 60);
  CHECK(x.counts.cells == std::vector<int>{15, 10, 5, 5, 10, 15});
  for (int c = 0; c < 3; ++c) CHECK(x.counts.col_sum(c) == 20);

  const SubsetPlan a = plan_counts(preset(Preset::amazon_skew, 2, 5), 30);
  CHECK(a.counts.cells == std::vector<int>{1, 2, 3, 4, 5, 5, 4, 3, 2, 1});

  CHECK_THROWS_AS(plan_counts(preset(Preset::xnli_skew, 2, 3), 5), Error);
  CHECK_THROWS_AS(plan_counts(preset(Preset::xnli_skew, 2, 3), 61), Error);
}

TEST_CASE("plan_counts rows sum to n/L for awkward sizes") {
  const JointSpec a = preset(Preset::amazon_skew, 4, 5);
  for (int n : {20, 44, 100, 1004, 6000}) {
    const SubsetPlan p = plan_counts(a, n);
    CHECK(p.counts.total() == n);
    for (int l = 0; l < 4; ++l) CHECK(p.counts.row_sum(l) == n / 4);
    for (int l = 0; l < 4; ++l)
      for (int c = 0; c < 5; ++c) CHECK(std::abs(p.counts.at(l, c) - n * a.at(l, c)) < 1.0);
  }
}

TEST_CASE("uniform target gives identical subsets") {
  const auto p = pool(2, 3, 30);
  const PairedSubsets s = sample_paired(p, preset(Preset::uniform, 2, 3), 60, 9);
  CHECK(ids(s.balanced) == ids(s.imbalanced));
  CHECK(s.report.overlap == 60);
}

TEST_CASE("xnli_skew n=60 overlaps in exactly 50 examples") {
  const auto p = pool(2, 3, 30);
  const PairedSubsets s = sample_paired(p, preset(Preset::xnli_skew, 2, 3), 60, 1);
  CHECK(s.balanced.size() == 60);
  CHECK(s.imbalanced.size() == 60);
  CHECK(count_cells(s.balanced, 2, 3).cells == std::vector<int>{10, 10, 10, 10, 10, 10});
  CHECK(count_cells(s.imbalanced, 2, 3).cells == std::vector<int>{15, 10, 5, 5, 10, 15});
  const auto a = ids(s.balanced);
  const auto b = ids(s.imbalanced);
  std::vector<std::string> shared;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(shared));
  CHECK(shared.size() == 50);
  CHECK(s.report.overlap == 50);
  CHECK(s.report.max_overlap == 50);
  CHECK(a.size() == 60);
}

TEST_CASE("sampling is deterministic under a fixed seed") {
  const auto p = pool(2, 3, 40);
  const auto j = preset(Preset::xnli_skew, 2, 3);
  const auto a = sample_paired(p, j, 60, 5);
  const auto b = sample_paired(p, j, 60, 5);
  const auto c = sample_paired(p, j, 60, 6);
  CHECK(ids(a.balanced) == ids(b.balanced));
  CHECK(ids(a.imbalanced) == ids(b.imbalanced));
  CHECK(ids(a.imbalanced) != ids(c.imbalanced));
}

TEST_CASE("insufficient pool names the cell") {
  const auto p = pool(2, 3, 12);
  try {
    sample_paired(p, preset(Preset::xnli_skew, 2, 3), 60, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("cell") != std::string::npos);
    CHECK(e.module() == "sampler");
  }
}

TEST_CASE("duplicate pool ids are rejected") {
  auto p = pool(2, 3, 20);
  p.push_back(p.front());
  CHECK_THROWS_AS(sample_paired(p, preset(Preset::uniform, 2, 3), 12, 1), Error);
}

TEST_CASE("split_eval is balanced and disjoint from training") {
  const auto p = pool(2, 3, 40);
  const auto s = sample_paired(p, preset(Preset::xnli_skew, 2, 3), 60, 1);
  auto train_ids = id_set(s.balanced);
  for (const auto& x : s.imbalanced) train_ids.insert(x.id);
  std::vector<Example> rest;
  for (const auto& x : p)
    if (!train_ids.count(x.id)) rest.push_back(x);
  const EvalSplits e = split_eval(rest, train_ids, 2, 3, 12, 24, 2);
  CHECK(count_cells(e.val, 2, 3).cells == std::vector<int>(6, 2));
  CHECK(count_cells(e.test, 2, 3).cells == std::vector<int>(6, 4));
  const auto v = ids(e.val);
  for (const auto& x : e.test) CHECK(!v.count(x.id));
  for (const auto& x : e.test) CHECK(!train_ids.count(x.id));
  CHECK_THROWS_AS(split_eval(p, train_ids, 2, 3, 12, 24, 2), Error);
  CHECK_THROWS_AS(split_eval(rest, train_ids, 2, 3, 7, 24, 2), Error);
}
