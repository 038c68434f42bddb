#include <cmath>
#include <random>

#include "doctest.h"
#include "langbal/error.hpp"
#include "langbal/training.hpp"
#include "support.hpp"

using namespace langbal;

namespace {

CountTable table(int L, int C, std::vector<int> cells) {
  CountTable t(L, C);
  t.cells = std::move(cells);
  return t;
}

std::vector<Example> random_batch(int n, int vocab, int L, int C, std::mt19937_64& gen) {
  std::vector<Example> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({"e" + std::to_string(i), static_cast<int>(gen() % L), static_cast<int>(gen() % C),
                   support::random_tokens(1 + static_cast<int>(gen() % 8), vocab, gen)});
  }
  return out;
}

CorpusSpec separable_spec(std::uint64_t seed) {
  CorpusSpec s;
  s.signal_rate = 1.0;
  s.noise_rate = 0.0;
  s.min_tokens = 4;
  s.max_tokens = 8;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("per-language weights for the presets") {
  const CountTable amazon = plan_counts(preset(Preset::amazon_skew, 2, 5), 30).counts;
  const WeightTable wa = compute_weights(amazon);
  const double expect[5] = {3.0, 1.5, 1.0, 0.75, 0.6};
  for (int c = 0; c < 5; ++c) {
    CHECK(std::abs(wa.at(0, c) - expect[c]) < 1e-9);
    CHECK(std::abs(wa.at(1, 4 - c) - expect[c]) < 1e-9);
  }
  const WeightTable wx = compute_weights(table(2, 3, {15, 10, 5, 5, 10, 15}));
  CHECK(std::abs(wx.at(0, 0) - 2.0 / 3.0) < 1e-9);
  CHECK(std::abs(wx.at(0, 1) - 1.0) < 1e-9);
  CHECK(std::abs(wx.at(0, 2) - 2.0) < 1e-9);
  CHECK(std::abs(wx.at(1, 0) - 2.0) < 1e-9);

  const WeightTable wu = compute_weights(table(3, 4, std::vector<int>(12, 7)));
  for (double w : wu.w) CHECK(w == 1.0);
}

TEST_CASE("weights preserve per-language mass") {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int L = 2 + trial % 3, C = 2 + trial % 4;
    CountTable t(L, C);
    for (int& v : t.cells) v = 1 + static_cast<int>(gen() % 50);
    const WeightTable w = compute_weights(t);
    for (int l = 0; l < L; ++l) {
      double mass = 0.0;
      for (int c = 0; c < C; ++c) mass += t.at(l, c) * w.at(l, c);
      CHECK(std::abs(mass - t.row_sum(l)) < 1e-9);
    }
  }
  CHECK_THROWS_AS(compute_weights(table(2, 2, {1, 0, 1, 1})), Error);
}

TEST_CASE("weighted imbalanced loss equals unweighted balanced loss on a toy case") {
  // One fixed token sequence per cell, so every example of a cell has the same loss.
  const ModelParams p = support::random_model(12, 4, 4, 3, 21);
  auto cell_tokens = [](int l, int c) { return std::vector<TokenId>{TokenId(l * 3 + c), TokenId(6 + c)}; };
  auto build = [&](const CountTable& counts) {
    std::vector<Example> out;
    for (int l = 0; l < 2; ++l)
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < counts.at(l, c); ++k) out.push_back({"x", l, c, cell_tokens(l, c)});
    return out;
  };
  const CountTable imb = table(2, 3, {15, 10, 5, 5, 10, 15});
  const CountTable bal = table(2, 3, std::vector<int>(6, 10));
  const WeightTable w = compute_weights(imb);
  const double weighted = loss(p, build(imb), &w, 0.0, 1).total;
  const double plain = loss(p, build(bal), nullptr, 0.0, 1).total;
  CHECK(weighted == doctest::Approx(plain).epsilon(1e-12));
}

TEST_CASE("loss value matches an explicit sum") {
  std::mt19937_64 gen(5);
  const ModelParams p = support::random_model(15, 5, 6, 3, 22);
  const auto batch = random_batch(9, 15, 2, 3, gen);
  const WeightTable w = compute_weights(table(2, 3, {1, 2, 3, 4, 5, 6}));
  double expect = 0.0;
  for (const Example& ex : batch) expect -= w.at(ex.language, ex.label) * std::log(forward(p, ex.tokens).probs[ex.label]);
  expect /= batch.size();
  const std::vector<TokenId> mask(3, p.mask_id());
  double lm = 0.0;
  for (double q : forward(p, mask).probs) lm += q * std::log(q);
  const LossParts parts = loss(p, batch, &w, 0.7, 3);
  CHECK(parts.classification == doctest::Approx(expect).epsilon(1e-12));
  CHECK(parts.mask_entropy == doctest::Approx(lm).epsilon(1e-12));
  CHECK(parts.total == doctest::Approx(expect + 0.7 * lm).epsilon(1e-12));
}

TEST_CASE("uniform output: loss is ln C and the mask term is -ln C") {
  ModelParams p = support::random_model(10, 4, 4, 3, 23);
  std::fill(p.output_w().begin(), p.output_w().end(), 0.0);
  std::fill(p.output_b().begin(), p.output_b().end(), 0.0);
  std::mt19937_64 gen(6);
  const auto batch = random_batch(5, 10, 2, 3, gen);
  CHECK(loss(p, batch, nullptr, 0.0, 1).total == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  const LossParts parts = loss(p, batch, nullptr, 1.0, 4);
  CHECK(std::abs(parts.mask_entropy - (-1.0986)) < 1e-4);
  CHECK(std::abs(parts.mask_entropy + std::log(3.0)) < 1e-12);
}

TEST_CASE("mask term bounds") {
  const std::vector<double> uniform3 = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  CHECK(std::abs(mask_entropy_term(uniform3) + std::log(3.0)) < 1e-6);
  const std::vector<double> onehot = {1.0 - 2e-12, 1e-12, 1e-12};
  const double near_zero = mask_entropy_term(onehot);
  CHECK(near_zero < 0.0);
  CHECK(near_zero > -1e-9);
  const std::vector<double> exact_onehot = {1.0, 0.0, 0.0};
  CHECK(std::isfinite(mask_entropy_term(exact_onehot)));
  std::mt19937_64 gen(7);
  std::gamma_distribution<double> g(0.3);
  for (int i = 0; i < 1000; ++i) {
    const int C = 2 + i % 6;
    std::vector<double> q(C);
    double s = 0.0;
    for (double& x : q) s += (x = g(gen) + 1e-300);
    for (double& x : q) x /= s;
    const double v = mask_entropy_term(q);
    CHECK(v <= 0.0);
    CHECK(v >= -std::log(static_cast<double>(C)) - 1e-12);
  }
}

TEST_CASE("learning rate decays linearly to zero") {
  CHECK(learning_rate_at(0.1, 0, 100) == 0.1);
  CHECK(learning_rate_at(0.1, 50, 100) == 0.1 * (1.0 - 50.0 / 100.0));
  CHECK(learning_rate_at(0.1, 100, 100) == 0.0);
  for (long t = 0; t <= 37; ++t) CHECK(learning_rate_at(0.3, t, 37) == 0.3 * (1.0 - double(t) / 37.0));
}

TEST_CASE("analytic gradients match finite differences") {
  std::mt19937_64 gen(8);
  const WeightTable w = compute_weights(table(2, 3, {15, 10, 5, 5, 10, 15}));
  for (int trial = 0; trial < 6; ++trial) {
    const ModelParams p = support::random_model(14, 5, 6, 3, 30 + trial, 0.8);
    const auto batch = random_batch(6, 14, 2, 3, gen);
    CHECK(grad_check(p, batch, nullptr, 0.0, 200, trial).max_relative_error < 1e-4);
    CHECK(grad_check(p, batch, nullptr, 1.0, 200, trial).max_relative_error < 1e-4);
    CHECK(grad_check(p, batch, &w, 0.5, 200, trial).max_relative_error < 1e-4);
  }
}

TEST_CASE("zero epochs returns the initialization") {
  const Corpus c = generate_corpus(separable_spec(1), 5);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 77;
  const TrainResult r = train(c.examples, c.examples, c.schema, cfg);
  CHECK(r.params == init_params(c.schema.vocab, 3, cfg.init, 77));
  CHECK(r.report.epochs.empty());
  CHECK(r.report.selected_epoch == 0);
}

TEST_CASE("separable data is learned perfectly and deterministically") {
  const Corpus data = generate_corpus(separable_spec(1), 40);
  const Corpus val = generate_corpus(separable_spec(2), 20);
  TrainConfig cfg;
  cfg.seed = 3;
  const TrainResult a = train(data.examples, val.examples, data.schema, cfg);
  CHECK(score(a.params, val.examples).accuracy == 1.0);
  CHECK(a.report.selected_epoch >= 1);
  CHECK(a.report.epochs.size() == 20);

  const TrainResult b = train(data.examples, val.examples, data.schema, cfg);
  CHECK(a.params == b.params);

  // Near a minimum the gradient is tiny; the finite differences agree in absolute terms.
  const std::vector<Example> small(data.examples.begin(), data.examples.begin() + 8);
  CHECK(grad_check(a.params, small, nullptr, 0.0, 200, 1).max_absolute_error < 1e-6);
}

TEST_CASE("weighting and mask entropy change training") {
  const Corpus data = generate_corpus(separable_spec(1), 10);
  TrainConfig cfg;
  cfg.epochs = 2;
  const TrainResult plain = train(data.examples, data.examples, data.schema, cfg);
  cfg.mask_entropy_coeff = 1.0;
  const TrainResult me = train(data.examples, data.examples, data.schema, cfg);
  CHECK(!(plain.params == me.params));
  cfg.epochs = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.epochs = 1;
  cfg.mask_entropy_coeff = -0.1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("evaluate: perfect and constant classifiers") {
  const Corpus data = generate_corpus(separable_spec(1), 40);
  const Corpus test = generate_corpus(separable_spec(9), 10);
  TrainConfig cfg;
  const TrainResult r = train(data.examples, test.examples, data.schema, cfg);
  const Metrics m = evaluate(r.params, test.examples, 2, 3);
  CHECK(m.accuracy == 1.0);
  CHECK(m.predictions == m.truth);
  CHECK(m.predicted_percent(0, 1) == doctest::Approx(100.0 / 3));

  ModelParams constant = r.params;
  std::fill(constant.output_w().begin(), constant.output_w().end(), 0.0);
  std::fill(constant.output_b().begin(), constant.output_b().end(), 0.0);
  constant.output_b()[0] = 1.0;
  const Metrics k = evaluate(constant, test.examples, 2, 3);
  CHECK(k.predicted_percent(0, 0) == 100.0);
  CHECK(k.predicted_percent(1, 0) == 100.0);
  CHECK(k.accuracy == doctest::Approx(1.0 / 3));
}

TEST_CASE("prediction skew follows the training joint") {
  Metrics m;
  m.truth = table(2, 3, std::vector<int>(6, 10));
  m.predictions = table(2, 3, {14, 10, 6, 5, 11, 14});
  CHECK(prediction_skew(m, table(2, 3, {15, 10, 5, 5, 10, 15})) > 0.9);
  m.predictions = table(2, 3, {6, 10, 14, 14, 11, 5});
  CHECK(prediction_skew(m, table(2, 3, {15, 10, 5, 5, 10, 15})) < -0.9);
}
