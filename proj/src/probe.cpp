#include "langbal/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "langbal/error.hpp"
#include "langbal/rng.hpp"

namespace langbal {

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("probe", message); }

struct Objective {
  const FeatureMatrix& x;
  std::span<const int> y;
  int classes;
  double l2;

  // Returns the objective; fills gradients when non-null.
  double operator()(const std::vector<double>& w, const std::vector<double>& b,
                    std::vector<double>* gw, std::vector<double>* gb) const {
    const int n = x.rows;
    const int f = x.cols;
    if (gw) {
      std::fill(gw->begin(), gw->end(), 0.0);
      std::fill(gb->begin(), gb->end(), 0.0);
    }
    std::vector<double> z(classes);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto row = x.row(i);
      for (int c = 0; c < classes; ++c) {
        const double* wc = w.data() + static_cast<std::size_t>(c) * f;
        double s = b[c];
        for (int k = 0; k < f; ++k) s += wc[k] * row[k];
        z[c] = s;
      }
      const double top = *std::max_element(z.begin(), z.end());
      double norm = 0.0;
      for (double v : z) norm += std::exp(v - top);
      const double log_norm = top + std::log(norm);
      total += log_norm - z[y[i]];
      if (gw) {
        for (int c = 0; c < classes; ++c) {
          const double r = std::exp(z[c] - log_norm) - (c == y[i] ? 1.0 : 0.0);
          double* gc = gw->data() + static_cast<std::size_t>(c) * f;
          for (int k = 0; k < f; ++k) gc[k] += r * row[k];
          (*gb)[c] += r;
        }
      }
    }
    double sq = 0.0;
    for (double v : w) sq += v * v;
    const double inv_n = 1.0 / n;
    if (gw) {
      for (std::size_t k = 0; k < w.size(); ++k) (*gw)[k] = (*gw)[k] * inv_n + l2 * inv_n * w[k];
      for (double& g : *gb) g *= inv_n;
    }
    return total * inv_n + 0.5 * l2 * inv_n * sq;
  }
};

void check_matrix(const FeatureMatrix& x, std::span<const int> labels) {
  if (x.rows < 1 || x.cols < 1) fail("feature matrix is empty");
  if (x.values.size() != static_cast<std::size_t>(x.rows) * x.cols) fail("feature matrix is malformed");
  if (labels.size() != static_cast<std::size_t>(x.rows)) fail("label count does not match rows");
  for (int y : labels) {
    if (y < 0) fail("negative language id");
  }
}

FeatureMatrix take_rows(const FeatureMatrix& x, const std::vector<int>& rows) {
  FeatureMatrix out{static_cast<int>(rows.size()), x.cols, {}};
  out.values.reserve(rows.size() * x.cols);
  for (int r : rows) {
    const auto src = x.row(r);
    out.values.insert(out.values.end(), src.begin(), src.end());
  }
  return out;
}

}  // namespace

ProbeData extract_features(const ModelParams& params, const std::vector<Example>& data) {
  if (data.empty()) fail("cannot extract features from an empty dataset");
  ProbeData out;
  out.features.rows = static_cast<int>(data.size());
  out.features.cols = params.dims().hidden;
  out.features.values.reserve(data.size() * params.dims().hidden);
  for (const Example& ex : data) {
    if (std::any_of(ex.tokens.begin(), ex.tokens.end(),
                    [&](TokenId t) { return t >= static_cast<TokenId>(params.dims().vocab); })) {
      fail("vocabulary mismatch: example \"" + ex.id + "\" has tokens outside the model vocabulary");
    }
    const ForwardOutput f = forward(params, ex.tokens);
    out.features.values.insert(out.features.values.end(), f.pooled.begin(), f.pooled.end());
    out.labels.push_back(ex.language);
  }
  return out;
}

void to_json(nlohmann::json& j, const LogRegConfig& c) {
  j = nlohmann::json{{"l2", c.l2}, {"max_iters", c.max_iters}, {"tolerance", c.tolerance}};
}

void from_json(const nlohmann::json& j, LogRegConfig& c) {
  LogRegConfig d;
  c.l2 = j.value("l2", d.l2);
  c.max_iters = j.value("max_iters", d.max_iters);
  c.tolerance = j.value("tolerance", d.tolerance);
}

std::vector<double> LogRegModel::predict_proba(std::span<const double> x) const {
  std::vector<double> z(bias);
  for (int c = 0; c < n_classes; ++c) {
    const double* wc = weights.data() + static_cast<std::size_t>(c) * n_features;
    for (int k = 0; k < n_features; ++k) z[c] += wc[k] * x[k];
  }
  softmax_inplace(z);
  return z;
}

int LogRegModel::predict(std::span<const double> x) const {
  const auto p = predict_proba(x);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

LogRegModel fit_logreg(const FeatureMatrix& x, std::span<const int> labels,
                       const LogRegConfig& config) {
  check_matrix(x, labels);
  if (!(config.l2 >= 0.0)) fail("l2 must be non-negative");
  if (config.max_iters < 0) fail("max_iters must be non-negative");
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<int> present(classes, 0);
  for (int y : labels) present[y] = 1;
  if (std::accumulate(present.begin(), present.end(), 0) < 2) {
    fail("language probe needs at least two languages");
  }

  LogRegModel m{classes, x.cols, std::vector<double>(static_cast<std::size_t>(classes) * x.cols, 0.0),
                std::vector<double>(classes, 0.0), 0, false};
  const Objective objective{x, labels, classes, config.l2};
  std::vector<double> gw(m.weights.size()), gb(classes);
  std::vector<double> tw(m.weights.size()), tb(classes);
  double value = objective(m.weights, m.bias, &gw, &gb);
  double step = 1.0;
  for (; m.iterations < config.max_iters; ++m.iterations) {
    double gnorm2 = 0.0;
    for (double g : gw) gnorm2 += g * g;
    for (double g : gb) gnorm2 += g * g;
    if (std::sqrt(gnorm2) < config.tolerance) {
      m.converged = true;
      break;
    }
    // Armijo backtracking, trying a larger step first.
    step *= 2.0;
    double candidate = 0.0;
    for (;;) {
      for (std::size_t k = 0; k < tw.size(); ++k) tw[k] = m.weights[k] - step * gw[k];
      for (int c = 0; c < classes; ++c) tb[c] = m.bias[c] - step * gb[c];
      candidate = objective(tw, tb, nullptr, nullptr);
      if (candidate <= value - 0.5 * step * gnorm2 || step < 1e-20) break;
      step *= 0.5;
    }
    m.weights.swap(tw);
    m.bias.swap(tb);
    value = objective(m.weights, m.bias, &gw, &gb);
  }
  if (!m.converged) {
    double gnorm2 = 0.0;
    for (double g : gw) gnorm2 += g * g;
    for (double g : gb) gnorm2 += g * g;
    m.converged = std::sqrt(gnorm2) < config.tolerance;
  }
  return m;
}

double accuracy(const LogRegModel& model, const FeatureMatrix& x, std::span<const int> labels) {
  check_matrix(x, labels);
  int correct = 0;
  for (int i = 0; i < x.rows; ++i) correct += model.predict(x.row(i)) == labels[i];
  return static_cast<double>(correct) / x.rows;
}

std::vector<int> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed) {
  if (k < 2) fail("need at least 2 folds");
  std::map<int, std::vector<int>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(static_cast<int>(i));
  std::vector<int> fold(labels.size(), 0);
  int counter = 0;
  for (auto& [label, members] : groups) {
    Rng rng(derive_seed(derive_seed(seed, "probe/folds"), static_cast<std::uint64_t>(label)));
    shuffle(members, rng);
    for (int idx : members) fold[idx] = counter++ % k;
  }
  return fold;
}

nlohmann::json to_json(const ProbeReport& r) {
  return {{"fold_accuracies", r.fold_accuracies},
          {"mean_accuracy", r.mean_accuracy},
          {"n_per_language", r.n_per_language},
          {"l2", r.l2},
          {"folds", r.folds},
          {"seed", r.seed}};
}

ProbeReport cross_validate(const FeatureMatrix& x, std::span<const int> labels, int k,
                           std::uint64_t seed, const LogRegConfig& config) {
  check_matrix(x, labels);
  if (k < 2) fail("need at least 2 folds");
  if (x.rows < k) {
    fail("cannot split " + std::to_string(x.rows) + " examples into " + std::to_string(k) + " folds");
  }
  ProbeReport report;
  report.l2 = config.l2;
  report.folds = k;
  report.seed = seed;
  const int languages = *std::max_element(labels.begin(), labels.end()) + 1;
  report.n_per_language.assign(languages, 0);
  for (int y : labels) ++report.n_per_language[y];
  for (int l = 0; l < languages; ++l) {
    if (report.n_per_language[l] == 1) {
      fail("language " + std::to_string(l) + " has a single example; need at least 2");
    }
  }

  const auto fold = stratified_folds(labels, k, seed);
  for (int f = 0; f < k; ++f) {
    std::vector<int> train_rows, test_rows;
    for (int i = 0; i < x.rows; ++i) (fold[i] == f ? test_rows : train_rows).push_back(i);
    std::vector<int> train_y, test_y;
    for (int i : train_rows) train_y.push_back(labels[i]);
    for (int i : test_rows) test_y.push_back(labels[i]);
    const LogRegModel model = fit_logreg(take_rows(x, train_rows), train_y, config);
    report.fold_accuracies.push_back(accuracy(model, take_rows(x, test_rows), test_y));
  }
  report.mean_accuracy = std::accumulate(report.fold_accuracies.begin(), report.fold_accuracies.end(), 0.0) / k;
  return report;
}

}  // namespace langbal
