#include "langbal/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "langbal/error.hpp"
#include "langbal/rng.hpp"
#include "langbal/stats.hpp"

namespace langbal {

namespace {

constexpr double kProbFloor = 1e-12;

[[noreturn]] void fail(const std::string& message) { throw Error("training", message); }

struct Activations {
  std::vector<double> mean;
  std::vector<double> hidden;
  std::vector<double> probs;
};

Activations run(const ModelParams& params, std::span<const TokenId> tokens) {
  const auto& d = params.dims();
  if (tokens.empty()) fail("example with no tokens");
  std::vector<double> mean(d.embed, 0.0);
  for (TokenId t : tokens) {
    if (t >= static_cast<TokenId>(d.vocab)) fail("token id " + std::to_string(t) + " out of range");
    const auto row = params.embedding_row(t);
    for (int i = 0; i < d.embed; ++i) mean[i] += row[i];
  }
  for (double& m : mean) m /= static_cast<double>(tokens.size());
  ForwardOutput f = forward_from_mean(params, mean);
  return {std::move(mean), std::move(f.pooled), std::move(f.probs)};
}

// Accumulates the gradient for one sequence given d loss / d logits.
void backprop(const ModelParams& params, std::span<const TokenId> tokens, const Activations& act,
              std::span<const double> dlogits, ModelParams& grad) {
  const auto& d = params.dims();
  const auto wo = params.output_w();
  const auto wh = params.hidden_w();
  auto g_wo = grad.output_w();
  auto g_bo = grad.output_b();
  auto g_wh = grad.hidden_w();
  auto g_bh = grad.hidden_b();

  std::vector<double> da(d.hidden, 0.0);
  for (int j = 0; j < d.hidden; ++j) {
    const double h = act.hidden[j];
    double dh = 0.0;
    for (int c = 0; c < d.classes; ++c) {
      g_wo[static_cast<std::size_t>(j) * d.classes + c] += h * dlogits[c];
      dh += wo[static_cast<std::size_t>(j) * d.classes + c] * dlogits[c];
    }
    da[j] = dh * (1.0 - h * h);
  }
  for (int c = 0; c < d.classes; ++c) g_bo[c] += dlogits[c];

  std::vector<double> dmean(d.embed, 0.0);
  for (int i = 0; i < d.embed; ++i) {
    const double m = act.mean[i];
    double acc = 0.0;
    for (int j = 0; j < d.hidden; ++j) {
      g_wh[static_cast<std::size_t>(i) * d.hidden + j] += m * da[j];
      acc += wh[static_cast<std::size_t>(i) * d.hidden + j] * da[j];
    }
    dmean[i] = acc / static_cast<double>(tokens.size());
  }
  for (int j = 0; j < d.hidden; ++j) g_bh[j] += da[j];
  for (TokenId t : tokens) {
    auto row = grad.embedding_row(t);
    for (int i = 0; i < d.embed; ++i) row[i] += dmean[i];
  }
}

double example_weight(const WeightTable* weights, const Example& ex, int n_classes) {
  if (ex.label < 0 || ex.label >= n_classes) {
    fail("example \"" + ex.id + "\" has label " + std::to_string(ex.label) + " outside [0, " +
         std::to_string(n_classes) + ")");
  }
  if (!weights) return 1.0;
  if (ex.language < 0 || ex.language >= weights->n_languages || ex.label >= weights->n_classes) {
    fail("example \"" + ex.id + "\" lies outside the weight table");
  }
  return weights->at(ex.language, ex.label);
}

// Shared implementation of loss() and loss_and_gradient().
LossParts evaluate_loss(const ModelParams& params, std::span<const Example* const> batch,
                        const WeightTable* weights, double lambda, int mask_length,
                        ModelParams* grad) {
  if (batch.empty()) fail("loss needs a non-empty batch");
  if (lambda < 0.0) fail("mask entropy coefficient must be >= 0");
  const int C = params.dims().classes;
  if (grad) std::fill(grad->values().begin(), grad->values().end(), 0.0);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  LossParts parts;
  std::vector<double> dlogits(C);
  for (const Example* ex : batch) {
    const double w = example_weight(weights, *ex, C);
    const Activations act = run(params, ex->tokens);
    const double py = act.probs[ex->label];
    parts.classification += w * -std::log(std::max(py, kProbFloor)) * inv_batch;
    if (grad) {
      const double scale = py > kProbFloor ? w * inv_batch : 0.0;
      for (int c = 0; c < C; ++c) dlogits[c] = scale * (act.probs[c] - (c == ex->label ? 1.0 : 0.0));
      backprop(params, ex->tokens, act, dlogits, *grad);
    }
  }

  if (lambda > 0.0) {
    if (mask_length < 1) fail("mask length must be at least 1");
    const std::vector<TokenId> masked(static_cast<std::size_t>(mask_length), params.mask_id());
    const Activations act = run(params, masked);
    parts.mask_entropy = mask_entropy_term(act.probs);
    if (grad) {
      // d/dp_c of p log max(p, eps), then through the softmax.
      std::vector<double> g(C);
      double expected = 0.0;
      for (int c = 0; c < C; ++c) {
        const double p = act.probs[c];
        g[c] = p > kProbFloor ? std::log(p) + 1.0 : std::log(kProbFloor);
        expected += p * g[c];
      }
      for (int c = 0; c < C; ++c) dlogits[c] = lambda * act.probs[c] * (g[c] - expected);
      backprop(params, masked, act, dlogits, *grad);
    }
  }
  parts.total = parts.classification + lambda * parts.mask_entropy;
  if (!std::isfinite(parts.total)) {
    std::ostringstream msg;
    msg << "non-finite loss (classification=" << parts.classification
        << ", mask_entropy=" << parts.mask_entropy << ", batch=" << batch.size() << ")";
    fail(msg.str());
  }
  return parts;
}

std::vector<const Example*> pointers(std::span<const Example> batch) {
  std::vector<const Example*> out;
  out.reserve(batch.size());
  for (const Example& ex : batch) out.push_back(&ex);
  return out;
}

}  // namespace

nlohmann::json to_json(const WeightTable& table) {
  auto rows = nlohmann::json::array();
  for (int l = 0; l < table.n_languages; ++l) {
    auto row = nlohmann::json::array();
    for (int c = 0; c < table.n_classes; ++c) row.push_back(table.at(l, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

WeightTable compute_weights(const CountTable& counts) {
  WeightTable table{counts.n_languages, counts.n_classes, {}};
  table.w.reserve(counts.cells.size());
  for (int l = 0; l < counts.n_languages; ++l) {
    const double n_l = counts.row_sum(l);
    for (int c = 0; c < counts.n_classes; ++c) {
      const int n_cl = counts.at(l, c);
      if (n_cl < 1) {
        fail("cannot weight empty cell (language " + std::to_string(l) + ", label " +
             std::to_string(c) + ")");
      }
      table.w.push_back(n_l / (counts.n_classes * static_cast<double>(n_cl)));
    }
  }
  return table;
}

Weighting parse_weighting(std::string_view name) {
  if (name == "none") return Weighting::none;
  if (name == "per_language") return Weighting::per_language;
  fail("unknown weighting mode \"" + std::string(name) + "\"");
}

std::string_view to_string(Weighting weighting) {
  return weighting == Weighting::per_language ? "per_language" : "none";
}

void TrainConfig::validate() const {
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch size must be positive");
  if (!(learning_rate > 0.0)) fail("learning rate must be positive");
  if (!(mask_entropy_coeff >= 0.0)) fail("mask entropy coefficient must be >= 0");
  if (validation_every < 1) fail("validation cadence must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"weighting", to_string(c.weighting)},
                     {"mask_entropy_coeff", c.mask_entropy_coeff},
                     {"seed", c.seed},
                     {"init_seed", c.init_seed ? nlohmann::json(*c.init_seed) : nlohmann::json(nullptr)},
                     {"validation_every", c.validation_every},
                     {"init", c.init}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weighting = parse_weighting(j.value("weighting", std::string(to_string(d.weighting))));
  c.mask_entropy_coeff = j.value("mask_entropy_coeff", d.mask_entropy_coeff);
  c.seed = j.value("seed", d.seed);
  if (j.contains("init_seed") && !j["init_seed"].is_null()) c.init_seed = j["init_seed"].get<std::uint64_t>();
  c.validation_every = j.value("validation_every", d.validation_every);
  c.init = j.value("init", d.init);
}

double learning_rate_at(double lr0, long step, long total_steps) {
  if (total_steps <= 0) return 0.0;
  return lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

double mask_entropy_term(std::span<const double> probs) {
  double total = 0.0;
  for (double p : probs) total += p * std::log(std::max(p, kProbFloor));
  return total;
}

LossParts loss(const ModelParams& params, std::span<const Example* const> batch,
               const WeightTable* weights, double lambda, int mask_length) {
  return evaluate_loss(params, batch, weights, lambda, mask_length, nullptr);
}

LossParts loss(const ModelParams& params, std::span<const Example> batch,
               const WeightTable* weights, double lambda, int mask_length) {
  const auto ptrs = pointers(batch);
  return evaluate_loss(params, ptrs, weights, lambda, mask_length, nullptr);
}

LossParts loss_and_gradient(const ModelParams& params, std::span<const Example* const> batch,
                            const WeightTable* weights, double lambda, int mask_length,
                            ModelParams& grad) {
  if (!(grad.dims() == params.dims())) fail("gradient buffer has the wrong dimensions");
  return evaluate_loss(params, batch, weights, lambda, mask_length, &grad);
}

GradCheckResult grad_check(const ModelParams& params, std::span<const Example> batch,
                           const WeightTable* weights, double lambda, int samples,
                           std::uint64_t seed, double step) {
  const auto ptrs = pointers(batch);
  int max_len = 1;
  for (const Example& ex : batch) max_len = std::max<int>(max_len, ex.tokens.size());
  ModelParams grad = params;
  loss_and_gradient(params, ptrs, weights, lambda, max_len, grad);

  // Candidate indices: embedding rows the loss touches plus dense layers.
  const auto& d = params.dims();
  std::vector<TokenId> rows;
  for (const Example& ex : batch) rows.insert(rows.end(), ex.tokens.begin(), ex.tokens.end());
  if (lambda > 0.0) rows.push_back(params.mask_id());
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  std::vector<std::size_t> candidates;
  for (TokenId t : rows) {
    for (int i = 0; i < d.embed; ++i) candidates.push_back(static_cast<std::size_t>(t) * d.embed + i);
  }
  for (std::size_t k = static_cast<std::size_t>(d.vocab) * d.embed; k < params.size(); ++k) {
    candidates.push_back(k);
  }
  Rng rng(derive_seed(seed, "grad_check"));
  shuffle(candidates, rng);
  candidates.resize(std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(samples)));

  GradCheckResult result;
  ModelParams probe = params;
  for (std::size_t k : candidates) {
    const double original = probe.values()[k];
    probe.values()[k] = original + step;
    const double up = evaluate_loss(probe, ptrs, weights, lambda, max_len, nullptr).total;
    probe.values()[k] = original - step;
    const double down = evaluate_loss(probe, ptrs, weights, lambda, max_len, nullptr).total;
    probe.values()[k] = original;
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = grad.values()[k];
    const double abs_err = std::abs(analytic - numeric);
    const double rel_err = abs_err / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
    result.max_relative_error = std::max(result.max_relative_error, rel_err);
    ++result.checked;
  }
  return result;
}

nlohmann::json to_json(const TrainReport& report) {
  nlohmann::json j;
  auto epochs = nlohmann::json::array();
  for (const EpochRecord& e : report.epochs) {
    nlohmann::json row{{"epoch", e.epoch}, {"train_loss", e.train_loss}};
    row["val_loss"] = e.val_loss ? nlohmann::json(*e.val_loss) : nlohmann::json(nullptr);
    epochs.push_back(std::move(row));
  }
  j["epochs"] = std::move(epochs);
  j["selected_epoch"] = report.selected_epoch;
  j["selected_val_loss"] =
      report.selected_val_loss ? nlohmann::json(*report.selected_val_loss) : nlohmann::json(nullptr);
  j["selected_val_accuracy"] = report.selected_val_accuracy
                                   ? nlohmann::json(*report.selected_val_accuracy)
                                   : nlohmann::json(nullptr);
  j["total_steps"] = report.total_steps;
  j["weights"] = report.weights ? to_json(*report.weights) : nlohmann::json(nullptr);
  return j;
}

TrainResult train(const std::vector<Example>& data, const std::vector<Example>& val,
                  const Schema& schema, const TrainConfig& config) {
  config.validate();
  if (data.empty()) fail("training data is empty");
  if (val.empty() && config.epochs > 0) fail("validation data is empty");
  const int L = schema.n_languages();
  const int C = schema.n_classes();

  TrainResult result{init_params(schema.vocab, C, config.init, config.init_seed.value_or(config.seed)), {}};
  if (config.epochs == 0) return result;

  std::optional<WeightTable> weights;
  if (config.weighting == Weighting::per_language) {
    weights = compute_weights(count_cells(data, L, C));
    result.report.weights = weights;
  }
  int max_len = 1;
  for (const Example& ex : data) max_len = std::max<int>(max_len, ex.tokens.size());

  ModelParams params = result.params;
  ModelParams grad = params;
  std::vector<const Example*> order;
  order.reserve(data.size());
  for (const Example& ex : data) order.push_back(&ex);

  const long steps_per_epoch = static_cast<long>((data.size() + config.batch_size - 1) / config.batch_size);
  const long total_steps = steps_per_epoch * config.epochs;
  result.report.total_steps = total_steps;
  Rng shuffle_rng(derive_seed(config.seed, "train/shuffle"));
  Rng mask_rng(derive_seed(config.seed, "train/mask_length"));

  long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double epoch_loss = 0.0;
    for (long b = 0; b < steps_per_epoch; ++b, ++step) {
      const std::size_t begin = static_cast<std::size_t>(b) * config.batch_size;
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const Example* const> batch(order.data() + begin, end - begin);
      const int mask_length = 1 + static_cast<int>(uniform_index(mask_rng, max_len));
      LossParts parts;
      try {
        parts = loss_and_gradient(params, batch, weights ? &*weights : nullptr,
                                  config.mask_entropy_coeff, mask_length, grad);
      } catch (const Error& e) {
        fail("diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
             ": " + e.what());
      }
      const double lr = learning_rate_at(config.learning_rate, step, total_steps);
      auto values = params.values();
      const auto g = grad.values();
      for (std::size_t k = 0; k < values.size(); ++k) values[k] -= lr * g[k];
      params.round_to_storage();
      if (!params.all_finite()) {
        fail("diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
             ": non-finite parameters");
      }
      epoch_loss += parts.total;
    }
    EpochRecord record{epoch, epoch_loss / static_cast<double>(steps_per_epoch), std::nullopt};
    if (epoch % config.validation_every == 0 || epoch == config.epochs) {
      const DatasetScore s = score(params, val);
      record.val_loss = s.loss;
      if (!result.report.selected_val_loss || s.loss < *result.report.selected_val_loss) {
        result.report.selected_epoch = epoch;
        result.report.selected_val_loss = s.loss;
        result.report.selected_val_accuracy = s.accuracy;
        result.params = params;
      }
    }
    result.report.epochs.push_back(record);
  }
  return result;
}

int predict(const ModelParams& params, std::span<const TokenId> tokens) {
  const ForwardOutput out = forward(params, tokens);
  return static_cast<int>(std::max_element(out.probs.begin(), out.probs.end()) - out.probs.begin());
}

DatasetScore score(const ModelParams& params, const std::vector<Example>& data) {
  if (data.empty()) fail("cannot score an empty dataset");
  DatasetScore s;
  for (const Example& ex : data) {
    const ForwardOutput out = forward(params, ex.tokens);
    s.loss -= std::log(std::max(out.probs.at(ex.label), kProbFloor));
    const int pred = static_cast<int>(std::max_element(out.probs.begin(), out.probs.end()) - out.probs.begin());
    s.accuracy += pred == ex.label ? 1.0 : 0.0;
  }
  s.loss /= static_cast<double>(data.size());
  s.accuracy /= static_cast<double>(data.size());
  return s;
}

double Metrics::predicted_percent(int language, int label) const {
  const int n = predictions.row_sum(language);
  return n == 0 ? 0.0 : 100.0 * predictions.at(language, label) / n;
}

Metrics evaluate(const ModelParams& params, const std::vector<Example>& test, int L, int C) {
  if (test.empty()) fail("cannot evaluate on an empty dataset");
  Metrics m;
  m.truth = CountTable(L, C);
  m.predictions = CountTable(L, C);
  std::vector<int> correct(L, 0);
  int total_correct = 0;
  for (const Example& ex : test) {
    if (ex.language < 0 || ex.language >= L || ex.label < 0 || ex.label >= C) {
      fail("example \"" + ex.id + "\" lies outside the evaluation table");
    }
    const int pred = predict(params, ex.tokens);
    ++m.truth.at(ex.language, ex.label);
    ++m.predictions.at(ex.language, pred);
    if (pred == ex.label) {
      ++correct[ex.language];
      ++total_correct;
    }
  }
  m.accuracy = static_cast<double>(total_correct) / static_cast<double>(test.size());
  for (int l = 0; l < L; ++l) {
    const int n = m.truth.row_sum(l);
    m.language_accuracy.push_back(n == 0 ? 0.0 : static_cast<double>(correct[l]) / n);
  }
  return m;
}

nlohmann::json to_json(const Metrics& m, const Schema& schema) {
  nlohmann::json j;
  j["accuracy"] = m.accuracy;
  auto& per_lang = j["languages"] = nlohmann::json::array();
  for (int l = 0; l < m.truth.n_languages; ++l) {
    nlohmann::json row;
    row["language"] = schema.languages.at(l);
    row["n"] = m.truth.row_sum(l);
    row["accuracy"] = m.language_accuracy[l];
    auto& dist = row["predicted_percent"] = nlohmann::json::object();
    for (int c = 0; c < m.truth.n_classes; ++c) dist[schema.labels.at(c)] = m.predicted_percent(l, c);
    per_lang.push_back(std::move(row));
  }
  return j;
}

std::string prediction_distribution_csv(const Metrics& m, const Schema& schema) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "language";
  for (int c = 0; c < m.truth.n_classes; ++c) out << ',' << schema.labels.at(c);
  out << '\n';
  for (int l = 0; l < m.truth.n_languages; ++l) {
    out << schema.languages.at(l);
    for (int c = 0; c < m.truth.n_classes; ++c) out << ',' << m.predicted_percent(l, c);
    out << '\n';
  }
  return out.str();
}

double prediction_skew(const Metrics& m, const CountTable& training) {
  if (training.n_languages != m.predictions.n_languages || training.n_classes != m.predictions.n_classes) {
    fail("training table and predictions have different shapes");
  }
  std::vector<double> predicted, joint;
  for (int l = 0; l < training.n_languages; ++l) {
    for (int c = 0; c < training.n_classes; ++c) {
      predicted.push_back(m.predicted_percent(l, c));
      joint.push_back(training.at(l, c));
    }
  }
  return spearman(predicted, joint);
}

}  // namespace langbal
