#include "langbal/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>

#include "CLI11.hpp"
#include "langbal/error.hpp"
#include "langbal/experiment.hpp"
#include "langbal/io.hpp"
#include "langbal/rng.hpp"

namespace langbal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config;
};

fs::path output_dir(const Globals& g, const std::string& fallback) {
  if (!g.out.empty()) return g.out;
  if (const char* root = std::getenv("LANGBAL_OUTPUT_ROOT"); root && *root) return fs::path(root) / fallback;
  return fs::path("runs") / fallback;
}

json config_or_empty(const Globals& g) {
  if (g.config.empty()) return json::object();
  if (!fs::exists(g.config)) throw Error("cli", "config file not found: " + g.config);
  return read_json(g.config);
}

// Schema next to a data file, or built from the data itself.
Corpus load_data(const std::string& data, const std::string& schema_path) {
  if (!fs::exists(data)) throw Error("cli", "data file not found: " + data);
  fs::path sidecar = schema_path;
  if (sidecar.empty()) {
    const fs::path guess = fs::path(data).parent_path() / "schema.json";
    if (fs::exists(guess)) sidecar = guess;
  }
  if (sidecar.empty()) return load_jsonl(data);
  if (!fs::exists(sidecar)) throw Error("cli", "schema file not found: " + sidecar.string());
  return load_jsonl(data, read_schema(sidecar));
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

class Run {
 public:
  Run(std::string command, fs::path out) : command_(std::move(command)), out_(std::move(out)) {
    fs::create_directories(out_);
  }

  const fs::path& out() const { return out_; }
  fs::path path(const std::string& rel) const { return out_ / rel; }
  void add(const fs::path& p) { artifacts_.push_back(p); }
  void add_rel(const std::string& rel) { artifacts_.push_back(out_ / rel); }

  void finish(const json& config, std::uint64_t seed, json extra = json::object()) {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json m = std::move(extra);
    m["command"] = command_;
    m["version"] = kVersion;
    m["config"] = config;
    m["config_hash"] = config_hash(config);
    m["seed"] = seed;
    m["started_at"] = started_at_;
    m["wall_seconds"] = seconds;
    auto artifacts = json::array();
    for (const auto& p : artifacts_) {
      artifacts.push_back({{"path", fs::relative(p, out_).generic_string()}, {"digest", file_digest(p)}});
    }
    m["artifacts"] = std::move(artifacts);
    write_json(out_ / "manifest.json", m);
  }

 private:
  std::string command_;
  fs::path out_;
  std::vector<fs::path> artifacts_;
  std::string started_at_ = utc_now();
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---- gen-corpus

struct GenArgs {
  std::optional<int> languages, classes, min_tokens, max_tokens, fillers, signals;
  std::optional<double> signal_rate, noise_rate;
  int per_cell = 100;
};

void cmd_gen(const Globals& g, const GenArgs& a) {
  json cfg = config_or_empty(g);
  CorpusSpec spec = cfg.empty() ? CorpusSpec{} : cfg.get<CorpusSpec>();
  if (a.languages) spec.n_languages = *a.languages;
  if (a.classes) spec.n_classes = *a.classes;
  if (a.min_tokens) spec.min_tokens = *a.min_tokens;
  if (a.max_tokens) spec.max_tokens = *a.max_tokens;
  if (a.fillers) spec.fillers_per_language = *a.fillers;
  if (a.signals) spec.signals_per_cell = *a.signals;
  if (a.signal_rate) spec.signal_rate = *a.signal_rate;
  if (a.noise_rate) spec.noise_rate = *a.noise_rate;
  if (g.seed) spec.seed = *g.seed;
  if (a.per_cell < 1) throw Error("corpus", "per-cell count must be positive");

  const Corpus corpus = generate_corpus(spec, a.per_cell);
  Run run("gen-corpus", output_dir(g, "gen-corpus"));
  write_jsonl(run.path("corpus.jsonl"), corpus.examples, corpus.schema);
  run.add_rel("corpus.jsonl");
  write_schema(run.path("schema.json"), corpus.schema);
  run.add_rel("schema.json");
  json effective = spec;
  effective["per_cell"] = a.per_cell;
  run.finish(effective, spec.seed);
}

// ---- sample

struct SampleArgs {
  std::string corpus, schema, preset = "xnli_skew", joint;
  int n = 0, val = 0, test = 0;
};

void cmd_sample(const Globals& g, const SampleArgs& a) {
  const Corpus pool = load_data(a.corpus, a.schema);
  const Schema& schema = pool.schema;
  const int L = schema.n_languages();
  const int C = schema.n_classes();
  JointSpec joint;
  json joint_json;
  if (!a.joint.empty()) {
    if (!fs::exists(a.joint)) throw Error("cli", "joint table file not found: " + a.joint);
    joint_json = read_json(a.joint);
    joint = make_joint(joint_json.get<std::vector<std::vector<double>>>(), true);
  } else {
    joint = preset(parse_preset(a.preset), L, C);
    joint_json = a.preset;
  }
  const std::uint64_t seed = g.seed.value_or(0);
  PairedSubsets paired = sample_paired(pool.examples, joint, a.n, seed);

  Run run("sample", output_dir(g, "sample"));
  write_schema(run.path("schema.json"), schema);
  run.add_rel("schema.json");
  write_jsonl(run.path("balanced.jsonl"), paired.balanced, schema);
  run.add_rel("balanced.jsonl");
  write_jsonl(run.path("imbalanced.jsonl"), paired.imbalanced, schema);
  run.add_rel("imbalanced.jsonl");
  write_json(run.path("overlap.json"), to_json(paired.report));
  run.add_rel("overlap.json");
  if (a.val > 0 || a.test > 0) {
    auto ids = id_set(paired.balanced);
    for (const Example& ex : paired.imbalanced) ids.insert(ex.id);
    std::vector<Example> rest;
    for (const Example& ex : pool.examples) {
      if (!ids.count(ex.id)) rest.push_back(ex);
    }
    const EvalSplits splits = split_eval(rest, ids, L, C, a.val, a.test, derive_seed(seed, "eval"));
    write_jsonl(run.path("val.jsonl"), splits.val, schema);
    run.add_rel("val.jsonl");
    write_jsonl(run.path("test.jsonl"), splits.test, schema);
    run.add_rel("test.jsonl");
  }
  run.finish({{"corpus", a.corpus}, {"joint", joint_json}, {"n", a.n}, {"val", a.val}, {"test", a.test}},
             seed);
}

// ---- train

struct TrainArgs {
  std::string data, val, schema, weighting;
  std::optional<int> epochs, batch_size;
  std::optional<double> lr, mask_entropy;
};

void cmd_train(const Globals& g, const TrainArgs& a) {
  json cfg = config_or_empty(g);
  TrainConfig tc = cfg.empty() ? TrainConfig{} : cfg.get<TrainConfig>();
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.lr) tc.learning_rate = *a.lr;
  if (a.mask_entropy) tc.mask_entropy_coeff = *a.mask_entropy;
  if (!a.weighting.empty()) tc.weighting = parse_weighting(a.weighting);
  if (g.seed) tc.seed = *g.seed;
  tc.validate();

  const Corpus data = load_data(a.data, a.schema);
  std::vector<Example> val;
  if (!a.val.empty()) {
    if (!fs::exists(a.val)) throw Error("cli", "validation file not found: " + a.val);
    val = load_jsonl(a.val, data.schema).examples;
  }
  TrainResult trained = train(data.examples, val, data.schema, tc);

  Run run("train", output_dir(g, "train"));
  const json effective = tc;
  save_checkpoint(run.path("model.pbl"), trained.params, data.schema.vocab.hash(),
                  {{"train", effective}, {"data", a.data}});
  run.add_rel("model.pbl");
  write_json(run.path("train_report.json"), to_json(trained.report));
  run.add_rel("train_report.json");
  write_schema(run.path("schema.json"), data.schema);
  run.add_rel("schema.json");
  run.finish(effective, tc.seed);
}

// ---- eval

struct EvalArgs {
  std::string checkpoint, data, schema, train_data;
};

void cmd_eval(const Globals& g, const EvalArgs& a) {
  const Corpus test = load_data(a.data, a.schema);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint, test.schema.vocab);
  const int L = test.schema.n_languages();
  const int C = test.schema.n_classes();
  const Metrics metrics = evaluate(ckpt.params, test.examples, L, C);
  json report = to_json(metrics, test.schema);
  if (!a.train_data.empty()) {
    if (!fs::exists(a.train_data)) throw Error("cli", "training data file not found: " + a.train_data);
    const auto training = load_jsonl(a.train_data, test.schema).examples;
    report["prediction_skew"] = prediction_skew(metrics, count_cells(training, L, C));
  }
  Run run("eval", output_dir(g, "eval"));
  write_json(run.path("eval.json"), report);
  run.add_rel("eval.json");
  write_text(run.path("predictions.csv"), prediction_distribution_csv(metrics, test.schema));
  run.add_rel("predictions.csv");
  run.finish({{"checkpoint", a.checkpoint}, {"data", a.data}, {"train_data", a.train_data}},
             g.seed.value_or(0));
}

// ---- probe

struct ProbeArgs {
  std::string checkpoint, data, schema;
  int folds = 5;
  std::optional<double> l2;
  std::optional<int> max_iters;
};

void cmd_probe(const Globals& g, const ProbeArgs& a) {
  json cfg = config_or_empty(g);
  LogRegConfig lc = cfg.empty() ? LogRegConfig{} : cfg.get<LogRegConfig>();
  if (a.l2) lc.l2 = *a.l2;
  if (a.max_iters) lc.max_iters = *a.max_iters;
  const Corpus data = load_data(a.data, a.schema);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint, data.schema.vocab);
  const ProbeData features = extract_features(ckpt.params, data.examples);
  const std::uint64_t seed = g.seed.value_or(0);
  const ProbeReport report = cross_validate(features.features, features.labels, a.folds, seed, lc);

  Run run("probe", output_dir(g, "probe"));
  std::ostringstream csv;
  csv.precision(10);
  csv << "fold,accuracy\n";
  for (std::size_t f = 0; f < report.fold_accuracies.size(); ++f) {
    csv << f << ',' << report.fold_accuracies[f] << '\n';
  }
  write_text(run.path("probe.csv"), csv.str());
  run.add_rel("probe.csv");
  write_json(run.path("probe.json"), to_json(report));
  run.add_rel("probe.json");
  json effective = lc;
  effective["folds"] = a.folds;
  effective["checkpoint"] = a.checkpoint;
  effective["data"] = a.data;
  run.finish(effective, seed);
}

// ---- shap-diff

struct ShapArgs {
  std::string balanced, imbalanced, data, schema, label_mode;
  std::optional<double> threshold;
  std::optional<int> exact_limit, permutations;
  std::vector<int> labels;
};

void cmd_shap(const Globals& g, const ShapArgs& a) {
  json cfg = config_or_empty(g);
  ExplainConfig ec = cfg.empty() ? ExplainConfig{} : cfg.get<ExplainConfig>();
  if (a.threshold) ec.threshold = *a.threshold;
  if (a.exact_limit) ec.exact_limit = *a.exact_limit;
  if (a.permutations) ec.permutations = *a.permutations;
  if (!a.labels.empty()) ec.target_labels = a.labels;
  if (!a.label_mode.empty()) {
    json jm = json(ec);
    jm["label_mode"] = a.label_mode;
    ec = jm.get<ExplainConfig>();
  }
  if (g.seed) ec.seed = *g.seed;
  const Corpus data = load_data(a.data, a.schema);
  const Checkpoint bal = load_checkpoint(a.balanced, data.schema.vocab);
  const Checkpoint imb = load_checkpoint(a.imbalanced, data.schema.vocab);
  const CumulativeDiffReport report =
      cumulative_diff(bal.params, imb.params, data.examples, data.schema.n_languages(), ec);

  Run run("shap-diff", output_dir(g, "shap-diff"));
  write_text(run.path("shapdiff.csv"), cumulative_diff_csv(report, data.schema));
  run.add_rel("shapdiff.csv");
  write_json(run.path("shapdiff.json"), cumulative_diff_sidecar(report, data.schema));
  run.add_rel("shapdiff.json");
  json effective = ec;
  effective["balanced"] = a.balanced;
  effective["imbalanced"] = a.imbalanced;
  effective["data"] = a.data;
  run.finish(effective, ec.seed);
}

// ---- experiment

struct ExperimentArgs {
  bool print_schema = false;
};

int cmd_experiment(const Globals& g, const ExperimentArgs& a) {
  if (a.print_schema) {
    std::cout << experiment_config_schema().dump(2) << '\n';
    return 0;
  }
  if (g.config.empty()) throw Error("cli", "experiment needs --config");
  ExperimentConfig config = load_experiment_config(g.config);
  if (g.seed) config.seeds = {*g.seed};
  fs::path out = g.out;
  if (out.empty()) {
    const char* root = std::getenv("LANGBAL_OUTPUT_ROOT");
    out = root && *root ? fs::path(root) / config.output_dir : fs::path(config.output_dir);
  }
  Run run("experiment", out);
  const ExperimentResult result = run_experiment(config, out);
  for (const auto& f : result.files) run.add(f);
  auto seeds = json::array();
  for (const auto& s : result.seeds) {
    json entry{{"seed", s.seed}, {"ok", s.ok}, {"dir", fs::relative(s.dir, out).generic_string()}};
    if (!s.ok) entry["error"] = s.error;
    seeds.push_back(std::move(entry));
  }
  run.finish(config.source, config.seeds.front(), {{"seeds", seeds}});
  if (!result.all_ok()) {
    json record{{"error", {{"module", "experiment"}, {"message", "one or more seeds failed"}, {"seeds", seeds}}}};
    std::cerr << record.dump() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Language-specific class imbalance laboratory", "langbal"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Globals g;
  app.add_option("--seed", g.seed, "root random seed");
  app.add_option("--out", g.out, "output directory (default: $LANGBAL_OUTPUT_ROOT/<command> or runs/<command>)");
  app.add_option("--config", g.config, "JSON config file");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  gen_cmd->add_option("--languages", gen.languages);
  gen_cmd->add_option("--classes", gen.classes);
  gen_cmd->add_option("--min-tokens", gen.min_tokens);
  gen_cmd->add_option("--max-tokens", gen.max_tokens);
  gen_cmd->add_option("--signal-rate", gen.signal_rate);
  gen_cmd->add_option("--noise-rate", gen.noise_rate);
  gen_cmd->add_option("--fillers", gen.fillers, "filler tokens per language");
  gen_cmd->add_option("--signals", gen.signals, "signal tokens per (language, label)");
  gen_cmd->add_option("--per-cell", gen.per_cell, "examples per (language, label)");

  SampleArgs sample;
  auto* sample_cmd = app.add_subcommand("sample", "draw paired balanced/imbalanced subsets");
  sample_cmd->add_option("--corpus", sample.corpus, "pool JSONL")->required();
  sample_cmd->add_option("--schema", sample.schema, "schema sidecar (default: next to the corpus)");
  sample_cmd->add_option("--preset", sample.preset)->check(CLI::IsMember({"amazon_skew", "xnli_skew", "uniform"}));
  sample_cmd->add_option("--joint", sample.joint, "JSON file with an explicit L x C table");
  sample_cmd->add_option("-n,--size", sample.n, "subset size")->required();
  sample_cmd->add_option("--val", sample.val, "balanced validation split size");
  sample_cmd->add_option("--test", sample.test, "balanced test split size");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train one model");
  train_cmd->add_option("--data", tr.data, "training JSONL")->required();
  train_cmd->add_option("--val", tr.val, "validation JSONL (model selection; required unless --epochs 0)");
  train_cmd->add_option("--schema", tr.schema);
  train_cmd->add_option("--weighting", tr.weighting)->check(CLI::IsMember({"none", "per_language"}));
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--batch-size", tr.batch_size);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--mask-entropy", tr.mask_entropy, "masked-input entropy coefficient");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--data", ev.data, "test JSONL")->required();
  eval_cmd->add_option("--schema", ev.schema);
  eval_cmd->add_option("--train-data", ev.train_data, "training JSONL, for the prediction-skew score");

  ProbeArgs pr;
  auto* probe_cmd = app.add_subcommand("probe", "language-identification probe");
  probe_cmd->add_option("--checkpoint", pr.checkpoint)->required();
  probe_cmd->add_option("--data", pr.data)->required();
  probe_cmd->add_option("--schema", pr.schema);
  probe_cmd->add_option("--folds", pr.folds);
  probe_cmd->add_option("--l2", pr.l2);
  probe_cmd->add_option("--max-iters", pr.max_iters);

  ShapArgs sh;
  auto* shap_cmd = app.add_subcommand("shap-diff", "cumulative SHAP differences between two checkpoints");
  shap_cmd->add_option("--balanced", sh.balanced)->required();
  shap_cmd->add_option("--imbalanced", sh.imbalanced)->required();
  shap_cmd->add_option("--data", sh.data)->required();
  shap_cmd->add_option("--schema", sh.schema);
  shap_cmd->add_option("--threshold", sh.threshold);
  shap_cmd->add_option("--exact-limit", sh.exact_limit);
  shap_cmd->add_option("--permutations", sh.permutations);
  shap_cmd->add_option("--labels", sh.labels, "target label ids");
  shap_cmd->add_option("--label-mode", sh.label_mode)->check(CLI::IsMember({"fixed", "true_label"}));

  ExperimentArgs ex;
  auto* exp_cmd = app.add_subcommand("experiment", "run the full multi-seed protocol from --config");
  exp_cmd->add_flag("--print-schema", ex.print_schema, "print the config JSON schema and exit");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_cmd) cmd_gen(g, gen);
    if (*sample_cmd) cmd_sample(g, sample);
    if (*train_cmd) cmd_train(g, tr);
    if (*eval_cmd) cmd_eval(g, ev);
    if (*probe_cmd) cmd_probe(g, pr);
    if (*shap_cmd) cmd_shap(g, sh);
    if (*exp_cmd) return cmd_experiment(g, ex);
  } catch (const Error& e) {
    std::cerr << json{{"error", {{"module", e.module()}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"module", "cli"}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace langbal
