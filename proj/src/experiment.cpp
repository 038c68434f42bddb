#include "langbal/experiment.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "langbal/error.hpp"
#include "langbal/io.hpp"
#include "langbal/rng.hpp"
#include "langbal/stats.hpp"

namespace langbal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("experiment", message); }

struct ArmSpec {
  std::string name;
  bool imbalanced_data = false;
  Weighting weighting = Weighting::none;
  double lambda = 0.0;
};

std::vector<ArmSpec> arm_specs(const ExperimentConfig& config) {
  std::vector<ArmSpec> arms = {{kArmBalanced, false, Weighting::none, 0.0},
                               {kArmImbalanced, true, Weighting::none, 0.0},
                               {kArmWeighted, true, Weighting::per_language, 0.0}};
  if (config.mask_entropy_coeff > 0.0) {
    const std::size_t base = arms.size();
    for (std::size_t i = 0; i < base; ++i) {
      ArmSpec me = arms[i];
      me.name += kMaskEntropySuffix;
      me.lambda = config.mask_entropy_coeff;
      arms.push_back(me);
    }
  }
  return arms;
}

// (reference arm, compared arm) pairs for the SHAP difference reports.
std::vector<std::pair<std::string, std::string>> comparisons(const ExperimentConfig& config) {
  std::vector<std::pair<std::string, std::string>> out = {{kArmBalanced, kArmImbalanced},
                                                          {kArmBalanced, kArmWeighted}};
  if (config.mask_entropy_coeff > 0.0) {
    const auto& s = kMaskEntropySuffix;
    out.push_back({kArmBalanced + s, kArmImbalanced + s});
    out.push_back({kArmBalanced + s, kArmWeighted + s});
  }
  return out;
}

JointSpec joint_for(const ExperimentConfig& config, int L, int C) {
  if (config.joint_table) return make_joint(*config.joint_table, true);
  return preset(parse_preset(config.joint_preset), L, C);
}

std::vector<Example> take_per_cell(const std::vector<Example>& data, int L, int C, int per_cell) {
  CountTable taken(L, C);
  std::vector<Example> out;
  for (const Example& ex : data) {
    int& n = taken.at(ex.language, ex.label);
    if (n < per_cell) {
      out.push_back(ex);
      ++n;
    }
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

json stats_json(const std::vector<double>& values) {
  return {{"mean", mean(values)}, {"std", stddev(values)}, {"values", values}};
}

double mean_base_gap(const CumulativeDiffReport& report) {
  std::vector<double> gaps;
  for (const auto& b : report.base_values) {
    if (b.n_datapoints > 0) gaps.push_back(std::abs(b.base_balanced - b.base_imbalanced));
  }
  return gaps.empty() ? 0.0 : mean(gaps);
}

class Writer {
 public:
  Writer(fs::path root, std::vector<fs::path>& files) : root_(std::move(root)), files_(files) {}

  fs::path path(const fs::path& rel) const { return root_ / rel; }
  void text(const fs::path& rel, const std::string& body) {
    write_text(root_ / rel, body);
    files_.push_back(root_ / rel);
  }
  void json_file(const fs::path& rel, const json& j) {
    write_json(root_ / rel, j);
    files_.push_back(root_ / rel);
  }
  void record(const fs::path& rel) { files_.push_back(root_ / rel); }

 private:
  fs::path root_;
  std::vector<fs::path>& files_;
};

std::string probe_csv(const std::vector<std::pair<std::string, ProbeReport>>& rows,
                      const std::string& corpus) {
  std::ostringstream out;
  out << "model,corpus,fold,accuracy\n";
  for (const auto& [arm, report] : rows) {
    for (std::size_t f = 0; f < report.fold_accuracies.size(); ++f) {
      out << arm << ',' << corpus << ',' << f << ',' << fmt(report.fold_accuracies[f]) << '\n';
    }
  }
  return out.str();
}

struct PoolSource {
  std::optional<Corpus> ingested;
  std::optional<Corpus> probe_external;
};

SeedResult run_seed(const ExperimentConfig& config, const PoolSource& source, std::uint64_t root,
                    const fs::path& dir, std::vector<fs::path>& files) {
  SeedResult result;
  result.seed = root;
  result.dir = dir;
  Writer out(dir, files);

  // Corpus pool.
  Corpus pool;
  if (source.ingested) {
    pool = *source.ingested;
  } else {
    CorpusSpec spec = *config.corpus;
    spec.seed = derive_seed(root, "corpus");
    const int L = spec.n_languages;
    const int C = spec.n_classes;
    const SubsetPlan plan = plan_counts(joint_for(config, L, C), config.subset_size);
    int train_need = 0;
    for (int v : plan.counts.cells) train_need = std::max(train_need, v);
    train_need = std::max(train_need, config.subset_size / (L * C) + 1);
    pool = generate_corpus(spec, train_need + (config.val_size + config.test_size) / (L * C));
  }
  const Schema& schema = pool.schema;
  const int L = schema.n_languages();
  const int C = schema.n_classes();
  out.json_file("schema.json", schema_to_json(schema));

  // Paired subsets and balanced evaluation splits.
  const JointSpec joint = joint_for(config, L, C);
  if (joint.n_languages != L || joint.n_classes != C) {
    fail("joint table is " + std::to_string(joint.n_languages) + "x" +
         std::to_string(joint.n_classes) + " but the corpus has " + std::to_string(L) + " languages and " +
         std::to_string(C) + " labels");
  }
  PairedSubsets paired = sample_paired(pool.examples, joint, config.subset_size, derive_seed(root, "sampler"));
  auto training_ids = id_set(paired.balanced);
  for (const Example& ex : paired.imbalanced) training_ids.insert(ex.id);
  std::vector<Example> eval_pool;
  for (const Example& ex : pool.examples) {
    if (!training_ids.count(ex.id)) eval_pool.push_back(ex);
  }
  const EvalSplits splits = split_eval(eval_pool, training_ids, L, C, config.val_size,
                                       config.test_size, derive_seed(root, "sampler/eval"));
  result.overlap = paired.report;
  result.imbalanced_counts = count_cells(paired.imbalanced, L, C);
  out.json_file("overlap.json", to_json(paired.report));
  write_jsonl(out.path("balanced.jsonl"), paired.balanced, schema);
  out.record("balanced.jsonl");
  write_jsonl(out.path("imbalanced.jsonl"), paired.imbalanced, schema);
  out.record("imbalanced.jsonl");
  write_jsonl(out.path("val.jsonl"), splits.val, schema);
  out.record("val.jsonl");
  write_jsonl(out.path("test.jsonl"), splits.test, schema);
  out.record("test.jsonl");

  // Probe corpora.
  std::optional<std::vector<Example>> probe_synthetic;
  if (source.probe_external) {
    probe_synthetic = source.probe_external->examples;
  } else if (config.probe.synthetic.enabled && config.corpus) {
    CorpusSpec spec = *config.corpus;
    spec.signal_rate = config.probe.synthetic.signal_rate;
    spec.noise_rate = config.probe.synthetic.noise_rate;
    spec.seed = derive_seed(root, "probe_corpus");
    const int per_cell = (config.probe.synthetic.per_language + C - 1) / C;
    probe_synthetic = generate_corpus(spec, per_cell).examples;
  }

  // Arms.
  fs::create_directories(dir / "checkpoints");
  std::vector<std::pair<std::string, ProbeReport>> probe_rows_original, probe_rows_synthetic;
  std::map<std::string, ModelParams> models;
  std::ostringstream accuracy_csv;
  accuracy_csv << "arm,accuracy";
  for (int l = 0; l < L; ++l) accuracy_csv << ",accuracy_" << schema.languages[l];
  accuracy_csv << ",prediction_skew,masked_entropy,selected_epoch\n";

  for (const ArmSpec& arm : arm_specs(config)) {
    TrainConfig tc = config.train;
    tc.seed = derive_seed(root, "train/arm=" + arm.name);
    tc.init_seed = derive_seed(root, "init");
    tc.weighting = arm.weighting;
    tc.mask_entropy_coeff = arm.lambda;
    const auto& data = arm.imbalanced_data ? paired.imbalanced : paired.balanced;
    TrainResult trained = train(data, splits.val, schema, tc);

    json manifest{{"arm", arm.name}, {"train", tc}, {"seed", root}};
    save_checkpoint(out.path("checkpoints/" + arm.name + ".pbl"), trained.params, schema.vocab.hash(), manifest);
    out.record("checkpoints/" + arm.name + ".pbl");
    out.json_file("train/" + arm.name + ".json", to_json(trained.report));

    ArmResult ar;
    ar.name = arm.name;
    ar.report = trained.report;
    ar.metrics = evaluate(trained.params, splits.test, L, C);
    ar.prediction_skew = prediction_skew(ar.metrics, result.imbalanced_counts);
    const std::vector<TokenId> mask_only(1, schema.vocab.mask_id());
    ar.masked_probs = forward(trained.params, mask_only).probs;
    ar.masked_entropy = -mask_entropy_term(ar.masked_probs);
    out.json_file("eval/" + arm.name + ".json", to_json(ar.metrics, schema));
    out.text("eval/" + arm.name + "_predictions.csv", prediction_distribution_csv(ar.metrics, schema));

    const std::uint64_t probe_seed = derive_seed(root, "probe");
    const ProbeData original = extract_features(trained.params, splits.test);
    ar.probe_original = cross_validate(original.features, original.labels, config.probe.folds, probe_seed,
                                       config.probe.logreg);
    probe_rows_original.emplace_back(arm.name, *ar.probe_original);
    if (probe_synthetic) {
      const ProbeData synth = extract_features(trained.params, *probe_synthetic);
      ar.probe_synthetic = cross_validate(synth.features, synth.labels, config.probe.folds, probe_seed,
                                          config.probe.logreg);
      probe_rows_synthetic.emplace_back(arm.name, *ar.probe_synthetic);
    }

    accuracy_csv << arm.name << ',' << fmt(ar.metrics.accuracy);
    for (double a : ar.metrics.language_accuracy) accuracy_csv << ',' << fmt(a);
    accuracy_csv << ',' << fmt(ar.prediction_skew) << ',' << fmt(ar.masked_entropy) << ','
                 << ar.report.selected_epoch << '\n';
    models.emplace(arm.name, std::move(trained.params));
    result.arms.emplace(arm.name, std::move(ar));
  }
  out.text("accuracy.csv", accuracy_csv.str());
  out.text("probe_original.csv", probe_csv(probe_rows_original, "original"));
  if (!probe_rows_synthetic.empty()) {
    out.text("probe_synthetic.csv", probe_csv(probe_rows_synthetic, "synthetic"));
  }

  // Cumulative SHAP differences on a per-cell subset of the test split.
  const auto explained = take_per_cell(splits.test, L, C, config.explain_per_cell);
  ExplainConfig ec = config.explain;
  ec.seed = derive_seed(root, "explain");
  std::ostringstream base_csv;
  base_csv << "reference,compared,mean_abs_base_gap\n";
  for (const auto& [ref, cmp] : comparisons(config)) {
    CumulativeDiffReport report = cumulative_diff(models.at(ref), models.at(cmp), explained, L, ec);
    out.text("shapdiff_" + cmp + ".csv", cumulative_diff_csv(report, schema));
    json sidecar = cumulative_diff_sidecar(report, schema);
    sidecar["reference"] = ref;
    sidecar["compared"] = cmp;
    out.json_file("shapdiff_" + cmp + ".json", sidecar);
    base_csv << ref << ',' << cmp << ',' << fmt(mean_base_gap(report)) << '\n';
    result.shap_diff.emplace(cmp, std::move(report));
  }
  out.text("base_values.csv", base_csv.str());
  result.ok = true;
  return result;
}

json summarize(const ExperimentConfig& config, const std::vector<SeedResult>& seeds, const Schema& schema,
               Writer& out) {
  json summary;
  summary["name"] = config.name;
  summary["config_hash"] = config_hash(config.source);
  std::vector<std::uint64_t> ok_seeds, failed;
  for (const auto& s : seeds) (s.ok ? ok_seeds : failed).push_back(s.seed);
  summary["seeds"] = ok_seeds;
  summary["failed_seeds"] = failed;

  const auto arms = arm_specs(config);
  std::ostringstream acc_csv, lid_csv, skew_csv, shap_csv;
  acc_csv << "arm,mean_accuracy,std_accuracy,n_seeds\n";
  lid_csv << "arm,corpus,mean_accuracy,std_accuracy,n_seeds\n";
  skew_csv << "arm,mean_spearman,std_spearman,n_seeds\n";
  shap_csv << "compared,language,label,category,mean_cum_diff,std_cum_diff,n_seeds\n";

  for (const ArmSpec& arm : arms) {
    std::vector<double> acc, skew, entropy, lid_orig, lid_syn;
    for (const auto& s : seeds) {
      if (!s.ok) continue;
      const ArmResult& r = s.arms.at(arm.name);
      acc.push_back(r.metrics.accuracy);
      skew.push_back(r.prediction_skew);
      entropy.push_back(r.masked_entropy);
      if (r.probe_original) lid_orig.push_back(r.probe_original->mean_accuracy);
      if (r.probe_synthetic) lid_syn.push_back(r.probe_synthetic->mean_accuracy);
    }
    if (acc.empty()) continue;
    summary["accuracy"][arm.name] = stats_json(acc);
    summary["prediction_skew"][arm.name] = stats_json(skew);
    summary["masked_entropy"][arm.name] = stats_json(entropy);
    summary["lid"]["original"][arm.name] = stats_json(lid_orig);
    acc_csv << arm.name << ',' << fmt(mean(acc)) << ',' << fmt(stddev(acc)) << ',' << acc.size() << '\n';
    skew_csv << arm.name << ',' << fmt(mean(skew)) << ',' << fmt(stddev(skew)) << ',' << skew.size() << '\n';
    lid_csv << arm.name << ",original," << fmt(mean(lid_orig)) << ',' << fmt(stddev(lid_orig)) << ','
            << lid_orig.size() << '\n';
    if (!lid_syn.empty()) {
      summary["lid"]["synthetic"][arm.name] = stats_json(lid_syn);
      lid_csv << arm.name << ",synthetic," << fmt(mean(lid_syn)) << ',' << fmt(stddev(lid_syn)) << ','
              << lid_syn.size() << '\n';
    }
  }

  for (const auto& [ref, cmp] : comparisons(config)) {
    std::vector<double> gaps;
    std::map<std::tuple<int, int, int>, std::vector<double>> cells;
    for (const auto& s : seeds) {
      if (!s.ok) continue;
      const auto& report = s.shap_diff.at(cmp);
      gaps.push_back(mean_base_gap(report));
      for (const auto& r : report.rows) {
        cells[{r.label, r.language, static_cast<int>(r.category)}].push_back(r.mean_cum_diff);
      }
    }
    if (gaps.empty()) continue;
    summary["base_gap"][cmp] = stats_json(gaps);
    auto rows = json::array();
    for (const auto& [key, values] : cells) {
      const auto [label, language, category] = key;
      const auto cat = to_string(static_cast<ShapCategory>(category));
      rows.push_back({{"language", schema.languages.at(language)},
                      {"label", schema.labels.at(label)},
                      {"category", cat},
                      {"mean", mean(values)},
                      {"std", stddev(values)},
                      {"values", values}});
      shap_csv << cmp << ',' << schema.languages.at(language) << ',' << schema.labels.at(label) << ','
               << cat << ',' << fmt(mean(values)) << ',' << fmt(stddev(values)) << ',' << values.size()
               << '\n';
    }
    summary["shap_diff"][cmp] = std::move(rows);
  }

  out.text("table_accuracy.csv", acc_csv.str());
  out.text("table_lid.csv", lid_csv.str());
  out.text("table_prediction_skew.csv", skew_csv.str());
  out.text("table_shapdiff.csv", shap_csv.str());
  out.json_file("summary.json", summary);
  return summary;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error("experiment", std::string("config field \"") + key + "\": " + e.what());
  }
}

}  // namespace

bool ExperimentResult::all_ok() const {
  return std::all_of(seeds.begin(), seeds.end(), [](const SeedResult& s) { return s.ok; });
}

std::string config_hash(const json& j) { return hex_digest(j.dump()); }

ExperimentConfig parse_experiment_config(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) fail("experiment config must be a JSON object");
  static const std::set<std::string> kKeys = {"name", "corpus", "corpus_path", "joint", "subset_size",
                                              "val_size", "test_size", "train", "mask_entropy",
                                              "explain", "probe", "seeds", "output_dir"};
  for (const auto& [key, value] : j.items()) {
    if (!kKeys.count(key)) fail("unknown config field \"" + key + "\"");
  }
  ExperimentConfig c;
  c.source = j;
  try {
    c.name = get_or<std::string>(j, "name", c.name);
    if (j.contains("corpus") == j.contains("corpus_path")) {
      fail("config needs exactly one of \"corpus\" and \"corpus_path\"");
    }
    if (j.contains("corpus")) c.corpus = j["corpus"].get<CorpusSpec>();
    if (j.contains("corpus_path")) {
      fs::path p = j["corpus_path"].get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      c.corpus_path = p.string();
    }
    if (j.contains("joint")) {
      const json& jj = j["joint"];
      if (jj.contains("table")) {
        c.joint_table = jj["table"].get<std::vector<std::vector<double>>>();
      } else {
        c.joint_preset = jj.value("preset", c.joint_preset);
      }
    }
    c.subset_size = get_or(j, "subset_size", c.subset_size);
    c.val_size = get_or(j, "val_size", c.val_size);
    c.test_size = get_or(j, "test_size", c.test_size);
    if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
    if (j.contains("mask_entropy")) {
      const json& me = j["mask_entropy"];
      c.mask_entropy_coeff = me.is_number() ? me.get<double>() : me.value("coeff", 0.0);
    }
    if (j.contains("explain")) {
      c.explain = j["explain"].get<ExplainConfig>();
      c.explain_per_cell = j["explain"].value("per_cell", c.explain_per_cell);
    }
    if (j.contains("probe")) {
      const json& jp = j["probe"];
      c.probe.folds = jp.value("folds", c.probe.folds);
      c.probe.logreg = jp.get<LogRegConfig>();
      if (jp.contains("synthetic")) {
        const json& js = jp["synthetic"];
        auto& s = c.probe.synthetic;
        s.enabled = js.value("enabled", s.enabled);
        s.per_language = js.value("per_language", s.per_language);
        s.signal_rate = js.value("signal_rate", s.signal_rate);
        s.noise_rate = js.value("noise_rate", s.noise_rate);
      }
      if (jp.contains("corpus_path")) {
        fs::path p = jp["corpus_path"].get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        c.probe.corpus_path = p.string();
      }
    }
    c.seeds = get_or(j, "seeds", c.seeds);
    c.output_dir = get_or(j, "output_dir", c.output_dir);
  } catch (const json::exception& e) {
    fail(std::string("malformed experiment config: ") + e.what());
  }
  if (c.seeds.empty()) fail("config needs at least one seed");
  c.train.validate();
  if (c.corpus) c.corpus->validate();
  if (c.explain_per_cell < 0) fail("explain.per_cell must be non-negative");
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  if (!fs::exists(path)) fail("config file not found: " + path.string());
  return parse_experiment_config(read_json(path), path.parent_path());
}

json experiment_config_schema() {
  const json number{{"type", "number"}};
  const json integer{{"type", "integer"}};
  return {
      {"$schema", "https://json-schema.org/draft/2020-12/schema"},
      {"title", "langbal experiment"},
      {"type", "object"},
      {"additionalProperties", false},
      {"required", {"seeds"}},
      {"oneOf", {{{"required", {"corpus"}}}, {{"required", {"corpus_path"}}}}},
      {"properties",
       {{"name", {{"type", "string"}}},
        {"corpus",
         {{"type", "object"},
          {"description", "synthetic corpus spec; its seed is replaced per run seed"},
          {"properties",
           {{"n_languages", integer}, {"n_classes", integer}, {"min_tokens", integer},
            {"max_tokens", integer}, {"signal_rate", number}, {"noise_rate", number},
            {"fillers_per_language", integer}, {"signals_per_cell", integer}}}}},
        {"corpus_path", {{"type", "string"}, {"description", "JSONL pool (id, lang, label, tokens|text)"}}},
        {"joint",
         {{"type", "object"},
          {"properties",
           {{"preset", {{"enum", {"amazon_skew", "xnli_skew", "uniform"}}}},
            {"table", {{"type", "array"}, {"items", {{"type", "array"}, {"items", number}}}}}}}}},
        {"subset_size", integer},
        {"val_size", integer},
        {"test_size", integer},
        {"train",
         {{"type", "object"},
          {"properties",
           {{"epochs", integer}, {"batch_size", integer}, {"learning_rate", number},
            {"validation_every", integer},
            {"init",
             {{"type", "object"},
              {"properties", {{"embed", integer}, {"hidden", integer}, {"embedding_scale", number}}}}}}}}},
        {"mask_entropy",
         {{"type", "object"},
          {"description", "coeff > 0 adds balanced_me, imbalanced_me and imbalanced_cw_me arms"},
          {"properties", {{"coeff", number}}}}},
        {"explain",
         {{"type", "object"},
          {"properties",
           {{"threshold", number}, {"exact_limit", integer}, {"permutations", integer},
            {"label_mode", {{"enum", {"fixed", "true_label"}}}},
            {"target_labels", {{"type", "array"}, {"items", integer}}},
            {"per_cell", integer}}}}},
        {"probe",
         {{"type", "object"},
          {"properties",
           {{"folds", integer}, {"l2", number}, {"max_iters", integer}, {"tolerance", number},
            {"corpus_path", {{"type", "string"}}},
            {"synthetic",
             {{"type", "object"},
              {"properties",
               {{"enabled", {{"type", "boolean"}}}, {"per_language", integer},
                {"signal_rate", number}, {"noise_rate", number}}}}}}}}},
        {"seeds", {{"type", "array"}, {"items", integer}, {"minItems", 1}}},
        {"output_dir", {{"type", "string"}}}}}};
}

ExperimentResult run_experiment(const ExperimentConfig& config, const fs::path& out_dir) {
  PoolSource source;
  if (config.corpus_path) {
    if (!fs::exists(*config.corpus_path)) fail("corpus file not found: " + *config.corpus_path);
    source.ingested = load_jsonl(*config.corpus_path);
  }
  if (config.probe.corpus_path) {
    if (!fs::exists(*config.probe.corpus_path)) {
      fail("probe corpus file not found: " + *config.probe.corpus_path);
    }
    const Schema schema = source.ingested ? source.ingested->schema : synthetic_schema(*config.corpus);
    source.probe_external = load_jsonl(*config.probe.corpus_path, schema);
  }

  ExperimentResult result;
  fs::create_directories(out_dir);
  for (std::uint64_t seed : config.seeds) {
    const fs::path dir = out_dir / ("seed_" + std::to_string(seed));
    try {
      result.seeds.push_back(run_seed(config, source, seed, dir, result.files));
    } catch (const std::exception& e) {
      SeedResult failed;
      failed.seed = seed;
      failed.dir = dir;
      failed.error = e.what();
      result.seeds.push_back(std::move(failed));
    }
  }
  result.schema = source.ingested ? source.ingested->schema : synthetic_schema(*config.corpus);
  Writer out(out_dir, result.files);
  result.summary = summarize(config, result.seeds, result.schema, out);
  return result;
}

}  // namespace langbal
