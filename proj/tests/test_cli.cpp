#include <sys/wait.h>

#include <cstdlib>
#include <set>

#include "doctest.h"
#include "langbal/experiment.hpp"
#include "langbal/io.hpp"
#include "support.hpp"

using namespace langbal;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kExe = LANGBAL_EXE;
const fs::path kSource = LANGBAL_SOURCE_DIR;

// Runs the tool; stderr is captured into `err` when given.
int run(const std::string& args, const fs::path& err = {}) {
  std::string cmd = kExe + " " + args + " > /dev/null";
  cmd += err.empty() ? " 2> /dev/null" : " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::set<std::string> ids_of(const fs::path& jsonl) {
  std::set<std::string> out;
  std::ifstream in(jsonl);
  for (std::string line; std::getline(in, line);) out.insert(json::parse(line)["id"].get<std::string>());
  return out;
}

void check_manifest(const fs::path& dir) {
  const json m = read_json(dir / "manifest.json");
  CHECK(m["config_hash"] == config_hash(m["config"]));
  CHECK(m.contains("version"));
  CHECK(m.contains("wall_seconds"));
  std::set<std::string> listed;
  for (const auto& a : m["artifacts"]) {
    const fs::path p = dir / a["path"].get<std::string>();
    CHECK(fs::exists(p));
    CHECK(a["digest"] == file_digest(p));
    listed.insert(a["path"].get<std::string>());
  }
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel != "manifest.json") CHECK_MESSAGE(listed.count(rel), rel);
  }
}

}  // namespace

TEST_CASE("bad flags exit 2") {
  CHECK(run("--no-such-flag gen-corpus") == 2);
  CHECK(run("gen-corpus --bogus 1") == 2);
  CHECK(run("") == 2);
  CHECK(run("sample") == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("gen-corpus, uniform sample, eval, probe and shap-diff") {
  const fs::path dir = support::scratch("cli_pipeline");
  REQUIRE(run("gen-corpus --per-cell 40 --seed 5 --out " + (dir / "corpus").string()) == 0);
  check_manifest(dir / "corpus");

  const std::string corpus = (dir / "corpus" / "corpus.jsonl").string();
  REQUIRE(run("sample --corpus " + corpus + " --preset uniform -n 60 --val 30 --test 30 --seed 3 --out " +
              (dir / "uniform").string()) == 0);
  CHECK(ids_of(dir / "uniform" / "balanced.jsonl") == ids_of(dir / "uniform" / "imbalanced.jsonl"));
  CHECK(read_json(dir / "uniform" / "overlap.json")["overlap"] == 60);
  check_manifest(dir / "uniform");

  REQUIRE(run("sample --corpus " + corpus + " --preset xnli_skew -n 60 --val 30 --test 30 --seed 3 --out " +
              (dir / "skew").string()) == 0);
  CHECK(read_json(dir / "skew" / "overlap.json")["overlap"] == 50);

  const fs::path s = dir / "skew";
  REQUIRE(run("train --data " + (s / "balanced.jsonl").string() + " --val " + (s / "val.jsonl").string() +
              " --epochs 3 --seed 1 --out " + (dir / "bal").string()) == 0);
  REQUIRE(run("train --data " + (s / "imbalanced.jsonl").string() + " --val " + (s / "val.jsonl").string() +
              " --epochs 3 --weighting per_language --mask-entropy 0.5 --seed 1 --out " + (dir / "imb").string()) == 0);
  check_manifest(dir / "imb");

  REQUIRE(run("eval --checkpoint " + (dir / "imb" / "model.pbl").string() + " --data " + (s / "test.jsonl").string() +
              " --train-data " + (s / "imbalanced.jsonl").string() + " --out " + (dir / "eval").string()) == 0);
  CHECK(read_json(dir / "eval" / "eval.json").contains("prediction_skew"));
  CHECK(fs::exists(dir / "eval" / "predictions.csv"));

  REQUIRE(run("probe --checkpoint " + (dir / "bal" / "model.pbl").string() + " --data " + (s / "test.jsonl").string() +
              " --folds 3 --out " + (dir / "probe").string()) == 0);
  CHECK(read_json(dir / "probe" / "probe.json")["fold_accuracies"].size() == 3);

  REQUIRE(run("shap-diff --balanced " + (dir / "bal" / "model.pbl").string() + " --imbalanced " +
              (dir / "imb" / "model.pbl").string() + " --data " + (s / "test.jsonl").string() +
              " --labels 0 2 --permutations 200 --out " + (dir / "shap").string()) == 0);
  CHECK(support::slurp(dir / "shap" / "shapdiff.csv").rfind("language,label,category,mean_cum_diff,n_datapoints", 0) == 0);
  check_manifest(dir / "shap");
}

TEST_CASE("train with zero epochs writes the initialization") {
  const fs::path dir = support::scratch("cli_zero_epochs");
  REQUIRE(run("gen-corpus --per-cell 5 --seed 1 --out " + (dir / "c").string()) == 0);
  REQUIRE(run("train --data " + (dir / "c" / "corpus.jsonl").string() + " --epochs 0 --seed 99 --out " +
              (dir / "t").string()) == 0);
  const Schema schema = read_schema(dir / "c" / "schema.json");
  const Checkpoint ck = load_checkpoint(dir / "t" / "model.pbl", schema.vocab);
  CHECK(ck.params == init_params(schema.vocab, schema.n_classes(), InitConfig{}, 99));
}

TEST_CASE("missing inputs exit 1 with a JSON error naming the path") {
  const fs::path dir = support::scratch("cli_missing");
  CHECK(run("sample --corpus " + (dir / "nope.jsonl").string() + " -n 60 --out " + (dir / "o").string(),
            dir / "err1.txt") == 1);
  const json e1 = json::parse(support::slurp(dir / "err1.txt"));
  CHECK(e1["error"]["message"].get<std::string>().find("nope.jsonl") != std::string::npos);

  support::write_lines(dir / "cfg.json", {R"({"corpus_path": "absent.jsonl", "seeds": [1]})"});
  CHECK(run("experiment --config " + (dir / "cfg.json").string() + " --out " + (dir / "x").string(),
            dir / "err2.txt") == 1);
  const json e2 = json::parse(support::slurp(dir / "err2.txt"));
  CHECK(e2["error"]["message"].get<std::string>().find("absent.jsonl") != std::string::npos);

  support::write_lines(dir / "typo.json", {R"({"corpus": {}, "seedz": [1]})"});
  CHECK(run("experiment --config " + (dir / "typo.json").string(), dir / "err3.txt") == 1);
}

TEST_CASE("domain errors carry the originating module") {
  const fs::path dir = support::scratch("cli_domain");
  REQUIRE(run("gen-corpus --per-cell 5 --out " + (dir / "c").string()) == 0);
  CHECK(run("sample --corpus " + (dir / "c" / "corpus.jsonl").string() + " -n 600 --out " + (dir / "s").string(),
            dir / "err.txt") == 1);
  CHECK(json::parse(support::slurp(dir / "err.txt"))["error"]["module"] == "sampler");
}

TEST_CASE("print-schema emits JSON") {
  const fs::path dir = support::scratch("cli_schema");
  REQUIRE(std::system((kExe + " experiment --print-schema > " + (dir / "s.json").string()).c_str()) == 0);
  const json s = read_json(dir / "s.json");
  CHECK(s["properties"].contains("seeds"));
}

TEST_CASE("output root comes from the environment when --out is absent") {
  const fs::path dir = support::scratch("cli_env");
  const std::string cmd = "cd " + dir.string() + " && LANGBAL_OUTPUT_ROOT=" + (dir / "root").string() + " " + kExe +
                          " gen-corpus --per-cell 2 > /dev/null";
  REQUIRE(std::system(cmd.c_str()) == 0);
  CHECK(fs::exists(dir / "root" / "gen-corpus" / "corpus.jsonl"));
}

TEST_CASE("smoke experiment: files, aggregation and manifest") {
  const fs::path dir = support::scratch("cli_smoke");
  json cfg = read_json(kSource / "configs" / "smoke.json");
  cfg["seeds"] = {1, 2};
  write_json(dir / "cfg.json", cfg);
  REQUIRE(run("experiment --config " + (dir / "cfg.json").string() + " --out " + (dir / "run").string()) == 0);
  const fs::path run_dir = dir / "run";
  for (const char* seed : {"seed_1", "seed_2"}) {
    const fs::path s = run_dir / seed;
    for (const char* arm : {"balanced", "imbalanced", "imbalanced_cw"})
      CHECK(fs::exists(s / "checkpoints" / (std::string(arm) + ".pbl")));
    CHECK(std::distance(fs::directory_iterator(s / "checkpoints"), fs::directory_iterator{}) == 3);
    CHECK(fs::exists(s / "probe_original.csv"));
    CHECK(fs::exists(s / "probe_synthetic.csv"));
    CHECK(fs::exists(s / "shapdiff_imbalanced.csv"));
    CHECK(fs::exists(s / "shapdiff_imbalanced_cw.csv"));
  }
  check_manifest(run_dir);

  // Summary means are recomputable from the per-seed accuracy tables.
  const json summary = read_json(run_dir / "summary.json");
  double total = 0.0;
  for (const char* seed : {"seed_1", "seed_2"}) {
    std::ifstream in(run_dir / seed / "accuracy.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.rfind("imbalanced,", 0) == 0) total += std::stod(line.substr(line.find(',') + 1));
    }
  }
  CHECK(summary["accuracy"]["imbalanced"]["mean"].get<double>() == doctest::Approx(total / 2).epsilon(1e-9));

  // Training subsets realize the reported overlap.
  const auto a = ids_of(run_dir / "seed_1" / "balanced.jsonl");
  const auto b = ids_of(run_dir / "seed_1" / "imbalanced.jsonl");
  int shared = 0;
  for (const auto& id : a) shared += b.count(id);
  CHECK(read_json(run_dir / "seed_1" / "overlap.json")["overlap"] == shared);
}
