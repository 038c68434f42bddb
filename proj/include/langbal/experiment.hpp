#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "langbal/corpus.hpp"
#include "langbal/explain.hpp"
#include "langbal/probe.hpp"
#include "langbal/sampler.hpp"
#include "langbal/training.hpp"

namespace langbal {

struct SyntheticProbeCorpus {
  bool enabled = true;
  int per_language = 500;
  // Rates override the training corpus spec; same vocabulary, different
  // content distribution.
  double signal_rate = 0.15;
  double noise_rate = 0.05;
};

struct ProbeSettings {
  int folds = 5;
  LogRegConfig logreg;
  SyntheticProbeCorpus synthetic;
  std::optional<std::string> corpus_path;  // external probe corpus (JSONL)
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::optional<CorpusSpec> corpus;        // synthetic corpus, or
  std::optional<std::string> corpus_path;  // an ingested JSONL pool
  std::string joint_preset = "xnli_skew";
  std::optional<std::vector<std::vector<double>>> joint_table;
  int subset_size = 6000;
  int val_size = 600;
  int test_size = 1200;
  TrainConfig train;
  double mask_entropy_coeff = 0.0;  // > 0 adds the three masked-entropy arms
  ExplainConfig explain;
  int explain_per_cell = 50;  // test datapoints per (language, label) explained
  ProbeSettings probe;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "runs";
  nlohmann::json source;  // the parsed document, for hashing
};

// Relative paths in the document resolve against `base_dir`.
ExperimentConfig parse_experiment_config(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json experiment_config_schema();
std::string config_hash(const nlohmann::json& j);

struct ArmResult {
  std::string name;
  Metrics metrics;
  double prediction_skew = 0.0;  // vs the imbalanced training joint
  std::optional<ProbeReport> probe_original;
  std::optional<ProbeReport> probe_synthetic;
  std::vector<double> masked_probs;  // output on an all-mask input
  double masked_entropy = 0.0;       // nats
  TrainReport report;
};

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::filesystem::path dir;
  OverlapReport overlap;
  CountTable imbalanced_counts;
  std::map<std::string, ArmResult> arms;
  std::map<std::string, CumulativeDiffReport> shap_diff;  // keyed by compared arm
};

struct ExperimentResult {
  std::vector<SeedResult> seeds;
  nlohmann::json summary;
  std::vector<std::filesystem::path> files;
  Schema schema;

  bool all_ok() const;
};

inline const std::string kArmBalanced = "balanced";
inline const std::string kArmImbalanced = "imbalanced";
inline const std::string kArmWeighted = "imbalanced_cw";
inline const std::string kMaskEntropySuffix = "_me";

// For each seed: corpus, paired subsets, three (or six) trained arms,
// evaluation, probes and cumulative SHAP differences, written under
// out_dir/seed_<seed>/. Cross-seed aggregates go to out_dir. A failing seed
// is recorded and the remaining seeds still run.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path& out_dir);

}  // namespace langbal
