#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfrl/autoencoder.hpp"
#include "cfrl/blackbox.hpp"
#include "cfrl/ddpg.hpp"
#include "cfrl/generator.hpp"
#include "cfrl/metrics.hpp"

namespace cfrl::pipeline {

namespace fs = std::filesystem;

struct BlackboxSettings {
  std::string kind = "lr";  // "lr" or "dt"
  blackbox::LogisticRegressionConfig lr{0.1, 500, 1e-2};
  blackbox::DecisionTreeConfig dt{3, 4};
};

struct GenerateSettings {
  std::string method = "rl";     // "rl" or "mo"
  std::string targets = "other";  // "other", "same" or a class name
  std::size_t max_instances = 1000;
  std::size_t diverse = 0;        // 0: greedy; k: k conditioned samples per instance
};

struct RunConfig {
  fs::path csv;
  fs::path schema;
  std::optional<fs::path> constraints;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  BlackboxSettings blackbox;
  ae::AutoencoderConfig autoencoder;
  ddpg::TrainConfig ddpg;
  GenerateSettings generate;
  metrics::MmdConfig mmd;

  // Relative paths are resolved against base_dir.
  static RunConfig from_json(const nlohmann::json& doc, const fs::path& base_dir);
  static RunConfig load(const fs::path& path);
  nlohmann::json to_json() const;
};

// Derived seed for one pipeline stage, so stages reproduce independently.
std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage);
// Hash of one config section's canonical JSON text.
std::uint64_t config_hash(const nlohmann::json& section);

// Files inside an output directory.
struct Workspace {
  fs::path dir;

  fs::path config() const { return dir / "config.json"; }
  fs::path dataset() const { return dir / "dataset.json"; }
  fs::path blackbox() const { return dir / "blackbox.ckpt"; }
  fs::path blackbox_report() const { return dir / "blackbox.json"; }
  fs::path autoencoder() const { return dir / "autoencoder.ckpt"; }
  fs::path actor() const { return dir / "actor.ckpt"; }
  fs::path critic() const { return dir / "critic.ckpt"; }
  fs::path train_log() const { return dir / "train_log.jsonl"; }
  fs::path results(const std::string& method) const { return dir / ("results_" + method + ".json"); }
  fs::path results_csv(const std::string& method) const { return dir / ("results_" + method + ".csv"); }
  fs::path report(const std::string& method) const { return dir / ("report_" + method + ".json"); }
  fs::path report_text(const std::string& method) const { return dir / ("report_" + method + ".txt"); }
};

// A dataset re-materialized from an ingest artifact.
struct LoadedData {
  data::Dataset dataset;
  std::vector<data::InstanceRecord> train;
  std::vector<std::size_t> train_labels;
  std::vector<data::InstanceRecord> test;
  std::vector<std::size_t> test_labels;
};

LoadedData load_dataset(const Workspace& ws);
std::unique_ptr<blackbox::BlackBoxModel> load_blackbox(const Workspace& ws, const data::TabularSchema& schema);
ae::TabularAutoencoder load_autoencoder(const Workspace& ws, const data::TabularSchema& schema);
ddpg::TrainedPolicy load_policy(const Workspace& ws, const data::TabularSchema& schema);
cond::ConstraintSet load_constraints(const RunConfig& cfg, const data::TabularSchema& schema);

// Each command reads its inputs from the workspace and returns a short JSON summary.
nlohmann::json cmd_ingest(const RunConfig& cfg, const Workspace& ws);
nlohmann::json cmd_train_blackbox(const RunConfig& cfg, const Workspace& ws);
nlohmann::json cmd_train_ae(const RunConfig& cfg, const Workspace& ws);
nlohmann::json cmd_train_cf(const RunConfig& cfg, const Workspace& ws, bool verbose = false);
// instances: optional CSV of rows to explain; defaults to the test split.
nlohmann::json cmd_generate(const RunConfig& cfg, const Workspace& ws,
                            const std::optional<fs::path>& instances = std::nullopt);
nlohmann::json cmd_evaluate(const RunConfig& cfg, const Workspace& ws, const std::string& method);

// Full pipeline for seeds seed..seed+repeats-1 (one sub-directory each) with an RL and an MO
// evaluation per seed; writes summary.json and summary.txt with mean±std rows.
nlohmann::json cmd_run(const RunConfig& cfg, const Workspace& ws, std::size_t repeats, bool verbose = false);

}  // namespace cfrl::pipeline
