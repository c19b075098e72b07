#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dguide/evaluator.hpp"
#include "dguide/trainer.hpp"

namespace dguide {

/// Version string recorded in every manifest.
std::string code_version();

/// Named per-stage seeds expanded from one global seed.
struct StageSeeds {
  std::uint64_t data = 0;
  std::uint64_t init = 0;
  std::uint64_t training = 0;
  std::uint64_t sampling = 0;

  static StageSeeds from_global(std::uint64_t seed);
  nlohmann::json to_json() const;
};

/// Pipeline recipe for both stages: 2000 steps, cosine-annealed learning rate, EMA 0.995, no early stop.
TrainConfig default_stage_training();

/// Everything reproduce-table1 needs; every field defaults to the toy setup.
struct PipelineConfig {
  std::uint64_t seed = 0;
  int diffusion_steps = 500;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::int64_t base_samples = 500;
  std::int64_t paired_samples = 500;
  std::int64_t fake_samples = 500;
  std::int64_t eval_samples = 4000;
  TrainConfig base_training = default_stage_training();
  TrainConfig disc_training = default_stage_training();

  NoiseSchedule schedule() const;
  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a configuration error.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::string& path);

/// sha256 of the canonical JSON text.
std::string config_hash(const nlohmann::json& j);

/// Explicit directory if given, else $DGUIDE_RUN_ROOT (default "runs") /
/// "<command>-<first 12 hex of the config hash>". Created if missing.
std::string resolve_run_dir(const std::string& explicit_dir, const std::string& command, const std::string& hash);

/// Run manifest: config, seeds, checksummed inputs and artifacts, code version.
class Manifest {
 public:
  Manifest(std::string command, nlohmann::json config);
  void set(const std::string& key, nlohmann::json value);
  void add_input(const std::string& role, const std::string& path);
  void add_artifact(const std::string& role, const std::string& path);
  /// Paths are stored relative to `run_dir` when inside it.
  void write(const std::string& run_dir) const;
  nlohmann::json to_json(const std::string& run_dir) const;

 private:
  std::string command_;
  nlohmann::json config_;
  nlohmann::json extra_ = nlohmann::json::object();
  std::vector<std::pair<std::string, std::string>> inputs_, artifacts_;
};

/// Loss name -> (w_disc, w_denoise): disc (1, 0), denoise (0, 1), all (1, 1).
std::pair<double, double> loss_weights(const std::string& loss);

struct Table1Row {
  std::string name;  // GT, No joint, L_disc, L_denoise, L_all
  NllEstimate nll;
  ModeCoverage coverage;
};

struct Table1Result {
  std::string setting;  // ind | ood
  std::vector<Table1Row> rows;

  const Table1Row& row(const std::string& name) const;
};

/// Runs the {setting} x {GT, No joint, L_disc, L_denoise, L_all} grid into
/// `run_dir`: data, base checkpoint, fake pool, discriminators, sample dumps,
/// reports, loss logs, table1.txt / table1.json and manifest.json.
/// `setting` is ind, ood or both; one base checkpoint serves all settings.
std::vector<Table1Result> reproduce_table1(const std::string& setting, const PipelineConfig& cfg,
                                           const std::string& run_dir, std::ostream* progress = nullptr);

std::string format_table1(const std::vector<Table1Result>& results);
nlohmann::json to_json(const std::vector<Table1Result>& results);

}  // namespace dguide
