#include "dguide/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "dguide/checksum.hpp"
#include "dguide/sampler.hpp"

#ifndef DGUIDE_VERSION
#define DGUIDE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace dguide {

std::string code_version() { return DGUIDE_VERSION; }

StageSeeds StageSeeds::from_global(std::uint64_t seed) {
  return {derive_seed(seed, "data"), derive_seed(seed, "init"), derive_seed(seed, "training"),
          derive_seed(seed, "sampling")};
}

nlohmann::json StageSeeds::to_json() const {
  return {{"data", data}, {"init", init}, {"training", training}, {"sampling", sampling}};
}

TrainConfig default_stage_training() {
  TrainConfig t;
  t.max_steps = 2000;
  t.early_stop_window = 0;
  t.ema_decay = 0.995;
  t.cosine_lr = true;
  return t;
}

NoiseSchedule PipelineConfig::schedule() const { return make_linear_schedule(diffusion_steps, beta_start, beta_end); }

void PipelineConfig::validate() const {
  (void)schedule();
  require(base_samples >= 1 && paired_samples >= 1 && fake_samples >= 1 && eval_samples >= 1, ErrorKind::Config,
          "sample counts must be at least 1");
  base_training.validate();
  disc_training.validate();
}

namespace {

// Seeds and loss weights are assigned per stage by the pipeline itself.
nlohmann::json training_json(const TrainConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  for (const char* k : {"seed", "init_seed", "w_disc", "w_denoise"}) j.erase(k);
  return j;
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  require(j.is_object(), ErrorKind::Config, where + " must be a JSON object");
  for (const auto& item : j.items())
    require(allowed.count(item.key()) == 1, ErrorKind::Config, "unknown key '" + item.key() + "' in " + where);
}

TrainConfig training_from_json(const nlohmann::json& j, const std::string& where, const TrainConfig& defaults) {
  check_keys(j,
             {"learning_rate", "beta1", "beta2", "epsilon", "batch_size", "max_steps", "early_stop_window",
              "early_stop_tolerance", "ema_decay", "cosine_lr"},
             where);
  return train_config_from_json(j, defaults);
}

}  // namespace

nlohmann::json to_json(const PipelineConfig& cfg) {
  return {{"seed", cfg.seed},
          {"diffusion_steps", cfg.diffusion_steps},
          {"beta_start", cfg.beta_start},
          {"beta_end", cfg.beta_end},
          {"base_samples", cfg.base_samples},
          {"paired_samples", cfg.paired_samples},
          {"fake_samples", cfg.fake_samples},
          {"eval_samples", cfg.eval_samples},
          {"base_training", training_json(cfg.base_training)},
          {"disc_training", training_json(cfg.disc_training)}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"seed", "diffusion_steps", "beta_start", "beta_end", "base_samples", "paired_samples", "fake_samples",
              "eval_samples", "base_training", "disc_training"},
             "pipeline config");
  PipelineConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.diffusion_steps = j.value("diffusion_steps", c.diffusion_steps);
    c.beta_start = j.value("beta_start", c.beta_start);
    c.beta_end = j.value("beta_end", c.beta_end);
    c.base_samples = j.value("base_samples", c.base_samples);
    c.paired_samples = j.value("paired_samples", c.paired_samples);
    c.fake_samples = j.value("fake_samples", c.fake_samples);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("bad pipeline config: ") + e.what());
  }
  if (j.contains("base_training")) c.base_training = training_from_json(j["base_training"], "base_training", c.base_training);
  if (j.contains("disc_training")) c.disc_training = training_from_json(j["disc_training"], "disc_training", c.disc_training);
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::MissingArtifact, "config '" + path + "' not found");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "cannot parse config '" + path + "': " + e.what());
  }
  return pipeline_config_from_json(j);
}

std::string config_hash(const nlohmann::json& j) { return sha256_hex(j.dump()); }

std::string resolve_run_dir(const std::string& explicit_dir, const std::string& command, const std::string& hash) {
  fs::path dir;
  if (!explicit_dir.empty()) {
    dir = explicit_dir;
  } else {
    const char* root = std::getenv("DGUIDE_RUN_ROOT");
    dir = fs::path(root && *root ? root : "runs") / (command + "-" + hash.substr(0, 12));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::Io, "cannot create run directory '" + dir.string() + "': " + ec.message());
  return dir.string();
}

Manifest::Manifest(std::string command, nlohmann::json config) : command_(std::move(command)), config_(std::move(config)) {}

void Manifest::set(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }

void Manifest::add_input(const std::string& role, const std::string& path) { inputs_.emplace_back(role, path); }

void Manifest::add_artifact(const std::string& role, const std::string& path) { artifacts_.emplace_back(role, path); }

nlohmann::json Manifest::to_json(const std::string& run_dir) const {
  auto entries = [&](const std::vector<std::pair<std::string, std::string>>& list) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [role, path] : list) {
      const fs::path rel = fs::path(path).lexically_relative(run_dir);
      const bool inside = !rel.empty() && *rel.begin() != "..";
      out.push_back({{"role", role}, {"path", inside ? rel.generic_string() : path}, {"sha256", file_sha256(path)}});
    }
    return out;
  };
  nlohmann::json j{{"command", command_},
                   {"code_version", code_version()},
                   {"config", config_},
                   {"config_hash", config_hash(config_)},
                   {"inputs", entries(inputs_)},
                   {"artifacts", entries(artifacts_)}};
  for (const auto& item : extra_.items()) j[item.key()] = item.value();
  return j;
}

void Manifest::write(const std::string& run_dir) const {
  const std::string path = (fs::path(run_dir) / "manifest.json").string();
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  out << to_json(run_dir).dump(2) << '\n';
  require(out.good(), ErrorKind::Io, "failed writing '" + path + "'");
}

std::pair<double, double> loss_weights(const std::string& loss) {
  if (loss == "disc") return {1.0, 0.0};
  if (loss == "denoise") return {0.0, 1.0};
  if (loss == "all") return {1.0, 1.0};
  fail(ErrorKind::Config, "unknown loss '" + loss + "' (expected disc, denoise or all)");
}

const Table1Row& Table1Result::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  fail(ErrorKind::Contract, "no row '" + name + "' in the " + setting + " table");
}

namespace {

std::string slug(const std::string& name) {
  if (name == "GT") return "gt";
  if (name == "No joint") return "no_joint";
  if (name == "L_disc") return "l_disc";
  if (name == "L_denoise") return "l_denoise";
  return "l_all";
}

std::string path_in(const std::string& run_dir, const std::string& rel) {
  const fs::path p = fs::path(run_dir) / rel;
  fs::create_directories(p.parent_path());
  return p.string();
}

void say(std::ostream* progress, const std::string& text) {
  if (progress) *progress << text << std::endl;
}

}  // namespace

std::vector<Table1Result> reproduce_table1(const std::string& setting, const PipelineConfig& cfg,
                                           const std::string& run_dir, std::ostream* progress) {
  cfg.validate();
  std::vector<std::string> settings;
  if (setting == "both")
    settings = {"ind", "ood"};
  else if (setting == "ind" || setting == "ood")
    settings = {setting};
  else
    fail(ErrorKind::Config, "unknown setting '" + setting + "' (expected ind, ood or both)");

  const StageSeeds seeds = StageSeeds::from_global(cfg.seed);
  const nlohmann::json cfg_json = to_json(cfg);
  const std::string hash = config_hash(cfg_json);
  Manifest manifest("reproduce-table1", cfg_json);
  manifest.set("setting", setting);
  manifest.set("seeds", seeds.to_json());

  const Dataset base_data = make_dataset("base", cfg.base_samples, derive_seed(seeds.data, "base"));
  const std::string base_data_path = path_in(run_dir, "data/base.csv");
  save_dataset(base_data, base_data_path);
  manifest.add_artifact("base_dataset", base_data_path);

  say(progress, "training base model");
  TrainConfig bt = cfg.base_training;
  bt.seed = derive_seed(seeds.training, "base");
  bt.init_seed = derive_seed(seeds.init, "base");
  const BaseTraining base = train_base(base_data.samples, bt, cfg.schedule());
  const std::string base_path = path_in(run_dir, "models/base.ckpt");
  save_base(base.model, base_path);
  write_loss_log(base.log, path_in(run_dir, "losses/base.csv"));
  manifest.add_artifact("base_checkpoint", base_path);
  manifest.add_artifact("base_loss_log", path_in(run_dir, "losses/base.csv"));
  const std::string base_sha = file_sha256(base_path);

  say(progress, "generating fake pool");
  const FakePairStore pool = generate_fake_pool(base.model, base.model, cfg.fake_samples,
                                                derive_seed(seeds.sampling, "fake_pool"));
  const std::string pool_path = path_in(run_dir, "data/fake_pool.csv");
  save_fake_pool(pool, pool_path);
  manifest.add_artifact("fake_pool", pool_path);

  std::vector<Table1Result> results;
  for (const std::string& s : settings) {
    const GmmSpec target = spec_for_kind(s);
    const Dataset paired = make_dataset(s, cfg.paired_samples, derive_seed(seeds.data, "paired/" + s));
    const std::string paired_path = path_in(run_dir, "data/paired_" + s + ".csv");
    save_dataset(paired, paired_path);
    manifest.add_artifact("paired_dataset_" + s, paired_path);

    SamplerConfig sc;
    sc.n_samples = cfg.eval_samples;
    sc.seed = derive_seed(seeds.sampling, "eval/" + s);

    Table1Result result{s, {}};
    auto record = [&](const std::string& name, const Tensor& samples) {
      const std::string stem = s + "_" + slug(name);
      const std::string dump = path_in(run_dir, "samples/" + stem + ".csv");
      export_scatter(samples, dump);
      const EvaluationReport report = evaluate(samples, target, s, sc.seed, hash);
      const std::string report_path = path_in(run_dir, "reports/" + stem + ".json");
      write_report(report, report_path);
      manifest.add_artifact("samples_" + stem, dump);
      manifest.add_artifact("report_" + stem, report_path);
      result.rows.push_back({name, report.nll, report.coverage});
      say(progress, "  " + s + " " + name + ": NLL " + std::to_string(report.nll.mean));
    };

    say(progress, "[" + s + "] ground truth and independent sampling");
    record("GT", sample(target, cfg.eval_samples, derive_seed(seeds.data, "gt/" + s)));
    sc.mode = SampleMode::Independent;
    record("No joint", sample_joint(base.model, base.model, nullptr, sc));

    for (const auto& [loss, name] : std::vector<std::pair<std::string, std::string>>{
             {"disc", "L_disc"}, {"denoise", "L_denoise"}, {"all", "L_all"}}) {
      say(progress, "[" + s + "] training discriminator with " + name);
      TrainConfig dt = cfg.disc_training;
      std::tie(dt.w_disc, dt.w_denoise) = loss_weights(loss);
      dt.seed = derive_seed(seeds.training, "disc/" + s);
      dt.init_seed = derive_seed(seeds.init, "disc");
      DiscriminatorTraining trained = train_discriminator(base.model, base.model, paired.samples, pool, dt);
      nlohmann::json prov = trained.disc.provenance();
      prov["base_x_sha256"] = base_sha;
      prov["base_y_sha256"] = base_sha;
      prov["setting"] = s;
      const JointDiscriminator disc(trained.disc.params(), trained.disc.schedules(), prov);
      const std::string stem = s + "_" + loss;
      const std::string disc_path = path_in(run_dir, "models/disc_" + stem + ".ckpt");
      save_discriminator(disc, disc_path);
      write_loss_log(trained.log, path_in(run_dir, "losses/disc_" + stem + ".csv"));
      manifest.add_artifact("disc_checkpoint_" + stem, disc_path);
      manifest.add_artifact("disc_loss_log_" + stem, path_in(run_dir, "losses/disc_" + stem + ".csv"));
      sc.mode = SampleMode::Guided;
      record(name, sample_joint(base.model, base.model, &disc, sc));
    }
    results.push_back(std::move(result));
  }

  const std::string table_path = path_in(run_dir, "table1.txt");
  {
    std::ofstream out(table_path, std::ios::binary);
    out << format_table1(results);
    require(out.good(), ErrorKind::Io, "failed writing '" + table_path + "'");
  }
  const std::string json_path = path_in(run_dir, "table1.json");
  {
    std::ofstream out(json_path, std::ios::binary);
    out << to_json(results).dump(2) << '\n';
    require(out.good(), ErrorKind::Io, "failed writing '" + json_path + "'");
  }
  manifest.add_artifact("table", table_path);
  manifest.add_artifact("table_json", json_path);
  manifest.write(run_dir);
  return results;
}

std::string format_table1(const std::vector<Table1Result>& results) {
  std::ostringstream out;
  out << std::left << std::setw(8) << "setting" << std::setw(12) << "method" << std::right << std::setw(10) << "NLL"
      << std::setw(10) << "stderr" << std::setw(10) << "captured" << '\n';
  out << std::fixed;
  for (const auto& r : results)
    for (const auto& row : r.rows)
      out << std::left << std::setw(8) << r.setting << std::setw(12) << row.name << std::right << std::setprecision(3)
          << std::setw(10) << row.nll.mean << std::setw(10) << row.nll.std_error << std::setw(10)
          << row.coverage.captured << '\n';
  return out.str();
}

nlohmann::json to_json(const std::vector<Table1Result>& results) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
      rows.push_back({{"method", row.name},
                      {"nll", row.nll.mean},
                      {"nll_std_error", row.nll.std_error},
                      {"n", row.nll.n},
                      {"captured", row.coverage.captured},
                      {"mode_counts", row.coverage.counts}});
    out.push_back({{"setting", r.setting}, {"rows", rows}});
  }
  return out;
}

}  // namespace dguide
