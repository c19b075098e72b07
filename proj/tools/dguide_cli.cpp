// dguide: command-line front end over the C API.
#include <dguide/dguide.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError {
  dg_status status;
  std::string message;
};

int exit_code(dg_status s) {
  switch (s) {
    case DG_OK: return 0;
    case DG_ERR_CONFIG:
    case DG_ERR_CONTRACT:
    case DG_ERR_SHAPE: return 2;
    case DG_ERR_MISSING: return 3;
    case DG_ERR_NUMERIC: return 4;
    case DG_ERR_IO: return 5;
    case DG_ERR_CHECKSUM: return 6;
    default: return 1;
  }
}

void check(dg_status s, const std::string& what) {
  if (s != DG_OK) throw CliError{s, what + ": " + dg_last_error()};
}

[[noreturn]] void config_error(const std::string& msg) { throw CliError{DG_ERR_CONFIG, msg}; }

std::string take(char* s) {
  std::string out = s ? s : "";
  dg_string_free(s);
  return out;
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
  T** out() { return &p; }
  T* get() const { return p; }
};

using Dataset = Handle<dg_dataset, dg_dataset_free>;
using Base = Handle<dg_base_model, dg_base_free>;
using Pool = Handle<dg_fake_pool, dg_fake_pool_free>;
using Disc = Handle<dg_discriminator, dg_discriminator_free>;
using Samples = Handle<dg_samples, dg_samples_free>;
using ManifestHandle = Handle<dg_manifest, dg_manifest_free>;

void require_file(const std::string& path, const std::string& role) {
  if (path.empty()) config_error("--" + role + " is required");
  if (!fs::exists(path)) throw CliError{DG_ERR_MISSING, role + " '" + path + "' not found"};
}

// Shared state of one invocation.
struct Run {
  std::string command;
  std::string config_path;
  std::string run_dir_opt;
  long long seed_override = -1;
  bool verbose = false;

  json config;     // normalized pipeline config
  json options;    // subcommand options, part of the hash
  std::string dir;
  ManifestHandle manifest;

  void begin() {
    std::string text = "{}";
    if (!config_path.empty()) {
      std::ifstream in(config_path, std::ios::binary);
      if (!in) throw CliError{DG_ERR_MISSING, "config '" + config_path + "' not found"};
      std::stringstream ss;
      ss << in.rdbuf();
      text = ss.str();
    }
    if (seed_override >= 0) {
      json j;
      try {
        j = json::parse(text);
      } catch (const json::exception& e) {
        config_error("cannot parse config: " + std::string(e.what()));
      }
      if (!j.is_object()) config_error("config must be a JSON object");
      j["seed"] = static_cast<std::uint64_t>(seed_override);
      text = j.dump();
    }
    char* normalized = nullptr;
    check(dg_config_normalize(text.c_str(), &normalized), "config");
    config = json::parse(take(normalized));

    const json full{{"command", command}, {"config", config}, {"options", options}};
    const std::string full_text = full.dump();
    char* d = nullptr;
    check(dg_resolve_run_dir(run_dir_opt.empty() ? nullptr : run_dir_opt.c_str(), command.c_str(),
                             full_text.c_str(), &d),
          "run directory");
    dir = take(d);
    check(dg_manifest_new(command.c_str(), full_text.c_str(), manifest.out()), "manifest");
    set("global_seed", json(seed()));
  }

  std::uint64_t seed() const { return config.at("seed").get<std::uint64_t>(); }

  std::uint64_t stage_seed(const char* stage, const std::string& label) const {
    std::uint64_t out = 0;
    check(dg_stage_seed(seed(), stage, label.c_str(), &out), "seed");
    return out;
  }

  std::string path(const std::string& name) const { return (fs::path(dir) / name).string(); }

  void set(const std::string& key, const json& value) {
    check(dg_manifest_set(manifest.get(), key.c_str(), value.dump().c_str()), "manifest");
  }
  void input(const std::string& role, const std::string& p) {
    check(dg_manifest_add_input(manifest.get(), role.c_str(), p.c_str()), "manifest input " + role);
  }
  void artifact(const std::string& role, const std::string& p) {
    check(dg_manifest_add_artifact(manifest.get(), role.c_str(), p.c_str()), "manifest artifact " + role);
  }
  void finish() {
    check(dg_manifest_write(manifest.get(), dir.c_str()), "manifest");
    std::cout << "run directory: " << dir << "\n";
  }

  dg_schedule_options schedule() const {
    dg_schedule_options s;
    dg_schedule_options_default(&s);
    s.steps = config.at("diffusion_steps").get<int32_t>();
    s.beta_start = config.at("beta_start").get<double>();
    s.beta_end = config.at("beta_end").get<double>();
    return s;
  }

  dg_train_options training(const char* section) const {
    dg_train_options o;
    dg_train_options_default(&o);
    const json& t = config.at(section);
    o.learning_rate = t.value("learning_rate", o.learning_rate);
    o.beta1 = t.value("beta1", o.beta1);
    o.beta2 = t.value("beta2", o.beta2);
    o.epsilon = t.value("epsilon", o.epsilon);
    o.batch_size = t.value("batch_size", o.batch_size);
    o.max_steps = t.value("max_steps", o.max_steps);
    o.early_stop_window = t.value("early_stop_window", o.early_stop_window);
    o.early_stop_tolerance = t.value("early_stop_tolerance", o.early_stop_tolerance);
    o.ema_decay = t.value("ema_decay", o.ema_decay);
    o.cosine_lr = t.value("cosine_lr", o.cosine_lr != 0) ? 1 : 0;
    return o;
  }
};

void check_choice(const std::string& value, std::initializer_list<const char*> allowed, const std::string& what) {
  for (const char* a : allowed)
    if (value == a) return;
  config_error("unknown " + what + " '" + value + "'");
}

// Subcommands ----------------------------------------------------------------

struct MakeDatasetArgs {
  std::string kind = "base";
  std::string role;
  long long n = 0;
};

void make_dataset(Run& run, const MakeDatasetArgs& a) {
  check_choice(a.kind, {"base", "ind", "ood"}, "dataset kind");
  std::string role = a.role.empty() ? (a.kind == "base" ? "base" : "paired") : a.role;
  check_choice(role, {"base", "paired", "gt"}, "dataset role");
  if ((a.kind == "base") != (role == "base")) config_error("role 'base' goes with kind 'base' only");
  long long n = a.n;
  if (n <= 0)
    n = run.config.at(role == "base" ? "base_samples" : role == "paired" ? "paired_samples" : "eval_samples")
            .get<long long>();
  const std::string label = role == "base" ? "base" : role + "/" + a.kind;
  const std::uint64_t seed = run.stage_seed("data", label);
  Dataset data;
  check(dg_dataset_make(a.kind.c_str(), n, seed, data.out()), "make-dataset");
  const std::string out = run.path(role == "base" ? "base.csv" : role + "_" + a.kind + ".csv");
  check(dg_dataset_save(data.get(), out.c_str()), "save dataset");
  run.set("seeds", {{"data", seed}});
  run.artifact("dataset", out);
  std::cout << "wrote " << n << " samples to " << out << "\n";
}

void train_base(Run& run, const std::string& data_path) {
  require_file(data_path, "data");
  Dataset data;
  check(dg_dataset_load(data_path.c_str(), data.out()), "load dataset");
  dg_train_options opts = run.training("base_training");
  opts.seed = run.stage_seed("training", "base");
  opts.init_seed = run.stage_seed("init", "base");
  const dg_schedule_options sched = run.schedule();
  const std::string log = run.path("loss.csv");
  const std::string ckpt = run.path("base.ckpt");
  Base model;
  check(dg_base_train(data.get(), &opts, &sched, log.c_str(), model.out()), "train-base");
  check(dg_base_save(model.get(), ckpt.c_str()), "save checkpoint");
  run.input("data", data_path);
  run.set("seeds", {{"training", opts.seed}, {"init", opts.init_seed}});
  run.artifact("checkpoint", ckpt);
  run.artifact("loss_log", log);
  std::cout << "wrote " << ckpt << "\n";
}

struct BasePair {
  Base x, y;
  void load(Run& run, const std::string& px, const std::string& py_opt) {
    const std::string py = py_opt.empty() ? px : py_opt;
    require_file(px, "base-x");
    require_file(py, "base-y");
    check(dg_base_load(px.c_str(), x.out()), "load base-x");
    check(dg_base_load(py.c_str(), y.out()), "load base-y");
    run.input("base_x", px);
    run.input("base_y", py);
  }
};

void gen_fake_pool(Run& run, const std::string& px, const std::string& py, long long n_opt) {
  BasePair bases;
  bases.load(run, px, py);
  const long long n = n_opt > 0 ? n_opt : run.config.at("fake_samples").get<long long>();
  const std::uint64_t seed = run.stage_seed("sampling", "fake_pool");
  Pool pool;
  check(dg_fake_pool_generate(bases.x.get(), bases.y.get(), n, seed, pool.out()), "gen-fake-pool");
  const std::string out = run.path("fake_pool.csv");
  check(dg_fake_pool_save(pool.get(), out.c_str()), "save fake pool");
  run.set("seeds", {{"sampling", seed}});
  run.artifact("fake_pool", out);
  std::cout << "wrote " << out << "\n";
}

struct GuidanceArgs {
  std::string base_x, base_y, paired, fake_pool;
  std::string loss = "all";
  std::string setting = "ind";
};

void train_guidance(Run& run, const GuidanceArgs& a) {
  check_choice(a.setting, {"ind", "ood"}, "setting");
  double wd = 0, wn = 0;
  check(dg_loss_weights(a.loss.c_str(), &wd, &wn), "--loss");
  BasePair bases;
  bases.load(run, a.base_x, a.base_y);
  require_file(a.paired, "paired");
  require_file(a.fake_pool, "fake-pool");
  Dataset paired;
  Pool pool;
  check(dg_dataset_load(a.paired.c_str(), paired.out()), "load paired data");
  check(dg_fake_pool_load(a.fake_pool.c_str(), pool.out()), "load fake pool");
  dg_train_options opts = run.training("disc_training");
  opts.w_disc = wd;
  opts.w_denoise = wn;
  opts.seed = run.stage_seed("training", "disc/" + a.setting);
  opts.init_seed = run.stage_seed("init", "disc");
  const std::string log = run.path("loss.csv");
  const std::string ckpt = run.path("disc.ckpt");
  Disc disc;
  check(dg_discriminator_train(bases.x.get(), bases.y.get(), paired.get(), pool.get(), &opts, log.c_str(),
                               disc.out()),
        "train-guidance");
  const std::string py = a.base_y.empty() ? a.base_x : a.base_y;
  check(dg_discriminator_bind_bases(disc.get(), a.base_x.c_str(), py.c_str()), "checksum bases");
  check(dg_discriminator_save(disc.get(), ckpt.c_str()), "save discriminator");
  run.input("paired", a.paired);
  run.input("fake_pool", a.fake_pool);
  run.set("loss_weights", {{"w_disc", wd}, {"w_denoise", wn}});
  run.set("seeds", {{"training", opts.seed}, {"init", opts.init_seed}});
  run.artifact("checkpoint", ckpt);
  run.artifact("loss_log", log);
  std::cout << "wrote " << ckpt << "\n";
}

struct SampleArgs {
  std::string base_x, base_y, disc;
  std::string mode = "guided";
  std::string setting = "ind";
  long long n = 0;
};

void sample(Run& run, const SampleArgs& a) {
  check_choice(a.mode, {"guided", "independent"}, "mode");
  check_choice(a.setting, {"ind", "ood"}, "setting");
  BasePair bases;
  bases.load(run, a.base_x, a.base_y);
  Disc disc;
  if (a.mode == "guided") {
    require_file(a.disc, "disc");
    check(dg_discriminator_load(a.disc.c_str(), disc.out()), "load discriminator");
    const std::string py = a.base_y.empty() ? a.base_x : a.base_y;
    check(dg_discriminator_verify_bases(disc.get(), a.base_x.c_str(), py.c_str()), "base checkpoints");
    run.input("disc", a.disc);
  } else if (!a.disc.empty()) {
    config_error("--disc is only used with --mode guided");
  }
  dg_sampler_options so;
  dg_sampler_options_default(&so);
  so.n_samples = a.n > 0 ? a.n : run.config.at("eval_samples").get<long long>();
  so.seed = run.stage_seed("sampling", "eval/" + a.setting);
  so.guided = a.mode == "guided";
  Samples out;
  check(dg_sample_joint(bases.x.get(), bases.y.get(), disc.get(), &so, out.out()), "sample");
  const std::string path = run.path("samples.csv");
  check(dg_samples_save(out.get(), path.c_str()), "save samples");
  run.set("seeds", {{"sampling", so.seed}});
  run.artifact("samples", path);
  std::cout << "wrote " << so.n_samples << " samples to " << path << "\n";
}

void evaluate(Run& run, const std::string& samples_path, const std::string& target) {
  check_choice(target, {"base", "ind", "ood"}, "target");
  require_file(samples_path, "samples");
  Samples s;
  check(dg_samples_load(samples_path.c_str(), s.out()), "load samples");
  dg_eval_result r{};
  check(dg_evaluate(s.get(), target.c_str(), &r), "eval");
  char* h = nullptr;
  check(dg_file_sha256(samples_path.c_str(), &h), "checksum");
  const std::string hash = take(h);
  const std::string report = run.path("report.json");
  check(dg_evaluate_report(s.get(), target.c_str(), run.seed(), hash.c_str(), report.c_str()), "report");
  run.input("samples", samples_path);
  run.artifact("report", report);
  std::printf("target %s  n %lld  NLL %.4f +- %.4f  captured %.4f\n", target.c_str(), static_cast<long long>(r.n),
              r.nll, r.nll_std_error, r.captured);
  if (target == "base") {
    double tv = 0;
    check(dg_base_histogram_tv(s.get(), &tv), "histogram");
    std::printf("histogram TV %.4f\n", tv);
  }
}

void reproduce(Run& run, const std::string& setting) {
  check_choice(setting, {"ind", "ood", "both"}, "setting");
  char* table = nullptr;
  check(dg_reproduce_table1(setting.c_str(), run.config.dump().c_str(), run.dir.c_str(), run.verbose, &table),
        "reproduce-table1");
  std::cout << take(table);
  std::cout << "run directory: " << run.dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discriminator-guided joint sampling from two 1-D diffusion models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dg_version()));

  Run run;
  auto common = [&run](CLI::App* sub) {
    sub->add_option("--config", run.config_path, "JSON pipeline config (missing keys take defaults)");
    sub->add_option("--seed", run.seed_override, "global seed, overrides the config")->check(CLI::NonNegativeNumber);
    sub->add_option("--run-dir", run.run_dir_opt, "output directory (default $DGUIDE_RUN_ROOT/<command>-<hash>)");
    sub->add_flag("-v,--verbose", run.verbose, "progress on stderr");
  };

  MakeDatasetArgs md;
  auto* c_md = app.add_subcommand("make-dataset", "draw a GMM dataset");
  c_md->add_option("--kind", md.kind, "base | ind | ood");
  c_md->add_option("--role", md.role, "base | paired | gt (default by kind)");
  c_md->add_option("-n,--n", md.n, "sample count (default from config)");
  common(c_md);

  std::string tb_data;
  auto* c_tb = app.add_subcommand("train-base", "train a 1-D base noise predictor");
  c_tb->add_option("--data", tb_data, "1-D dataset CSV")->required();
  common(c_tb);

  std::string fp_x, fp_y;
  long long fp_n = 0;
  auto* c_fp = app.add_subcommand("gen-fake-pool", "pre-sample fake x and y pools from the base models");
  c_fp->add_option("--base-x", fp_x, "base checkpoint for x")->required();
  c_fp->add_option("--base-y", fp_y, "base checkpoint for y (default: base-x)");
  c_fp->add_option("-n,--n", fp_n, "pool size (default from config)");
  common(c_fp);

  GuidanceArgs tg;
  auto* c_tg = app.add_subcommand("train-guidance", "train the joint discriminator");
  c_tg->add_option("--base-x", tg.base_x)->required();
  c_tg->add_option("--base-y", tg.base_y, "default: base-x");
  c_tg->add_option("--paired", tg.paired, "2-D paired dataset CSV")->required();
  c_tg->add_option("--fake-pool", tg.fake_pool)->required();
  c_tg->add_option("--loss", tg.loss, "disc | denoise | all");
  c_tg->add_option("--setting", tg.setting, "ind | ood (selects the seed stream)");
  common(c_tg);

  SampleArgs sa;
  auto* c_sa = app.add_subcommand("sample", "joint sampling, guided or independent");
  c_sa->add_option("--base-x", sa.base_x)->required();
  c_sa->add_option("--base-y", sa.base_y, "default: base-x");
  c_sa->add_option("--disc", sa.disc, "discriminator checkpoint (guided)");
  c_sa->add_option("--mode", sa.mode, "guided | independent");
  c_sa->add_option("--setting", sa.setting, "ind | ood (selects the seed stream)");
  c_sa->add_option("-n,--n", sa.n, "sample count (default from config)");
  common(c_sa);

  std::string ev_samples, ev_target = "ind";
  auto* c_ev = app.add_subcommand("eval", "NLL and mode coverage against a target GMM");
  c_ev->add_option("--samples", ev_samples, "sample dump CSV")->required();
  c_ev->add_option("--target", ev_target, "base | ind | ood");
  common(c_ev);

  std::string rt_setting = "both";
  auto* c_rt = app.add_subcommand("reproduce-table1", "full NLL grid: GT, No joint, L_disc, L_denoise, L_all");
  c_rt->add_option("--setting", rt_setting, "ind | ood | both");
  common(c_rt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    run.command = sub->get_name();
    if (sub == c_md) {
      run.options = {{"kind", md.kind}, {"role", md.role}, {"n", md.n}};
      run.begin();
      make_dataset(run, md);
    } else if (sub == c_tb) {
      run.options = {{"data", tb_data}};
      run.begin();
      train_base(run, tb_data);
    } else if (sub == c_fp) {
      run.options = {{"base_x", fp_x}, {"base_y", fp_y}, {"n", fp_n}};
      run.begin();
      gen_fake_pool(run, fp_x, fp_y, fp_n);
    } else if (sub == c_tg) {
      run.options = {{"base_x", tg.base_x}, {"base_y", tg.base_y}, {"paired", tg.paired},
                     {"fake_pool", tg.fake_pool}, {"loss", tg.loss}, {"setting", tg.setting}};
      run.begin();
      train_guidance(run, tg);
    } else if (sub == c_sa) {
      run.options = {{"base_x", sa.base_x}, {"base_y", sa.base_y}, {"disc", sa.disc},
                     {"mode", sa.mode},     {"setting", sa.setting}, {"n", sa.n}};
      run.begin();
      sample(run, sa);
    } else if (sub == c_ev) {
      run.options = {{"samples", ev_samples}, {"target", ev_target}};
      run.begin();
      evaluate(run, ev_samples, ev_target);
    } else {
      run.options = {{"setting", rt_setting}};
      run.begin();
      reproduce(run, rt_setting);
      return 0;  // reproduce-table1 writes its own manifest
    }
    run.finish();
  } catch (const CliError& e) {
    std::cerr << "dguide: " << e.message << "\n";
    return exit_code(e.status);
  }
  return 0;
}
