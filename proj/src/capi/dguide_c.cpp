#include "dguide/dguide.h"

#include <cstring>
#include <iostream>
#include <memory>
#include <new>
#include <optional>
#include <string>

#include "dguide/checksum.hpp"
#include "dguide/evaluator.hpp"
#include "dguide/pipeline.hpp"
#include "dguide/sampler.hpp"
#include "dguide/trainer.hpp"

struct dg_dataset {
  dguide::Dataset value;
};
struct dg_base_model {
  dguide::BaseNoisePredictor value;
};
struct dg_fake_pool {
  dguide::FakePairStore value;
};
struct dg_discriminator {
  dguide::JointDiscriminator value;
};
struct dg_samples {
  dguide::Tensor value;
};
struct dg_manifest {
  dguide::Manifest value;
};

namespace {

thread_local std::string g_last_error;

dg_status status_for(dguide::ErrorKind kind) {
  using dguide::ErrorKind;
  switch (kind) {
    case ErrorKind::Config: return DG_ERR_CONFIG;
    case ErrorKind::Shape: return DG_ERR_SHAPE;
    case ErrorKind::Contract: return DG_ERR_CONTRACT;
    case ErrorKind::Numeric: return DG_ERR_NUMERIC;
    case ErrorKind::Io: return DG_ERR_IO;
    case ErrorKind::MissingArtifact: return DG_ERR_MISSING;
    case ErrorKind::ChecksumMismatch: return DG_ERR_CHECKSUM;
  }
  return DG_ERR_INTERNAL;
}

dg_status failure(dg_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

template <typename F>
dg_status guarded(F&& body) {
  try {
    body();
    return DG_OK;
  } catch (const dguide::Error& e) {
    return failure(status_for(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return failure(DG_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return failure(DG_ERR_INTERNAL, e.what());
  }
}

void need(const void* p, const char* what) {
  dguide::require(p != nullptr, dguide::ErrorKind::Contract, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

dguide::TrainConfig to_config(const dg_train_options* o) {
  dguide::TrainConfig c;
  if (o) {
    c.adam = {o->learning_rate, o->beta1, o->beta2, o->epsilon};
    c.batch_size = o->batch_size;
    c.max_steps = o->max_steps;
    c.early_stop_window = o->early_stop_window;
    c.early_stop_tolerance = o->early_stop_tolerance;
    c.w_disc = o->w_disc;
    c.w_denoise = o->w_denoise;
    c.ema_decay = o->ema_decay;
    c.cosine_lr = o->cosine_lr != 0;
    c.seed = o->seed;
    c.init_seed = o->init_seed;
  }
  c.validate();
  return c;
}

void copy_out(const dguide::Tensor& t, double* buffer, size_t capacity) {
  need(buffer, "buffer");
  dguide::require(capacity >= static_cast<size_t>(t.size()), dguide::ErrorKind::Shape, "buffer too small");
  std::copy(t.data().begin(), t.data().end(), buffer);
}

dguide::Tensor column(const double* values, int64_t n) {
  need(values, "input array");
  dguide::require(n >= 1, dguide::ErrorKind::Shape, "at least one row required");
  return dguide::Tensor({n, 1}, std::vector<double>(values, values + n));
}

nlohmann::json parse_json(const char* text, const char* what) {
  need(text, what);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    dguide::fail(dguide::ErrorKind::Config, std::string("cannot parse ") + what + ": " + e.what());
  }
}

std::string reference(const dguide::JointDiscriminator& d, const char* key) {
  const auto& p = d.provenance();
  return p.contains(key) && p[key].is_string() ? p[key].get<std::string>() : std::string();
}

}  // namespace

extern "C" {

const char* dg_version(void) {
  static const std::string v = dguide::code_version();
  return v.c_str();
}

const char* dg_last_error(void) { return g_last_error.c_str(); }

const char* dg_status_name(dg_status status) {
  switch (status) {
    case DG_OK: return "ok";
    case DG_ERR_CONFIG: return "configuration error";
    case DG_ERR_MISSING: return "missing artifact";
    case DG_ERR_NUMERIC: return "numeric failure";
    case DG_ERR_IO: return "I/O error";
    case DG_ERR_CHECKSUM: return "checksum mismatch";
    case DG_ERR_CONTRACT: return "contract violation";
    case DG_ERR_SHAPE: return "shape mismatch";
    case DG_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void dg_string_free(char* s) { std::free(s); }

// Datasets -------------------------------------------------------------------------

dg_status dg_dataset_make(const char* kind, int64_t n, uint64_t seed, dg_dataset** out) {
  return guarded([&] {
    need(kind, "kind");
    need(out, "out");
    *out = new dg_dataset{dguide::make_dataset(kind, n, seed)};
  });
}

dg_status dg_dataset_load(const char* path, dg_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new dg_dataset{dguide::load_dataset(path)};
  });
}

dg_status dg_dataset_save(const dg_dataset* data, const char* path) {
  return guarded([&] {
    need(data, "dataset");
    need(path, "path");
    dguide::save_dataset(data->value, path);
  });
}

dg_status dg_dataset_shape(const dg_dataset* data, int64_t* rows, int64_t* cols) {
  return guarded([&] {
    need(data, "dataset");
    if (rows) *rows = data->value.samples.rows();
    if (cols) *cols = data->value.samples.cols();
  });
}

dg_status dg_dataset_copy(const dg_dataset* data, double* buffer, size_t capacity) {
  return guarded([&] {
    need(data, "dataset");
    copy_out(data->value.samples, buffer, capacity);
  });
}

void dg_dataset_free(dg_dataset* data) { delete data; }

// Options --------------------------------------------------------------------------

void dg_train_options_default(dg_train_options* opts) {
  if (!opts) return;
  const dguide::TrainConfig c;
  *opts = {c.adam.learning_rate, c.adam.beta1,         c.adam.beta2, c.adam.epsilon, c.batch_size, c.max_steps,
           c.early_stop_window,  c.early_stop_tolerance, c.w_disc,     c.w_denoise,    c.ema_decay,  c.cosine_lr ? 1 : 0, c.seed,
           c.init_seed};
}

dg_status dg_loss_weights(const char* loss, double* w_disc, double* w_denoise) {
  return guarded([&] {
    need(loss, "loss");
    const auto [d, n] = dguide::loss_weights(loss);
    if (w_disc) *w_disc = d;
    if (w_denoise) *w_denoise = n;
  });
}

void dg_schedule_options_default(dg_schedule_options* opts) {
  if (!opts) return;
  const dguide::PipelineConfig c;
  *opts = {c.diffusion_steps, c.beta_start, c.beta_end};
}

// Base models ----------------------------------------------------------------------

dg_status dg_base_train(const dg_dataset* data, const dg_train_options* opts, const dg_schedule_options* schedule,
                        const char* loss_log_path, dg_base_model** out) {
  return guarded([&] {
    need(data, "dataset");
    need(out, "out");
    dg_schedule_options s;
    dg_schedule_options_default(&s);
    if (schedule) s = *schedule;
    auto trained = dguide::train_base(data->value.samples, to_config(opts),
                                      dguide::make_linear_schedule(s.steps, s.beta_start, s.beta_end));
    if (loss_log_path) dguide::write_loss_log(trained.log, loss_log_path);
    *out = new dg_base_model{std::move(trained.model)};
  });
}

dg_status dg_base_load(const char* path, dg_base_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new dg_base_model{dguide::load_base(path)};
  });
}

dg_status dg_base_save(const dg_base_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    dguide::save_base(model->value, path);
  });
}

dg_status dg_base_predict_noise(const dg_base_model* model, const double* x, int64_t n, int32_t t, double* eps_out) {
  return guarded([&] {
    need(model, "model");
    need(eps_out, "eps_out");
    const auto eps = dguide::predict_noise(model->value, column(x, n), t);
    std::copy(eps.data().begin(), eps.data().end(), eps_out);
  });
}

dg_status dg_base_parameter_count(const dg_base_model* model, int64_t* count) {
  return guarded([&] {
    need(model, "model");
    need(count, "count");
    *count = model->value.params().scalar_count();
  });
}

void dg_base_free(dg_base_model* model) { delete model; }

// Fake pools -----------------------------------------------------------------------

dg_status dg_fake_pool_generate(const dg_base_model* base_x, const dg_base_model* base_y, int64_t n, uint64_t seed,
                                dg_fake_pool** out) {
  return guarded([&] {
    need(base_x, "base_x");
    need(base_y, "base_y");
    need(out, "out");
    *out = new dg_fake_pool{dguide::generate_fake_pool(base_x->value, base_y->value, n, seed)};
  });
}

dg_status dg_fake_pool_load(const char* path, dg_fake_pool** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new dg_fake_pool{dguide::load_fake_pool(path)};
  });
}

dg_status dg_fake_pool_save(const dg_fake_pool* pool, const char* path) {
  return guarded([&] {
    need(pool, "pool");
    need(path, "path");
    dguide::save_fake_pool(pool->value, path);
  });
}

void dg_fake_pool_free(dg_fake_pool* pool) { delete pool; }

// Discriminators -------------------------------------------------------------------

dg_status dg_discriminator_train(const dg_base_model* base_x, const dg_base_model* base_y, const dg_dataset* paired,
                                 const dg_fake_pool* pool, const dg_train_options* opts, const char* loss_log_path,
                                 dg_discriminator** out) {
  return guarded([&] {
    need(base_x, "base_x");
    need(base_y, "base_y");
    need(paired, "paired");
    need(pool, "pool");
    need(out, "out");
    auto trained = dguide::train_discriminator(base_x->value, base_y->value, paired->value.samples, pool->value,
                                               to_config(opts));
    if (loss_log_path) dguide::write_loss_log(trained.log, loss_log_path);
    nlohmann::json prov = trained.disc.provenance();
    prov["paired_kind"] = paired->value.kind;
    prov["paired_seed"] = paired->value.seed;
    *out = new dg_discriminator{
        dguide::JointDiscriminator(trained.disc.params(), trained.disc.schedules(), std::move(prov))};
  });
}

dg_status dg_discriminator_load(const char* path, dg_discriminator** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new dg_discriminator{dguide::load_discriminator(path)};
  });
}

dg_status dg_discriminator_save(const dg_discriminator* disc, const char* path) {
  return guarded([&] {
    need(disc, "discriminator");
    need(path, "path");
    dguide::save_discriminator(disc->value, path);
  });
}

dg_status dg_discriminator_logit(const dg_discriminator* disc, const double* x, const double* y, int64_t n, int32_t t,
                                 double* h_out) {
  return guarded([&] {
    need(disc, "discriminator");
    need(h_out, "h_out");
    const auto h = dguide::logit(disc->value, column(x, n), column(y, n), t);
    std::copy(h.data().begin(), h.data().end(), h_out);
  });
}

dg_status dg_discriminator_gradient(const dg_discriminator* disc, const double* x, const double* y, int64_t n,
                                    int32_t t, double* gx_out, double* gy_out) {
  return guarded([&] {
    need(disc, "discriminator");
    need(gx_out, "gx_out");
    need(gy_out, "gy_out");
    const auto g = dguide::guidance_gradient(disc->value, column(x, n), column(y, n), t);
    std::copy(g.x.data().begin(), g.x.data().end(), gx_out);
    std::copy(g.y.data().begin(), g.y.data().end(), gy_out);
  });
}

dg_status dg_discriminator_bind_bases(dg_discriminator* disc, const char* base_x_path, const char* base_y_path) {
  return guarded([&] {
    need(disc, "discriminator");
    need(base_x_path, "base_x_path");
    need(base_y_path, "base_y_path");
    nlohmann::json prov = disc->value.provenance();
    prov["base_x_sha256"] = dguide::file_sha256(base_x_path);
    prov["base_y_sha256"] = dguide::file_sha256(base_y_path);
    disc->value = dguide::JointDiscriminator(disc->value.params(), disc->value.schedules(), std::move(prov));
  });
}

dg_status dg_discriminator_verify_bases(const dg_discriminator* disc, const char* base_x_path,
                                        const char* base_y_path) {
  return guarded([&] {
    need(disc, "discriminator");
    need(base_x_path, "base_x_path");
    need(base_y_path, "base_y_path");
    const std::pair<const char*, const char*> checks[] = {{"base_x_sha256", base_x_path},
                                                          {"base_y_sha256", base_y_path}};
    for (const auto& [key, path] : checks) {
      const std::string expected = reference(disc->value, key);
      if (expected.empty()) continue;
      const std::string actual = dguide::file_sha256(path);
      dguide::require(actual == expected, dguide::ErrorKind::ChecksumMismatch,
                      std::string("checkpoint '") + path + "' has sha256 " + actual + " but the discriminator was " +
                          "trained against " + expected);
    }
  });
}

void dg_discriminator_free(dg_discriminator* disc) { delete disc; }

// Sampling -------------------------------------------------------------------------

void dg_sampler_options_default(dg_sampler_options* opts) {
  if (!opts) return;
  const dguide::SamplerConfig c;
  *opts = {c.n_samples, c.seed, c.guidance_scale, 0};
}

dg_status dg_sample_joint(const dg_base_model* base_x, const dg_base_model* base_y, const dg_discriminator* disc,
                          const dg_sampler_options* opts, dg_samples** out) {
  return guarded([&] {
    need(base_x, "base_x");
    need(base_y, "base_y");
    need(out, "out");
    dg_sampler_options o;
    dg_sampler_options_default(&o);
    if (opts) o = *opts;
    dguide::SamplerConfig c;
    c.n_samples = o.n_samples;
    c.seed = o.seed;
    c.guidance_scale = o.guidance_scale;
    c.mode = o.guided ? dguide::SampleMode::Guided : dguide::SampleMode::Independent;
    *out = new dg_samples{dguide::sample_joint(base_x->value, base_y->value, disc ? &disc->value : nullptr, c)};
  });
}

dg_status dg_sample_base(const dg_base_model* model, int64_t n, uint64_t seed, dg_samples** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = new dg_samples{dguide::sample_unguided(model->value, n, seed)};
  });
}

dg_status dg_samples_from_buffer(const double* values, int64_t rows, int64_t cols, dg_samples** out) {
  return guarded([&] {
    need(values, "values");
    need(out, "out");
    dguide::require(rows >= 1 && cols >= 1, dguide::ErrorKind::Shape, "samples need a positive shape");
    *out = new dg_samples{dguide::Tensor({rows, cols}, std::vector<double>(values, values + rows * cols))};
  });
}

dg_status dg_samples_load(const char* path, dg_samples** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new dg_samples{dguide::read_scatter(path)};
  });
}

dg_status dg_samples_save(const dg_samples* samples, const char* path) {
  return guarded([&] {
    need(samples, "samples");
    need(path, "path");
    dguide::export_scatter(samples->value, path);
  });
}

dg_status dg_samples_shape(const dg_samples* samples, int64_t* rows, int64_t* cols) {
  return guarded([&] {
    need(samples, "samples");
    if (rows) *rows = samples->value.rows();
    if (cols) *cols = samples->value.cols();
  });
}

dg_status dg_samples_copy(const dg_samples* samples, double* buffer, size_t capacity) {
  return guarded([&] {
    need(samples, "samples");
    copy_out(samples->value, buffer, capacity);
  });
}

void dg_samples_free(dg_samples* samples) { delete samples; }

// Evaluation -----------------------------------------------------------------------

dg_status dg_evaluate(const dg_samples* samples, const char* target, dg_eval_result* out) {
  return guarded([&] {
    need(samples, "samples");
    need(target, "target");
    need(out, "out");
    const auto spec = dguide::spec_for_kind(target);
    dguide::require(spec.components() <= DG_MAX_MODES, dguide::ErrorKind::Contract, "too many target modes");
    const auto r = dguide::evaluate(samples->value, spec, target, 0, "");
    *out = dg_eval_result{};
    out->nll = r.nll.mean;
    out->nll_std_error = r.nll.std_error;
    out->captured = r.coverage.captured;
    out->n = r.nll.n;
    out->modes = spec.components();
    for (int k = 0; k < spec.components(); ++k) out->mode_counts[k] = r.coverage.counts[static_cast<size_t>(k)];
  });
}

dg_status dg_evaluate_report(const dg_samples* samples, const char* target, uint64_t seed, const char* config_hash,
                             const char* report_path) {
  return guarded([&] {
    need(samples, "samples");
    need(target, "target");
    need(report_path, "report_path");
    const auto r = dguide::evaluate(samples->value, dguide::spec_for_kind(target), target, seed,
                                    config_hash ? config_hash : "");
    dguide::write_report(r, report_path);
  });
}

dg_status dg_base_histogram_tv(const dg_samples* samples, double* tv) {
  return guarded([&] {
    need(samples, "samples");
    need(tv, "tv");
    *tv = dguide::histogram_tv(samples->value, dguide::base_spec());
  });
}

// Checksums, run directories, manifests ----------------------------------------------

dg_status dg_file_sha256(const char* path, char** hex_out) {
  return guarded([&] {
    need(path, "path");
    need(hex_out, "hex_out");
    *hex_out = dup_string(dguide::file_sha256(path));
  });
}

dg_status dg_config_hash(const char* json_text, char** hex_out) {
  return guarded([&] {
    need(hex_out, "hex_out");
    *hex_out = dup_string(dguide::config_hash(parse_json(json_text, "config")));
  });
}

dg_status dg_resolve_run_dir(const char* explicit_dir, const char* command, const char* config_json, char** dir_out) {
  return guarded([&] {
    need(command, "command");
    need(dir_out, "dir_out");
    const std::string hash = dguide::config_hash(parse_json(config_json, "config"));
    *dir_out = dup_string(dguide::resolve_run_dir(explicit_dir ? explicit_dir : "", command, hash));
  });
}

dg_status dg_manifest_new(const char* command, const char* config_json, dg_manifest** out) {
  return guarded([&] {
    need(command, "command");
    need(out, "out");
    *out = new dg_manifest{dguide::Manifest(command, parse_json(config_json, "config"))};
  });
}

dg_status dg_manifest_set(dg_manifest* m, const char* key, const char* json_value) {
  return guarded([&] {
    need(m, "manifest");
    need(key, "key");
    m->value.set(key, parse_json(json_value, "manifest value"));
  });
}

dg_status dg_manifest_add_input(dg_manifest* m, const char* role, const char* path) {
  return guarded([&] {
    need(m, "manifest");
    need(role, "role");
    need(path, "path");
    m->value.add_input(role, path);
  });
}

dg_status dg_manifest_add_artifact(dg_manifest* m, const char* role, const char* path) {
  return guarded([&] {
    need(m, "manifest");
    need(role, "role");
    need(path, "path");
    m->value.add_artifact(role, path);
  });
}

dg_status dg_manifest_write(const dg_manifest* m, const char* run_dir) {
  return guarded([&] {
    need(m, "manifest");
    need(run_dir, "run_dir");
    m->value.write(run_dir);
  });
}

void dg_manifest_free(dg_manifest* m) { delete m; }

// Pipeline -------------------------------------------------------------------------

dg_status dg_default_config(char** json_out) {
  return guarded([&] {
    need(json_out, "json_out");
    *json_out = dup_string(dguide::to_json(dguide::PipelineConfig{}).dump(2));
  });
}

dg_status dg_config_normalize(const char* config_json, char** json_out) {
  return guarded([&] {
    need(config_json, "config_json");
    need(json_out, "json_out");
    *json_out = dup_string(
        dguide::to_json(dguide::pipeline_config_from_json(parse_json(config_json, "config"))).dump(2));
  });
}

dg_status dg_stage_seed(uint64_t global_seed, const char* stage, const char* label, uint64_t* out) {
  return guarded([&] {
    need(stage, "stage");
    need(label, "label");
    need(out, "out");
    const dguide::StageSeeds s = dguide::StageSeeds::from_global(global_seed);
    const std::string name = stage;
    std::uint64_t base = 0;
    if (name == "data") base = s.data;
    else if (name == "init") base = s.init;
    else if (name == "training") base = s.training;
    else if (name == "sampling") base = s.sampling;
    else dguide::fail(dguide::ErrorKind::Config, "unknown seed stage '" + name + "'");
    *out = dguide::derive_seed(base, label);
  });
}

dg_status dg_reproduce_table1(const char* setting, const char* config_json, const char* run_dir, int32_t verbose,
                              char** table_out) {
  return guarded([&] {
    need(setting, "setting");
    need(run_dir, "run_dir");
    const dguide::PipelineConfig cfg = config_json
                                           ? dguide::pipeline_config_from_json(parse_json(config_json, "config"))
                                           : dguide::PipelineConfig{};
    const auto results = dguide::reproduce_table1(setting, cfg, dguide::resolve_run_dir(run_dir, "", ""),
                                                  verbose ? &std::cerr : nullptr);
    if (table_out) *table_out = dup_string(dguide::format_table1(results));
  });
}

}  // extern "C"
