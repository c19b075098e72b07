/* C interface to the dguide library: joint diffusion sampling guided by a
 * discriminator over two frozen single-modality DDPMs.
 *
 * Every call returns a dg_status. On failure, dg_last_error() describes the
 * problem (thread-local, valid until the next failing call on the thread).
 * Objects are opaque handles released with the matching *_free function;
 * strings returned through char** are released with dg_string_free. */
#ifndef DGUIDE_DGUIDE_H
#define DGUIDE_DGUIDE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DG_API __declspec(dllexport)
#else
#define DG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dg_status {
  DG_OK = 0,
  DG_ERR_CONFIG = 2,
  DG_ERR_MISSING = 3,
  DG_ERR_NUMERIC = 4,
  DG_ERR_IO = 5,
  DG_ERR_CHECKSUM = 6,
  DG_ERR_CONTRACT = 7,
  DG_ERR_SHAPE = 8,
  DG_ERR_INTERNAL = 9
} dg_status;

typedef struct dg_dataset dg_dataset;
typedef struct dg_base_model dg_base_model;
typedef struct dg_fake_pool dg_fake_pool;
typedef struct dg_discriminator dg_discriminator;
typedef struct dg_samples dg_samples;
typedef struct dg_manifest dg_manifest;

DG_API const char* dg_version(void);
DG_API const char* dg_last_error(void);
DG_API const char* dg_status_name(dg_status status);
DG_API void dg_string_free(char* s);

/* Datasets: "base" (1-D), "ind" and "ood" (2-D) Gaussian mixtures. */
DG_API dg_status dg_dataset_make(const char* kind, int64_t n, uint64_t seed, dg_dataset** out);
DG_API dg_status dg_dataset_load(const char* path, dg_dataset** out);
DG_API dg_status dg_dataset_save(const dg_dataset* data, const char* path);
DG_API dg_status dg_dataset_shape(const dg_dataset* data, int64_t* rows, int64_t* cols);
/* Row-major copy; capacity is in doubles. */
DG_API dg_status dg_dataset_copy(const dg_dataset* data, double* buffer, size_t capacity);
DG_API void dg_dataset_free(dg_dataset* data);

/* Training options; dg_train_options_default fills the toy defaults. */
typedef struct dg_train_options {
  double learning_rate;
  double beta1;
  double beta2;
  double epsilon;
  int32_t batch_size;
  int32_t max_steps;
  int32_t early_stop_window; /* 0 disables early stopping */
  double early_stop_tolerance;
  double w_disc;
  double w_denoise;
  double ema_decay; /* 0 disables weight averaging */
  int32_t cosine_lr; /* nonzero anneals the learning rate to 0 over max_steps */
  uint64_t seed;
  uint64_t init_seed;
} dg_train_options;

DG_API void dg_train_options_default(dg_train_options* opts);
/* Maps "disc" | "denoise" | "all" to (1, 0) | (0, 1) | (1, 1). */
DG_API dg_status dg_loss_weights(const char* loss, double* w_disc, double* w_denoise);

typedef struct dg_schedule_options {
  int32_t steps;
  double beta_start;
  double beta_end;
} dg_schedule_options;

DG_API void dg_schedule_options_default(dg_schedule_options* opts);

/* Base noise predictors. loss_log_path may be NULL. */
DG_API dg_status dg_base_train(const dg_dataset* data, const dg_train_options* opts,
                               const dg_schedule_options* schedule, const char* loss_log_path,
                               dg_base_model** out);
DG_API dg_status dg_base_load(const char* path, dg_base_model** out);
DG_API dg_status dg_base_save(const dg_base_model* model, const char* path);
DG_API dg_status dg_base_predict_noise(const dg_base_model* model, const double* x, int64_t n, int32_t t,
                                       double* eps_out);
DG_API dg_status dg_base_parameter_count(const dg_base_model* model, int64_t* count);
DG_API void dg_base_free(dg_base_model* model);

/* Fake pools: n unguided samples from each base model. */
DG_API dg_status dg_fake_pool_generate(const dg_base_model* base_x, const dg_base_model* base_y, int64_t n,
                                       uint64_t seed, dg_fake_pool** out);
DG_API dg_status dg_fake_pool_load(const char* path, dg_fake_pool** out);
DG_API dg_status dg_fake_pool_save(const dg_fake_pool* pool, const char* path);
DG_API void dg_fake_pool_free(dg_fake_pool* pool);

/* Joint discriminator trained on w_disc * L_disc + w_denoise * L_denoise. */
DG_API dg_status dg_discriminator_train(const dg_base_model* base_x, const dg_base_model* base_y,
                                        const dg_dataset* paired, const dg_fake_pool* pool,
                                        const dg_train_options* opts, const char* loss_log_path,
                                        dg_discriminator** out);
DG_API dg_status dg_discriminator_load(const char* path, dg_discriminator** out);
DG_API dg_status dg_discriminator_save(const dg_discriminator* disc, const char* path);
/* Raw logit h(x_t, y_t, t) for n pairs. */
DG_API dg_status dg_discriminator_logit(const dg_discriminator* disc, const double* x, const double* y, int64_t n,
                                        int32_t t, double* h_out);
/* dh/dx_t and dh/dy_t for n pairs. */
DG_API dg_status dg_discriminator_gradient(const dg_discriminator* disc, const double* x, const double* y,
                                           int64_t n, int32_t t, double* gx_out, double* gy_out);
/* Records the checksums of the base checkpoints the discriminator was trained against. */
DG_API dg_status dg_discriminator_bind_bases(dg_discriminator* disc, const char* base_x_path,
                                             const char* base_y_path);
/* DG_ERR_CHECKSUM if the files differ from the recorded base checkpoints. */
DG_API dg_status dg_discriminator_verify_bases(const dg_discriminator* disc, const char* base_x_path,
                                               const char* base_y_path);
DG_API void dg_discriminator_free(dg_discriminator* disc);

/* Joint sampling. disc must be NULL unless guided != 0. */
typedef struct dg_sampler_options {
  int64_t n_samples;
  uint64_t seed;
  double guidance_scale;
  int32_t guided;
} dg_sampler_options;

DG_API void dg_sampler_options_default(dg_sampler_options* opts);
DG_API dg_status dg_sample_joint(const dg_base_model* base_x, const dg_base_model* base_y,
                                 const dg_discriminator* disc, const dg_sampler_options* opts, dg_samples** out);
/* Unguided 1-D samples from one base model. */
DG_API dg_status dg_sample_base(const dg_base_model* model, int64_t n, uint64_t seed, dg_samples** out);
DG_API dg_status dg_samples_from_buffer(const double* values, int64_t rows, int64_t cols, dg_samples** out);
/* Sample dump: "chain_id,x,y" rows in chain order. */
DG_API dg_status dg_samples_load(const char* path, dg_samples** out);
DG_API dg_status dg_samples_save(const dg_samples* samples, const char* path);
DG_API dg_status dg_samples_shape(const dg_samples* samples, int64_t* rows, int64_t* cols);
DG_API dg_status dg_samples_copy(const dg_samples* samples, double* buffer, size_t capacity);
DG_API void dg_samples_free(dg_samples* samples);

/* Evaluation against a named target ("base", "ind", "ood"). */
#define DG_MAX_MODES 16

typedef struct dg_eval_result {
  double nll;
  double nll_std_error;
  double captured;
  int64_t n;
  int32_t modes;
  int64_t mode_counts[DG_MAX_MODES];
} dg_eval_result;

DG_API dg_status dg_evaluate(const dg_samples* samples, const char* target, dg_eval_result* out);
/* Writes the JSON evaluation report. */
DG_API dg_status dg_evaluate_report(const dg_samples* samples, const char* target, uint64_t seed,
                                    const char* config_hash, const char* report_path);
/* Histogram total-variation distance of 1-D samples to the "base" density. */
DG_API dg_status dg_base_histogram_tv(const dg_samples* samples, double* tv);

/* Checksums, run directories and manifests. */
DG_API dg_status dg_file_sha256(const char* path, char** hex_out);
DG_API dg_status dg_config_hash(const char* json_text, char** hex_out);
/* explicit_dir may be NULL; then $DGUIDE_RUN_ROOT (default "runs")/<command>-<hash prefix>. */
DG_API dg_status dg_resolve_run_dir(const char* explicit_dir, const char* command, const char* config_json,
                                    char** dir_out);
DG_API dg_status dg_manifest_new(const char* command, const char* config_json, dg_manifest** out);
DG_API dg_status dg_manifest_set(dg_manifest* m, const char* key, const char* json_value);
DG_API dg_status dg_manifest_add_input(dg_manifest* m, const char* role, const char* path);
DG_API dg_status dg_manifest_add_artifact(dg_manifest* m, const char* role, const char* path);
DG_API dg_status dg_manifest_write(const dg_manifest* m, const char* run_dir);
DG_API void dg_manifest_free(dg_manifest* m);

/* Full Table-1 grid. config_json may be NULL (all defaults); setting is
 * "ind", "ood" or "both". Progress goes to stderr when verbose != 0. */
DG_API dg_status dg_default_config(char** json_out);
/* Fills defaults into a (possibly partial) config and validates it. */
DG_API dg_status dg_config_normalize(const char* config_json, char** json_out);
/* Seed of a named stream inside one stage ("data", "init", "training",
 * "sampling") of the global seed, as used by dg_reproduce_table1. */
DG_API dg_status dg_stage_seed(uint64_t global_seed, const char* stage, const char* label, uint64_t* out);
DG_API dg_status dg_reproduce_table1(const char* setting, const char* config_json, const char* run_dir,
                                     int32_t verbose, char** table_out);

#ifdef __cplusplus
}
#endif

#endif /* DGUIDE_DGUIDE_H */
