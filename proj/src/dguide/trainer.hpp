#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dguide/networks.hpp"

namespace dguide {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 512;
  int max_steps = 2000;
  /// Stop once the mean total loss over the last window improves on the
  /// window before it by less than this fraction.
  int early_stop_window = 200;
  double early_stop_tolerance = 1e-3;
  double w_disc = 1.0;
  double w_denoise = 1.0;
  /// Exponential moving average of the weights; the returned model holds the
  /// averaged weights. 0 disables it.
  double ema_decay = 0.0;
  /// Anneal the learning rate from its base value towards 0 along a half cosine over max_steps.
  bool cosine_lr = false;
  /// Seeds the batch and noise streams.
  std::uint64_t seed = 0;
  /// Seeds parameter initialization.
  std::uint64_t init_seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

struct LossRecord {
  int step = 0;
  double disc = 0.0;
  double denoise = 0.0;
  double total = 0.0;
};

void write_loss_log(const std::vector<LossRecord>& log, const std::string& path);

/// In-place Adam over a parameter list.
class Adam {
 public:
  Adam(const NetworkParams& params, AdamConfig cfg);
  void step(NetworkParams& params, const std::vector<Tensor>& grads);
  std::int64_t steps_taken() const { return t_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

/// Learning rate for 1-based `step` under `cfg`.
double learning_rate_at(const TrainConfig& cfg, int step);

/// True once 2 * window records exist and the last window's mean total loss
/// improves on the previous window's by less than `tolerance` (relative).
bool should_stop_early(const std::vector<LossRecord>& log, int window, double tolerance);

// Base models ---------------------------------------------------------------------

struct BaseTraining {
  BaseNoisePredictor model;
  std::vector<LossRecord> log;
};

/// Denoising objective on a 1-D dataset [n, 1]. Batches are drawn with
/// replacement; streams: init, base/index, base/noise (indexed by step).
BaseTraining train_base(const Tensor& dataset, const TrainConfig& cfg, const NoiseSchedule& schedule,
                        const MlpSpec& spec = base_mlp_spec());

// Discriminator ---------------------------------------------------------------------

/// Pre-generated unguided samples of each base model, paired freshly per batch.
struct FakePairStore {
  Tensor x_pool;  // [n, 1]
  Tensor y_pool;  // [n, 1]
  std::uint64_t seed = 0;
};

FakePairStore generate_fake_pool(const BaseNoisePredictor& base_x, const BaseNoisePredictor& base_y, std::int64_t n,
                                 std::uint64_t seed);

void save_fake_pool(const FakePairStore& pool, const std::string& path);
FakePairStore load_fake_pool(const std::string& path);

/// Noised pairs for one batch: one t per pair, independent noise per modality.
struct NoisedBatch {
  Matrix xy_t;              // [n, 2]
  Matrix eps;               // [n, 2]
  std::vector<int> t;       // [n]
};

NoisedBatch noise_pairs(const Matrix& xy0, const ModalitySchedules& s, RandomStream& rng);

/// Real pairs drawn with replacement from the paired dataset.
Matrix draw_real_batch(const Tensor& paired, int batch, RandomStream& rng);
/// x' and y' drawn independently from their pools.
Matrix draw_fake_batch(const FakePairStore& pool, int batch, RandomStream& rng);

/// Stable BCE (real = 1, fake = 0) averaged over all rows of both batches.
Var disc_loss(Tape& tape, const MlpSpec& spec, const std::vector<Var>& p, const NoisedBatch& real,
              const NoisedBatch& fake);

/// Mean over pairs of ||eps_x - eps_base_x + sqrt(1 - abar_x) dh/dx_t||^2 + same for y.
/// Base predictions are frozen constants; the input gradient is recorded on the tape.
Var denoise_loss(Tape& tape, const MlpSpec& spec, const std::vector<Var>& p, const BaseNoisePredictor& base_x,
                 const BaseNoisePredictor& base_y, const NoisedBatch& real, const ModalitySchedules& s);

double disc_loss_value(const NetworkParams& params, const NoisedBatch& real, const NoisedBatch& fake);
double denoise_loss_value(const NetworkParams& params, const BaseNoisePredictor& base_x,
                          const BaseNoisePredictor& base_y, const NoisedBatch& real, const ModalitySchedules& s);

struct DiscriminatorTraining {
  JointDiscriminator disc;
  std::vector<LossRecord> log;
};

/// Minimizes w_disc * L_disc + w_denoise * L_denoise over the discriminator only.
/// Streams (indexed by step): real/index, real/noise, fake/pairing, fake/noise.
DiscriminatorTraining train_discriminator(const BaseNoisePredictor& base_x, const BaseNoisePredictor& base_y,
                                          const Tensor& paired, const FakePairStore& fakes, const TrainConfig& cfg,
                                          const MlpSpec& spec = discriminator_mlp_spec());

/// Source of fake pairs for a training step; `train_discriminator` uses the pool.
using FakeSource = std::function<Matrix(int batch, RandomStream& rng)>;

DiscriminatorTraining train_discriminator_with(const BaseNoisePredictor& base_x, const BaseNoisePredictor& base_y,
                                               const Tensor& paired, const FakeSource& fakes,
                                               const TrainConfig& cfg, const MlpSpec& spec);

}  // namespace dguide
