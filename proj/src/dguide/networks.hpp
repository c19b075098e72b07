#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dguide/diffusion.hpp"
#include "dguide/mlp.hpp"

namespace dguide {

/// Base noise predictor architecture: 1 -> [16, 64, 256, 64, 16] -> 1, timestep dim 256.
MlpSpec base_mlp_spec();
/// Joint discriminator architecture: 2 -> [64, 32, 8] -> 1, timestep dim 64, zero read-out.
MlpSpec discriminator_mlp_spec();
/// Table-3 diffusion setup: T = 500, linear beta from 1e-4 to 0.02.
NoiseSchedule default_schedule();

/// Frozen single-modality noise predictor eps(x_t, t).
class BaseNoisePredictor {
 public:
  BaseNoisePredictor(NetworkParams params, NoiseSchedule schedule, nlohmann::json provenance = nlohmann::json::object());

  const NetworkParams& params() const noexcept { return params_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  const ModulationTable& modulation() const noexcept { return table_; }
  const nlohmann::json& provenance() const noexcept { return provenance_; }

 private:
  NetworkParams params_;
  NoiseSchedule schedule_;
  ModulationTable table_;
  nlohmann::json provenance_;
};

/// Frozen joint discriminator; its raw output h is the log density-ratio logit.
class JointDiscriminator {
 public:
  JointDiscriminator(NetworkParams params, ModalitySchedules schedules,
                     nlohmann::json provenance = nlohmann::json::object());

  const NetworkParams& params() const noexcept { return params_; }
  const ModalitySchedules& schedules() const noexcept { return schedules_; }
  const ModulationTable& modulation() const noexcept { return table_; }
  const nlohmann::json& provenance() const noexcept { return provenance_; }

 private:
  NetworkParams params_;
  ModalitySchedules schedules_;
  ModulationTable table_;
  nlohmann::json provenance_;
};

/// eps_hat for a [batch, 1] input at one shared timestep or one per row.
Tensor predict_noise(const BaseNoisePredictor& model, const Tensor& x_t, std::span<const int> timesteps);
Tensor predict_noise(const BaseNoisePredictor& model, const Tensor& x_t, int t);

/// Tape-level prediction with frozen weights (constants on the tape).
Var predict_noise_graph(Tape& tape, const BaseNoisePredictor& model, Var x_t, std::span<const int> timesteps);

/// Raw logit h(x_t, y_t, t); D = sigmoid(h). Inputs are [batch, 1] each.
Tensor logit(const JointDiscriminator& d, const Tensor& x_t, const Tensor& y_t, std::span<const int> timesteps);
Tensor logit(const JointDiscriminator& d, const Tensor& x_t, const Tensor& y_t, int t);

struct GuidanceGradient {
  Tensor x;  // dh/dx_t, [batch, 1]
  Tensor y;  // dh/dy_t, [batch, 1]
};

GuidanceGradient guidance_gradient(const JointDiscriminator& d, const Tensor& x_t, const Tensor& y_t,
                                   std::span<const int> timesteps);
GuidanceGradient guidance_gradient(const JointDiscriminator& d, const Tensor& x_t, const Tensor& y_t, int t);

/// Logit on the tape for trainable parameters (`p` from bind_parameters).
Var logit_graph(Tape& tape, const MlpSpec& spec, const std::vector<Var>& p, Var xy, std::span<const int> timesteps);

/// Side-by-side [batch, 2] matrix from two [batch, 1] tensors.
Matrix stack_pair(const Tensor& x, const Tensor& y);

// Checkpoints -------------------------------------------------------------------

/// Text container: magic line, one JSON header line, then one block per
/// parameter tensor ("param <name> <rows> <cols>" followed by a line of
/// 17-significant-digit values).
struct Checkpoint {
  std::string role;  // "base" | "discriminator"
  NetworkParams params;
  std::vector<NoiseSchedule> schedules;
  nlohmann::json provenance = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void save_base(const BaseNoisePredictor& model, const std::string& path);
BaseNoisePredictor load_base(const std::string& path);
void save_discriminator(const JointDiscriminator& d, const std::string& path);
JointDiscriminator load_discriminator(const std::string& path);

nlohmann::json to_json(const MlpSpec& spec);
MlpSpec mlp_spec_from_json(const nlohmann::json& j);

}  // namespace dguide
