#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dguide/tape.hpp"
#include "dguide/tensor.hpp"

namespace dguide {

/// Discrete DDPM coefficients, 1-based in t with alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  /// Builds the derived arrays from beta_1..beta_T.
  explicit NoiseSchedule(std::vector<double> betas);

  int steps() const noexcept { return static_cast<int>(beta_.size()) - 1; }
  double beta(int t) const { return beta_.at(checked(t, 1)); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(checked(t, 0)); }
  double sigma(int t) const { return sigma_.at(checked(t, 1)); }

  /// Linear-schedule endpoints, kept for checkpoints (0 when not linear).
  double beta_start = 0.0;
  double beta_end = 0.0;

  friend bool operator==(const NoiseSchedule& a, const NoiseSchedule& b) { return a.beta_ == b.beta_; }

 private:
  std::size_t checked(int t, int lowest) const;

  std::vector<double> beta_;       // index 0 unused
  std::vector<double> alpha_bar_;  // index 0 = 1
  std::vector<double> sigma_;      // index 0 unused
};

/// Per-modality schedules sharing one T.
struct ModalitySchedules {
  NoiseSchedule x;
  NoiseSchedule y;

  ModalitySchedules() = default;
  ModalitySchedules(NoiseSchedule sx, NoiseSchedule sy);
  int steps() const { return x.steps(); }
};

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end);

/// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);

/// One ancestral step: mean from the predicted noise plus sigma_t * z.
Tensor reverse_step(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& s, const Tensor& z);

/// -eps_hat / sqrt(1 - abar_t).
Tensor noise_to_score(const Tensor& eps_hat, int t, const NoiseSchedule& s);

/// Predicts noise for a batch of noisy inputs, one timestep per row.
using NoisePredictor = std::function<Var(Tape&, Var x_t, std::span<const int> timesteps)>;

/// Denoising objective on the tape: mean over rows of ||predict(x_t, t) - eps||^2
/// with t ~ U{1..T} and eps ~ N(0, I) drawn fresh per row.
Var denoising_loss(Tape& tape, const NoisePredictor& predict, const Tensor& batch_x0, const NoiseSchedule& s,
                   RandomStream& rng);

double denoising_loss_value(const NoisePredictor& predict, const Tensor& batch_x0, const NoiseSchedule& s,
                            RandomStream& rng);

}  // namespace dguide
