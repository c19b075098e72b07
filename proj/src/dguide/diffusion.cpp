#include "dguide/diffusion.hpp"

#include <cmath>
#include <string>

namespace dguide {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) {
  require(betas.size() >= 2, ErrorKind::Config, "a schedule needs at least two steps");
  beta_.reserve(betas.size() + 1);
  beta_.push_back(0.0);
  alpha_bar_.push_back(1.0);
  sigma_.push_back(0.0);
  for (double b : betas) {
    require(b > 0.0 && b < 1.0, ErrorKind::Config, "every beta must lie in (0, 1)");
    beta_.push_back(b);
    const double prev = alpha_bar_.back();
    const double cur = prev * (1.0 - b);
    alpha_bar_.push_back(cur);
    sigma_.push_back(std::sqrt((1.0 - prev) / (1.0 - cur) * b));
  }
}

std::size_t NoiseSchedule::checked(int t, int lowest) const {
  require(t >= lowest && t <= steps(), ErrorKind::Contract,
          "timestep " + std::to_string(t) + " outside [" + std::to_string(lowest) + ", " + std::to_string(steps()) +
              "]");
  return static_cast<std::size_t>(t);
}

ModalitySchedules::ModalitySchedules(NoiseSchedule sx, NoiseSchedule sy) : x(std::move(sx)), y(std::move(sy)) {
  require(x.steps() == y.steps(), ErrorKind::Config, "modality schedules must share T");
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  require(steps >= 2, ErrorKind::Config, "linear schedule needs T >= 2");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, ErrorKind::Config,
          "linear schedule needs 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i)
    betas[static_cast<std::size_t>(i)] =
        beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
  NoiseSchedule s(std::move(betas));
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  return s;
}

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
  require(x0.shape() == eps.shape(), ErrorKind::Shape, "forward_noise: x0 and eps shapes differ");
  const double a = std::sqrt(s.alpha_bar(t));
  const double b = std::sqrt(1.0 - s.alpha_bar(t));
  Tensor out(x0.shape());
  for (std::int64_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Tensor reverse_step(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& s, const Tensor& z) {
  require(t >= 1 && t <= s.steps(), ErrorKind::Contract, "reverse_step: timestep out of range");
  require(x_t.shape() == eps_hat.shape() && x_t.shape() == z.shape(), ErrorKind::Shape,
          "reverse_step: x_t, eps_hat and z shapes differ");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - s.beta(t));
  const double eps_coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
  const double sigma = s.sigma(t);
  Tensor out(x_t.shape());
  for (std::int64_t i = 0; i < x_t.size(); ++i)
    out[i] = inv_sqrt_alpha * (x_t[i] - eps_coef * eps_hat[i]) + sigma * z[i];
  return out;
}

Tensor noise_to_score(const Tensor& eps_hat, int t, const NoiseSchedule& s) {
  const double inv = 1.0 / std::sqrt(1.0 - s.alpha_bar(t));
  Tensor out(eps_hat.shape());
  for (std::int64_t i = 0; i < eps_hat.size(); ++i) out[i] = -eps_hat[i] * inv;
  return out;
}

Var denoising_loss(Tape& tape, const NoisePredictor& predict, const Tensor& batch_x0, const NoiseSchedule& s,
                   RandomStream& rng) {
  require(batch_x0.rank() == 2 && batch_x0.rows() > 0, ErrorKind::Shape, "denoising_loss: batch must be [n, d]");
  const Eigen::Index n = batch_x0.rows(), d = batch_x0.cols();
  std::vector<int> ts(static_cast<std::size_t>(n));
  Matrix eps(n, d), x_t(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const int t = static_cast<int>(rng.uniform_int(1, s.steps()));
    ts[static_cast<std::size_t>(r)] = t;
    const double a = std::sqrt(s.alpha_bar(t));
    const double b = std::sqrt(1.0 - s.alpha_bar(t));
    for (Eigen::Index c = 0; c < d; ++c) {
      eps(r, c) = rng.normal();
      x_t(r, c) = a * batch_x0.at(r, c) + b * eps(r, c);
    }
  }
  Var prediction = predict(tape, tape.constant(std::move(x_t)), ts);
  Var residual = sub(prediction, tape.constant(std::move(eps)));
  return scale(sum_all(mul(residual, residual)), 1.0 / static_cast<double>(n));
}

double denoising_loss_value(const NoisePredictor& predict, const Tensor& batch_x0, const NoiseSchedule& s,
                            RandomStream& rng) {
  Tape tape;
  return denoising_loss(tape, predict, batch_x0, s, rng).value()(0, 0);
}

}  // namespace dguide
