#include "dguide/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dguide {

std::string to_string(SampleMode mode) { return mode == SampleMode::Guided ? "guided" : "independent"; }

SampleMode sample_mode_from_string(const std::string& text) {
  if (text == "guided") return SampleMode::Guided;
  if (text == "independent") return SampleMode::Independent;
  fail(ErrorKind::Config, "unknown sampling mode '" + text + "' (expected guided or independent)");
}

void SamplerConfig::validate() const {
  require(n_samples >= 1, ErrorKind::Config, "n_samples must be at least 1");
  require(guidance_scale >= 0.0 && std::isfinite(guidance_scale), ErrorKind::Config,
          "guidance_scale must be finite and non-negative");
  require(chunk >= 1, ErrorKind::Config, "chunk must be at least 1");
}

Tensor guided_noise(const Tensor& eps_base, const Tensor& g, int t, const NoiseSchedule& s, double scale) {
  require(eps_base.shape() == g.shape(), ErrorKind::Shape, "guided_noise: eps_base and g shapes differ");
  const double c = scale * std::sqrt(1.0 - s.alpha_bar(t));
  Tensor out(eps_base.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = eps_base[i] - c * g[i];
  return out;
}

namespace {

std::vector<RandomStream> chain_streams(std::uint64_t seed, const std::string& stream, std::int64_t begin,
                                        std::int64_t end) {
  std::vector<RandomStream> out;
  out.reserve(static_cast<std::size_t>(end - begin));
  for (std::int64_t i = begin; i < end; ++i) out.emplace_back(seed, stream, static_cast<std::uint64_t>(i));
  return out;
}

Tensor top(const Tensor& stacked, std::int64_t rows) {
  Tensor out({rows, 1});
  std::copy_n(stacked.data().begin(), rows, out.data().begin());
  return out;
}

Tensor bottom(const Tensor& stacked, std::int64_t rows) {
  Tensor out({rows, 1});
  std::copy_n(stacked.data().begin() + rows, rows, out.data().begin());
  return out;
}

Tensor stack(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows() + b.rows(), 1});
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.rows());
  return out;
}

}  // namespace

Tensor sample_joint(const BaseNoisePredictor& base_x, const BaseNoisePredictor& base_y, const JointDiscriminator* disc,
                    const SamplerConfig& cfg) {
  cfg.validate();
  const NoiseSchedule& sx = base_x.schedule();
  const NoiseSchedule& sy = base_y.schedule();
  require(sx.steps() == sy.steps(), ErrorKind::Config, "base models must share the number of diffusion steps");
  if (cfg.mode == SampleMode::Guided) {
    require(disc != nullptr, ErrorKind::Config, "guided sampling needs a discriminator");
    require(disc->schedules().x == sx && disc->schedules().y == sy, ErrorKind::Config,
            "discriminator schedules do not match the base models");
  } else {
    require(disc == nullptr, ErrorKind::Config, "independent sampling takes no discriminator");
  }
  const bool shared_base = &base_x == &base_y;
  const int T = sx.steps();

  Tensor out({cfg.n_samples, 2});
  for (std::int64_t begin = 0; begin < cfg.n_samples; begin += cfg.chunk) {
    const std::int64_t end = std::min(cfg.n_samples, begin + cfg.chunk);
    const std::int64_t m = end - begin;
    auto rngs = chain_streams(cfg.seed, "chain", begin, end);
    Tensor x({m, 1}), y({m, 1}), zx({m, 1}), zy({m, 1});
    for (std::int64_t i = 0; i < m; ++i) {
      x[i] = rngs[static_cast<std::size_t>(i)].normal();
      y[i] = rngs[static_cast<std::size_t>(i)].normal();
    }
    for (int t = T; t >= 1; --t) {
      Tensor ex, ey;
      if (shared_base) {
        const Tensor e = predict_noise(base_x, stack(x, y), t);
        ex = top(e, m);
        ey = bottom(e, m);
      } else {
        ex = predict_noise(base_x, x, t);
        ey = predict_noise(base_y, y, t);
      }
      if (cfg.mode == SampleMode::Guided) {
        const GuidanceGradient g = guidance_gradient(*disc, x, y, t);
        ex = guided_noise(ex, g.x, t, sx, cfg.guidance_scale);
        ey = guided_noise(ey, g.y, t, sy, cfg.guidance_scale);
      }
      for (std::int64_t i = 0; i < m; ++i) {
        zx[i] = rngs[static_cast<std::size_t>(i)].normal();
        zy[i] = rngs[static_cast<std::size_t>(i)].normal();
      }
      x = reverse_step(x, t, ex, sx, zx);
      y = reverse_step(y, t, ey, sy, zy);
      require(x.all_finite() && y.all_finite(), ErrorKind::Numeric,
              "sampling diverged at t = " + std::to_string(t));
    }
    for (std::int64_t i = 0; i < m; ++i) {
      out.at(begin + i, 0) = x[i];
      out.at(begin + i, 1) = y[i];
    }
  }
  return out;
}

Tensor sample_unguided(const BaseNoisePredictor& model, std::int64_t n, std::uint64_t seed, const std::string& stream,
                       std::int64_t chunk) {
  require(n >= 1, ErrorKind::Config, "sample count must be at least 1");
  require(chunk >= 1, ErrorKind::Config, "chunk must be at least 1");
  const NoiseSchedule& s = model.schedule();
  Tensor out({n, 1});
  for (std::int64_t begin = 0; begin < n; begin += chunk) {
    const std::int64_t end = std::min(n, begin + chunk);
    const std::int64_t m = end - begin;
    auto rngs = chain_streams(seed, stream, begin, end);
    Tensor x({m, 1}), z({m, 1});
    for (std::int64_t i = 0; i < m; ++i) x[i] = rngs[static_cast<std::size_t>(i)].normal();
    for (int t = s.steps(); t >= 1; --t) {
      const Tensor e = predict_noise(model, x, t);
      for (std::int64_t i = 0; i < m; ++i) z[i] = rngs[static_cast<std::size_t>(i)].normal();
      x = reverse_step(x, t, e, s, z);
      require(x.all_finite(), ErrorKind::Numeric, "sampling diverged at t = " + std::to_string(t));
    }
    std::copy(x.data().begin(), x.data().end(), out.data().begin() + begin);
  }
  return out;
}

}  // namespace dguide
