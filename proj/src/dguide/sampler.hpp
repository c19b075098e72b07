#pragma once

#include <cstdint>
#include <string>

#include "dguide/networks.hpp"

namespace dguide {

enum class SampleMode { Independent, Guided };

std::string to_string(SampleMode mode);
SampleMode sample_mode_from_string(const std::string& text);

struct SamplerConfig {
  std::int64_t n_samples = 4000;
  std::uint64_t seed = 0;
  double guidance_scale = 1.0;
  SampleMode mode = SampleMode::Independent;
  /// Chains advanced together per batch; changes results only by rounding.
  std::int64_t chunk = 1000;

  void validate() const;
};

/// eps_base - scale * sqrt(1 - abar_t) * g.
Tensor guided_noise(const Tensor& eps_base, const Tensor& g, int t, const NoiseSchedule& s, double scale);

/// Joint ancestral sampling, returning [n, 2] rows (x, y) ordered by chain id.
/// Chain i draws x_T, y_T and then (z_x, z_y) per step from its own stream, so
/// guided and independent runs with one seed share all noise.
Tensor sample_joint(const BaseNoisePredictor& base_x, const BaseNoisePredictor& base_y, const JointDiscriminator* disc,
                    const SamplerConfig& cfg);

/// Unguided 1-D chains: [n, 1]; chain i uses stream (seed, stream, i).
Tensor sample_unguided(const BaseNoisePredictor& model, std::int64_t n, std::uint64_t seed,
                       const std::string& stream = "chain", std::int64_t chunk = 1000);

}  // namespace dguide
