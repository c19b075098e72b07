#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dguide/tensor.hpp"

namespace dguide {

/// Equal-weight isotropic Gaussian mixture.
struct GmmSpec {
  std::vector<std::vector<double>> means;
  double sigma = 0.1;

  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
  int components() const { return static_cast<int>(means.size()); }
  void validate() const;

  friend bool operator==(const GmmSpec&, const GmmSpec&) = default;
};

/// 1-D, five components at -3, -1.5, 0, 1.5, 3.
GmmSpec base_spec();
/// 2-D pairs whose marginals both equal base_spec.
GmmSpec ind_spec();
/// 2-D pairs at the four corners (+-2.25, +-2.25) and the origin.
GmmSpec ood_spec();

/// Mixture of a single coordinate of every component (components may repeat).
GmmSpec marginal(const GmmSpec& spec, int axis);

/// Distribution of sqrt(abar) * x0 + sqrt(1 - abar) * eps for x0 ~ spec.
GmmSpec noised(const GmmSpec& spec, double alpha_bar);

/// n i.i.d. draws as an [n, d] tensor; the component is uniform per draw.
Tensor sample(const GmmSpec& spec, std::int64_t n, std::uint64_t seed);

/// log sum_k (1/K) N(point; mu_k, sigma^2 I) via log-sum-exp.
double log_density(const GmmSpec& spec, std::span<const double> point);

/// d/dx log density (used as an analytic score oracle).
std::vector<double> score(const GmmSpec& spec, std::span<const double> point);

/// Samples + generating spec + seed; re-derivable from its header.
struct Dataset {
  std::string kind;  // "base" | "ind" | "ood" | free-form
  GmmSpec spec;
  std::uint64_t seed = 0;
  Tensor samples;  // [n, d]

  std::int64_t size() const { return samples.rows(); }
};

/// Named dataset kinds: base, ind, ood.
GmmSpec spec_for_kind(const std::string& kind);
Dataset make_dataset(const std::string& kind, std::int64_t n, std::uint64_t seed);

void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

/// 17-significant-digit text; parses back to the identical double.
std::string format_double(double v);
double parse_double(std::string_view text);

}  // namespace dguide
