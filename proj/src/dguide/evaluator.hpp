#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "dguide/gmm.hpp"

namespace dguide {

/// -(1/N) sum log q(sample_i), natural log.
double nll(const Tensor& samples, const GmmSpec& target);

struct NllEstimate {
  double mean = 0.0;
  double std_error = 0.0;  // sample sd / sqrt(N)
  std::int64_t n = 0;
};

NllEstimate nll_estimate(const Tensor& samples, const GmmSpec& target);

/// Difference of two independent estimates in units of its combined standard error.
double gap_in_std_errors(const NllEstimate& lower, const NllEstimate& higher);

struct ModeCoverage {
  std::vector<std::int64_t> counts;  // per target component
  std::vector<double> frequencies;   // counts / n
  double captured = 0.0;             // sum of frequencies
  std::int64_t n = 0;
};

/// Each sample goes to its nearest component mean if within `radius`
/// (Euclidean); an infinite radius assigns every sample.
ModeCoverage mode_coverage(const Tensor& samples, const GmmSpec& target, double radius);
ModeCoverage nearest_mode_assignment(const Tensor& samples, const GmmSpec& target);

inline constexpr double kCaptureRadius = 0.3;

/// Total-variation distance between a 1-D sample histogram and the analytic
/// bin masses of `target`; mass outside [lo, hi) counts as one extra bin.
double histogram_tv(const Tensor& samples, const GmmSpec& target, int bins = 100, double lo = -4.0, double hi = 4.0);

/// Sample dump "chain_id,x,y" (or "chain_id,x" for 1-D), rows in chain order.
void export_scatter(const Tensor& samples, const std::string& path);
Tensor read_scatter(const std::string& path);

struct EvaluationReport {
  NllEstimate nll;
  ModeCoverage coverage;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string target;
};

EvaluationReport evaluate(const Tensor& samples, const GmmSpec& target, const std::string& target_name,
                          std::uint64_t seed, const std::string& config_hash);
nlohmann::json to_json(const EvaluationReport& r);
void write_report(const EvaluationReport& r, const std::string& path);

}  // namespace dguide
