#include "dguide/evaluator.hpp"

#include <cmath>
#include <fstream>

namespace dguide {

namespace {

std::span<const double> row(const Tensor& t, std::int64_t r) {
  return t.data().subspan(static_cast<std::size_t>(r * t.cols()), static_cast<std::size_t>(t.cols()));
}

void check_samples(const Tensor& samples, const GmmSpec& target) {
  require(samples.rank() == 2 && samples.rows() >= 1, ErrorKind::Contract, "evaluation needs a non-empty sample set");
  require(samples.cols() == target.dim(), ErrorKind::Shape, "sample dimension does not match the target");
}

}  // namespace

double nll(const Tensor& samples, const GmmSpec& target) { return nll_estimate(samples, target).mean; }

NllEstimate nll_estimate(const Tensor& samples, const GmmSpec& target) {
  check_samples(samples, target);
  target.validate();
  const std::int64_t n = samples.rows();
  std::vector<double> values(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) sum += (values[static_cast<std::size_t>(i)] = -log_density(target, row(samples, i)));
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  const double sd = n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : 0.0;
  return {mean, sd / std::sqrt(static_cast<double>(n)), n};
}

double gap_in_std_errors(const NllEstimate& lower, const NllEstimate& higher) {
  const double se = std::hypot(lower.std_error, higher.std_error);
  return (higher.mean - lower.mean) / se;
}

ModeCoverage mode_coverage(const Tensor& samples, const GmmSpec& target, double radius) {
  check_samples(samples, target);
  require(radius > 0.0, ErrorKind::Contract, "capture radius must be positive");
  ModeCoverage c;
  c.n = samples.rows();
  c.counts.assign(static_cast<std::size_t>(target.components()), 0);
  for (std::int64_t i = 0; i < samples.rows(); ++i) {
    const auto x = row(samples, i);
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < target.means.size(); ++k) {
      double sq = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) sq += (x[j] - target.means[k][j]) * (x[j] - target.means[k][j]);
      if (sq < best) best = sq, arg = k;
    }
    if (std::sqrt(best) <= radius) ++c.counts[arg];
  }
  for (auto k : c.counts) {
    c.frequencies.push_back(static_cast<double>(k) / static_cast<double>(c.n));
    c.captured += c.frequencies.back();
  }
  return c;
}

ModeCoverage nearest_mode_assignment(const Tensor& samples, const GmmSpec& target) {
  return mode_coverage(samples, target, std::numeric_limits<double>::infinity());
}

double histogram_tv(const Tensor& samples, const GmmSpec& target, int bins, double lo, double hi) {
  check_samples(samples, target);
  require(target.dim() == 1, ErrorKind::Shape, "histogram TV is defined for 1-D targets");
  require(bins >= 1 && hi > lo, ErrorKind::Contract, "histogram needs bins >= 1 and hi > lo");
  const double width = (hi - lo) / bins;
  std::vector<double> empirical(static_cast<std::size_t>(bins) + 1, 0.0);  // last slot: outside
  const double w = 1.0 / static_cast<double>(samples.rows());
  for (std::int64_t i = 0; i < samples.rows(); ++i) {
    const double v = samples[i];
    const auto b = static_cast<std::int64_t>(std::floor((v - lo) / width));
    empirical[(v >= lo && v < hi && b >= 0 && b < bins) ? static_cast<std::size_t>(b) : empirical.size() - 1] += w;
  }
  auto cdf = [&](double x) {
    double s = 0.0;
    for (const auto& m : target.means) s += 0.5 * std::erfc(-(x - m[0]) / (target.sigma * std::sqrt(2.0)));
    return s / target.components();
  };
  double tv = 0.0, inside = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double p = cdf(lo + width * (b + 1)) - cdf(lo + width * b);
    inside += p;
    tv += std::abs(p - empirical[static_cast<std::size_t>(b)]);
  }
  tv += std::abs((1.0 - inside) - empirical.back());
  return 0.5 * tv;
}

void export_scatter(const Tensor& samples, const std::string& path) {
  require(samples.rank() == 2 && samples.rows() >= 1 && samples.cols() >= 1 && samples.cols() <= 2,
          ErrorKind::Shape, "sample dumps hold [n, 1] or [n, 2] tensors");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  out << (samples.cols() == 2 ? "chain_id,x,y\n" : "chain_id,x\n");
  for (std::int64_t i = 0; i < samples.rows(); ++i) {
    out << i;
    for (std::int64_t c = 0; c < samples.cols(); ++c) out << ',' << format_double(samples.at(i, c));
    out << '\n';
  }
  require(out.good(), ErrorKind::Io, "failed writing '" + path + "'");
}

Tensor read_scatter(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::MissingArtifact, "sample dump '" + path + "' not found");
  std::string line;
  std::getline(in, line);
  std::int64_t cols = 0;
  if (line == "chain_id,x,y")
    cols = 2;
  else if (line == "chain_id,x")
    cols = 1;
  else
    fail(ErrorKind::Config, "'" + path + "' is not a sample dump");
  std::vector<double> values;
  std::int64_t expected_id = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::string_view rest(line);
    const auto comma = rest.find(',');
    require(comma != std::string_view::npos, ErrorKind::Config, "malformed sample row in '" + path + "'");
    require(static_cast<std::int64_t>(parse_double(rest.substr(0, comma))) == expected_id, ErrorKind::Config,
            "sample dump '" + path + "' is not in chain order");
    ++expected_id;
    rest.remove_prefix(comma + 1);
    for (std::int64_t c = 0; c < cols; ++c) {
      const auto next = rest.find(',');
      require((next == std::string_view::npos) == (c == cols - 1), ErrorKind::Config,
              "wrong column count in '" + path + "'");
      values.push_back(parse_double(rest.substr(0, next)));
      if (next != std::string_view::npos) rest.remove_prefix(next + 1);
    }
  }
  require(expected_id >= 1, ErrorKind::Config, "sample dump '" + path + "' is empty");
  return Tensor({expected_id, cols}, std::move(values));
}

EvaluationReport evaluate(const Tensor& samples, const GmmSpec& target, const std::string& target_name,
                          std::uint64_t seed, const std::string& config_hash) {
  return {nll_estimate(samples, target), mode_coverage(samples, target, kCaptureRadius), seed, config_hash,
          target_name};
}

nlohmann::json to_json(const EvaluationReport& r) {
  return {{"target", r.target},
          {"nll", r.nll.mean},
          {"nll_std_error", r.nll.std_error},
          {"n", r.nll.n},
          {"mode_counts", r.coverage.counts},
          {"mode_frequencies", r.coverage.frequencies},
          {"captured", r.coverage.captured},
          {"capture_radius", kCaptureRadius},
          {"seed", r.seed},
          {"config_hash", r.config_hash}};
}

void write_report(const EvaluationReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  out << to_json(r).dump(2) << '\n';
  require(out.good(), ErrorKind::Io, "failed writing '" + path + "'");
}

}  // namespace dguide
