#include "dguide/gmm.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace dguide {

void GmmSpec::validate() const {
  require(!means.empty(), ErrorKind::Config, "mixture needs at least one component");
  require(sigma > 0.0, ErrorKind::Config, "mixture sigma must be positive");
  const auto d = means.front().size();
  require(d > 0, ErrorKind::Config, "mixture dimension must be positive");
  for (const auto& m : means) require(m.size() == d, ErrorKind::Config, "all means must share one dimension");
}

GmmSpec base_spec() { return {{{-3.0}, {-1.5}, {0.0}, {1.5}, {3.0}}, 0.1}; }

GmmSpec ind_spec() { return {{{-3.0, 1.5}, {-1.5, -3.0}, {0.0, 3.0}, {1.5, 0.0}, {3.0, -1.5}}, 0.1}; }

GmmSpec ood_spec() { return {{{-2.25, -2.25}, {2.25, 2.25}, {-2.25, 2.25}, {2.25, -2.25}, {0.0, 0.0}}, 0.1}; }

GmmSpec marginal(const GmmSpec& spec, int axis) {
  spec.validate();
  require(axis >= 0 && axis < spec.dim(), ErrorKind::Config, "marginal axis out of range");
  GmmSpec out;
  out.sigma = spec.sigma;
  for (const auto& m : spec.means) out.means.push_back({m[static_cast<std::size_t>(axis)]});
  return out;
}

GmmSpec noised(const GmmSpec& spec, double alpha_bar) {
  spec.validate();
  require(alpha_bar > 0.0 && alpha_bar <= 1.0, ErrorKind::Config, "alpha_bar must be in (0, 1]");
  GmmSpec out;
  const double a = std::sqrt(alpha_bar);
  for (const auto& m : spec.means) {
    std::vector<double> scaled(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) scaled[i] = a * m[i];
    out.means.push_back(std::move(scaled));
  }
  out.sigma = std::sqrt(alpha_bar * spec.sigma * spec.sigma + (1.0 - alpha_bar));
  return out;
}

Tensor sample(const GmmSpec& spec, std::int64_t n, std::uint64_t seed) {
  spec.validate();
  require(n >= 1, ErrorKind::Config, "sample count must be at least 1");
  const int d = spec.dim();
  Tensor out({n, d});
  RandomStream rng(seed, "gmm");
  for (std::int64_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(rng.uniform_int(0, spec.components() - 1));
    for (int j = 0; j < d; ++j) out.at(i, j) = spec.means[k][static_cast<std::size_t>(j)] + spec.sigma * rng.normal();
  }
  return out;
}

double log_density(const GmmSpec& spec, std::span<const double> point) {
  require(static_cast<int>(point.size()) == spec.dim(), ErrorKind::Shape, "point dimension does not match mixture");
  const double d = static_cast<double>(point.size());
  const double var = spec.sigma * spec.sigma;
  const double log_norm = -0.5 * d * std::log(2.0 * std::numbers::pi * var) - std::log(spec.components());
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(spec.means.size());
  for (const auto& m : spec.means) {
    double sq = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) sq += (point[i] - m[i]) * (point[i] - m[i]);
    terms.push_back(-0.5 * sq / var);
    best = std::max(best, terms.back());
  }
  double acc = 0.0;
  for (double v : terms) acc += std::exp(v - best);
  return log_norm + best + std::log(acc);
}

std::vector<double> score(const GmmSpec& spec, std::span<const double> point) {
  require(static_cast<int>(point.size()) == spec.dim(), ErrorKind::Shape, "point dimension does not match mixture");
  const double var = spec.sigma * spec.sigma;
  std::vector<double> logits;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& m : spec.means) {
    double sq = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) sq += (point[i] - m[i]) * (point[i] - m[i]);
    logits.push_back(-0.5 * sq / var);
    best = std::max(best, logits.back());
  }
  double total = 0.0;
  for (double& v : logits) total += (v = std::exp(v - best));
  std::vector<double> out(point.size(), 0.0);
  for (std::size_t k = 0; k < spec.means.size(); ++k)
    for (std::size_t i = 0; i < point.size(); ++i)
      out[i] += logits[k] / total * (spec.means[k][i] - point[i]) / var;
  return out;
}

GmmSpec spec_for_kind(const std::string& kind) {
  if (kind == "base") return base_spec();
  if (kind == "ind") return ind_spec();
  if (kind == "ood") return ood_spec();
  fail(ErrorKind::Config, "unknown dataset kind '" + kind + "' (expected base, ind or ood)");
}

Dataset make_dataset(const std::string& kind, std::int64_t n, std::uint64_t seed) {
  Dataset d;
  d.kind = kind;
  d.spec = spec_for_kind(kind);
  d.seed = seed;
  d.samples = sample(d.spec, n, seed);
  return d;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  require(res.ec == std::errc() && res.ptr == text.data() + text.size(), ErrorKind::Config,
          "malformed number '" + std::string(text) + "'");
  return v;
}

namespace {

constexpr const char* kDatasetMagic = "# dguide-dataset v1";

}  // namespace

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  nlohmann::json header{{"kind", data.kind},
                        {"spec", {{"means", data.spec.means}, {"sigma", data.spec.sigma}}},
                        {"seed", data.seed},
                        {"n", data.samples.rows()},
                        {"dim", data.samples.cols()}};
  out << kDatasetMagic << '\n' << "# " << header.dump() << '\n';
  for (std::int64_t r = 0; r < data.samples.rows(); ++r) {
    for (std::int64_t c = 0; c < data.samples.cols(); ++c) {
      if (c) out << ',';
      out << format_double(data.samples.at(r, c));
    }
    out << '\n';
  }
  require(out.good(), ErrorKind::Io, "failed writing '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::MissingArtifact, "dataset '" + path + "' not found");
  std::string line;
  std::getline(in, line);
  require(line == kDatasetMagic, ErrorKind::Config, "'" + path + "' is not a dataset file");
  std::getline(in, line);
  require(line.rfind("# ", 0) == 0, ErrorKind::Config, "dataset header missing in '" + path + "'");
  Dataset d;
  std::int64_t n = 0, dim = 0;
  try {
    auto header = nlohmann::json::parse(line.substr(2));
    d.kind = header.at("kind").get<std::string>();
    d.spec.means = header.at("spec").at("means").get<std::vector<std::vector<double>>>();
    d.spec.sigma = header.at("spec").at("sigma").get<double>();
    d.seed = header.at("seed").get<std::uint64_t>();
    n = header.at("n").get<std::int64_t>();
    dim = header.at("dim").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "bad dataset header in '" + path + "': " + e.what());
  }
  require(n >= 1 && dim >= 1, ErrorKind::Config, "dataset header has empty shape");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n * dim));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::string_view rest(line);
    std::int64_t count = 0;
    while (true) {
      const auto comma = rest.find(',');
      values.push_back(parse_double(rest.substr(0, comma)));
      ++count;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    require(count == dim, ErrorKind::Config, "dataset row width differs from header in '" + path + "'");
  }
  require(static_cast<std::int64_t>(values.size()) == n * dim, ErrorKind::Config,
          "dataset row count differs from header in '" + path + "'");
  d.samples = Tensor({n, dim}, std::move(values));
  return d;
}

}  // namespace dguide
