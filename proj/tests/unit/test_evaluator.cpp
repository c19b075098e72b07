#include <cmath>
#include <fstream>
#include <numbers>

#include "dguide/evaluator.hpp"
#include "test_support.hpp"

using namespace dguide;
using dguide::testing::temp_path;

TEST(Nll, SingleComponentAtMean) {
  const GmmSpec one{{{0.0}}, 0.1};
  EXPECT_NEAR(nll(Tensor({3, 1}, 0.0), one), -1.3836, 1e-4);
  const auto est = nll_estimate(Tensor({3, 1}, 0.0), one);
  EXPECT_EQ(est.std_error, 0.0);
  EXPECT_EQ(est.n, 3);
}

TEST(Nll, PermutationInvariant) {
  Tensor x = sample(ind_spec(), 200, 1);
  const double a = nll(x, ind_spec());
  Tensor y({200, 2});
  for (std::int64_t i = 0; i < 200; ++i) {
    y.at(i, 0) = x.at(199 - i, 0);
    y.at(i, 1) = x.at(199 - i, 1);
  }
  EXPECT_NEAR(nll(y, ind_spec()), a, 1e-12 * std::abs(a));
}

TEST(Nll, GroundTruthSamplesAreStable) {
  // The 2-D entropy is about -0.16, so seed agreement is judged in standard errors.
  for (const auto& g : {ind_spec(), ood_spec()}) {
    const auto a = nll_estimate(sample(g, 4000, 2), g);
    const auto b = nll_estimate(sample(g, 4000, 3), g);
    const double entropy = std::log(5.0) + std::log(2.0 * std::numbers::pi * std::numbers::e * g.sigma * g.sigma);
    EXPECT_LT(std::abs(gap_in_std_errors(a, b)), 4.0);
    EXPECT_LT(std::abs(a.mean - entropy), 4.0 * a.std_error);
    EXPECT_NEAR(a.std_error, 1.0 / std::sqrt(4000.0), 0.1 / std::sqrt(4000.0));
  }
  const auto base = nll_estimate(sample(base_spec(), 4000, 4), base_spec());
  const auto again = nll_estimate(sample(base_spec(), 4000, 5), base_spec());
  EXPECT_LT(std::abs(base.mean - again.mean), 0.05 * std::abs(base.mean));
}

TEST(Nll, StdErrorAndGap) {
  const Tensor x({4, 1}, {-3.0, -2.9, -3.1, -3.0});
  const auto e = nll_estimate(x, base_spec());
  std::vector<double> v;
  for (int i = 0; i < 4; ++i) {
    const double p[] = {x[i]};
    v.push_back(-log_density(base_spec(), p));
  }
  double mean = 0.0;
  for (double a : v) mean += a / 4.0;
  double sq = 0.0;
  for (double a : v) sq += (a - mean) * (a - mean);
  EXPECT_NEAR(e.mean, mean, 1e-14);
  EXPECT_NEAR(e.std_error, std::sqrt(sq / 3.0) / 2.0, 1e-14);
  EXPECT_DOUBLE_EQ(gap_in_std_errors({1.0, 0.3, 10}, {2.0, 0.4, 10}), 2.0);
}

TEST(Nll, ShapeErrors) {
  EXPECT_EQ(dguide::testing::error_kind_of([] { nll(Tensor({3, 1}), ind_spec()); }), ErrorKind::Shape);
  EXPECT_EQ(dguide::testing::error_kind_of([] { nll(Tensor({3}), ind_spec()); }), ErrorKind::Contract);
}

TEST(Coverage, GroundTruthIsCaptured) {
  for (const auto& g : {ind_spec(), ood_spec()}) {
    const auto c = mode_coverage(sample(g, 4000, 4), g, kCaptureRadius);
    EXPECT_GE(c.captured, 0.98);
    double sum = 0.0;
    std::int64_t total = 0;
    for (std::size_t k = 0; k < c.counts.size(); ++k) {
      EXPECT_NEAR(c.frequencies[k], 0.2, 0.03);
      sum += c.frequencies[k];
      total += c.counts[k];
    }
    EXPECT_NEAR(sum, c.captured, 1e-12);
    EXPECT_NEAR(static_cast<double>(total) / 4000.0, c.captured, 1e-12);
  }
}

TEST(Coverage, ExactMeansAndRadius) {
  const auto g = ind_spec();
  Tensor x({6, 2});
  for (std::int64_t k = 0; k < 5; ++k) {
    x.at(k, 0) = g.means[static_cast<std::size_t>(k)][0];
    x.at(k, 1) = g.means[static_cast<std::size_t>(k)][1];
  }
  x.at(5, 0) = -3.0;
  x.at(5, 1) = 1.5 + 0.31;
  const auto c = mode_coverage(x, g, 0.3);
  for (auto n : c.counts) EXPECT_EQ(n, 1);
  EXPECT_NEAR(c.captured, 5.0 / 6.0, 1e-15);
  x.at(5, 1) = 1.5 + 0.29;
  EXPECT_EQ(mode_coverage(x, g, 0.3).counts[0], 2);
  EXPECT_EQ(nearest_mode_assignment(Tensor({1, 2}, {100.0, 100.0}), g).captured, 1.0);
}

TEST(Coverage, OffDiagonalPairsAreMissed) {
  // (x mode i, y mode j != pi(i)) lies at least 1.5 from any IND mean.
  const auto g = ind_spec();
  const double modes[] = {-3.0, -1.5, 0.0, 1.5, 3.0};
  Tensor x({25, 2});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      x.at(5 * i + j, 0) = modes[i];
      x.at(5 * i + j, 1) = modes[j];
    }
  EXPECT_NEAR(mode_coverage(x, g, kCaptureRadius).captured, 0.2, 1e-15);
}

TEST(HistogramTv, GroundTruthIsSmallAndShiftIsLarge) {
  EXPECT_LT(histogram_tv(sample(base_spec(), 20000, 5), base_spec()), 0.05);
  Tensor shifted = sample(base_spec(), 4000, 6);
  for (double& v : shifted.data()) v += 0.75;
  EXPECT_GT(histogram_tv(shifted, base_spec()), 0.9);
  EXPECT_NEAR(histogram_tv(Tensor({10, 1}, 50.0), base_spec()), 1.0, 1e-9);
  EXPECT_EQ(dguide::testing::error_kind_of([] { histogram_tv(Tensor({3, 2}), ind_spec()); }), ErrorKind::Shape);
}

TEST(Scatter, RoundTripAndOrder) {
  const Tensor x = sample(ind_spec(), 25, 7);
  const std::string path = temp_path("scatter.csv");
  export_scatter(x, path);
  EXPECT_TRUE(read_scatter(path) == x);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "chain_id,x,y");
  EXPECT_EQ(first.substr(0, 2), "0,");
  const std::string bad = temp_path("unordered.csv");
  std::ofstream(bad) << "chain_id,x\n1,0.5\n0,0.25\n";
  EXPECT_EQ(dguide::testing::error_kind_of([&] { read_scatter(bad); }), ErrorKind::Config);
  EXPECT_EQ(dguide::testing::error_kind_of([] { read_scatter(temp_path("absent.csv")); }),
            ErrorKind::MissingArtifact);
}

TEST(Report, JsonFields) {
  const auto r = evaluate(sample(ind_spec(), 100, 8), ind_spec(), "ind", 8, "abc");
  const auto j = to_json(r);
  EXPECT_EQ(j.at("target"), "ind");
  EXPECT_EQ(j.at("seed"), 8);
  EXPECT_EQ(j.at("config_hash"), "abc");
  EXPECT_EQ(j.at("n"), 100);
  EXPECT_EQ(j.at("mode_counts").size(), 5u);
  EXPECT_DOUBLE_EQ(j.at("nll").get<double>(), r.nll.mean);
  EXPECT_DOUBLE_EQ(j.at("capture_radius").get<double>(), 0.3);
  const std::string path = temp_path("report.json");
  write_report(r, path);
  std::ifstream in(path);
  EXPECT_EQ(nlohmann::json::parse(in), j);
}
