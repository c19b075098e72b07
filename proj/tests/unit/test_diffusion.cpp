#include <cmath>
#include <vector>

#include "dguide/diffusion.hpp"
#include "dguide/gmm.hpp"
#include "dguide/networks.hpp"
#include "dguide/trainer.hpp"
#include "test_support.hpp"

using namespace dguide;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size() - 1);
  return m;
}

// 3-sigma Monte-Carlo bounds on the sample mean and variance of n normal draws.
void expect_normal_moments(const std::vector<double>& v, double mean, double var) {
  const double n = static_cast<double>(v.size());
  const Moments m = moments(v);
  EXPECT_LT(std::abs(m.mean - mean), 3.0 * std::sqrt(var / n)) << "mean " << m.mean << " vs " << mean;
  EXPECT_LT(std::abs(m.var - var), 3.0 * var * std::sqrt(2.0 / (n - 1.0))) << "var " << m.var << " vs " << var;
}

}  // namespace

TEST(Schedule, LinearEndpointsAndProducts) {
  const auto s = make_linear_schedule(500, 1e-4, 0.02);
  EXPECT_EQ(s.steps(), 500);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta(500), 0.02);
  EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
  EXPECT_NEAR(s.alpha_bar(1), 0.9999, 1e-16);
  EXPECT_EQ(s.sigma(1), 0.0);
  double prod = 1.0;
  for (int t = 1; t <= 500; ++t) {
    const double beta = 1e-4 + (0.02 - 1e-4) * (t - 1) / 499.0;
    EXPECT_NEAR(s.beta(t), beta, 1e-17);
    prod *= 1.0 - beta;
    EXPECT_NEAR(s.alpha_bar(t), prod, 1e-14 * prod);
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_LE(s.sigma(t), std::sqrt(s.beta(t)));
    const double sigma2 = (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
    EXPECT_NEAR(s.sigma(t), std::sqrt(sigma2), 1e-15);
  }
}

TEST(Schedule, InvalidInputs) {
  EXPECT_EQ(dguide::testing::error_kind_of([] { make_linear_schedule(0, 1e-4, 0.02); }), ErrorKind::Config);
  EXPECT_EQ(dguide::testing::error_kind_of([] { make_linear_schedule(10, 0.0, 0.02); }), ErrorKind::Config);
  EXPECT_EQ(dguide::testing::error_kind_of([] { make_linear_schedule(10, 0.1, 1.0); }), ErrorKind::Config);
  const auto s = make_linear_schedule(10, 1e-4, 0.02);
  EXPECT_THROW(s.beta(0), Error);
  EXPECT_THROW(s.beta(11), Error);
}

TEST(ForwardNoise, ClosedFormCases) {
  const auto s = make_linear_schedule(500, 1e-4, 0.02);
  const Tensor x0({3, 1}, {-3.0, 0.5, 2.0});
  const Tensor zero({3, 1});
  const Tensor e({3, 1}, {1.0, -2.0, 0.25});
  for (int t : {1, 100, 500}) {
    const Tensor a = forward_noise(x0, t, zero, s);
    const Tensor b = forward_noise(zero, t, e, s);
    for (int i = 0; i < 3; ++i) {
      EXPECT_DOUBLE_EQ(a[i], std::sqrt(s.alpha_bar(t)) * x0[i]);
      EXPECT_DOUBLE_EQ(b[i], std::sqrt(1.0 - s.alpha_bar(t)) * e[i]);
    }
  }
}

TEST(ForwardNoise, MarginalAtTMatchesClosedForm) {
  const auto s = make_linear_schedule(500, 1e-4, 0.02);
  RandomStream rng(1, "test/eps");
  const int n = 10000;
  Tensor x0({n, 1}, 1.3);
  Tensor eps({n, 1});
  for (double& v : eps.data()) v = rng.normal();
  const Tensor xt = forward_noise(x0, 500, eps, s);
  expect_normal_moments({xt.data().begin(), xt.data().end()}, std::sqrt(s.alpha_bar(500)) * 1.3,
                        1.0 - s.alpha_bar(500));
}

TEST(ForwardNoise, ComposedSingleStepsMatchMarginal) {
  const auto s = make_linear_schedule(500, 1e-4, 0.02);
  const int n = 10000;
  const double x0 = -1.5;
  for (int t : {1, 10, 250, 500}) {
    RandomStream rng(2, "test/steps", static_cast<std::uint64_t>(t));
    std::vector<double> v(n, x0);
    for (int k = 1; k <= t; ++k)
      for (double& x : v) x = std::sqrt(1.0 - s.beta(k)) * x + std::sqrt(s.beta(k)) * rng.normal();
    expect_normal_moments(v, std::sqrt(s.alpha_bar(t)) * x0, 1.0 - s.alpha_bar(t));
  }
}

TEST(ReverseStep, ClosedFormCases) {
  const auto s = make_linear_schedule(500, 1e-4, 0.02);
  const Tensor x({2, 1}, {0.8, -2.0});
  const Tensor zero({2, 1});
  const Tensor z({2, 1}, {5.0, -7.0});
  const Tensor e({2, 1}, {0.3, 0.1});
  for (int t : {1, 2, 300}) {
    const Tensor r = reverse_step(x, t, zero, s, zero);
    for (int i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(r[i], x[i] / std::sqrt(1.0 - s.beta(t)));
  }
  EXPECT_TRUE(reverse_step(x, 1, e, s, z) == reverse_step(x, 1, e, s, zero));
  EXPECT_FALSE(reverse_step(x, 2, e, s, z) == reverse_step(x, 2, e, s, zero));
}

TEST(ReverseStep, MatchesIndependentImplementation) {
  // Coefficients rebuilt from betas alone.
  const int T = 500;
  std::vector<double> beta(T + 1), abar(T + 1);
  abar[0] = 1.0;
  for (int t = 1; t <= T; ++t) {
    beta[t] = 1e-4 + (0.02 - 1e-4) * (t - 1) / (T - 1.0);
    abar[t] = abar[t - 1] * (1.0 - beta[t]);
  }
  const auto s = make_linear_schedule(T, 1e-4, 0.02);
  RandomStream rng(3, "test/reverse");
  for (int trial = 0; trial < 200; ++trial) {
    const int t = static_cast<int>(rng.uniform_int(1, T));
    const int n = 5;
    Tensor x({n, 1}), e({n, 1}), z({n, 1});
    for (int i = 0; i < n; ++i) {
      x[i] = 6.0 * rng.normal();
      e[i] = rng.normal();
      z[i] = rng.normal();
    }
    const Tensor got = reverse_step(x, t, e, s, z);
    const double alpha = 1.0 - beta[t];
    const double sigma = std::sqrt((1.0 - abar[t - 1]) / (1.0 - abar[t]) * beta[t]);
    for (int i = 0; i < n; ++i) {
      const double want = (x[i] - (1.0 - alpha) / std::sqrt(1.0 - abar[t]) * e[i]) / std::sqrt(alpha) + sigma * z[i];
      EXPECT_NEAR(got[i], want, 1e-12 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST(ReverseStep, GaussianDataWithExactScoreRecoversData) {
  // Data N(m, v): the noised marginal is N(sqrt(abar) m, abar v + 1 - abar),
  // so the exact noise prediction is sqrt(1 - abar) (x - sqrt(abar) m) / (abar v + 1 - abar).
  const auto s = make_linear_schedule(500, 1e-4, 0.02);
  const double m = 0.7, v = 0.25;
  const int n = 10000;
  RandomStream rng(4, "test/chain");
  Tensor x({n, 1});
  for (double& e : x.data()) e = rng.normal();
  Tensor eps({n, 1}), z({n, 1});
  for (int t = 500; t >= 1; --t) {
    const double ab = s.alpha_bar(t);
    for (int i = 0; i < n; ++i) {
      eps[i] = std::sqrt(1.0 - ab) * (x[i] - std::sqrt(ab) * m) / (ab * v + 1.0 - ab);
      z[i] = rng.normal();
    }
    x = reverse_step(x, t, eps, s, z);
  }
  expect_normal_moments({x.data().begin(), x.data().end()}, m, v);
}

TEST(ReverseStep, ShapeAndRangeErrors) {
  const auto s = make_linear_schedule(10, 1e-4, 0.02);
  const Tensor a({2, 1}), b({3, 1});
  EXPECT_EQ(dguide::testing::error_kind_of([&] { reverse_step(a, 1, b, s, a); }), ErrorKind::Shape);
  EXPECT_EQ(dguide::testing::error_kind_of([&] { reverse_step(a, 11, a, s, a); }), ErrorKind::Contract);
}

TEST(NoiseToScore, Arithmetic) {
  const NoiseSchedule s(std::vector<double>{0.25, 0.5});
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.75);
  EXPECT_DOUBLE_EQ(noise_to_score(Tensor({1, 1}, {1.0}), 1, s)[0], -2.0);
  EXPECT_EQ(noise_to_score(Tensor({1, 1}, {0.0}), 1, s)[0], 0.0);
}

TEST(DenoisingLoss, ZeroPredictorGivesInputDim) {
  const auto s = make_linear_schedule(500, 1e-4, 0.02);
  const int n = 20000;
  for (int d : {1, 2}) {
    Tensor batch({n, d}, 0.5);
    RandomStream rng(5, "test/loss", static_cast<std::uint64_t>(d));
    const NoisePredictor zero = [](Tape& tape, Var x, std::span<const int>) {
      return tape.constant(Matrix::Zero(x.rows(), x.cols()));
    };
    const double loss = denoising_loss_value(zero, batch, s, rng);
    // E||eps||^2 = d, sd of ||eps||^2 = sqrt(2 d).
    EXPECT_LT(std::abs(loss - d), 4.0 * std::sqrt(2.0 * d / n));
  }
}

TEST(DenoisingLoss, PerfectPredictorGivesZero) {
  const auto s = make_linear_schedule(500, 1e-4, 0.02);
  const Tensor batch({6, 1}, {-3, -1.5, 0, 1.5, 3, 0.2});
  const Matrix x0 = batch.to_matrix();
  const NoisePredictor oracle = [&](Tape& tape, Var x, std::span<const int> t) {
    Matrix shift(x.rows(), 1), inv(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double ab = s.alpha_bar(t[static_cast<std::size_t>(i)]);
      shift(i, 0) = -std::sqrt(ab) * x0(i, 0);
      inv(i, 0) = 1.0 / std::sqrt(1.0 - ab);
    }
    return mul_col(add(x, tape.constant(shift)), tape.constant(inv));
  };
  RandomStream rng(6, "test/loss");
  EXPECT_LT(denoising_loss_value(oracle, batch, s, rng), 1e-20);
}

TEST(DenoisingLoss, TapeAndValueAgree) {
  const auto s = make_linear_schedule(500, 1e-4, 0.02);
  const auto p = dguide::testing::random_network(dguide::testing::tiny_spec(1), 7, 0.3);
  const Tensor batch({16, 1}, 0.3);
  Tape tape;
  const NoisePredictor f = [&](Tape& tp, Var x, std::span<const int> t) {
    const auto v = bind_parameters(tp, p, true);
    return forward_graph(p.spec, v, x, modulation_graph(tp, p.spec, v, t));
  };
  RandomStream a(8, "loss"), b(8, "loss");
  EXPECT_NEAR(denoising_loss(tape, f, batch, s, a).value()(0, 0), denoising_loss_value(f, batch, s, b), 1e-14);
}

TEST(DenoisingLoss, DecreasesDuringTraining) {
  // Block means over 50 steps, tiny network on base GMM data.
  const auto data = make_dataset("base", 500, 9);
  TrainConfig cfg;
  cfg.max_steps = 300;
  cfg.batch_size = 512;
  cfg.adam.learning_rate = 2e-4;
  cfg.early_stop_window = 0;
  cfg.seed = 10;
  cfg.init_seed = 11;
  const auto run = train_base(data.samples, cfg, make_linear_schedule(500, 1e-4, 0.02), MlpSpec{1, {32, 32}, 1, 16});
  ASSERT_EQ(run.log.size(), 300u);
  std::vector<double> blocks;
  for (std::size_t b = 0; b < 6; ++b) {
    double sum = 0.0;
    for (std::size_t i = 50 * b; i < 50 * (b + 1); ++i) sum += run.log[i].total;
    blocks.push_back(sum / 50.0);
  }
  for (std::size_t b = 1; b < blocks.size(); ++b) EXPECT_LT(blocks[b], blocks[b - 1]) << "block " << b;
}
