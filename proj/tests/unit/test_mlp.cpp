#include <numeric>
#include <vector>

#include "dguide/diffusion.hpp"
#include "dguide/mlp.hpp"
#include "dguide/networks.hpp"
#include "dguide/trainer.hpp"
#include "test_support.hpp"

using namespace dguide;
using dguide::testing::fd_gradient;
using dguide::testing::max_rel_error;
using dguide::testing::random_matrix;
using dguide::testing::random_network;
using dguide::testing::tiny_spec;

namespace {

Tensor random_input(std::int64_t rows, int cols, std::uint64_t seed) {
  // Uniform in [-5, 5].
  RandomStream rng(seed, "test/input");
  Tensor t({rows, cols});
  for (double& v : t.data()) v = 10.0 * rng.uniform() - 5.0;
  return t;
}

std::vector<int> random_times(std::int64_t rows, int max_t, std::uint64_t seed) {
  RandomStream rng(seed, "test/t");
  std::vector<int> t(static_cast<std::size_t>(rows));
  for (int& v : t) v = static_cast<int>(rng.uniform_int(1, max_t));
  return t;
}

double network_sum(const NetworkParams& p, const Matrix& x, std::span<const int> t) {
  return forward(p, Tensor::from_matrix(x), t).matrix().sum();
}

}  // namespace

TEST(Mlp, ParameterCounts) {
  EXPECT_EQ(build_network(base_mlp_spec(), 1).scalar_count(), 2201665);
  EXPECT_EQ(build_network(discriminator_mlp_spec(), 1).scalar_count(), 138641);
  EXPECT_EQ(base_mlp_spec().hidden_channels, (std::vector<int>{16, 64, 256, 64, 16}));
  EXPECT_EQ(discriminator_mlp_spec().hidden_channels, (std::vector<int>{64, 32, 8}));
}

TEST(Mlp, SameSeedSameParameters) {
  const auto a = build_network(discriminator_mlp_spec(), 9);
  const auto b = build_network(discriminator_mlp_spec(), 9);
  const auto c = build_network(discriminator_mlp_spec(), 10);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(a.tensors[k] == b.tensors[k]) << a.names[k];
  EXPECT_FALSE(a.tensors[0] == c.tensors[0]);
}

TEST(Mlp, InvalidSpecsRejected) {
  EXPECT_EQ(dguide::testing::error_kind_of([] { build_network(MlpSpec{1, {}, 1, 8}, 1); }), ErrorKind::Config);
  EXPECT_EQ(dguide::testing::error_kind_of([] { build_network(MlpSpec{1, {4}, 1, 7}, 1); }), ErrorKind::Config);
  EXPECT_EQ(dguide::testing::error_kind_of([] { build_network(MlpSpec{0, {4}, 1, 8}, 1); }), ErrorKind::Config);
}

TEST(Mlp, ZeroInitOutputIsZeroWithZeroInputGradient) {
  const auto p = build_network(tiny_spec(2, true), 3);
  const Tensor x = random_input(7, 2, 1);
  const auto t = random_times(7, 500, 2);
  const Tensor y = forward(p, x, t);
  const Tensor g = grad_input(p, x, t);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, BatchMatchesSingleRows) {
  const auto p = random_network(tiny_spec(2), 4);
  const Tensor x = random_input(9, 2, 3);
  const auto t = random_times(9, 500, 4);
  const Tensor batch = forward(p, x, t);
  const Tensor gbatch = grad_input(p, x, t);
  for (std::int64_t i = 0; i < 9; ++i) {
    Tensor row({1, 2}, {x.at(i, 0), x.at(i, 1)});
    const int ti = t[static_cast<std::size_t>(i)];
    EXPECT_NEAR(forward(p, row, ti)[0], batch[i], 1e-12 * (1.0 + std::abs(batch[i])));
    const Tensor g = grad_input(p, row, ti);
    EXPECT_NEAR(g[0], gbatch.at(i, 0), 1e-12 * (1.0 + std::abs(g[0])));
    EXPECT_NEAR(g[1], gbatch.at(i, 1), 1e-12 * (1.0 + std::abs(g[1])));
  }
}

TEST(Mlp, ForwardIsBitDeterministic) {
  const auto p = build_network(base_mlp_spec(), 5);
  const Tensor x = random_input(64, 1, 5);
  const auto t = random_times(64, 500, 6);
  EXPECT_TRUE(forward(p, x, t) == forward(p, x, t));
}

TEST(Mlp, FusedPathAgreesWithTape) {
  for (const MlpSpec& spec : {tiny_spec(1), tiny_spec(2), discriminator_mlp_spec()}) {
    const auto p = random_network(spec, 6, 0.3);
    const Tensor x = random_input(11, spec.input_dim, 7);
    const auto t = random_times(11, 500, 8);
    Tape tape;
    const auto v = bind_parameters(tape, p, false);
    Var xin = tape.variable(x.to_matrix());
    Var out = forward_graph(spec, v, xin, modulation_graph(tape, spec, v, t));
    const Var wrt[1] = {xin};
    const Matrix g = tape.gradients(sum_all(out), wrt)[0].value();
    EXPECT_LT(max_rel_error(forward(p, x, t).to_matrix(), out.value()), 1e-12);
    EXPECT_LT(max_rel_error(grad_input(p, x, t).to_matrix(), g), 1e-12);
  }
}

TEST(Mlp, ModulationTableMatchesGraph) {
  const auto p = random_network(tiny_spec(1), 7, 0.3);
  const ModulationTable table = build_modulation_table(p, 500);
  const std::vector<int> t{1, 17, 250, 500, 17};
  Tape tape;
  const auto v = bind_parameters(tape, p, false);
  const auto graph = modulation_graph(tape, p.spec, v, t);
  const auto looked = modulation_from_table(tape, table, t);
  ASSERT_EQ(graph.size(), looked.size());
  for (std::size_t l = 0; l < graph.size(); ++l) EXPECT_LT(max_rel_error(graph[l].value(), looked[l].value()), 1e-14);
  const Tensor x = random_input(5, 1, 9);
  EXPECT_LT(max_rel_error(forward(p, x, t, &table).to_matrix(), forward(p, x, t).to_matrix()), 1e-14);
}

TEST(Mlp, TimestepEmbedding) {
  const std::vector<int> t{3};
  const Matrix e = timestep_embedding(t, 8);
  ASSERT_EQ(e.cols(), 8);
  for (int k = 0; k < 4; ++k) {
    const double f = std::pow(10000.0, -static_cast<double>(k) / 4.0);
    EXPECT_NEAR(e(0, k), std::cos(3.0 * f), 1e-15);
    EXPECT_NEAR(e(0, 4 + k), std::sin(3.0 * f), 1e-15);
  }
}

TEST(Mlp, InputGradientMatchesFiniteDifferences) {
  for (const MlpSpec& spec : {tiny_spec(1), tiny_spec(2), discriminator_mlp_spec()}) {
    const auto p = random_network(spec, 11, 0.4);
    const Tensor x = random_input(6, spec.input_dim, 12);
    const auto t = random_times(6, 500, 13);
    const Matrix g = grad_input(p, x, t).to_matrix();
    const Matrix fd = fd_gradient([&](const Matrix& m) { return network_sum(p, m, t); }, x.to_matrix());
    EXPECT_LT(max_rel_error(g, fd), 1e-6) << spec.hidden_channels.size();
  }
}

TEST(Mlp, ParameterGradientMatchesFiniteDifferences) {
  const MlpSpec spec = tiny_spec(2);
  const auto p = random_network(spec, 14, 0.4);
  const Tensor x = random_input(5, 2, 15);
  const auto t = random_times(5, 500, 16);
  const OutputLoss loss = [](Tape&, Var out) { return sum_all(mul(out, out)); };
  const auto grads = grad_params(p, x, t, loss);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Matrix fd = fd_gradient(
        [&](const Matrix& m) {
          NetworkParams q = p;
          q.tensors[k].matrix() = m;
          const Tensor y = forward(q, x, t);
          return y.matrix().squaredNorm();
        },
        p.tensors[k].to_matrix());
    EXPECT_LT(max_rel_error(grads[k].to_matrix(), fd), 1e-6) << p.names[k];
  }
}

TEST(Mlp, SecondOrderParameterGradientMatchesFiniteDifferences) {
  // loss = ||grad_input||^2 + 0.3 * sum(out), differentiated over every parameter.
  const MlpSpec spec = tiny_spec(2);
  const auto p = random_network(spec, 17, 0.4);
  const Tensor x = random_input(4, 2, 18);
  const auto t = random_times(4, 500, 19);
  const InputGradLoss loss = [](Tape&, Var out, Var g) { return add(sum_all(mul(g, g)), scale(sum_all(out), 0.3)); };
  const auto grads = grad_params_through_input_grad(p, x, t, loss);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Matrix fd = fd_gradient(
        [&](const Matrix& m) {
          NetworkParams q = p;
          q.tensors[k].matrix() = m;
          return grad_input(q, x, t).matrix().squaredNorm() + 0.3 * forward(q, x, t).matrix().sum();
        },
        p.tensors[k].to_matrix());
    EXPECT_LT(max_rel_error(grads[k].to_matrix(), fd), 1e-5) << p.names[k];
  }
}

TEST(Mlp, SecondOrderOnZeroInitReadOut) {
  // Zero read-out: the loss is identically zero at the point, but its
  // gradient w.r.t. the read-out weight is not.
  const MlpSpec spec = tiny_spec(2, true);
  const auto p = build_network(spec, 20);
  const Tensor x = random_input(4, 2, 21);
  const auto t = random_times(4, 500, 22);
  const InputGradLoss loss = [](Tape&, Var, Var g) { return sum_all(g); };
  const auto grads = grad_params_through_input_grad(p, x, t, loss);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Matrix fd = fd_gradient(
        [&](const Matrix& m) {
          NetworkParams q = p;
          q.tensors[k].matrix() = m;
          return grad_input(q, x, t).matrix().sum();
        },
        p.tensors[k].to_matrix());
    const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((grads[k].to_matrix() - fd).cwiseAbs().maxCoeff() / scale, 1e-5) << p.names[k];
  }
  EXPECT_GT(grads[ParamLayout::out_weight(spec)].matrix().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, LossWithoutInputGradientEqualsFirstOrder) {
  const auto p = random_network(tiny_spec(2), 23, 0.4);
  const Tensor x = random_input(4, 2, 24);
  const auto t = random_times(4, 500, 25);
  const auto a = grad_params(p, x, t, [](Tape&, Var out) { return sum_all(mul(out, out)); });
  const auto b = grad_params_through_input_grad(p, x, t, [](Tape&, Var out, Var) { return sum_all(mul(out, out)); });
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_LT(max_rel_error(a[k].to_matrix(), b[k].to_matrix()), 1e-14);
}

TEST(Mlp, ReadOutScalingScalesInputGradient) {
  const MlpSpec spec = tiny_spec(2);
  const auto p = random_network(spec, 26, 0.4);
  NetworkParams q = p;
  q.tensors[ParamLayout::out_weight(spec)].matrix() *= 3.5;
  q.tensors[ParamLayout::out_bias(spec)].matrix().array() += 10.0;
  const Tensor x = random_input(5, 2, 27);
  const auto t = random_times(5, 500, 28);
  const Matrix g = grad_input(p, x, t).to_matrix();
  EXPECT_LT(max_rel_error(grad_input(q, x, t).to_matrix(), 3.5 * g), 1e-13);
}

TEST(Mlp, TimestepConditioningActiveAfterOneStep) {
  const MlpSpec spec = tiny_spec(1, true);
  NetworkParams p = build_network(spec, 29);
  const Tensor x({1, 1}, {0.7});
  EXPECT_EQ(forward(p, x, 1)[0], forward(p, x, 500)[0]);
  const Tensor batch({8, 1}, {-3, -1.5, 0, 1.5, 3, -3, 0, 3});
  const auto s = make_linear_schedule(500, 1e-4, 0.02);
  Tape tape;
  const auto v = bind_parameters(tape, p, true);
  RandomStream rng(1, "noise");
  Var loss = denoising_loss(
      tape, [&](Tape& tp, Var xt, std::span<const int> ts) { return forward_graph(spec, v, xt, modulation_graph(tp, spec, v, ts)); },
      batch, s, rng);
  std::vector<Tensor> g;
  for (const Var& gv : tape.gradients(loss, v)) g.push_back(Tensor::from_matrix(gv.value()));
  Adam adam(p, AdamConfig{});
  adam.step(p, g);
  EXPECT_NE(forward(p, x, 1)[0], forward(p, x, 500)[0]);
}

TEST(Mlp, BadInputsRejected) {
  const auto p = build_network(tiny_spec(2), 30);
  EXPECT_EQ(dguide::testing::error_kind_of([&] { forward(p, Tensor({3, 1}), 1); }), ErrorKind::Shape);
  const std::vector<int> two{1, 2};
  EXPECT_EQ(dguide::testing::error_kind_of([&] { forward(p, Tensor({3, 2}), two); }), ErrorKind::Shape);
  EXPECT_EQ(dguide::testing::error_kind_of([&] { forward(p, Tensor({3, 2}), 0); }), ErrorKind::Contract);
  const auto multi = build_network(MlpSpec{2, {4}, 2, 8}, 1);
  EXPECT_EQ(dguide::testing::error_kind_of([&] { grad_input(multi, Tensor({3, 2}), 1); }), ErrorKind::Contract);
}
