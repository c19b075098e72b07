#include "dguide/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace dguide {

void MlpSpec::validate() const {
  require(input_dim > 0 && output_dim > 0, ErrorKind::Config, "MLP input and output dims must be positive");
  require(!hidden_channels.empty(), ErrorKind::Config, "MLP needs at least one hidden layer");
  for (int c : hidden_channels) require(c > 0, ErrorKind::Config, "hidden channel sizes must be positive");
  require(timestep_embed_dim > 0 && timestep_embed_dim % 2 == 0, ErrorKind::Config,
          "timestep embedding dim must be positive and even");
}

std::int64_t NetworkParams::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

bool ParamLayout::is_time_path(const MlpSpec& s, std::size_t index) {
  if (index < kFirstLayer) return true;
  if (index >= out_weight(s)) return false;
  const std::size_t slot = (index - kFirstLayer) % kPerLayer;
  return slot == ModWeight || slot == ModBias;
}

namespace {

void add_param(NetworkParams& p, std::string name, std::int64_t rows, std::int64_t cols, double bound,
               RandomStream& rng) {
  Tensor t({rows, cols});
  if (bound > 0)
    for (double& v : t.data()) v = (2.0 * rng.uniform() - 1.0) * bound;
  p.names.push_back(std::move(name));
  p.tensors.push_back(std::move(t));
}

void add_constant(NetworkParams& p, std::string name, std::int64_t cols, double value) {
  p.names.push_back(std::move(name));
  p.tensors.emplace_back(std::vector<std::int64_t>{1, cols}, value);
}

double fan_in_bound(std::int64_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

std::vector<int> expand_timesteps(std::span<const int> timesteps, std::int64_t rows) {
  require(!timesteps.empty(), ErrorKind::Contract, "at least one timestep required");
  std::vector<int> out;
  if (timesteps.size() == 1) {
    out.assign(static_cast<std::size_t>(rows), timesteps[0]);
  } else {
    require(static_cast<std::int64_t>(timesteps.size()) == rows, ErrorKind::Shape,
            "one timestep per input row required");
    out.assign(timesteps.begin(), timesteps.end());
  }
  for (int t : out) require(t >= 1, ErrorKind::Contract, "timesteps are 1-based");
  return out;
}

void check_input(const NetworkParams& params, const Tensor& input) {
  require(input.rank() == 2 && input.cols() == params.spec.input_dim, ErrorKind::Shape,
          "network input must be [batch, " + std::to_string(params.spec.input_dim) + "]");
}

}  // namespace

NetworkParams build_network(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  NetworkParams p;
  p.spec = spec;
  RandomStream rng(seed, "init");

  const int emb = spec.timestep_embed_dim;
  const int th = spec.time_hidden_dim();
  add_param(p, "time.w1", emb, th, fan_in_bound(emb), rng);
  add_param(p, "time.b1", 1, th, fan_in_bound(emb), rng);
  add_param(p, "time.w2", th, th, fan_in_bound(th), rng);
  add_param(p, "time.b2", 1, th, fan_in_bound(th), rng);

  int in = spec.input_dim;
  for (std::size_t l = 0; l < spec.hidden_channels.size(); ++l) {
    const int c = spec.hidden_channels[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    add_param(p, pre + "weight", in, c, fan_in_bound(in), rng);
    add_param(p, pre + "bias", 1, c, fan_in_bound(in), rng);
    add_constant(p, pre + "norm.gain", c, 1.0);
    add_constant(p, pre + "norm.bias", c, 0.0);
    add_param(p, pre + "mod.weight", th, 2 * c, fan_in_bound(th), rng);
    add_param(p, pre + "mod.bias", 1, 2 * c, fan_in_bound(th), rng);
    in = c;
  }
  const double out_bound = spec.zero_init_output ? 0.0 : fan_in_bound(in);
  add_param(p, "out.weight", in, spec.output_dim, out_bound, rng);
  add_param(p, "out.bias", 1, spec.output_dim, out_bound, rng);
  return p;
}

Matrix timestep_embedding(std::span<const int> timesteps, int dim) {
  const int half = dim / 2;
  Matrix out(static_cast<Eigen::Index>(timesteps.size()), dim);
  for (std::size_t r = 0; r < timesteps.size(); ++r) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      const double arg = static_cast<double>(timesteps[r]) * freq;
      out(static_cast<Eigen::Index>(r), k) = std::cos(arg);
      out(static_cast<Eigen::Index>(r), half + k) = std::sin(arg);
    }
  }
  return out;
}

std::vector<Var> bind_parameters(Tape& tape, const NetworkParams& params, bool trainable, bool skip_time_path) {
  std::vector<Var> vars(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (skip_time_path && ParamLayout::is_time_path(params.spec, i)) continue;
    Matrix m = params.tensors[i].to_matrix();
    vars[i] = trainable ? tape.variable(std::move(m)) : tape.constant(std::move(m));
  }
  return vars;
}

namespace {

/// Shared-embedding projection for a set of distinct timesteps: U x time_hidden.
Var time_features(Tape& tape, const MlpSpec& spec, const std::vector<Var>& p, std::span<const int> distinct) {
  Var emb = tape.constant(timestep_embedding(distinct, spec.timestep_embed_dim));
  Var h = silu(add_row(matmul(emb, p[ParamLayout::kTimeW1]), p[ParamLayout::kTimeB1]));
  h = add_row(matmul(h, p[ParamLayout::kTimeW2]), p[ParamLayout::kTimeB2]);
  return silu(h);
}

}  // namespace

std::vector<Var> modulation_graph(Tape& tape, const MlpSpec& spec, const std::vector<Var>& p,
                                  std::span<const int> timesteps) {
  std::vector<int> distinct(timesteps.begin(), timesteps.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<int> index;
  index.reserve(timesteps.size());
  for (int t : timesteps)
    index.push_back(static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), t) - distinct.begin()));

  Var features = time_features(tape, spec, p, distinct);
  std::vector<Var> out;
  for (std::size_t l = 0; l < spec.hidden_channels.size(); ++l) {
    Var m = add_row(matmul(features, p[ParamLayout::layer(l, ParamLayout::ModWeight)]),
                    p[ParamLayout::layer(l, ParamLayout::ModBias)]);
    out.push_back(gather_rows(m, index));
  }
  return out;
}

ModulationTable build_modulation_table(const NetworkParams& params, int max_t) {
  require(max_t >= 1, ErrorKind::Config, "modulation table needs at least one timestep");
  Tape tape;
  auto p = bind_parameters(tape, params, false);
  std::vector<int> all(static_cast<std::size_t>(max_t));
  for (int t = 1; t <= max_t; ++t) all[static_cast<std::size_t>(t - 1)] = t;
  auto rows = modulation_graph(tape, params.spec, p, all);
  ModulationTable table;
  table.max_t = max_t;
  for (const Var& v : rows) table.per_layer.push_back(v.value());
  return table;
}

std::vector<Var> modulation_from_table(Tape& tape, const ModulationTable& table, std::span<const int> timesteps) {
  std::vector<Var> out;
  for (const Matrix& layer : table.per_layer) {
    Matrix m(static_cast<Eigen::Index>(timesteps.size()), layer.cols());
    for (std::size_t r = 0; r < timesteps.size(); ++r) {
      const int t = timesteps[r];
      require(t >= 1 && t <= table.max_t, ErrorKind::Contract, "timestep outside the modulation table");
      m.row(static_cast<Eigen::Index>(r)) = layer.row(t - 1);
    }
    out.push_back(tape.constant(std::move(m)));
  }
  return out;
}

Var forward_graph(const MlpSpec& spec, const std::vector<Var>& p, Var input, const std::vector<Var>& modulation) {
  require(modulation.size() == spec.hidden_channels.size(), ErrorKind::Contract, "one modulation per hidden layer");
  Var h = input;
  for (std::size_t l = 0; l < spec.hidden_channels.size(); ++l) {
    using L = ParamLayout;
    const Eigen::Index c = spec.hidden_channels[l];
    Var z = add_row(matmul(h, p[L::layer(l, L::Weight)]), p[L::layer(l, L::Bias)]);
    Var n = add_row(mul_row(layer_norm(z, kLayerNormEps), p[L::layer(l, L::NormGain)]), p[L::layer(l, L::NormBias)]);
    Var scale_rows = slice_cols(modulation[l], 0, c);
    Var shift_rows = slice_cols(modulation[l], c, 2 * c);
    h = silu(add(mul(n, add_scalar(scale_rows, 1.0)), shift_rows));
  }
  return add_row(matmul(h, p[ParamLayout::out_weight(spec)]), p[ParamLayout::out_bias(spec)]);
}

namespace {

using Array = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<Matrix> inference_modulation(const NetworkParams& params, const std::vector<int>& t,
                                         const ModulationTable* table) {
  std::vector<Matrix> out;
  const bool shared = std::all_of(t.begin(), t.end(), [&](int v) { return v == t.front(); });
  if (table) {
    for (const Matrix& layer : table->per_layer) {
      if (shared) {
        require(t.front() <= table->max_t, ErrorKind::Contract, "timestep outside the modulation table");
        out.push_back(layer.row(t.front() - 1));
        continue;
      }
      Matrix m(static_cast<Eigen::Index>(t.size()), layer.cols());
      for (std::size_t r = 0; r < t.size(); ++r) {
        require(t[r] <= table->max_t, ErrorKind::Contract, "timestep outside the modulation table");
        m.row(static_cast<Eigen::Index>(r)) = layer.row(t[r] - 1);
      }
      out.push_back(std::move(m));
    }
    return out;
  }
  Tape tape;
  auto p = bind_parameters(tape, params, false);
  const std::vector<int> one{t.front()};
  for (const Var& v : modulation_graph(tape, params.spec, p, shared ? std::span<const int>(one) : t))
    out.push_back(v.value());
  return out;
}

struct LayerCache {
  Matrix xhat;
  Eigen::VectorXd inv_std;
  Matrix pre_activation;
};

// Same arithmetic as forward_graph without a tape; caches what the input-gradient pass needs.
// A single-row modulation is shared by every input row.
Matrix fused_forward(const NetworkParams& params, const Matrix& input, const std::vector<Matrix>& mod,
                     std::vector<LayerCache>* cache) {
  using L = ParamLayout;
  const MlpSpec& spec = params.spec;
  Matrix h = input;
  for (std::size_t l = 0; l < spec.hidden_channels.size(); ++l) {
    const Eigen::Index c = spec.hidden_channels[l];
    Matrix z = h * params.tensors[L::layer(l, L::Weight)].matrix();
    z.rowwise() += params.tensors[L::layer(l, L::Bias)].matrix().row(0);
    const Eigen::VectorXd mean = z.rowwise().mean();
    z.colwise() -= mean;
    const Eigen::VectorXd var = z.array().square().rowwise().mean().matrix();
    const Eigen::VectorXd inv_std = (var.array() + kLayerNormEps).rsqrt().matrix();
    Matrix xhat = inv_std.asDiagonal() * z;
    Array a = (xhat.array().rowwise() * params.tensors[L::layer(l, L::NormGain)].matrix().row(0).array()).rowwise() +
              params.tensors[L::layer(l, L::NormBias)].matrix().row(0).array();
    if (mod[l].rows() == 1)
      a = (a.rowwise() * (mod[l].leftCols(c).array() + 1.0).row(0)).rowwise() + mod[l].rightCols(c).array().row(0);
    else
      a = a * (mod[l].leftCols(c).array() + 1.0) + mod[l].rightCols(c).array();
    const Array s = ((-a).exp() + 1.0).inverse();
    h = (a * s).matrix();
    if (cache) cache->push_back(LayerCache{std::move(xhat), inv_std, a.matrix()});
  }
  Matrix out = h * params.tensors[L::out_weight(spec)].matrix();
  out.rowwise() += params.tensors[L::out_bias(spec)].matrix().row(0);
  return out;
}

Matrix fused_input_gradient(const NetworkParams& params, const std::vector<Matrix>& mod,
                            const std::vector<LayerCache>& cache, Eigen::Index rows) {
  using L = ParamLayout;
  const MlpSpec& spec = params.spec;
  Matrix g = Matrix::Ones(rows, 1) * params.tensors[L::out_weight(spec)].matrix().transpose();
  for (std::size_t k = spec.hidden_channels.size(); k-- > 0;) {
    const Eigen::Index c = spec.hidden_channels[k];
    const LayerCache& lc = cache[k];
    const Array a = lc.pre_activation.array();
    const Array s = ((-a).exp() + 1.0).inverse();
    Array d = g.array() * (s * (1.0 + a * (1.0 - s)));
    if (mod[k].rows() == 1)
      d = d.rowwise() * (mod[k].leftCols(c).array() + 1.0).row(0);
    else
      d = d * (mod[k].leftCols(c).array() + 1.0);
    d = d.rowwise() * params.tensors[L::layer(k, L::NormGain)].matrix().row(0).array();
    const Eigen::VectorXd mean_d = d.rowwise().mean().matrix();
    const Eigen::VectorXd mean_dx = (d * lc.xhat.array()).rowwise().mean().matrix();
    Array dz = (d.colwise() - mean_d.array()) - lc.xhat.array().colwise() * mean_dx.array();
    dz = dz.colwise() * lc.inv_std.array();
    g = dz.matrix() * params.tensors[L::layer(k, L::Weight)].matrix().transpose();
  }
  return g;
}

}  // namespace

Tensor forward(const NetworkParams& params, const Tensor& input, std::span<const int> timesteps,
               const ModulationTable* table) {
  check_input(params, input);
  const auto t = expand_timesteps(timesteps, input.rows());
  const auto mod = inference_modulation(params, t, table);
  Matrix out = fused_forward(params, input.to_matrix(), mod, nullptr);
  require(all_finite(out), ErrorKind::Numeric, "network output is not finite");
  return Tensor::from_matrix(out);
}

Tensor forward(const NetworkParams& params, const Tensor& input, int t) {
  const int ts[1] = {t};
  return forward(params, input, ts);
}

Tensor grad_input(const NetworkParams& params, const Tensor& input, std::span<const int> timesteps,
                  const ModulationTable* table) {
  require(params.spec.output_dim == 1, ErrorKind::Contract, "input gradients need a scalar-output network");
  check_input(params, input);
  const auto t = expand_timesteps(timesteps, input.rows());
  const auto mod = inference_modulation(params, t, table);
  std::vector<LayerCache> cache;
  fused_forward(params, input.to_matrix(), mod, &cache);
  Matrix g = fused_input_gradient(params, mod, cache, input.rows());
  require(all_finite(g), ErrorKind::Numeric, "input gradient is not finite");
  return Tensor::from_matrix(g);
}

Tensor grad_input(const NetworkParams& params, const Tensor& input, int t) {
  const int ts[1] = {t};
  return grad_input(params, input, ts);
}

namespace {

std::vector<Tensor> collect(const std::vector<Var>& grads) {
  std::vector<Tensor> out;
  out.reserve(grads.size());
  for (const Var& g : grads) {
    require(all_finite(g.value()), ErrorKind::Numeric, "parameter gradient is not finite");
    out.push_back(Tensor::from_matrix(g.value()));
  }
  return out;
}

}  // namespace

std::vector<Tensor> grad_params(const NetworkParams& params, const Tensor& input, std::span<const int> timesteps,
                                const OutputLoss& loss) {
  check_input(params, input);
  const auto t = expand_timesteps(timesteps, input.rows());
  Tape tape;
  auto p = bind_parameters(tape, params, true);
  auto mod = modulation_graph(tape, params.spec, p, t);
  Var out = forward_graph(params.spec, p, tape.constant(input.to_matrix()), mod);
  Var l = loss(tape, out);
  return collect(tape.gradients(l, p));
}

std::vector<Tensor> grad_params_through_input_grad(const NetworkParams& params, const Tensor& input,
                                                   std::span<const int> timesteps, const InputGradLoss& loss) {
  require(params.spec.output_dim == 1, ErrorKind::Contract, "input gradients need a scalar-output network");
  check_input(params, input);
  const auto t = expand_timesteps(timesteps, input.rows());
  Tape tape;
  auto p = bind_parameters(tape, params, true);
  auto mod = modulation_graph(tape, params.spec, p, t);
  Var x = tape.variable(input.to_matrix());
  Var out = forward_graph(params.spec, p, x, mod);
  const Var wrt[1] = {x};
  Var g = tape.gradients(sum_all(out), wrt, /*create_graph=*/true)[0];
  Var l = loss(tape, out, g);
  return collect(tape.gradients(l, p));
}

}  // namespace dguide
