#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dguide/tape.hpp"
#include "dguide/tensor.hpp"

namespace dguide {

/// Timestep-conditioned MLP: Linear -> LayerNorm -> adaptive scale/shift -> SiLU
/// per hidden layer, followed by a linear read-out.
///
/// The timestep goes through a sinusoidal embedding of width
/// `timestep_embed_dim`, a two-layer SiLU projection of width
/// 4 * timestep_embed_dim, and a per-layer linear map to (scale, shift).
struct MlpSpec {
  int input_dim = 1;
  std::vector<int> hidden_channels;
  int output_dim = 1;
  int timestep_embed_dim = 0;
  /// Zero the read-out layer at construction (discriminator); otherwise fan-in init.
  bool zero_init_output = false;

  void validate() const;
  int time_hidden_dim() const { return 4 * timestep_embed_dim; }
  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

inline constexpr double kLayerNormEps = 1e-12;

struct NetworkParams {
  MlpSpec spec;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::int64_t scalar_count() const;
  std::size_t size() const { return tensors.size(); }
};

/// Index arithmetic over the flat parameter list.
struct ParamLayout {
  static constexpr std::size_t kTimeW1 = 0, kTimeB1 = 1, kTimeW2 = 2, kTimeB2 = 3, kFirstLayer = 4;
  static constexpr std::size_t kPerLayer = 6;
  enum LayerSlot : std::size_t { Weight = 0, Bias, NormGain, NormBias, ModWeight, ModBias };

  static std::size_t layer(std::size_t l, LayerSlot slot) { return kFirstLayer + kPerLayer * l + slot; }
  static std::size_t out_weight(const MlpSpec& s) { return kFirstLayer + kPerLayer * s.hidden_channels.size(); }
  static std::size_t out_bias(const MlpSpec& s) { return out_weight(s) + 1; }
  static std::size_t count(const MlpSpec& s) { return out_bias(s) + 1; }
  static bool is_time_path(const MlpSpec& s, std::size_t index);
};

NetworkParams build_network(const MlpSpec& spec, std::uint64_t seed);

/// Sinusoidal features of each timestep: [cos(t f_k), sin(t f_k)], f_k = 10000^(-k/half).
Matrix timestep_embedding(std::span<const int> timesteps, int dim);

/// Per-layer (scale, shift) rows for t = 1..max_t, precomputed for frozen networks.
struct ModulationTable {
  int max_t = 0;
  std::vector<Matrix> per_layer;  // each max_t x (2 * channels), row t-1
};

ModulationTable build_modulation_table(const NetworkParams& params, int max_t);

// Graph-level API ---------------------------------------------------------------

/// Places parameters on the tape. With `trainable` they become variables;
/// otherwise constants. `skip_time_path` leaves the timestep projections unbound
/// (use with a ModulationTable).
std::vector<Var> bind_parameters(Tape& tape, const NetworkParams& params, bool trainable, bool skip_time_path = false);

/// Modulation rows (batch x 2C per layer) computed on the tape from the
/// timestep projection parameters.
std::vector<Var> modulation_graph(Tape& tape, const MlpSpec& spec, const std::vector<Var>& p,
                                  std::span<const int> timesteps);

/// Modulation rows looked up from a precomputed table (constants).
std::vector<Var> modulation_from_table(Tape& tape, const ModulationTable& table, std::span<const int> timesteps);

Var forward_graph(const MlpSpec& spec, const std::vector<Var>& p, Var input, const std::vector<Var>& modulation);

// Tensor-level API --------------------------------------------------------------
// forward and grad_input evaluate without a tape (frozen inference); they agree
// with forward_graph and its tape gradient to rounding.

/// One timestep per input row (or a single entry broadcast to all rows).
Tensor forward(const NetworkParams& params, const Tensor& input, std::span<const int> timesteps,
               const ModulationTable* table = nullptr);
Tensor forward(const NetworkParams& params, const Tensor& input, int t);

/// d(output)/d(input) for a scalar-output network, row by row.
Tensor grad_input(const NetworkParams& params, const Tensor& input, std::span<const int> timesteps,
                  const ModulationTable* table = nullptr);
Tensor grad_input(const NetworkParams& params, const Tensor& input, int t);

/// Scalar loss built from the network output (batch x output_dim).
using OutputLoss = std::function<Var(Tape&, Var output)>;
/// Scalar loss built from the output and its input gradient (batch x input_dim).
using InputGradLoss = std::function<Var(Tape&, Var output, Var input_gradient)>;

std::vector<Tensor> grad_params(const NetworkParams& params, const Tensor& input, std::span<const int> timesteps,
                                const OutputLoss& loss);

/// d(loss)/d(params) where the loss depends on d(output)/d(input); the input
/// gradient is recorded on the tape and differentiated a second time.
std::vector<Tensor> grad_params_through_input_grad(const NetworkParams& params, const Tensor& input,
                                                   std::span<const int> timesteps, const InputGradLoss& loss);

}  // namespace dguide
