#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "dguide/common.hpp"

namespace dguide {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid only while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const noexcept { return id_; }

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape over dense matrices.
///
/// Every primitive records its forward rule and a vector-Jacobian product
/// written in terms of other tape primitives. A reverse sweep with
/// create_graph=true therefore records the backward computation itself, and
/// the resulting gradient nodes can be differentiated again.
class Tape {
 public:
  using Compute = std::function<Matrix(const std::vector<const Matrix*>&)>;
  /// Receives the node itself, the incoming gradient, and a mask of which
  /// inputs need a gradient. Returns one entry per input (invalid = none).
  using Vjp = std::function<std::vector<Var>(Var self, Var grad, const std::vector<char>& need)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  /// Evaluates `compute` on the inputs and appends the node.
  Var record(std::vector<Var> inputs, Compute compute, Vjp vjp);

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// d(output)/d(wrt). `output` must be 1x1 unless a seed is supplied.
  std::vector<Var> gradients(Var output, std::span<const Var> wrt, bool create_graph = false);
  std::vector<Var> gradients(Var output, Var seed, std::span<const Var> wrt, bool create_graph);

  /// Re-evaluates every recorded node from its inputs and reports whether all
  /// values reproduce bit-for-bit.
  bool replay_matches() const;

  /// Node ids in the order the most recent reverse sweep applied their VJPs.
  const std::vector<int>& last_sweep() const noexcept { return last_sweep_; }
  const std::vector<int>& inputs_of(int id) const { return nodes_.at(static_cast<std::size_t>(id)).inputs; }

 private:
  struct Node {
    Matrix value;
    std::vector<int> inputs;
    Compute compute;
    Vjp vjp;
    bool requires_grad = false;
  };

  void check_owned(Var v) const;

  std::deque<Node> nodes_;
  bool recording_ = true;
  std::vector<int> last_sweep_;
};

// Primitives ------------------------------------------------------------------

Var matmul(Var a, Var b);     // a * b
Var matmul_nt(Var a, Var b);  // a * b^T
Var matmul_tn(Var a, Var b);  // a^T * b

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise

Var add_row(Var a, Var row);  // row is 1 x n, broadcast over rows of a
Var mul_row(Var a, Var row);
Var add_col(Var a, Var col);  // col is m x 1, broadcast over columns of a
Var mul_col(Var a, Var col);

Var sum_rows(Var a);  // m x n -> 1 x n
Var sum_cols(Var a);  // m x n -> m x 1
Var sum_all(Var a);   // -> 1 x 1
Var repeat_rows(Var row, Eigen::Index rows);
Var repeat_cols(Var col, Eigen::Index cols);
Var broadcast(Var scalar, Eigen::Index rows, Eigen::Index cols);

Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var pow_scalar(Var a, double exponent);

/// k-th derivative of SiLU(x) = x * sigmoid(x), k in [0, 3].
Var silu_derivative(Var a, int order);
inline Var silu(Var a) { return silu_derivative(a, 0); }
Var sigmoid(Var a);
Var softplus(Var a);

Var gather_rows(Var a, std::vector<int> index);
Var scatter_rows(Var a, std::vector<int> index, Eigen::Index rows);
Var slice_cols(Var a, Eigen::Index begin, Eigen::Index end);
Var pad_cols(Var a, Eigen::Index begin, Eigen::Index total);

/// Per-row normalization to zero mean and unit variance.
Var layer_norm(Var a, double eps);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace dguide
