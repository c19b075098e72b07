#include "dguide/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace dguide {

const Matrix& Var::value() const { return tape_->value(*this); }

bool Var::requires_grad() const { return tape_->requires_grad(*this); }

void Tape::check_owned(Var v) const {
  require(v.valid() && v.tape_ == this && v.id_ >= 0 && static_cast<std::size_t>(v.id_) < nodes_.size(),
          ErrorKind::Contract, "variable does not belong to this tape");
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(std::vector<Var> inputs, Compute compute, Vjp vjp) {
  std::vector<const Matrix*> args;
  std::vector<int> ids;
  bool needs_grad = false;
  args.reserve(inputs.size());
  ids.reserve(inputs.size());
  for (const Var& v : inputs) {
    check_owned(v);
    const Node& n = nodes_[static_cast<std::size_t>(v.id())];
    args.push_back(&n.value);
    ids.push_back(v.id());
    needs_grad = needs_grad || n.requires_grad;
  }
  Matrix out = compute(args);
  needs_grad = needs_grad && recording_;
  nodes_.push_back(Node{std::move(out), std::move(ids), std::move(compute), needs_grad ? std::move(vjp) : Vjp{},
                        needs_grad});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Matrix& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[static_cast<std::size_t>(v.id())].value;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[static_cast<std::size_t>(v.id())].requires_grad;
}

std::vector<Var> Tape::gradients(Var output, std::span<const Var> wrt, bool create_graph) {
  check_owned(output);
  const Matrix& out = value(output);
  require(out.rows() == 1 && out.cols() == 1, ErrorKind::Contract,
          "gradient of a non-scalar output needs an explicit seed");
  Var seed = constant(Matrix::Ones(1, 1));
  return gradients(output, seed, wrt, create_graph);
}

std::vector<Var> Tape::gradients(Var output, Var seed, std::span<const Var> wrt, bool create_graph) {
  check_owned(output);
  check_owned(seed);
  require(value(seed).rows() == value(output).rows() && value(seed).cols() == value(output).cols(),
          ErrorKind::Shape, "gradient seed must match the output shape");

  const std::size_t end = static_cast<std::size_t>(output.id()) + 1;
  // needed[i]: some requested variable is reachable from node i through its inputs.
  std::vector<char> needed(end, 0);
  for (const Var& w : wrt) {
    check_owned(w);
    if (static_cast<std::size_t>(w.id()) < end) needed[static_cast<std::size_t>(w.id())] = 1;
  }
  for (std::size_t i = 0; i < end; ++i) {
    if (needed[i] || !nodes_[i].requires_grad) continue;
    for (int in : nodes_[i].inputs)
      if (needed[static_cast<std::size_t>(in)]) {
        needed[i] = 1;
        break;
      }
  }

  std::vector<Var> grads(end);
  grads[end - 1] = seed;
  const bool saved = recording_;
  recording_ = create_graph;
  last_sweep_.clear();
  try {
    for (std::size_t i = end; i-- > 0;) {
      if (!grads[i].valid() || !needed[i]) continue;
      // VJPs append nodes; deque references stay valid across push_back.
      const Node& node = nodes_[i];
      if (!node.vjp) continue;
      std::vector<char> need(node.inputs.size(), 0);
      bool any = false;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        need[k] = needed[static_cast<std::size_t>(node.inputs[k])];
        any = any || need[k];
      }
      if (!any) continue;
      last_sweep_.push_back(static_cast<int>(i));
      std::vector<Var> local = node.vjp(Var(this, static_cast<int>(i)), grads[i], need);
      const std::vector<int>& inputs = nodes_[i].inputs;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!need[k] || k >= local.size() || !local[k].valid()) continue;
        Var& slot = grads[static_cast<std::size_t>(inputs[k])];
        slot = slot.valid() ? add(slot, local[k]) : local[k];
      }
    }
  } catch (...) {
    recording_ = saved;
    throw;
  }
  recording_ = saved;

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    const auto id = static_cast<std::size_t>(w.id());
    if (id < end && grads[id].valid()) {
      result.push_back(grads[id]);
    } else {
      const Matrix& v = value(w);
      result.push_back(constant(Matrix::Zero(v.rows(), v.cols())));
    }
  }
  return result;
}

bool Tape::replay_matches() const {
  for (const Node& node : nodes_) {
    if (!node.compute) continue;
    std::vector<const Matrix*> args;
    for (int in : node.inputs) args.push_back(&nodes_[static_cast<std::size_t>(in)].value);
    const Matrix again = node.compute(args);
    if (again.rows() != node.value.rows() || again.cols() != node.value.cols()) return false;
    for (Eigen::Index k = 0; k < again.size(); ++k) {
      const double x = again.data()[k];
      const double y = node.value.data()[k];
      if (std::memcmp(&x, &y, sizeof(double)) != 0) return false;
    }
  }
  return true;
}

// Primitives ------------------------------------------------------------------

namespace {

using Args = std::vector<const Matrix*>;
using Need = std::vector<char>;

Tape& tape_of(Var a, Var b) {
  require(a.valid() && b.valid() && &a.tape() == &b.tape(), ErrorKind::Contract,
          "operands live on different tapes");
  return a.tape();
}

void expect_same_shape(Var a, Var b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::Shape,
          std::string(op) + ": operand shapes differ");
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.cols() == b.rows(), ErrorKind::Shape, "matmul: inner dimensions differ");
  return t.record(
      {a, b}, [](const Args& x) -> Matrix { return (*x[0]) * (*x[1]); },
      [a, b](Var, Var g, const Need& need) {
        return std::vector<Var>{need[0] ? matmul_nt(g, b) : Var{}, need[1] ? matmul_tn(a, g) : Var{}};
      });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.cols() == b.cols(), ErrorKind::Shape, "matmul_nt: inner dimensions differ");
  return t.record(
      {a, b}, [](const Args& x) -> Matrix { return (*x[0]) * x[1]->transpose(); },
      [a, b](Var, Var g, const Need& need) {
        return std::vector<Var>{need[0] ? matmul(g, b) : Var{}, need[1] ? matmul_tn(g, a) : Var{}};
      });
}

Var matmul_tn(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.rows() == b.rows(), ErrorKind::Shape, "matmul_tn: inner dimensions differ");
  return t.record(
      {a, b}, [](const Args& x) -> Matrix { return x[0]->transpose() * (*x[1]); },
      [a, b](Var, Var g, const Need& need) {
        return std::vector<Var>{need[0] ? matmul_nt(b, g) : Var{}, need[1] ? matmul(a, g) : Var{}};
      });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  expect_same_shape(a, b, "add");
  return t.record(
      {a, b}, [](const Args& x) -> Matrix { return *x[0] + *x[1]; },
      [](Var, Var g, const Need& need) {
        return std::vector<Var>{need[0] ? g : Var{}, need[1] ? g : Var{}};
      });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  expect_same_shape(a, b, "sub");
  return t.record(
      {a, b}, [](const Args& x) -> Matrix { return *x[0] - *x[1]; },
      [](Var, Var g, const Need& need) {
        return std::vector<Var>{need[0] ? g : Var{}, need[1] ? scale(g, -1.0) : Var{}};
      });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  expect_same_shape(a, b, "mul");
  return t.record(
      {a, b}, [](const Args& x) -> Matrix { return x[0]->cwiseProduct(*x[1]); },
      [a, b](Var, Var g, const Need& need) {
        return std::vector<Var>{need[0] ? mul(g, b) : Var{}, need[1] ? mul(g, a) : Var{}};
      });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorKind::Shape, "add_row: row shape mismatch");
  return t.record(
      {a, row},
      [](const Args& x) -> Matrix { return x[0]->rowwise() + x[1]->row(0); },
      [](Var, Var g, const Need& need) {
        return std::vector<Var>{need[0] ? g : Var{}, need[1] ? sum_rows(g) : Var{}};
      });
}

Var mul_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorKind::Shape, "mul_row: row shape mismatch");
  return t.record(
      {a, row},
      [](const Args& x) -> Matrix { return (x[0]->array().rowwise() * x[1]->row(0).array()).matrix(); },
      [a, row](Var, Var g, const Need& need) {
        return std::vector<Var>{need[0] ? mul_row(g, row) : Var{}, need[1] ? sum_rows(mul(g, a)) : Var{}};
      });
}

Var add_col(Var a, Var col) {
  Tape& t = tape_of(a, col);
  require(col.cols() == 1 && col.rows() == a.rows(), ErrorKind::Shape, "add_col: column shape mismatch");
  return t.record(
      {a, col},
      [](const Args& x) -> Matrix { return x[0]->colwise() + x[1]->col(0); },
      [](Var, Var g, const Need& need) {
        return std::vector<Var>{need[0] ? g : Var{}, need[1] ? sum_cols(g) : Var{}};
      });
}

Var mul_col(Var a, Var col) {
  Tape& t = tape_of(a, col);
  require(col.cols() == 1 && col.rows() == a.rows(), ErrorKind::Shape, "mul_col: column shape mismatch");
  return t.record(
      {a, col},
      [](const Args& x) -> Matrix { return (x[0]->array().colwise() * x[1]->col(0).array()).matrix(); },
      [a, col](Var, Var g, const Need& need) {
        return std::vector<Var>{need[0] ? mul_col(g, col) : Var{}, need[1] ? sum_cols(mul(g, a)) : Var{}};
      });
}

Var sum_rows(Var a) {
  const Eigen::Index rows = a.rows();
  return a.tape().record(
      {a}, [](const Args& x) -> Matrix { return x[0]->colwise().sum(); },
      [rows](Var, Var g, const Need&) { return std::vector<Var>{repeat_rows(g, rows)}; });
}

Var sum_cols(Var a) {
  const Eigen::Index cols = a.cols();
  return a.tape().record(
      {a}, [](const Args& x) -> Matrix { return x[0]->rowwise().sum(); },
      [cols](Var, Var g, const Need&) { return std::vector<Var>{repeat_cols(g, cols)}; });
}

Var sum_all(Var a) {
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape().record(
      {a}, [](const Args& x) -> Matrix { return Matrix::Constant(1, 1, x[0]->sum()); },
      [rows, cols](Var, Var g, const Need&) { return std::vector<Var>{broadcast(g, rows, cols)}; });
}

Var repeat_rows(Var row, Eigen::Index rows) {
  require(row.rows() == 1, ErrorKind::Shape, "repeat_rows expects a single row");
  return row.tape().record(
      {row}, [rows](const Args& x) -> Matrix { return x[0]->replicate(rows, 1); },
      [](Var, Var g, const Need&) { return std::vector<Var>{sum_rows(g)}; });
}

Var repeat_cols(Var col, Eigen::Index cols) {
  require(col.cols() == 1, ErrorKind::Shape, "repeat_cols expects a single column");
  return col.tape().record(
      {col}, [cols](const Args& x) -> Matrix { return x[0]->replicate(1, cols); },
      [](Var, Var g, const Need&) { return std::vector<Var>{sum_cols(g)}; });
}

Var broadcast(Var scalar, Eigen::Index rows, Eigen::Index cols) {
  require(scalar.rows() == 1 && scalar.cols() == 1, ErrorKind::Shape, "broadcast expects a 1x1 value");
  return scalar.tape().record(
      {scalar}, [rows, cols](const Args& x) -> Matrix { return Matrix::Constant(rows, cols, (*x[0])(0, 0)); },
      [](Var, Var g, const Need&) { return std::vector<Var>{sum_all(g)}; });
}

Var scale(Var a, double c) {
  return a.tape().record(
      {a}, [c](const Args& x) -> Matrix { return (*x[0]) * c; },
      [c](Var, Var g, const Need&) { return std::vector<Var>{scale(g, c)}; });
}

Var add_scalar(Var a, double c) {
  return a.tape().record(
      {a}, [c](const Args& x) -> Matrix { return (x[0]->array() + c).matrix(); },
      [](Var, Var g, const Need&) { return std::vector<Var>{g}; });
}

Var pow_scalar(Var a, double exponent) {
  return a.tape().record(
      {a}, [exponent](const Args& x) -> Matrix { return x[0]->array().pow(exponent).matrix(); },
      [a, exponent](Var, Var g, const Need&) {
        return std::vector<Var>{mul(g, scale(pow_scalar(a, exponent - 1.0), exponent))};
      });
}

namespace {

using Array = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Array logistic(const Matrix& x) { return ((-x.array()).exp() + 1.0).inverse(); }

Matrix silu_kth(const Matrix& m, int order) {
  const auto x = m.array();
  const Array s = logistic(m);
  const Array q = 1.0 - s;
  switch (order) {
    case 0: return (x * s).matrix();
    case 1: return (s * (1.0 + x * q)).matrix();
    case 2: return (s * q * (2.0 + x * (1.0 - 2.0 * s))).matrix();
    default: {
      const Array d = 1.0 - 2.0 * s;
      return (s * q * (d * (3.0 + x * d) - 2.0 * x * s * q)).matrix();
    }
  }
}

}  // namespace

Var silu_derivative(Var a, int order) {
  require(order >= 0 && order <= 3, ErrorKind::Contract, "SiLU derivatives are available up to third order");
  return a.tape().record(
      {a}, [order](const Args& x) -> Matrix { return silu_kth(*x[0], order); },
      [a, order](Var, Var g, const Need&) {
        require(order < 3, ErrorKind::Contract, "differentiating SiLU beyond third order");
        return std::vector<Var>{mul(g, silu_derivative(a, order + 1))};
      });
}

Var sigmoid(Var a) {
  return a.tape().record(
      {a}, [](const Args& x) -> Matrix { return logistic(*x[0]).matrix(); },
      [](Var self, Var g, const Need&) {
        return std::vector<Var>{mul(g, mul(self, add_scalar(scale(self, -1.0), 1.0)))};
      });
}

Var softplus(Var a) {
  return a.tape().record(
      {a},
      [](const Args& x) -> Matrix {
        const auto v = x[0]->array();
        return (v.max(0.0) + (-v.abs()).exp().log1p()).matrix();
      },
      [a](Var, Var g, const Need&) { return std::vector<Var>{mul(g, sigmoid(a))}; });
}

Var gather_rows(Var a, std::vector<int> index) {
  const Eigen::Index rows = a.rows();
  for (int i : index) require(i >= 0 && i < rows, ErrorKind::Shape, "gather_rows: index out of range");
  return a.tape().record(
      {a},
      [index](const Args& x) -> Matrix {
        Matrix out(static_cast<Eigen::Index>(index.size()), x[0]->cols());
        for (std::size_t r = 0; r < index.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x[0]->row(index[r]);
        return out;
      },
      [index, rows](Var, Var g, const Need&) { return std::vector<Var>{scatter_rows(g, index, rows)}; });
}

Var scatter_rows(Var a, std::vector<int> index, Eigen::Index rows) {
  require(static_cast<Eigen::Index>(index.size()) == a.rows(), ErrorKind::Shape,
          "scatter_rows: one index per row required");
  for (int i : index) require(i >= 0 && i < rows, ErrorKind::Shape, "scatter_rows: index out of range");
  return a.tape().record(
      {a},
      [index, rows](const Args& x) -> Matrix {
        Matrix out = Matrix::Zero(rows, x[0]->cols());
        for (std::size_t r = 0; r < index.size(); ++r) out.row(index[r]) += x[0]->row(static_cast<Eigen::Index>(r));
        return out;
      },
      [index](Var, Var g, const Need&) { return std::vector<Var>{gather_rows(g, index)}; });
}

Var slice_cols(Var a, Eigen::Index begin, Eigen::Index end) {
  const Eigen::Index total = a.cols();
  require(begin >= 0 && begin < end && end <= total, ErrorKind::Shape, "slice_cols: bad column range");
  return a.tape().record(
      {a}, [begin, end](const Args& x) -> Matrix { return x[0]->middleCols(begin, end - begin); },
      [begin, total](Var, Var g, const Need&) { return std::vector<Var>{pad_cols(g, begin, total)}; });
}

Var pad_cols(Var a, Eigen::Index begin, Eigen::Index total) {
  const Eigen::Index width = a.cols();
  require(begin >= 0 && begin + width <= total, ErrorKind::Shape, "pad_cols: bad column range");
  return a.tape().record(
      {a},
      [begin, total, width](const Args& x) -> Matrix {
        Matrix out = Matrix::Zero(x[0]->rows(), total);
        out.middleCols(begin, width) = *x[0];
        return out;
      },
      [begin, width](Var, Var g, const Need&) { return std::vector<Var>{slice_cols(g, begin, begin + width)}; });
}

Var layer_norm(Var a, double eps) {
  const double inv_n = 1.0 / static_cast<double>(a.cols());
  Var mean = scale(sum_cols(a), inv_n);
  Var centered = add_col(a, scale(mean, -1.0));
  Var variance = scale(sum_cols(mul(centered, centered)), inv_n);
  Var inv_std = pow_scalar(add_scalar(variance, eps), -0.5);
  return mul_col(centered, inv_std);
}

}  // namespace dguide
