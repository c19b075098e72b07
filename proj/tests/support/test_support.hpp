#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include <gtest/gtest.h>
#include <unistd.h>

#include "dguide/common.hpp"
#include "dguide/mlp.hpp"

namespace dguide::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  RandomStream rng(seed, "test/matrix");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// max |a - b| / max(|a|, |b|) over all entries, norm-wise.
inline double max_rel_error(const Matrix& a, const Matrix& b) {
  EXPECT_EQ(a.rows(), b.rows());
  EXPECT_EQ(a.cols(), b.cols());
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-300});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

// Central differences, step h.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Small network with every parameter randomized (the read-out too).
inline NetworkParams random_network(const MlpSpec& spec, std::uint64_t seed, double scale = 0.5) {
  NetworkParams p = build_network(spec, seed);
  RandomStream rng(seed, "test/params");
  for (auto& t : p.tensors)
    for (auto& v : t.data()) v = scale * rng.normal();
  return p;
}

inline MlpSpec tiny_spec(int input_dim, bool zero_init = false) {
  return MlpSpec{input_dim, {6, 5}, 1, 8, zero_init};
}

template <typename F>
ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected dguide::Error";
  return ErrorKind::Contract;
}

inline std::string temp_path(const std::string& name) {
  return ::testing::TempDir() + "dguide_" + std::to_string(::getpid()) + "_" + name;
}

}  // namespace dguide::testing
