#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dguide/common.hpp"

namespace dguide {

/// Dense row-major array of doubles with shape metadata.
///
/// Samples are [n, d]; parameters are [rows, cols] (biases are [1, cols]).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape, double fill = 0.0);
  Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

  static Tensor from_matrix(const Matrix& m);

  const std::vector<std::int64_t>& shape() const noexcept { return shape_; }
  std::int64_t rank() const noexcept { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Element (row, col) of a rank-2 tensor.
  double& at(std::int64_t row, std::int64_t col);
  double at(std::int64_t row, std::int64_t col) const;

  /// Rank-2 view (a rank-1 tensor is viewed as a single row).
  Eigen::Map<const Matrix> matrix() const;
  Eigen::Map<Matrix> matrix();
  Matrix to_matrix() const { return Matrix(matrix()); }

  std::int64_t rows() const;
  std::int64_t cols() const;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

}  // namespace dguide
