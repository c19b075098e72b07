#include "dguide/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace dguide {

namespace {

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  for (auto d : shape) require(d > 0, ErrorKind::Shape, "tensor dimensions must be positive");
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(element_count(shape_)), fill) {}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(element_count(shape_) == static_cast<std::int64_t>(data_.size()), ErrorKind::Shape,
          "tensor data length does not match shape");
}

Tensor Tensor::from_matrix(const Matrix& m) {
  return Tensor({m.rows(), m.cols()}, std::vector<double>(m.data(), m.data() + m.size()));
}

std::int64_t Tensor::dim(std::int64_t axis) const {
  require(axis >= 0 && axis < rank(), ErrorKind::Shape, "axis out of range");
  return shape_[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::rows() const {
  require(rank() == 1 || rank() == 2, ErrorKind::Shape, "matrix view needs rank 1 or 2");
  return rank() == 1 ? 1 : shape_[0];
}

std::int64_t Tensor::cols() const {
  require(rank() == 1 || rank() == 2, ErrorKind::Shape, "matrix view needs rank 1 or 2");
  return shape_.back();
}

double& Tensor::at(std::int64_t row, std::int64_t col) { return data_[static_cast<std::size_t>(row * cols() + col)]; }

double Tensor::at(std::int64_t row, std::int64_t col) const {
  return data_[static_cast<std::size_t>(row * cols() + col)];
}

Eigen::Map<const Matrix> Tensor::matrix() const { return {data_.data(), rows(), cols()}; }

Eigen::Map<Matrix> Tensor::matrix() { return {data_.data(), rows(), cols()}; }

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace dguide
