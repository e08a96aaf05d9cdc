// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_NUMERICS_TENSOR_HPP_
#define DEPTHRNN_NUMERICS_TENSOR_HPP_

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace depthrnn {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major float64 array of rank 0..3. Rank 0 is a scalar.
class Tensor {
 public:
  static constexpr std::size_t kMaxRank = 3;

  Tensor() : Tensor(Shape{0}) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const { return data_.empty(); }

  // Matrix view: rank 2 is itself, rank 1 is a single row, rank 0 is 1x1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  // Scalar read for rank-0 or single-element tensors.
  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double value);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

// A trainable leaf: value plus its gradient buffer. The gradient buffer is
// empty until the first backward pass that reaches it.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool requires_grad = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool trainable = true)
      : name(std::move(n)), value(std::move(v)), requires_grad(trainable) {}

  void zero_grad();
};

}  // namespace depthrnn

#endif  // DEPTHRNN_NUMERICS_TENSOR_HPP_
