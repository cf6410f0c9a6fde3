#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cpnorm {

using Shape = std::vector<std::size_t>;

/// Row-major dense matrix. Factor matrices and unfoldings use this type.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// N-dimensional dense array stored contiguously in row-major order
/// (the last index varies fastest).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t order() const { return shape_.size(); }
  std::size_t dim(std::size_t mode) const { return shape_.at(mode); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  /// Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  /// View as rows = dim(0), cols = remaining elements.
  Eigen::Map<Matrix> as_matrix(std::size_t rows);
  Eigen::Map<const Matrix> as_matrix(std::size_t rows) const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  // 64-byte aligned so that vectorized reductions see the same alignment every run.
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

Tensor operator-(const Tensor& a, const Tensor& b);

/// x(1) ∘ x(2) ∘ ... ∘ x(n); element (i1..in) is the product of x(k)[ik].
Tensor outer_product(std::span<const Vector> vectors);
Tensor outer_product(std::initializer_list<Vector> vectors);

/// Mode-n matricization. Columns follow the Kolda convention: among the
/// non-mode indices, the lowest mode varies fastest.
Matrix unfold(const Tensor& t, std::size_t mode);

/// Inverse of unfold for the same mode and shape.
Tensor fold(const Matrix& m, std::size_t mode, const Shape& shape);

/// Column-wise Kronecker product. Column r of the result is
/// kron(M0[:, r], M1[:, r], ...), the first input varying slowest.
Matrix khatri_rao(std::span<const Matrix> matrices);
Matrix khatri_rao(std::initializer_list<Matrix> matrices);

double frobenius_norm(const Tensor& t);
double dot(const Tensor& a, const Tensor& b);

}  // namespace cpnorm
