#include "cpnorm/tensor.hpp"

#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cpnorm {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor order must be >= 1");
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimension must be >= 1, got shape " +
                                            shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw std::out_of_range("index order mismatch");
  std::size_t off = 0;
  std::size_t k = 0;
  for (auto i : index) {
    if (i >= shape_[k]) throw std::out_of_range("index out of range");
    off = off * shape_[k] + i;
    ++k;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " +
                                shape_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

Eigen::Map<Matrix> Tensor::as_matrix(std::size_t rows) {
  return {data_.data(), static_cast<Eigen::Index>(rows),
          static_cast<Eigen::Index>(data_.size() / rows)};
}

Eigen::Map<const Matrix> Tensor::as_matrix(std::size_t rows) const {
  return {data_.data(), static_cast<Eigen::Index>(rows),
          static_cast<Eigen::Index>(data_.size() / rows)};
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) throw std::invalid_argument("shape mismatch in +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (other.shape_ != shape_) throw std::invalid_argument("shape mismatch in -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out -= b;
  return out;
}

Tensor outer_product(std::span<const Vector> vectors) {
  if (vectors.empty()) throw std::invalid_argument("outer_product needs at least one vector");
  Shape shape;
  for (const auto& v : vectors) {
    if (v.size() == 0) throw std::invalid_argument("outer_product: empty vector");
    shape.push_back(static_cast<std::size_t>(v.size()));
  }
  // Build up by repeated Kronecker products; row-major order makes the last
  // vector vary fastest.
  std::vector<double> acc(vectors[0].data(), vectors[0].data() + vectors[0].size());
  for (std::size_t k = 1; k < vectors.size(); ++k) {
    const auto& v = vectors[k];
    std::vector<double> next(acc.size() * static_cast<std::size_t>(v.size()));
    std::size_t o = 0;
    for (double a : acc) {
      for (Eigen::Index j = 0; j < v.size(); ++j) next[o++] = a * v[j];
    }
    acc = std::move(next);
  }
  return Tensor(std::move(shape), std::move(acc));
}

Tensor outer_product(std::initializer_list<Vector> vectors) {
  return outer_product(std::span<const Vector>(vectors.begin(), vectors.size()));
}

namespace {

// Column index of element `idx` in the mode-n unfolding (Kolda convention).
struct UnfoldIndexer {
  UnfoldIndexer(const Shape& shape, std::size_t mode) : strides(shape.size(), 0) {
    std::size_t stride = 1;
    for (std::size_t k = 0; k < shape.size(); ++k) {
      if (k == mode) continue;
      strides[k] = stride;
      stride *= shape[k];
    }
    cols = stride;
  }
  std::vector<std::size_t> strides;
  std::size_t cols = 1;
};

template <typename Fn>
void for_each_index(const Shape& shape, Fn&& fn) {
  const std::size_t n = shape.size();
  std::vector<std::size_t> idx(n, 0);
  const std::size_t total = shape_size(shape);
  for (std::size_t linear = 0; linear < total; ++linear) {
    fn(linear, idx);
    for (std::size_t k = n; k-- > 0;) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
}

}  // namespace

Matrix unfold(const Tensor& t, std::size_t mode) {
  if (mode >= t.order()) {
    throw std::out_of_range("unfold: mode " + std::to_string(mode) + " out of range for order " +
                            std::to_string(t.order()));
  }
  const Shape& shape = t.shape();
  UnfoldIndexer ix(shape, mode);
  Matrix m(static_cast<Eigen::Index>(shape[mode]), static_cast<Eigen::Index>(ix.cols));
  const double* src = t.ptr();
  for_each_index(shape, [&](std::size_t linear, const std::vector<std::size_t>& idx) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) col += idx[k] * ix.strides[k];
    m(static_cast<Eigen::Index>(idx[mode]), static_cast<Eigen::Index>(col)) = src[linear];
  });
  return m;
}

Tensor fold(const Matrix& m, std::size_t mode, const Shape& shape) {
  if (mode >= shape.size()) throw std::out_of_range("fold: mode out of range");
  UnfoldIndexer ix(shape, mode);
  if (static_cast<std::size_t>(m.rows()) != shape[mode] ||
      static_cast<std::size_t>(m.cols()) != ix.cols) {
    throw std::invalid_argument("fold: " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()) + " matrix is inconsistent with shape " +
                                shape_string(shape) + " at mode " + std::to_string(mode));
  }
  Tensor t(shape);
  double* dst = t.ptr();
  for_each_index(shape, [&](std::size_t linear, const std::vector<std::size_t>& idx) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) col += idx[k] * ix.strides[k];
    dst[linear] = m(static_cast<Eigen::Index>(idx[mode]), static_cast<Eigen::Index>(col));
  });
  return t;
}

Matrix khatri_rao(std::span<const Matrix> matrices) {
  if (matrices.empty()) throw std::invalid_argument("khatri_rao needs at least one matrix");
  const Eigen::Index r = matrices[0].cols();
  for (const auto& m : matrices) {
    if (m.cols() != r) {
      throw std::invalid_argument("khatri_rao: column counts differ (" + std::to_string(r) +
                                  " vs " + std::to_string(m.cols()) + ")");
    }
  }
  Matrix acc = matrices[0];
  for (std::size_t k = 1; k < matrices.size(); ++k) {
    const Matrix& b = matrices[k];
    Matrix next(acc.rows() * b.rows(), r);
    for (Eigen::Index i = 0; i < acc.rows(); ++i) {
      next.middleRows(i * b.rows(), b.rows()) = b.array().rowwise() * acc.row(i).array();
    }
    acc = std::move(next);
  }
  return acc;
}

Matrix khatri_rao(std::initializer_list<Matrix> matrices) {
  return khatri_rao(std::span<const Matrix>(matrices.begin(), matrices.size()));
}

double frobenius_norm(const Tensor& t) {
  return Eigen::Map<const Eigen::VectorXd>(t.ptr(), static_cast<Eigen::Index>(t.size())).norm();
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("dot: shape mismatch");
  const auto n = static_cast<Eigen::Index>(a.size());
  return Eigen::Map<const Eigen::VectorXd>(a.ptr(), n).dot(Eigen::Map<const Eigen::VectorXd>(b.ptr(), n));
}

}  // namespace cpnorm
