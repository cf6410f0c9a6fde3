#include "cpnorm/param.hpp"

#include <cmath>
#include <stdexcept>

namespace cpnorm {

namespace {

using ConstMatMap = Eigen::Map<const Matrix>;
using ConstVecMap = Eigen::Map<const Vector>;

// Contracts a row-major tensor x of shape `dims` with vecs[j] along every mode
// j except `keep`; returns a vector of length dims[keep].
Vector contract_all_but(const double* x, const Shape& dims, const std::vector<const double*>& vecs,
                        std::size_t keep, Vector& scratch) {
  std::size_t size = shape_size(dims);
  Vector cur = ConstVecMap(x, static_cast<Eigen::Index>(size));
  for (std::size_t j = dims.size(); j-- > keep + 1;) {
    const auto e = static_cast<Eigen::Index>(dims[j]);
    scratch.noalias() = ConstMatMap(cur.data(), static_cast<Eigen::Index>(size) / e, e) *
                        ConstVecMap(vecs[j], e);
    cur.swap(scratch);
    size /= dims[j];
  }
  for (std::size_t j = 0; j < keep; ++j) {
    const auto e = static_cast<Eigen::Index>(dims[j]);
    scratch.noalias() = ConstMatMap(cur.data(), e, static_cast<Eigen::Index>(size) / e).transpose() *
                        ConstVecMap(vecs[j], e);
    cur.swap(scratch);
    size /= dims[j];
  }
  return cur;
}

}  // namespace

Tensor cpnorm_weight(const CpNormParam& p, const std::string& context) {
  if (!std::isfinite(p.sigma)) throw std::domain_error(context + (context.empty() ? "" : ": ") + "sigma is not finite");
  CpForm unit = renormalize(p.cp, false, context);
  unit.lambdas *= p.sigma;
  return cp_reconstruct(unit);
}

CpNormGrads cpnorm_backward(const CpNormParam& p, const Tensor& grad_weight,
                            const std::string& context) {
  const CpForm& cp = p.cp;
  if (grad_weight.shape() != cp.shape) {
    throw std::invalid_argument("cpnorm_backward: gradient shape " +
                                shape_string(grad_weight.shape()) + " differs from weight shape " +
                                shape_string(cp.shape));
  }
  if (cp.order() < 2) throw std::invalid_argument("cpnorm_backward: order must be >= 2");
  const CpForm unit = renormalize(cp, false, context);
  const std::size_t n = cp.order();
  const auto rank = static_cast<Eigen::Index>(cp.rank());
  const std::size_t d0 = cp.shape[0];
  const auto g_mat = grad_weight.as_matrix(d0);

  // C[k] (d_k × R): contraction of G with the unit columns of every other mode.
  std::vector<Matrix> c(n);
  {
    std::vector<Matrix> rest(unit.factors.begin() + 1, unit.factors.end());
    c[0].noalias() = g_mat * khatri_rao(rest);
  }
  if (n == 2) {
    c[1].noalias() = g_mat.transpose() * unit.factors[0];
  } else {
    // P = Â0ᵀ G: row r is G contracted along mode 0, left as a tensor over modes 1..n-1.
    const Matrix proj = unit.factors[0].transpose() * g_mat;
    const Shape tail(cp.shape.begin() + 1, cp.shape.end());
    for (std::size_t k = 1; k < n; ++k) c[k].resize(static_cast<Eigen::Index>(cp.shape[k]), rank);
    std::vector<Matrix> cols_t(n);  // transposed unit factors: row r is column r
    for (std::size_t k = 1; k < n; ++k) cols_t[k] = unit.factors[k].transpose();
    std::vector<const double*> vecs(n - 1);
    Vector scratch;
    for (Eigen::Index r = 0; r < rank; ++r) {
      for (std::size_t k = 1; k < n; ++k) vecs[k - 1] = cols_t[k].row(r).data();
      for (std::size_t k = 1; k < n; ++k) {
        c[k].col(r) = contract_all_but(proj.row(r).data(), tail, vecs, k - 1, scratch);
      }
    }
  }

  CpNormGrads grads;
  const Vector t = (c[0].cwiseProduct(unit.factors[0])).colwise().sum().transpose();
  grads.sigma = cp.lambdas.dot(t);
  grads.lambdas = p.sigma * t;
  const Vector scale = p.sigma * cp.lambdas;
  grads.factors.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Matrix& u = unit.factors[k];
    Matrix g = c[k] * scale.asDiagonal();
    // Project out the radial direction and undo the normalization scale.
    const Eigen::RowVectorXd radial = (u.cwiseProduct(g)).colwise().sum();
    g -= u * radial.asDiagonal();
    const Eigen::RowVectorXd norms = cp.factors[k].colwise().norm();
    grads.factors[k] = g * norms.cwiseInverse().asDiagonal();
  }
  return grads;
}

Tensor weightnorm_weight(const WeightNormParam& p) {
  const double norm = frobenius_norm(p.v);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw std::domain_error("weight norm: direction tensor has norm " + std::to_string(norm));
  }
  Tensor w = p.v;
  w *= p.g / norm;
  return w;
}

WeightNormGrads weightnorm_backward(const WeightNormParam& p, const Tensor& grad_weight) {
  if (grad_weight.shape() != p.v.shape()) {
    throw std::invalid_argument("weightnorm_backward: gradient shape mismatch");
  }
  const double norm = frobenius_norm(p.v);
  if (!(norm > 0.0)) throw std::domain_error("weight norm: direction tensor is zero");
  const double radial = dot(p.v, grad_weight) / norm;  // ⟨v̂, G⟩
  WeightNormGrads grads{grad_weight, radial};
  Tensor proj = p.v;
  proj *= radial / norm;
  grads.v -= proj;
  grads.v *= p.g / norm;
  return grads;
}

}  // namespace cpnorm
