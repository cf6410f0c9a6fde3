#include "cpnorm/cp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <stdexcept>

namespace cpnorm {

void CpForm::validate() const {
  if (shape.empty()) throw std::invalid_argument("CpForm: empty shape");
  if (factors.size() != shape.size()) {
    throw std::invalid_argument("CpForm: " + std::to_string(factors.size()) +
                                " factors for order-" + std::to_string(shape.size()) + " shape");
  }
  if (lambdas.size() < 1) throw std::invalid_argument("CpForm: rank must be >= 1");
  for (std::size_t k = 0; k < factors.size(); ++k) {
    if (factors[k].cols() != lambdas.size()) {
      throw std::invalid_argument("CpForm: factor " + std::to_string(k) + " has " +
                                  std::to_string(factors[k].cols()) + " columns, expected " +
                                  std::to_string(lambdas.size()));
    }
    if (static_cast<std::size_t>(factors[k].rows()) != shape[k]) {
      throw std::invalid_argument("CpForm: factor " + std::to_string(k) + " has " +
                                  std::to_string(factors[k].rows()) + " rows, expected " +
                                  std::to_string(shape[k]));
    }
  }
}

std::size_t CpForm::scalar_count() const {
  std::size_t dims = 0;
  for (auto d : shape) dims += d;
  return rank() * dims + rank();
}

Tensor cp_reconstruct(const CpForm& cp) {
  cp.validate();
  Tensor out(cp.shape);
  auto w = out.as_matrix(cp.shape[0]);
  if (cp.order() == 1) {
    w.col(0) = cp.factors[0] * cp.lambdas;
    return out;
  }
  std::vector<Matrix> rest(cp.factors.begin() + 1, cp.factors.end());
  const Matrix kr = khatri_rao(rest);
  w.noalias() = (cp.factors[0] * cp.lambdas.asDiagonal()) * kr.transpose();
  return out;
}

double fit(const Tensor& target, const CpForm& cp) {
  if (target.shape() != cp.shape) {
    throw std::invalid_argument("fit: target shape " + shape_string(target.shape()) +
                                " differs from CP shape " + shape_string(cp.shape));
  }
  const double norm = frobenius_norm(target);
  if (norm == 0.0) throw std::domain_error("fit: target tensor is all zero");
  return 1.0 - frobenius_norm(target - cp_reconstruct(cp)) / norm;
}

namespace {

Matrix random_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = normal(rng);
  }
  return m;
}

// Khatri-Rao of all factors except `skip`, ordered to match the Kolda
// unfolding: highest mode first so that the lowest mode varies fastest.
void khatri_rao_except(const std::vector<Matrix>& factors, std::size_t skip, Matrix& out,
                       Matrix& scratch) {
  std::vector<const Matrix*> parts;
  for (std::size_t k = factors.size(); k-- > 0;) {
    if (k != skip) parts.push_back(&factors[k]);
  }
  out = *parts[0];
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const Matrix& b = *parts[p];
    scratch.resize(out.rows() * b.rows(), out.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      scratch.middleRows(i * b.rows(), b.rows()) = b.array().rowwise() * out.row(i).array();
    }
    out.swap(scratch);
  }
}

// Solves A·V = M for A where V is the symmetric Hadamard Gram matrix.
Matrix solve_normal_equations(const Matrix& v, const Matrix& m) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-10) {
    return ldlt.solve(m.transpose()).transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(v);
  const Eigen::VectorXd& d = eig.eigenvalues();
  const double cutoff = 1e-10 * d.cwiseAbs().maxCoeff();
  Eigen::VectorXd inv(d.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) inv[i] = std::abs(d[i]) > cutoff ? 1.0 / d[i] : 0.0;
  const Eigen::MatrixXd& q = eig.eigenvectors();
  return (m * q) * inv.asDiagonal() * q.transpose();
}

// Normalizes columns of `a`, returning the norms. A zero column is kept as is
// and reports norm 0.
Vector normalize_columns(Matrix& a) {
  Vector norms(a.cols());
  for (Eigen::Index r = 0; r < a.cols(); ++r) {
    const double n = a.col(r).norm();
    norms[r] = n;
    if (n > 0.0) a.col(r) /= n;
  }
  return norms;
}

}  // namespace

std::pair<CpForm, FitReport> cp_als(const Tensor& target, std::size_t rank,
                                    const AlsOptions& options) {
  if (rank < 1) throw std::invalid_argument("cp_als: rank must be >= 1");
  if (options.max_iters < 1) throw std::invalid_argument("cp_als: max_iters must be >= 1");
  const Shape& shape = target.shape();
  const std::size_t n = shape.size();
  const double target_norm = frobenius_norm(target);
  if (target_norm == 0.0) throw std::domain_error("cp_als: target tensor is all zero");

  std::mt19937_64 rng(options.seed);
  CpForm cp;
  cp.shape = shape;
  cp.lambdas = Vector::Ones(static_cast<Eigen::Index>(rank));
  for (std::size_t k = 0; k < n; ++k) {
    cp.factors.push_back(random_normal(shape[k], rank, rng));
    normalize_columns(cp.factors.back());
  }

  FitReport report;
  report.rank = rank;

  if (n == 1) {
    // A vector is rank one: put it in the first column, zero scale elsewhere.
    Matrix& a = cp.factors[0];
    a.col(0) = Eigen::Map<const Eigen::VectorXd>(target.ptr(), static_cast<Eigen::Index>(target.size()));
    cp.lambdas.setZero();
    cp.lambdas[0] = a.col(0).norm();
    a.col(0) /= cp.lambdas[0];
    canonicalize_signs(cp);
    report.fit = fit(target, cp);
    report.history.push_back(report.fit);
    report.iterations = 1;
    report.converged = true;
    return {std::move(cp), std::move(report)};
  }

  std::vector<Matrix> unfolded;
  unfolded.reserve(n);
  for (std::size_t k = 0; k < n; ++k) unfolded.push_back(unfold(target, k));

  std::vector<Matrix> grams(n);
  for (std::size_t k = 0; k < n; ++k) grams[k] = cp.factors[k].transpose() * cp.factors[k];

  double previous = -std::numeric_limits<double>::infinity();
  Matrix kr, scratch, mttkrp, residual;
  for (std::size_t iter = 0; iter < options.max_iters; ++iter) {
    for (std::size_t k = 0; k < n; ++k) {
      khatri_rao_except(cp.factors, k, kr, scratch);
      mttkrp.noalias() = unfolded[k] * kr;
      Matrix v = Matrix::Ones(static_cast<Eigen::Index>(rank), static_cast<Eigen::Index>(rank));
      for (std::size_t j = 0; j < n; ++j) {
        if (j != k) v.array() *= grams[j].array();
      }
      Matrix a = solve_normal_equations(v, mttkrp);
      const Vector norms = normalize_columns(a);
      for (Eigen::Index r = 0; r < a.cols(); ++r) {
        if (norms[r] == 0.0) a.col(r) = cp.factors[k].col(r);
      }
      cp.lambdas = norms;
      cp.factors[k] = std::move(a);
      grams[k] = cp.factors[k].transpose() * cp.factors[k];
    }
    // kr still holds the Khatri-Rao product for the last mode.
    const std::size_t last = n - 1;
    residual = unfolded[last];
    residual.noalias() -= (cp.factors[last] * cp.lambdas.asDiagonal()) * kr.transpose();
    const double current = 1.0 - residual.norm() / target_norm;
    report.history.push_back(current);
    report.iterations = iter + 1;
    if (std::abs(current - previous) < options.stop_tol) {
      report.converged = true;
      break;
    }
    if (options.target_fit && iter >= 2 && current < *options.target_fit) {
      // Linear extrapolation of the latest gain over the remaining sweeps.
      const double remaining = static_cast<double>(options.max_iters - iter - 1);
      if (current + remaining * (current - previous) < *options.target_fit) break;
    }
    previous = current;
  }

  canonicalize_signs(cp);
  report.fit = report.history.back();
  return {std::move(cp), std::move(report)};
}

namespace {

// Contracts `t` with vecs[j] along every mode j != keep.
Vector contract_all_but(const Tensor& t, const std::vector<Vector>& vecs, std::size_t keep) {
  const Shape& shape = t.shape();
  const std::size_t n = shape.size();
  Vector buffer = Eigen::Map<const Eigen::VectorXd>(t.ptr(), static_cast<Eigen::Index>(t.size()));
  Eigen::Index size = buffer.size();
  for (std::size_t k = n; k-- > keep + 1;) {
    const auto d = static_cast<Eigen::Index>(shape[k]);
    Eigen::Map<const Matrix> m(buffer.data(), size / d, d);
    Vector next = m * vecs[k];
    buffer = std::move(next);
    size = buffer.size();
  }
  for (std::size_t k = 0; k < keep; ++k) {
    const auto d = static_cast<Eigen::Index>(shape[k]);
    Eigen::Map<const Matrix> m(buffer.data(), d, size / d);
    Vector next = m.transpose() * vecs[k];
    buffer = std::move(next);
    size = buffer.size();
  }
  return buffer;
}

}  // namespace

std::pair<CpForm, FitReport> cp_power(const Tensor& target, std::size_t rank,
                                      const PowerOptions& options) {
  if (rank < 1) throw std::invalid_argument("cp_power: rank must be >= 1");
  const Shape& shape = target.shape();
  const std::size_t n = shape.size();
  const double target_norm = frobenius_norm(target);
  if (target_norm == 0.0) throw std::domain_error("cp_power: target tensor is all zero");
  const std::size_t rounds = std::max<std::size_t>(1, options.inner_iters);

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  CpForm cp;
  cp.shape = shape;
  cp.lambdas = Vector::Zero(static_cast<Eigen::Index>(rank));
  for (std::size_t k = 0; k < n; ++k) {
    cp.factors.push_back(Matrix::Zero(static_cast<Eigen::Index>(shape[k]),
                                      static_cast<Eigen::Index>(rank)));
  }

  FitReport report;
  report.rank = rank;
  Tensor residual = target;
  const double vanish = 1e-13 * target_norm;

  for (std::size_t r = 0; r < rank; ++r) {
    const auto col = static_cast<Eigen::Index>(r);
    std::vector<Vector> vecs(n);
    for (std::size_t k = 0; k < n; ++k) {
      vecs[k].resize(static_cast<Eigen::Index>(shape[k]));
      for (auto& x : vecs[k]) x = normal(rng);
      vecs[k].normalize();
    }
    double lambda = 0.0;
    if (frobenius_norm(residual) > vanish) {
      for (std::size_t it = 0; it < rounds && lambda >= 0.0; ++it) {
        for (std::size_t k = 0; k < n; ++k) {
          Vector c = contract_all_but(residual, vecs, k);
          const double norm = c.norm();
          if (norm == 0.0) {
            lambda = -1.0;
            break;
          }
          vecs[k] = c / norm;
          lambda = norm;
        }
      }
    }
    if (lambda <= 0.0) {
      // Nothing left to explain: zero scale, arbitrary unit columns.
      report.exhausted = true;
      for (std::size_t rr = r; rr < rank; ++rr) {
        for (std::size_t k = 0; k < n; ++k) cp.factors[k](0, static_cast<Eigen::Index>(rr)) = 1.0;
      }
      break;
    }
    for (std::size_t k = 0; k < n; ++k) cp.factors[k].col(col) = vecs[k];
    cp.lambdas[col] = lambda;
    Tensor term = outer_product(std::span<const Vector>(vecs));
    term *= lambda;
    residual -= term;
  }

  canonicalize_signs(cp);
  report.fit = fit(target, cp);
  report.iterations = rounds;
  report.converged = !report.exhausted;
  return {std::move(cp), std::move(report)};
}

std::size_t rank_upper_bound(const Shape& shape) {
  if (shape.size() == 1) return 1;
  std::size_t best = std::numeric_limits<std::size_t>::max();
  for (std::size_t k = 0; k < shape.size(); ++k) {
    best = std::min(best, shape_size(shape) / shape[k]);
  }
  return best;
}

RankEstimate estimate_rank(const Tensor& target, const RankSearchOptions& options) {
  if (!(options.fit_threshold > 0.0 && options.fit_threshold <= 1.0)) {
    throw std::invalid_argument("estimate_rank: fit_threshold must lie in (0, 1]");
  }
  const std::size_t max_rank =
      options.max_rank ? options.max_rank : rank_upper_bound(target.shape());
  const std::size_t step = options.rank_step ? options.rank_step : std::max<std::size_t>(1, max_rank / 32);

  RankEstimate result;
  auto probe = [&](std::size_t r) {
    AlsOptions als{options.max_iters, options.stop_tol, options.seed, options.fit_threshold};
    const double f = cp_als(target, r, als).second.fit;
    result.curve.emplace_back(r, f);
    return f >= options.fit_threshold;
  };

  std::size_t failed = 0;
  std::size_t hit = 0;
  for (std::size_t r = step;; r += step) {
    r = std::min(r, max_rank);
    if (probe(r)) {
      hit = r;
      break;
    }
    failed = r;
    if (r == max_rank) break;
  }

  if (hit == 0) {
    result.rank = max_rank;
    result.converged = false;
  } else {
    std::size_t lo = failed;
    std::size_t hi = hit;
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      if (probe(mid)) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    result.rank = hi;
    result.converged = true;
  }
  std::sort(result.curve.begin(), result.curve.end());
  return result;
}

void write_fit_curve_csv(const std::string& path, const RankEstimate& estimate) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "rank,fit\n" << std::setprecision(17);
  for (const auto& [r, f] : estimate.curve) out << r << ',' << f << '\n';
}

FactorDist parse_factor_dist(const std::string& name) {
  if (name == "kaiming_normal") return FactorDist::kaiming_normal;
  if (name == "kaiming_uniform") return FactorDist::kaiming_uniform;
  throw std::invalid_argument("unknown factor distribution '" + name + "'");
}

LambdaInit parse_lambda_init(const std::string& name) {
  if (name == "ones") return LambdaInit::ones;
  if (name == "standard_normal") return LambdaInit::standard_normal;
  throw std::invalid_argument("unknown lambda init '" + name + "'");
}

std::string to_string(FactorDist d) {
  return d == FactorDist::kaiming_normal ? "kaiming_normal" : "kaiming_uniform";
}

std::string to_string(LambdaInit l) { return l == LambdaInit::ones ? "ones" : "standard_normal"; }

CpForm random_cp(const Shape& shape, std::size_t rank, FactorDist factor_dist,
                 LambdaInit lambda_init, std::uint64_t seed) {
  if (rank < 1) throw std::invalid_argument("random_cp: rank must be >= 1");
  if (shape.empty()) throw std::invalid_argument("random_cp: empty shape");
  std::mt19937_64 rng(seed);
  CpForm cp;
  cp.shape = shape;
  for (std::size_t d : shape) {
    const double fan_in = static_cast<double>(d);
    Matrix a(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(rank));
    if (factor_dist == FactorDist::kaiming_normal) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = dist(rng);
    } else {
      const double bound = std::sqrt(6.0 / fan_in);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = dist(rng);
    }
    cp.factors.push_back(std::move(a));
  }
  cp.lambdas.resize(static_cast<Eigen::Index>(rank));
  if (lambda_init == LambdaInit::ones) {
    cp.lambdas.setOnes();
  } else {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& l : cp.lambdas) l = dist(rng);
  }
  return cp;
}

void renormalize_in_place(CpForm& cp, bool absorb_norms, const std::string& context) {
  for (std::size_t k = 0; k < cp.factors.size(); ++k) {
    Matrix& a = cp.factors[k];
    for (Eigen::Index r = 0; r < a.cols(); ++r) {
      const double norm = a.col(r).norm();
      if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw std::domain_error((context.empty() ? std::string() : context + ": ") +
                                "factor column has norm " + std::to_string(norm) + " (mode " +
                                std::to_string(k) + ", rank index " + std::to_string(r) + ")");
      }
      // Columns already unit up to rounding are left bit-identical.
      if (std::abs(norm - 1.0) <= 4 * std::numeric_limits<double>::epsilon()) continue;
      a.col(r) /= norm;
      if (absorb_norms) cp.lambdas[r] *= norm;
    }
  }
}

CpForm renormalize(const CpForm& cp, bool absorb_norms, const std::string& context) {
  CpForm out = cp;
  renormalize_in_place(out, absorb_norms, context);
  return out;
}

void canonicalize_signs(CpForm& cp) {
  for (auto& a : cp.factors) {
    for (Eigen::Index r = 0; r < a.cols(); ++r) {
      Eigen::Index idx = 0;
      a.col(r).cwiseAbs().maxCoeff(&idx);
      if (a(idx, r) < 0.0) {
        a.col(r) = -a.col(r);
        cp.lambdas[r] = -cp.lambdas[r];
      }
    }
  }
}

}  // namespace cpnorm
