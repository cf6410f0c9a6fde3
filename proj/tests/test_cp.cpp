#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "cpnorm/cp.hpp"

using namespace cpnorm;

namespace {

Tensor random_tensor(const Shape& shape, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(shape);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

// Random CP form with unit columns and λ in [1, 2].
CpForm unit_cp(const Shape& shape, std::size_t rank, unsigned seed) {
  CpForm cp = random_cp(shape, rank, FactorDist::kaiming_normal, LambdaInit::ones, seed);
  cp = renormalize(cp);
  std::mt19937_64 rng(seed + 1000);
  std::uniform_real_distribution<double> u(1.0, 2.0);
  for (auto& l : cp.lambdas) l = u(rng);
  return cp;
}

// Truncated-SVD fit of a matrix at rank r (Eckart-Young oracle).
double svd_fit(const Tensor& m, std::size_t r) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(m.as_matrix(m.dim(0))));
  const auto& s = svd.singularValues();
  double tail = 0;
  for (Eigen::Index i = static_cast<Eigen::Index>(r); i < s.size(); ++i) tail += s[i] * s[i];
  return 1.0 - std::sqrt(tail) / s.norm();
}

CpForm basis_form(std::initializer_list<Matrix> factors, Vector lambdas) {
  CpForm cp;
  cp.factors = factors;
  cp.lambdas = std::move(lambdas);
  for (const auto& f : cp.factors) cp.shape.push_back(static_cast<std::size_t>(f.rows()));
  return cp;
}

}  // namespace

TEST_CASE("cp_reconstruct examples") {
  Matrix a(2, 1), b(2, 1);
  a << 1, 0;
  b << 0, 1;
  Tensor t = cp_reconstruct(basis_form({a, b}, Vector::Constant(1, 2.0)));
  CHECK(t.data()[1] == 2);
  CHECK(frobenius_norm(t) == 2);

  CpForm zero = random_cp({3, 4, 2}, 3, FactorDist::kaiming_normal, LambdaInit::ones, 1);
  zero.lambdas.setZero();
  CHECK(frobenius_norm(cp_reconstruct(zero)) == 0);

  Matrix i2 = Matrix::Identity(2, 2);
  Tensor eye = cp_reconstruct(basis_form({i2, i2}, Vector::Ones(2)));
  CHECK(eye == Tensor(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}));
}

TEST_CASE("cp_reconstruct agrees with the unfolded Khatri-Rao identity") {
  CpForm cp = random_cp({3, 4, 2, 5}, 3, FactorDist::kaiming_uniform, LambdaInit::standard_normal, 4);
  Tensor t = cp_reconstruct(cp);
  // Independent route: sum of explicit outer products.
  Tensor sum(cp.shape);
  for (std::size_t r = 0; r < cp.rank(); ++r) {
    std::vector<Vector> cols;
    for (const auto& f : cp.factors) cols.push_back(f.col(static_cast<Eigen::Index>(r)));
    Tensor term = outer_product(std::span<const Vector>(cols));
    term *= cp.lambdas[static_cast<Eigen::Index>(r)];
    sum += term;
  }
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == doctest::Approx(sum[i]).epsilon(1e-12));
}

TEST_CASE("doubling lambda_r adds the r-th term once more") {
  CpForm cp = random_cp({3, 2, 4}, 4, FactorDist::kaiming_normal, LambdaInit::standard_normal, 8);
  Tensor base = cp_reconstruct(cp);
  for (std::size_t r = 0; r < cp.rank(); ++r) {
    CpForm doubled = cp;
    doubled.lambdas[static_cast<Eigen::Index>(r)] *= 2;
    std::vector<Vector> cols;
    for (const auto& f : cp.factors) cols.push_back(f.col(static_cast<Eigen::Index>(r)));
    Tensor term = outer_product(std::span<const Vector>(cols));
    term *= cp.lambdas[static_cast<Eigen::Index>(r)];
    Tensor expected = base;
    expected += term;
    Tensor got = cp_reconstruct(doubled);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("fit examples") {
  CpForm cp = unit_cp({3, 4, 2}, 2, 5);
  Tensor target = cp_reconstruct(cp);
  CHECK(fit(target, cp) == doctest::Approx(1.0).epsilon(1e-15));

  CpForm zero = cp;
  zero.lambdas.setZero();
  CHECK(fit(target, zero) == 0.0);

  // Hand-computed: ‖I − e0∘e0‖ = 1, ‖I‖ = √2.
  Tensor eye(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  Matrix e0(2, 1);
  e0 << 1, 0;
  CHECK(fit(eye, basis_form({e0, e0}, Vector::Ones(1))) == doctest::Approx(1.0 - 1.0 / std::sqrt(2.0)));
  CHECK(fit(eye, basis_form({e0, e0}, Vector::Ones(1))) == doctest::Approx(0.2929).epsilon(1e-4));

  CHECK_THROWS_AS(fit(Tensor(Shape{2, 2}), basis_form({e0, e0}, Vector::Ones(1))), std::domain_error);
  CHECK_THROWS_AS(fit(Tensor(Shape{2, 3}, 1.0), basis_form({e0, e0}, Vector::Ones(1))),
                  std::invalid_argument);
}

TEST_CASE("cp_als recovers a synthetic rank-3 tensor") {
  Tensor target = cp_reconstruct(unit_cp({6, 5, 4}, 3, 21));
  auto [cp, report] = cp_als(target, 3, {500, 1e-12, 7});
  CHECK(report.fit >= 0.999);
  CHECK(report.rank == 3);
  CHECK(fit(target, cp) == doctest::Approx(report.fit).epsilon(1e-9));
  for (const auto& f : cp.factors) {
    for (Eigen::Index r = 0; r < f.cols(); ++r) CHECK(f.col(r).norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("cp_als on a random matrix at full rank") {
  Tensor target = random_tensor({8, 7}, 2);
  auto [cp, report] = cp_als(target, 7, {200, 1e-12, 3});
  CHECK(report.fit >= 0.999);
}

TEST_CASE("cp_als rank one on a rank-one target is exact") {
  Tensor target = cp_reconstruct(unit_cp({4, 3, 5}, 1, 30));
  auto [cp, report] = cp_als(target, 1, {50, 1e-14, 1});
  CHECK(std::abs(report.fit - 1.0) < 1e-8);
  CHECK(std::abs(fit(target, cp) - 1.0) < 1e-8);
}

TEST_CASE("cp_als fit is non-decreasing across sweeps") {
  for (unsigned seed = 0; seed < 6; ++seed) {
    Tensor target = random_tensor({5, 4, 3 + seed % 2}, 100 + seed);
    auto [cp, report] = cp_als(target, 2 + seed % 4, {60, 0.0, seed});
    for (std::size_t i = 1; i < report.history.size(); ++i) {
      CHECK(report.history[i] >= report.history[i - 1] - 1e-10);
    }
  }
}

TEST_CASE("cp_als signs: largest-magnitude entry of every column is positive") {
  Tensor target = random_tensor({4, 4, 3}, 77);
  auto [cp, report] = cp_als(target, 5, {30, 1e-9, 2});
  for (const auto& f : cp.factors) {
    for (Eigen::Index r = 0; r < f.cols(); ++r) {
      Eigen::Index idx;
      f.col(r).cwiseAbs().maxCoeff(&idx);
      CHECK(f(idx, r) > 0);
    }
  }
  auto again = cp_als(target, 5, {30, 1e-9, 2});
  CHECK(again.first == cp);
}

TEST_CASE("cp_als tolerates rank above the tensor rank") {
  Tensor target = cp_reconstruct(unit_cp({3, 3}, 1, 4));
  auto [cp, report] = cp_als(target, 3, {100, 1e-12, 0});
  CHECK(report.fit > 0.999);
  for (const auto& f : cp.factors) CHECK(f.allFinite());
  CHECK(cp.lambdas.allFinite());
}

TEST_CASE("cp_power rank one") {
  CpForm truth = unit_cp({4, 3, 5}, 1, 12);
  truth.lambdas[0] = 5.0;
  Tensor target = cp_reconstruct(truth);
  auto [cp, report] = cp_power(target, 1, {50, 3});
  CHECK(std::abs(std::abs(cp.lambdas[0]) - 5.0) < 1e-6);
  CHECK(std::abs(report.fit - 1.0) < 1e-6);
  for (const auto& f : cp.factors) CHECK(f.col(0).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cp_power with small noise") {
  CpForm truth = unit_cp({6, 4, 3}, 1, 13);
  Tensor target = cp_reconstruct(truth);
  Tensor padded(Shape{7, 4, 3});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 3; ++k) padded.at({i, j, k}) = target.at({i, j, k});
  Tensor noise = random_tensor(padded.shape(), 5);
  noise *= 1e-8;
  padded += noise;
  auto [cp, report] = cp_power(padded, 1, {50, 1});
  CHECK(report.fit >= 1 - 1e-6);
}

TEST_CASE("cp_power on diag(3,1) returns descending magnitudes") {
  Tensor d(Shape{4, 4});
  d.at({0, 0}) = 3;
  d.at({1, 1}) = 1;
  auto [cp, report] = cp_power(d, 2, {100, 0});
  CHECK(std::abs(cp.lambdas[0]) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(std::abs(cp.lambdas[1]) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(report.fit == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("cp_power matches the truncated-SVD fit at full matrix rank") {
  const Shape shapes[] = {{8, 5}, {6, 9}, {12, 12}, {20, 3}};
  unsigned seed = 0;
  for (const auto& shape : shapes) {
    Tensor m = random_tensor(shape, 40 + seed);
    const std::size_t r = std::min(shape[0], shape[1]);
    auto [cp, report] = cp_power(m, r, {30, seed});
    CHECK(std::abs(report.fit - svd_fit(m, r)) < 1e-3);
    ++seed;
  }
}

TEST_CASE("cp_power matches the truncated-SVD fit below full rank with a gapped spectrum") {
  // U diag(s) Vᵀ with well separated singular values.
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd g1(10, 6), g2(7, 6);
  for (auto& x : g1.reshaped()) x = n(rng);
  for (auto& x : g2.reshaped()) x = n(rng);
  Eigen::MatrixXd u = Eigen::HouseholderQR<Eigen::MatrixXd>(g1).householderQ() * Eigen::MatrixXd::Identity(10, 6);
  Eigen::MatrixXd v = Eigen::HouseholderQR<Eigen::MatrixXd>(g2).householderQ() * Eigen::MatrixXd::Identity(7, 6);
  Eigen::VectorXd s(6);
  s << 10, 6, 3, 1.5, 0.7, 0.3;
  Eigen::MatrixXd x = u * s.asDiagonal() * v.transpose();
  Tensor m(Shape{10, 7});
  m.as_matrix(10) = x;
  for (std::size_t r = 1; r <= 4; ++r) {
    auto [cp, report] = cp_power(m, r, {200, 2});
    CHECK(std::abs(report.fit - svd_fit(m, r)) < 1e-3);
  }
}

TEST_CASE("cp_power flags an exhausted residual") {
  CpForm truth = unit_cp({3, 3}, 1, 2);
  Tensor target = cp_reconstruct(truth);
  auto [cp, report] = cp_power(target, 3, {50, 0});
  CHECK(report.exhausted);
  CHECK(cp.lambdas[1] == 0.0);
  CHECK(cp.lambdas[2] == 0.0);
  for (const auto& f : cp.factors) {
    for (Eigen::Index r = 0; r < f.cols(); ++r) CHECK(f.col(r).norm() == doctest::Approx(1.0));
  }
  CHECK(report.fit == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("rank_upper_bound") {
  CHECK(rank_upper_bound({128, 10}) == 10);
  CHECK(rank_upper_bound({32, 1, 3, 3}) == 9);
  CHECK(rank_upper_bound({64, 32, 3, 3}) == 288);
  CHECK(rank_upper_bound({7}) == 1);
}

TEST_CASE("estimate_rank on random matrices returns the matrix rank") {
  for (auto shape : {Shape{128, 10}, Shape{512, 10}, Shape{12, 30}}) {
    Tensor m = random_tensor(shape, 61);
    RankEstimate est = estimate_rank(m, {});
    CHECK(est.rank == std::min(shape[0], shape[1]));
    CHECK(est.converged);
    CHECK(std::is_sorted(est.curve.begin(), est.curve.end()));
  }
}

TEST_CASE("estimate_rank on a synthetic rank-3 tensor") {
  Tensor target = cp_reconstruct(unit_cp({6, 5, 4}, 3, 21));
  RankSearchOptions opts;
  opts.max_iters = 500;
  opts.stop_tol = 1e-10;
  RankEstimate est = estimate_rank(target, opts);
  CHECK(est.rank == 3);
}

TEST_CASE("estimate_rank reports an unreachable threshold") {
  Tensor m = random_tensor({6, 6}, 3);
  RankSearchOptions opts;
  opts.max_rank = 3;
  RankEstimate est = estimate_rank(m, opts);
  CHECK_FALSE(est.converged);
  CHECK(est.rank == 3);
  CHECK_THROWS_AS(estimate_rank(m, {1.5}), std::invalid_argument);
}

TEST_CASE("random_cp") {
  CpForm a = random_cp({5, 4, 3, 3}, 6, FactorDist::kaiming_uniform, LambdaInit::ones, 42);
  a.validate();
  for (auto l : a.lambdas) CHECK(l == 1.0);
  CpForm b = random_cp({5, 4, 3, 3}, 6, FactorDist::kaiming_uniform, LambdaInit::ones, 42);
  CHECK(a == b);
  for (Eigen::Index i = 0; i < a.factors[1].size(); ++i) {
    CHECK(std::abs(a.factors[1].data()[i]) <= std::sqrt(6.0 / 4.0));
  }

  CpForm big = random_cp({3, 2}, 10000, FactorDist::kaiming_normal, LambdaInit::standard_normal, 7);
  const double mean = big.lambdas.mean();
  const double sd = std::sqrt((big.lambdas.array() - mean).square().sum() / (big.lambdas.size() - 1));
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(sd - 1.0) < 0.05);

  CHECK_THROWS_AS(parse_factor_dist("xavier"), std::invalid_argument);
  CHECK_THROWS_AS(parse_lambda_init("zeros"), std::invalid_argument);
  CHECK(parse_factor_dist("kaiming_normal") == FactorDist::kaiming_normal);
}

TEST_CASE("renormalize") {
  Matrix a(2, 1), b(2, 1);
  a << 3, 4;
  b << 1, 0;
  CpForm cp = basis_form({a, b}, Vector::Constant(1, 2.0));
  CpForm n = renormalize(cp);
  CHECK(n.factors[0](0, 0) == doctest::Approx(0.6));
  CHECK(n.factors[0](1, 0) == doctest::Approx(0.8));
  CHECK(n.lambdas[0] == 2.0);
  CHECK(renormalize(n) == n);

  CpForm absorbed = renormalize(cp, true);
  CHECK(absorbed.lambdas[0] == doctest::Approx(10.0));

  CpForm unit = basis_form({b, b}, Vector::Ones(1));
  CHECK(renormalize(unit) == unit);

  for (unsigned seed = 0; seed < 20; ++seed) {
    CpForm r = random_cp({4, 3, 2}, 3, FactorDist::kaiming_normal, LambdaInit::standard_normal, seed);
    CpForm once = renormalize(r);
    CHECK(renormalize(once) == once);
    for (const auto& f : once.factors)
      for (Eigen::Index c = 0; c < f.cols(); ++c) CHECK(std::abs(f.col(c).norm() - 1.0) < 1e-12);
  }

  CpForm bad = cp;
  bad.factors[1].setZero();
  CHECK_THROWS_WITH_AS(renormalize(bad, false, "conv1"),
                       doctest::Contains("conv1: factor column has norm 0.000000 (mode 1, rank index 0)"),
                       std::domain_error);
}
