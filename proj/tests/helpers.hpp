#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "cpnorm/tensor.hpp"

namespace testing_helpers {

inline cpnorm::Tensor random_tensor(const cpnorm::Shape& shape, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  cpnorm::Tensor t(shape);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

// Central differences of f over every entry of x (x is perturbed in place
// and restored).
inline std::vector<double> numeric_grad(std::span<double> x, const std::function<double()>& f,
                                        double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max |a - b| / max(max|a|, max|b|)
inline double relative_error(const double* a, const double* b, std::size_t n) {
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < n; ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

inline double relative_error(std::span<const double> a, std::span<const double> b) {
  return relative_error(a.data(), b.data(), std::min(a.size(), b.size()));
}

}  // namespace testing_helpers
