#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cpnorm/tensor.hpp"

namespace cpnorm {

/// Sum of R rank-one terms: X ≈ Σ_r λ_r a(1)_r ∘ a(2)_r ∘ ... ∘ a(n)_r.
/// factors[k] is d_k × R; column r holds the mode-k vector of term r.
struct CpForm {
  std::vector<Matrix> factors;
  Vector lambdas;
  Shape shape;

  std::size_t rank() const { return static_cast<std::size_t>(lambdas.size()); }
  std::size_t order() const { return shape.size(); }

  /// Throws std::invalid_argument if factor shapes disagree with shape/rank.
  void validate() const;

  /// Σ_k d_k·R + R: trainable scalars in the factors plus the rank scales.
  std::size_t scalar_count() const;

  friend bool operator==(const CpForm& a, const CpForm& b) {
    if (a.shape != b.shape || a.factors.size() != b.factors.size()) return false;
    if (a.lambdas.size() != b.lambdas.size() || a.lambdas != b.lambdas) return false;
    for (std::size_t k = 0; k < a.factors.size(); ++k) {
      if (a.factors[k].rows() != b.factors[k].rows() ||
          a.factors[k].cols() != b.factors[k].cols() || a.factors[k] != b.factors[k]) {
        return false;
      }
    }
    return true;
  }
};

struct FitReport {
  std::size_t rank = 0;
  double fit = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  /// Fit after every ALS sweep (empty for the power method).
  std::vector<double> history;
  /// Power method: true when the residual vanished before all R terms were found.
  bool exhausted = false;
};

Tensor cp_reconstruct(const CpForm& cp);

/// 1 − ‖target − cp_reconstruct(cp)‖ / ‖target‖.
double fit(const Tensor& target, const CpForm& cp);

struct AlsOptions {
  std::size_t max_iters = 200;
  double stop_tol = 1e-7;
  std::uint64_t seed = 0;
  /// When set, sweeps stop early once the latest per-sweep gain, extended
  /// over the remaining sweeps, can no longer reach this fit.
  std::optional<double> target_fit;
};

std::pair<CpForm, FitReport> cp_als(const Tensor& target, std::size_t rank,
                                    const AlsOptions& options = {});

struct PowerOptions {
  std::size_t inner_iters = 50;
  std::uint64_t seed = 0;
};

/// Greedy rank-one deflation: R times, fit the dominant rank-one term of the
/// residual by alternating contractions, then subtract it.
std::pair<CpForm, FitReport> cp_power(const Tensor& target, std::size_t rank,
                                      const PowerOptions& options = {});

struct RankEstimate {
  std::size_t rank = 0;
  bool converged = false;
  /// (rank, fit) for every probed rank, ordered by rank.
  std::vector<std::pair<std::size_t, double>> curve;
};

struct RankSearchOptions {
  double fit_threshold = 0.999;
  /// 0 selects max(1, max_rank / 32).
  std::size_t rank_step = 0;
  /// 0 selects the generic upper bound (see rank_upper_bound).
  std::size_t max_rank = 0;
  std::size_t max_iters = 100;
  double stop_tol = 1e-6;
  std::uint64_t seed = 0;
};

/// min over modes of the product of the other dimensions; every tensor of
/// this shape has CP rank at most this value.
std::size_t rank_upper_bound(const Shape& shape);

RankEstimate estimate_rank(const Tensor& target, const RankSearchOptions& options = {});

/// Writes the `rank,fit` curve.
void write_fit_curve_csv(const std::string& path, const RankEstimate& estimate);

enum class FactorDist { kaiming_normal, kaiming_uniform };
enum class LambdaInit { ones, standard_normal };

FactorDist parse_factor_dist(const std::string& name);
LambdaInit parse_lambda_init(const std::string& name);
std::string to_string(FactorDist d);
std::string to_string(LambdaInit l);

/// Random CP form; factor k drawn with fan-in d_k. Columns are left
/// unnormalized.
CpForm random_cp(const Shape& shape, std::size_t rank, FactorDist factor_dist,
                 LambdaInit lambda_init, std::uint64_t seed);

/// Divides every factor column by its norm. With absorb_norms the product of
/// the removed norms is multiplied into λ_r (classic CP normalization);
/// otherwise λ is left untouched. `context` prefixes error messages.
CpForm renormalize(const CpForm& cp, bool absorb_norms = false, const std::string& context = "");

/// In-place variant used by the training hook.
void renormalize_in_place(CpForm& cp, bool absorb_norms = false, const std::string& context = "");

/// Flips each column whose largest-magnitude entry is negative and moves the
/// sign into λ_r.
void canonicalize_signs(CpForm& cp);

}  // namespace cpnorm
