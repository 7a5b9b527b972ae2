// PAC-Bayes comparator bounds evaluated on a trained diagonal-Gaussian posterior.
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vibound/gauss_math.hpp"

namespace vibound {

enum class PriorChoice { objective_prior, initialization_q0 };

struct PacBayesConfig {
  double delta = 0.025;
  double C = 1.0;
  PriorChoice prior_choice = PriorChoice::objective_prior;
  std::size_t union_b = 100;
  double union_c = 0.1;
  double union_lambda_floor = 1e-10;  // smallest prior variance on the search grid

  void validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("PacBayesConfig: delta must be in (0,1)");
    if (!(C > 0.0)) throw std::invalid_argument("PacBayesConfig: C must be positive");
    if (union_b < 1) throw std::invalid_argument("PacBayesConfig: union_b must be >= 1");
    if (!(union_c > union_lambda_floor)) throw std::invalid_argument("PacBayesConfig: union_c must exceed the lambda floor");
  }
};

/// Germain et al. form. With lambda: (kl + log 1/delta)/lambda + lambda C^2 / (2n).
/// Without: the minimum over lambda, C sqrt(2 (kl + log 1/delta) / n).
inline double germain_bound(double kl, const PacBayesConfig& cfg, std::size_t n,
                            std::optional<double> lambda = std::nullopt) {
  cfg.validate();
  if (!(kl >= 0.0)) throw std::invalid_argument("germain_bound: KL must be nonnegative");
  if (n == 0) throw std::invalid_argument("germain_bound: n must be positive");
  const double complexity = kl + std::log(1.0 / cfg.delta);
  const double nn = static_cast<double>(n);
  if (lambda) {
    if (!(*lambda > 0.0)) throw std::invalid_argument("germain_bound: lambda must be positive");
    return complexity / *lambda + *lambda * cfg.C * cfg.C / (2.0 * nn);
  }
  return cfg.C * std::sqrt(2.0 * complexity / nn);
}

/// The optimal lambda of the Germain form.
inline double germain_optimal_lambda(double kl, const PacBayesConfig& cfg, std::size_t n) {
  return std::sqrt(2.0 * static_cast<double>(n) * (kl + std::log(1.0 / cfg.delta))) / cfg.C;
}

/// C sqrt((kl + log(n/delta)) / (2(n-1))).
inline double mcallester_bound(double kl, const PacBayesConfig& cfg, std::size_t n) {
  cfg.validate();
  if (!(kl >= 0.0)) throw std::invalid_argument("mcallester_bound: KL must be nonnegative");
  if (n < 2) throw std::invalid_argument("mcallester_bound: n must be at least 2");
  const double nn = static_cast<double>(n);
  return cfg.C * std::sqrt((kl + std::log(nn / cfg.delta)) / (2.0 * (nn - 1.0)));
}

struct UnionBoundResult {
  double bound = 0.0;
  std::size_t j = 0;
  double lambda = 0.0;  // prior variance at the minimiser
  double kl = 0.0;
};

/// Largest grid index whose prior variance c exp(-j/b) stays above the floor.
inline std::size_t union_bound_j_max(const PacBayesConfig& cfg) {
  return static_cast<std::size_t>(
      std::floor(static_cast<double>(cfg.union_b) * std::log(cfg.union_c / cfg.union_lambda_floor)));
}

/// Term inside the square root, for prior N(m0, lambda I) at grid index j >= 1.
inline double union_bound_at(double kl, std::size_t j, const PacBayesConfig& cfg, std::size_t n) {
  const double nn = static_cast<double>(n);
  // On the grid log(c / lambda) = j / b, so 2 log(b log(c / lambda)) = 2 log j.
  const double penalty = 2.0 * std::log(static_cast<double>(j));
  return std::sqrt((kl + penalty + std::log(std::numbers::pi * std::numbers::pi * nn / (6.0 * cfg.delta))) /
                   (2.0 * (nn - 1.0)));
}

/// Minimises the union-bound form over j in [1, j_max], lambda = c exp(-j/b)
/// being the prior variance. j = 0 is excluded (log(c/lambda) must be positive).
inline UnionBoundResult union_bound(const DiagGaussian& q, const std::vector<double>& m0, const PacBayesConfig& cfg,
                                    std::size_t n) {
  cfg.validate();
  q.validate();
  if (m0.size() != q.dimension()) throw std::invalid_argument("union_bound: m0 dimension mismatch");
  if (n < 2) throw std::invalid_argument("union_bound: n must be at least 2");
  // KL(q || N(m0, lambda I)) = 1/2 (A / lambda + d log lambda - sum log sigma^2 - d).
  double A = 0.0, sum_log_var = 0.0;
  for (std::size_t k = 0; k < q.dimension(); ++k) {
    const double dm = q.mean[k] - m0[k];
    A += q.std[k] * q.std[k] + dm * dm;
    sum_log_var += 2.0 * std::log(q.std[k]);
  }
  const double d = static_cast<double>(q.dimension());
  const double b = static_cast<double>(cfg.union_b);
  const std::size_t j_max = union_bound_j_max(cfg);
  UnionBoundResult best;
  best.bound = std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j <= j_max; ++j) {
    const double lambda = cfg.union_c * std::exp(-static_cast<double>(j) / b);
    double kl = 0.5 * (A / lambda + d * std::log(lambda) - sum_log_var - d);
    if (kl < 0.0) kl = 0.0;
    const double value = union_bound_at(kl, j, cfg, n);
    if (value < best.bound) best = {value, j, lambda, kl};
  }
  return best;
}

}  // namespace vibound
