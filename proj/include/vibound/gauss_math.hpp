// Closed-form divergences and distances between diagonal Gaussians and small
// discrete distributions.
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vibound {

/// N(mean, diag(std^2)) over weight space.
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> std;

  DiagGaussian() = default;
  DiagGaussian(std::vector<double> mean_, std::vector<double> std_)
      : mean(std::move(mean_)), std(std::move(std_)) {}

  /// Isotropic Gaussian N(mean, stddev^2 I).
  static DiagGaussian isotropic(std::vector<double> mean_, double stddev) {
    std::vector<double> s(mean_.size(), stddev);
    return DiagGaussian(std::move(mean_), std::move(s));
  }

  std::size_t dimension() const { return mean.size(); }

  void validate() const {
    if (mean.size() != std.size()) {
      throw std::invalid_argument("DiagGaussian: mean and std lengths differ");
    }
    for (double s : std) {
      if (!(s > 0.0)) {
        throw std::invalid_argument("DiagGaussian: std must be strictly positive");
      }
    }
  }
};

struct DiscreteDist {
  std::vector<double> probs;

  DiscreteDist() = default;
  explicit DiscreteDist(std::vector<double> p) : probs(std::move(p)) { validate(); }

  static DiscreteDist bernoulli(double theta) { return DiscreteDist({1.0 - theta, theta}); }

  std::size_t size() const { return probs.size(); }

  void validate() const {
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument("DiscreteDist: probability outside [0,1]");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("DiscreteDist: probabilities do not sum to 1");
    }
  }
};

namespace detail {

inline void require_same_dimension(const DiagGaussian& q, const DiagGaussian& p) {
  q.validate();
  p.validate();
  if (q.dimension() != p.dimension()) {
    throw std::invalid_argument("dimension mismatch: " + std::to_string(q.dimension()) +
                                " vs " + std::to_string(p.dimension()));
  }
}

}  // namespace detail

/// KL(q || p) = E_q[log q/p] for diagonal Gaussians.
///
/// With q = N(m_bar, sigma_bar^2) and p = N(m, sigma^2) this is
/// sum log(sigma/sigma_bar) + 1/2 (sum sigma_bar^2/sigma^2 - d + sum (m_bar-m)^2/sigma^2),
/// i.e. the second argument supplies the denominators.
inline double kl_diag_gauss(const DiagGaussian& q, const DiagGaussian& p) {
  detail::require_same_dimension(q, p);
  double log_term = 0.0;
  double quad_term = 0.0;
  for (std::size_t k = 0; k < q.dimension(); ++k) {
    const double ratio = q.std[k] / p.std[k];
    const double dm = (q.mean[k] - p.mean[k]) / p.std[k];
    log_term -= std::log(ratio);
    quad_term += ratio * ratio - 1.0 + dm * dm;
  }
  const double kl = log_term + 0.5 * quad_term;
  // Cancellation can leave a tiny negative residue for q ~= p.
  return kl > 0.0 ? kl : 0.0;
}

/// Upper bound on the diagonal-Gaussian KL in terms of parameter differences,
/// valid when every std entry of both arguments is at least sigma0:
///   2||s_q - s_p||_1 / sigma0 + ||s_q - s_p||_2^2 / (2 sigma0^2) + ||m_q - m_p||_2^2 / (2 sigma0^2).
/// The expression is symmetric, so it bounds both KL orders.
inline double kl_upper_bound(const DiagGaussian& q, const DiagGaussian& p, double sigma0) {
  detail::require_same_dimension(q, p);
  if (!(sigma0 > 0.0)) throw std::invalid_argument("kl_upper_bound: sigma0 must be positive");
  double l1 = 0.0, l2sq = 0.0, msq = 0.0;
  for (std::size_t k = 0; k < q.dimension(); ++k) {
    if (q.std[k] < sigma0 || p.std[k] < sigma0) {
      throw std::invalid_argument("kl_upper_bound: std entry below sigma0 at index " +
                                  std::to_string(k));
    }
    const double ds = std::abs(q.std[k] - p.std[k]);
    const double dm = q.mean[k] - p.mean[k];
    l1 += ds;
    l2sq += ds * ds;
    msq += dm * dm;
  }
  return 2.0 * l1 / sigma0 + (l2sq + msq) / (2.0 * sigma0 * sigma0);
}

/// Pinsker: TV <= sqrt(KL / 2).
inline double tv_pinsker(double kl) {
  if (!(kl >= 0.0)) throw std::invalid_argument("tv_pinsker: KL must be nonnegative");
  return std::sqrt(kl / 2.0);
}

/// W2 between diagonal Gaussians: sqrt(||m_q - m_p||^2 + ||s_q - s_p||^2).
inline double w2_diag_gauss(const DiagGaussian& q, const DiagGaussian& p) {
  detail::require_same_dimension(q, p);
  double acc = 0.0;
  for (std::size_t k = 0; k < q.dimension(); ++k) {
    const double dm = q.mean[k] - p.mean[k];
    const double ds = q.std[k] - p.std[k];
    acc += dm * dm + ds * ds;
  }
  return std::sqrt(acc);
}

inline double tv_discrete(const DiscreteDist& p, const DiscreteDist& q) {
  if (p.size() != q.size()) throw std::invalid_argument("tv_discrete: support size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p.probs[i] - q.probs[i]);
  return 0.5 * acc;
}

/// KL(p || q) with 0 log 0 = 0. Throws when p puts mass where q has none.
inline double kl_discrete(const DiscreteDist& p, const DiscreteDist& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_discrete: support size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.probs[i] == 0.0) continue;
    if (q.probs[i] == 0.0) {
      throw std::domain_error("kl_discrete: q has zero mass at outcome " + std::to_string(i) +
                              " where p is positive");
    }
    acc += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
  }
  return acc > 0.0 ? acc : 0.0;
}

}  // namespace vibound
