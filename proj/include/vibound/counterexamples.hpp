// Two small constructions:
//  * a pair of Bernoulli parameter chains where the joint KL of the induced
//    weights exceeds the "marginal + conditional on parameters" sum, so a
//    KL chain rule over parameter trajectories does not bound the joint;
//  * a 1-D logistic model on {(1,1), (-1,0)} where the two examples have the
//    same gradient, so the stability bound is zero while the KL of the
//    posterior to a fixed prior grows without limit.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include "vibound/datasets.hpp"
#include "vibound/gauss_math.hpp"
#include "vibound/model.hpp"
#include "vibound/random.hpp"
#include "vibound/stability.hpp"

namespace vibound {

struct BernoulliChainSetup {
  double theta1 = 0.4;
  double theta1_bar = 0.6;
  double update_delta = -0.2;  // theta2 = theta1 + update_delta

  void validate() const {
    for (double p : {theta1, theta1_bar, theta1 + update_delta, theta1_bar + update_delta}) {
      if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("BernoulliChainSetup: Bernoulli parameter outside (0,1)");
    }
  }
};

struct BernoulliChainKls {
  double joint_kl = 0.0;
  double marginal_plus_conditional = 0.0;
};

/// Joint of (W1, W2) is Bern(theta1) x Bern(theta1 + delta): W2 depends on
/// theta1 only through the deterministic update.
inline DiscreteDist bernoulli_chain_joint(double theta1, double update_delta) {
  const double a = theta1;
  const double b = theta1 + update_delta;
  // outcomes (w1, w2) = (0,0), (0,1), (1,0), (1,1)
  return DiscreteDist({(1 - a) * (1 - b), (1 - a) * b, a * (1 - b), a * b});
}

inline BernoulliChainKls bernoulli_chain_kls(const BernoulliChainSetup& setup) {
  setup.validate();
  BernoulliChainKls out;
  out.joint_kl = kl_discrete(bernoulli_chain_joint(setup.theta1, setup.update_delta),
                             bernoulli_chain_joint(setup.theta1_bar, setup.update_delta));
  // Conditioning both chains on the same parameter value rho makes the second
  // step identical, so the conditional term vanishes.
  const double rho = setup.theta1;
  const double conditional = kl_discrete(DiscreteDist::bernoulli(rho + setup.update_delta),
                                         DiscreteDist::bernoulli(rho + setup.update_delta));
  out.marginal_plus_conditional =
      kl_discrete(DiscreteDist::bernoulli(setup.theta1), DiscreteDist::bernoulli(setup.theta1_bar)) + conditional;
  return out;
}

// 1-D logistic model, -log p(y | w, x) = y log(1 + e^{-wx}) + (1-y) log(1 + e^{wx}).

inline double logistic_nll(double w, double x, std::size_t y) {
  const double u = w * x;
  return y == 1 ? softplus(-u) : softplus(u);
}

inline double logistic_grad(double w, double x, std::size_t y) {
  const double u = w * x;
  return y == 1 ? -x * sigmoid(-u) : x * sigmoid(u);
}

/// Gauss-Hermite nodes and weights for integrals of e^{-x^2} f(x).
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;

  explicit GaussHermite(std::size_t order) : nodes(order), weights(order) {
    if (order < 1) throw std::invalid_argument("GaussHermite: order must be positive");
    const double pim4 = std::pow(std::numbers::pi, -0.25);
    const std::size_t n = order;
    const std::size_t m = (n + 1) / 2;
    double z = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double nd = static_cast<double>(n);
      if (i == 0) {
        z = std::sqrt(2.0 * nd + 1.0) - 1.85575 * std::pow(2.0 * nd + 1.0, -0.16667);
      } else if (i == 1) {
        z -= 1.14 * std::pow(nd, 0.426) / z;
      } else if (i == 2) {
        z = 1.86 * z - 0.86 * nodes[0];
      } else if (i == 3) {
        z = 1.91 * z - 0.91 * nodes[1];
      } else {
        z = 2.0 * z - nodes[i - 2];
      }
      double pp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p1 = pim4, p2 = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double p3 = p2;
          p2 = p1;
          const double jd = static_cast<double>(j);
          p1 = z * std::sqrt(2.0 / (jd + 1.0)) * p2 - std::sqrt(jd / (jd + 1.0)) * p3;
        }
        pp = std::sqrt(2.0 * nd) * p2;
        const double z1 = z;
        z = z1 - p1 / pp;
        if (std::abs(z - z1) <= 1e-15) break;
      }
      nodes[i] = z;
      nodes[n - 1 - i] = -z;
      weights[i] = 2.0 / (pp * pp);
      weights[n - 1 - i] = weights[i];
    }
  }

  /// E_{w ~ N(mean, sd^2)}[f(w)].
  template <class F>
  double expect_normal(double mean, double sd, F&& f) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      acc += weights[i] * f(mean + std::sqrt(2.0) * sd * nodes[i]);
    }
    return acc / std::sqrt(std::numbers::pi);
  }
};

/// grad_m E_{N(m, sigma^2)}[-log p(y | w, x)] by quadrature.
inline double logistic_expected_grad_quadrature(double m, double sigma, double x, std::size_t y,
                                                std::size_t order = 64) {
  const GaussHermite gh(order);
  return gh.expect_normal(m, sigma, [&](double w) { return logistic_grad(w, x, y); });
}

/// The same expectation with caller-supplied standard-normal draws.
inline double logistic_expected_grad_mc(double m, double sigma, double x, std::size_t y,
                                        std::span<const double> eps) {
  double acc = 0.0;
  for (double e : eps) acc += logistic_grad(m + sigma * e, x, y);
  return acc / static_cast<double>(eps.size());
}

struct LogisticExtremeSetup {
  double sigma = 0.05;  // fixed posterior std
  double learning_rate = 0.1;
  std::size_t steps = 100;
  std::size_t n_data = 10;
  std::size_t mc_samples = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("LogisticExtremeSetup: sigma must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("LogisticExtremeSetup: learning_rate must be positive");
    if (steps < 1) throw std::invalid_argument("LogisticExtremeSetup: steps must be >= 1");
    if (n_data < 1) throw std::invalid_argument("LogisticExtremeSetup: n_data must be >= 1");
    if (mc_samples < 1) throw std::invalid_argument("LogisticExtremeSetup: mc_samples must be >= 1");
  }
};

struct LogisticExtremeResult {
  double stability_bound = 0.0;            // KL route with C = 1, sigma0 = sigma
  double w2_bound = 0.0;                   // W2 route without K
  std::vector<double> pac_kl_trajectory;   // KL(N(m_t, s^2) || N(0, s^2)), t = 1..T
  std::vector<double> mean_trajectory;     // m_t, t = 1..T
  std::vector<DeltaRecord> deltas;         // gradient differences of z = (1,1), z_bar = (-1,0)
  Dataset data;
};

/// Full-batch SGD on m with sigma fixed, m_0 = 0. Each step draws mc_samples
/// standard normals shared by every example and by the measured pair.
inline LogisticExtremeResult logistic_extreme_run(const LogisticExtremeSetup& setup) {
  setup.validate();
  LogisticExtremeResult out;
  out.data = gen_two_point(setup.n_data, derive_seed(setup.seed, {1}));
  const EpsilonStream stream(derive_seed(setup.seed, {2}));
  const Example z{{1.0}, 1};
  const Example z_bar{{-1.0}, 0};

  double m = 0.0;
  std::vector<double> eps(setup.mc_samples);
  std::vector<double> alphas;
  for (std::size_t t = 1; t <= setup.steps; ++t) {
    Rng rng(derive_seed(stream.draw(t, 0).seed, {1}));
    rng.fill_normal(eps);

    const double gz = logistic_expected_grad_mc(m, setup.sigma, z.x[0], z.y, eps);
    const double gzb = logistic_expected_grad_mc(m, setup.sigma, z_bar.x[0], z_bar.y, eps);
    DeltaRecord r;
    r.t = t;
    r.delta_m_l2 = std::abs(gzb - gz);  // sigma is fixed: the s block has no gradient
    out.deltas.push_back(r);
    alphas.push_back(setup.learning_rate);

    double g = 0.0;
    for (const Example& e : out.data.examples) g += logistic_expected_grad_mc(m, setup.sigma, e.x[0], e.y, eps);
    g /= static_cast<double>(out.data.size());
    m -= setup.learning_rate * g;

    out.mean_trajectory.push_back(m);
    out.pac_kl_trajectory.push_back(m * m / (2.0 * setup.sigma * setup.sigma));
  }

  // A 1-D update w -> w - a g(w) with |g'| <= 1/4 is at most (1 + a/4)-expansive.
  const std::vector<double> eta(setup.steps, 1.0 + setup.learning_rate / 4.0);
  const ParamDiffBounds diffs = param_diff_bound(out.deltas, eta, alphas, setup.n_data);
  StabilityBoundInputs in;
  in.C = 1.0;
  in.sigma0 = setup.sigma;
  in.n = setup.n_data;
  out.stability_bound = kl_route_bound(diffs, in);
  out.w2_bound = w2_route_bound(diffs, in);
  return out;
}

}  // namespace vibound
