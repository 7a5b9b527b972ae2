// Per-example ELBO and DLM objectives over (m, s) with externally supplied
// reparameterization noise, and their exact pathwise gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vibound/gauss_math.hpp"
#include "vibound/model.hpp"
#include "vibound/random.hpp"

namespace vibound {

enum class ObjectiveKind { elbo, dlm };

inline const char* to_string(ObjectiveKind k) { return k == ObjectiveKind::elbo ? "elbo" : "dlm"; }

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::elbo;
  double kl_coefficient = 0.1;  // multiplies the KL term only
  std::size_t n = 1;            // dataset size in the 1/n KL weight
  std::size_t mc_samples = 1;
  DiagGaussian prior;

  void validate(std::size_t dimension) const {
    if (mc_samples < 1) throw std::invalid_argument("ObjectiveConfig: mc_samples must be >= 1");
    if (n < 1) throw std::invalid_argument("ObjectiveConfig: n must be >= 1");
    if (!(kl_coefficient >= 0.0)) throw std::invalid_argument("ObjectiveConfig: kl_coefficient must be >= 0");
    prior.validate();
    if (prior.dimension() != dimension) {
      throw std::invalid_argument("ObjectiveConfig: prior dimension " + std::to_string(prior.dimension()) +
                                  " does not match parameter count " + std::to_string(dimension));
    }
  }
};

/// mc_samples x d matrix of standard-normal reparameterization draws.
struct NoiseBlock {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  NoiseBlock() = default;
  NoiseBlock(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }

  /// Noise belonging to an example draw. Augmentation uses a disjoint sub-seed.
  static NoiseBlock from_draw(ExampleDraw draw, std::size_t mc_samples, std::size_t d) {
    NoiseBlock block(mc_samples, d);
    Rng rng(derive_seed(draw.seed, {1}));
    rng.fill_normal(block.data);
    return block;
  }
};

/// Gradient over the (m, s) blocks.
struct ParamGradient {
  std::vector<double> m;
  std::vector<double> s;

  ParamGradient() = default;
  explicit ParamGradient(std::size_t d) : m(d, 0.0), s(d, 0.0) {}

  std::size_t size() const { return m.size(); }
  void set_zero() {
    std::fill(m.begin(), m.end(), 0.0);
    std::fill(s.begin(), s.end(), 0.0);
  }
  void add_scaled(const ParamGradient& other, double scale) {
    for (std::size_t k = 0; k < m.size(); ++k) m[k] += scale * other.m[k];
    for (std::size_t k = 0; k < s.size(); ++k) s[k] += scale * other.s[k];
  }
  double l2_norm() const {
    double acc = 0.0;
    for (double v : m) acc += v * v;
    for (double v : s) acc += v * v;
    return std::sqrt(acc);
  }
  bool operator==(const ParamGradient&) const = default;
};

/// sigma(s) and d sigma / d s, computed once per parameter state.
struct PreparedParams {
  const VarParams* params = nullptr;
  std::vector<double> sigma;
  std::vector<double> dsigma;

  explicit PreparedParams(const VarParams& p) : params(&p), sigma(p.size()), dsigma(p.size()) {
    if (p.s.size() != p.m.size()) throw std::invalid_argument("VarParams: m and s lengths differ");
    for (std::size_t k = 0; k < p.size(); ++k) {
      sigma[k] = p.sigma0 + softplus(p.s[k]);
      dsigma[k] = sigmoid(p.s[k]);
    }
  }
};

namespace detail {

inline double kl_prior(const PreparedParams& pp, const DiagGaussian& prior, ParamGradient* grad, double scale) {
  const VarParams& p = *pp.params;
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double sp = prior.std[k];
    const double var_p = sp * sp;
    const double dm = p.m[k] - prior.mean[k];
    const double sg = pp.sigma[k];
    kl += std::log(sp / sg) + (sg * sg + dm * dm) / (2.0 * var_p) - 0.5;
    if (grad) {
      grad->m[k] += scale * dm / var_p;
      grad->s[k] += scale * (sg / var_p - 1.0 / sg) * pp.dsigma[k];
    }
  }
  return kl;
}

}  // namespace detail

class ObjectiveWorkspace {
 public:
  ObjectiveWorkspace(const Architecture& arch, std::size_t mc_samples)
      : mlp(arch), w(arch.parameter_count()), sample_grads(mc_samples * arch.parameter_count()),
        losses(mc_samples) {}

  MlpWorkspace mlp;
  std::vector<double> w;
  std::vector<double> sample_grads;
  std::vector<double> losses;
};

/// F(theta, z) for ELBO or DLM:
///   ELBO: mean_k nll(m + sigma*eps_k, z)               + (beta/n) KL(Q || prior)
///   DLM:  -log mean_k exp(-nll(m + sigma*eps_k, z))    + (beta/n) KL(Q || prior)
class VariationalObjective {
 public:
  VariationalObjective(Architecture arch, ObjectiveConfig cfg) : net_(std::move(arch)), cfg_(std::move(cfg)) {
    cfg_.validate(net_.parameter_count());
  }

  const Mlp& net() const { return net_; }
  const Architecture& architecture() const { return net_.architecture(); }
  const ObjectiveConfig& config() const { return cfg_; }
  std::size_t dimension() const { return net_.parameter_count(); }

  ObjectiveWorkspace make_workspace() const { return ObjectiveWorkspace(architecture(), cfg_.mc_samples); }

  /// Closed-form KL(Q || prior); adds scale * gradient into grad when given.
  double kl_to_prior(const PreparedParams& pp, ParamGradient* grad, double scale) const {
    return detail::kl_prior(pp, cfg_.prior, grad, scale);
  }

  double kl_weight() const { return cfg_.kl_coefficient / static_cast<double>(cfg_.n); }

  /// Data term only (no KL).
  double data_term(const PreparedParams& pp, const Example& z, const NoiseBlock& noise,
                   ObjectiveWorkspace& ws) const {
    check_noise(noise);
    const std::size_t K = noise.rows;
    for (std::size_t k = 0; k < K; ++k) {
      reparameterize(pp, noise.row(k), ws.w);
      ws.losses[k] = net_.nll(ws.w, z, ws.mlp);
    }
    return combine(ws.losses, K, nullptr);
  }

  double value(const PreparedParams& pp, const Example& z, const NoiseBlock& noise,
               ObjectiveWorkspace& ws) const {
    const double data = data_term(pp, z, noise, ws);
    return data + kl_weight() * kl_to_prior(pp, nullptr, 0.0);
  }

  /// Writes the full gradient of value() into grad and returns the value.
  /// With include_kl = false only the data term is differentiated.
  double value_and_grad(const PreparedParams& pp, const Example& z, const NoiseBlock& noise,
                        ParamGradient& grad, ObjectiveWorkspace& ws, bool include_kl = true) const {
    check_noise(noise);
    const std::size_t K = noise.rows;
    const std::size_t d = dimension();
    if (grad.size() != d) grad = ParamGradient(d);
    for (std::size_t k = 0; k < K; ++k) {
      reparameterize(pp, noise.row(k), ws.w);
      std::span<double> gk(ws.sample_grads.data() + k * d, d);
      ws.losses[k] = net_.nll_and_grad(ws.w, z, gk, ws.mlp);
    }
    std::vector<double>& weights = ws.losses;  // overwritten with sample weights by combine()
    const double data = combine(ws.losses, K, &weights);

    grad.set_zero();
    for (std::size_t k = 0; k < K; ++k) {
      const double wk = weights[k];
      const double* gk = ws.sample_grads.data() + k * d;
      const auto eps = noise.row(k);
      for (std::size_t j = 0; j < d; ++j) {
        grad.m[j] += wk * gk[j];
        grad.s[j] += wk * gk[j] * eps[j];
      }
    }
    for (std::size_t j = 0; j < d; ++j) grad.s[j] *= pp.dsigma[j];

    if (!include_kl) return data;
    const double kw = kl_weight();
    return data + kw * kl_to_prior(pp, &grad, kw);
  }

 private:
  void check_noise(const NoiseBlock& noise) const {
    if (noise.rows == 0) throw std::invalid_argument("objective: empty noise block");
    if (noise.rows > cfg_.mc_samples) {
      throw std::invalid_argument("objective: noise block has more rows than mc_samples");
    }
    if (noise.cols != dimension()) throw std::invalid_argument("objective: noise block width mismatch");
  }

  static void reparameterize(const PreparedParams& pp, std::span<const double> eps, std::vector<double>& w) {
    const VarParams& p = *pp.params;
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = p.m[j] + pp.sigma[j] * eps[j];
  }

  /// Combines per-sample losses into the data term. If weights is given, it
  /// receives d(data)/d(loss_k) (may alias losses).
  double combine(const std::vector<double>& losses, std::size_t K, std::vector<double>* weights) const {
    if (cfg_.kind == ObjectiveKind::elbo) {
      double sum = 0.0;
      for (std::size_t k = 0; k < K; ++k) sum += losses[k];
      const double value = sum / static_cast<double>(K);
      if (weights) {
        for (std::size_t k = 0; k < K; ++k) (*weights)[k] = 1.0 / static_cast<double>(K);
      }
      return value;
    }
    // -log mean exp(-loss), max-shifted.
    double mx = -losses[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, -losses[k]);
    double sum = 0.0;
    std::vector<double> e(K);
    for (std::size_t k = 0; k < K; ++k) {
      e[k] = std::exp(-losses[k] - mx);
      sum += e[k];
    }
    const double value = -(mx + std::log(sum / static_cast<double>(K)));
    if (weights) {
      for (std::size_t k = 0; k < K; ++k) (*weights)[k] = e[k] / sum;
    }
    return value;
  }

  Mlp net_;
  ObjectiveConfig cfg_;
};

// Free-function forms.

inline double objective_value(const VarParams& params, const Example& z, const NoiseBlock& noise,
                              const ObjectiveConfig& cfg, const Architecture& arch) {
  VariationalObjective obj(arch, cfg);
  auto ws = obj.make_workspace();
  return obj.value(PreparedParams(params), z, noise, ws);
}

inline ParamGradient objective_grad(const VarParams& params, const Example& z, const NoiseBlock& noise,
                                    const ObjectiveConfig& cfg, const Architecture& arch) {
  VariationalObjective obj(arch, cfg);
  auto ws = obj.make_workspace();
  ParamGradient g(obj.dimension());
  obj.value_and_grad(PreparedParams(params), z, noise, g, ws);
  return g;
}

/// KL(Q || prior) and its gradient in (m, s), unscaled.
inline std::pair<double, ParamGradient> kl_to_prior_grad(const VarParams& params, const ObjectiveConfig& cfg) {
  cfg.prior.validate();
  if (cfg.prior.dimension() != params.size() || params.s.size() != params.size()) {
    throw std::invalid_argument("kl_to_prior_grad: dimension mismatch");
  }
  const PreparedParams pp(params);
  ParamGradient g(params.size());
  const double kl = detail::kl_prior(pp, cfg.prior, &g, 1.0);
  return {kl > 0.0 ? kl : 0.0, std::move(g)};
}

}  // namespace vibound
