// Independent reference computations used only by the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "vibound/vibound.hpp"

namespace oracle {

inline double normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

namespace detail {
inline double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                      double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) return left + right + (left + right - whole) / 15.0;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}
}  // namespace detail

/// Adaptive Simpson quadrature on [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-12) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::simpson(f, a, b, fa, fm, fb, whole, tol, 60);
}

/// KL(q || p) of diagonal Gaussians by per-dimension quadrature of q log(q/p).
inline double kl_by_quadrature(const vibound::DiagGaussian& q, const vibound::DiagGaussian& p) {
  double total = 0.0;
  for (std::size_t k = 0; k < q.dimension(); ++k) {
    const double mq = q.mean[k], sq = q.std[k], mp = p.mean[k], sp = p.std[k];
    auto f = [&](double x) {
      const double lq = -0.5 * std::pow((x - mq) / sq, 2) - std::log(sq);
      const double lp = -0.5 * std::pow((x - mp) / sp, 2) - std::log(sp);
      return normal_pdf(x, mq, sq) * (lq - lp);
    };
    // split at the mean so the peak sits on a node
    total += integrate(f, mq - 12.0 * sq, mq, 1e-14) + integrate(f, mq, mq + 12.0 * sq, 1e-14);
  }
  return total;
}

/// 1-D W2 by sorting samples of both laws and pairing quantiles.
inline double w2_quantile_coupling(double m1, double s1, double m2, double s2, std::size_t samples, std::uint64_t seed) {
  vibound::Rng ra(seed), rb(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<double> a(samples), b(samples);
  for (auto& v : a) v = m1 + s1 * ra.normal();
  for (auto& v : b) v = m2 + s2 * rb.normal();
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < samples; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / static_cast<double>(samples));
}

/// Golden-section minimisation of a unimodal function on [a, b].
inline double golden_min(const std::function<double(double)>& f, double a, double b, int iters = 300) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters; ++i) {
    if (fc < fd) {
      b = d; d = c; fd = fc;
      c = b - g * (b - a); fc = f(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + g * (b - a); fd = f(d);
    }
  }
  return f(0.5 * (a + b));
}

/// Forward pass written out independently: per layer z = W a + b, hidden
/// activation, returns -log softmax(z)[y].
inline double mlp_nll(std::span<const double> w, const vibound::Example& z, const vibound::Architecture& arch) {
  std::vector<double> a = z.x;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < arch.layer_sizes.size(); ++l) {
    const std::size_t in = arch.layer_sizes[l], out = arch.layer_sizes[l + 1];
    std::vector<double> next(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t i = 0; i < in; ++i) next[o] += w[off + o * in + i] * a[i];
    }
    off += in * out;
    if (arch.bias) {
      for (std::size_t o = 0; o < out; ++o) next[o] += w[off + o];
      off += out;
    }
    if (l + 2 < arch.layer_sizes.size()) {
      for (double& v : next) v = arch.activation == vibound::Activation::relu ? std::max(v, 0.0) : std::tanh(v);
    }
    a = std::move(next);
  }
  const double mx = *std::max_element(a.begin(), a.end());
  double se = 0.0;
  for (double v : a) se += std::exp(v - mx);
  return -(a[z.y] - mx - std::log(se));
}

/// Random architecture with layer sizes <= max_width.
inline vibound::Architecture random_arch(vibound::Rng& rng, std::size_t max_width, vibound::Activation act) {
  vibound::Architecture arch;
  arch.activation = act;
  const std::size_t hidden_layers = static_cast<std::size_t>(rng.below(3));
  arch.layer_sizes.push_back(1 + rng.below(max_width));
  for (std::size_t h = 0; h < hidden_layers; ++h) arch.layer_sizes.push_back(1 + rng.below(max_width));
  arch.layer_sizes.push_back(2 + rng.below(max_width - 1));
  return arch;
}

inline vibound::Example random_example(vibound::Rng& rng, const vibound::Architecture& arch) {
  vibound::Example z;
  z.x.resize(arch.input_dim());
  for (double& v : z.x) v = rng.normal();
  z.y = static_cast<std::size_t>(rng.below(arch.class_count()));
  return z;
}

/// g(theta) = curvature * theta on both blocks for every example, plus an
/// optional per-example shift on the mean block (g.m = L (m - shift_i)).
struct QuadraticOracle {
  struct Scratch {
    const vibound::VarParams* theta = nullptr;
  };
  std::size_t n = 1;
  std::size_t d = 1;
  double curvature = 1.0;
  std::vector<double> shift;  // empty or n values

  std::size_t size() const { return n; }
  std::size_t dimension() const { return d; }
  Scratch make_scratch() const { return {}; }
  void prepare(const vibound::VarParams& theta, Scratch& s) const { s.theta = &theta; }
  void example_gradient(std::size_t i, vibound::ExampleDraw, vibound::ParamGradient& g, Scratch& s) const {
    const double c = shift.empty() ? 0.0 : shift[i];
    for (std::size_t k = 0; k < d; ++k) {
      g.m[k] = curvature * (s.theta->m[k] - c);
      g.s[k] = curvature * s.theta->s[k];
    }
  }
};

/// Gradient that ignores theta entirely.
struct ConstantOracle {
  struct Scratch {};
  std::size_t n = 1;
  std::size_t d = 1;
  double value = 0.0;

  std::size_t size() const { return n; }
  std::size_t dimension() const { return d; }
  Scratch make_scratch() const { return {}; }
  void prepare(const vibound::VarParams&, Scratch&) const {}
  void example_gradient(std::size_t, vibound::ExampleDraw, vibound::ParamGradient& g, Scratch&) const {
    std::fill(g.m.begin(), g.m.end(), value);
    std::fill(g.s.begin(), g.s.end(), value);
  }
};

inline vibound::VarParams flat_params(std::vector<double> m, std::vector<double> s, double sigma0 = 0.01) {
  vibound::VarParams p;
  p.m = std::move(m);
  p.s = std::move(s);
  p.sigma0 = sigma0;
  return p;
}

}  // namespace oracle
