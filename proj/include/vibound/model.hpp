// Mean-field Gaussian variational MLP: the std map, reparameterized weight
// sampling, per-example losses and reverse-mode gradients in weight space.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vibound/gauss_math.hpp"
#include "vibound/random.hpp"

namespace vibound {

enum class Activation { relu, tanh };

struct Architecture {
  std::vector<std::size_t> layer_sizes;  // input dim, hidden dims..., class count
  Activation activation = Activation::relu;
  bool bias = true;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t class_count() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return layer_sizes.size() - 1; }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
      total += layer_sizes[l] * layer_sizes[l + 1] + (bias ? layer_sizes[l + 1] : 0);
    }
    return total;
  }

  void validate() const {
    if (layer_sizes.size() < 2) throw std::invalid_argument("Architecture: need at least two layer sizes");
    for (std::size_t s : layer_sizes) {
      if (s == 0) throw std::invalid_argument("Architecture: layer sizes must be positive");
    }
    if (class_count() < 2) throw std::invalid_argument("Architecture: class count must be at least 2");
  }
};

struct Example {
  std::vector<double> x;
  std::size_t y = 0;

  bool operator==(const Example&) const = default;
};

/// Trainable variational parameters: weights ~ N(m, diag(sigma(s)^2)) with
/// sigma(s) = sigma0 + softplus(s).
struct VarParams {
  std::vector<double> m;
  std::vector<double> s;
  double sigma0 = 0.01;

  std::size_t size() const { return m.size(); }
  bool operator==(const VarParams&) const = default;
};

inline double softplus(double x) {
  // log(1 + e^x) without overflow or loss of precision for large |x|.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Inverse of sigma0 + softplus(.), for initialising s from a target std.
inline double s_for_sigma(double sigma, double sigma0) {
  const double excess = sigma - sigma0;
  if (!(excess > 0.0)) throw std::invalid_argument("s_for_sigma: sigma must exceed sigma0");
  return excess > 30.0 ? excess : std::log(std::expm1(excess));
}

inline std::vector<double> sigma_of(const VarParams& params) {
  std::vector<double> sigma(params.s.size());
  for (std::size_t k = 0; k < sigma.size(); ++k) sigma[k] = params.sigma0 + softplus(params.s[k]);
  return sigma;
}

inline DiagGaussian posterior_of(const VarParams& params) {
  return DiagGaussian(params.m, sigma_of(params));
}

/// w = m + sigma(s) * noise.
inline std::vector<double> sample_weights(const VarParams& params, std::span<const double> noise) {
  if (noise.size() != params.size() || params.s.size() != params.size()) {
    throw std::invalid_argument("sample_weights: noise length " + std::to_string(noise.size()) +
                                " does not match parameter count " + std::to_string(params.size()));
  }
  std::vector<double> w(params.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    w[k] = params.m[k] + (params.sigma0 + softplus(params.s[k])) * noise[k];
  }
  return w;
}

/// He-style initialisation of the means, s chosen so that sigma = init_sigma.
inline VarParams init_params(const Architecture& arch, double sigma0, double init_sigma,
                             std::uint64_t seed) {
  arch.validate();
  VarParams p;
  p.sigma0 = sigma0;
  p.m.resize(arch.parameter_count());
  p.s.assign(arch.parameter_count(), s_for_sigma(init_sigma, sigma0));
  Rng rng(seed);
  std::size_t off = 0;
  for (std::size_t l = 0; l < arch.layer_count(); ++l) {
    const std::size_t in = arch.layer_sizes[l];
    const std::size_t out = arch.layer_sizes[l + 1];
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (std::size_t k = 0; k < in * out; ++k) p.m[off++] = scale * rng.normal();
    if (arch.bias) {
      for (std::size_t k = 0; k < out; ++k) p.m[off++] = 0.0;
    }
  }
  return p;
}

/// Forward/backward buffers for one MLP evaluation. Reusable across calls
/// with the same architecture; not shared between threads.
class MlpWorkspace {
 public:
  explicit MlpWorkspace(const Architecture& arch) {
    for (std::size_t size : arch.layer_sizes) {
      act_.emplace_back(size);
      pre_.emplace_back(size);
      delta_.emplace_back(size);
    }
  }

 private:
  friend class Mlp;
  std::vector<std::vector<double>> act_;    // activations, act_[0] = input
  std::vector<std::vector<double>> pre_;    // pre-activations
  std::vector<std::vector<double>> delta_;  // backprop buffers
};

/// Weight-space MLP. Weights are flattened layer by layer, each layer as a
/// row-major (out x in) matrix followed by its bias vector.
class Mlp {
 public:
  explicit Mlp(Architecture arch) : arch_(std::move(arch)) { arch_.validate(); }

  const Architecture& architecture() const { return arch_; }
  std::size_t parameter_count() const { return arch_.parameter_count(); }

  /// Writes logits into ws and returns a view of them.
  std::span<const double> forward(std::span<const double> w, std::span<const double> x,
                                  MlpWorkspace& ws) const {
    if (w.size() != parameter_count()) {
      throw std::invalid_argument("Mlp: weight vector has length " + std::to_string(w.size()) +
                                  ", expected " + std::to_string(parameter_count()));
    }
    if (x.size() != arch_.input_dim()) throw std::invalid_argument("Mlp: feature dimension mismatch");
    std::copy(x.begin(), x.end(), ws.act_[0].begin());
    std::size_t off = 0;
    const std::size_t layers = arch_.layer_count();
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t in = arch_.layer_sizes[l];
      const std::size_t out = arch_.layer_sizes[l + 1];
      const double* W = w.data() + off;
      const double* b = arch_.bias ? W + in * out : nullptr;
      const std::vector<double>& a = ws.act_[l];
      std::vector<double>& z = ws.pre_[l + 1];
      for (std::size_t i = 0; i < out; ++i) {
        double acc = b ? b[i] : 0.0;
        const double* row = W + i * in;
        for (std::size_t j = 0; j < in; ++j) acc += row[j] * a[j];
        z[i] = acc;
      }
      std::vector<double>& next = ws.act_[l + 1];
      if (l + 1 == layers) {
        std::copy(z.begin(), z.end(), next.begin());
      } else if (arch_.activation == Activation::relu) {
        for (std::size_t i = 0; i < out; ++i) next[i] = z[i] > 0.0 ? z[i] : 0.0;
      } else {
        for (std::size_t i = 0; i < out; ++i) next[i] = std::tanh(z[i]);
      }
      off += in * out + (arch_.bias ? out : 0);
    }
    return ws.act_.back();
  }

  /// -log softmax(logits)[y].
  double nll(std::span<const double> w, const Example& z, MlpWorkspace& ws) const {
    check_label(z);
    return cross_entropy(forward(w, z.x, ws), z.y);
  }

  /// 0 iff the argmax logit (lowest index on ties) equals y.
  int zero_one(std::span<const double> w, const Example& z, MlpWorkspace& ws) const {
    const auto logits = forward(w, z.x, ws);
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.size(); ++k) {
      if (logits[k] > logits[best]) best = k;
    }
    return best == z.y ? 0 : 1;
  }

  /// Returns nll and writes d nll / dw into grad (overwritten).
  double nll_and_grad(std::span<const double> w, const Example& z, std::span<double> grad,
                      MlpWorkspace& ws) const {
    check_label(z);
    if (grad.size() != parameter_count()) throw std::invalid_argument("Mlp: gradient buffer size mismatch");
    const auto logits = forward(w, z.x, ws);
    const double loss = cross_entropy(logits, z.y);

    const std::size_t layers = arch_.layer_count();
    // Output delta: softmax - onehot.
    {
      std::vector<double>& d = ws.delta_[layers];
      const double mx = *std::max_element(logits.begin(), logits.end());
      double sum = 0.0;
      for (std::size_t k = 0; k < logits.size(); ++k) {
        d[k] = std::exp(logits[k] - mx);
        sum += d[k];
      }
      for (std::size_t k = 0; k < logits.size(); ++k) d[k] /= sum;
      d[z.y] -= 1.0;
    }
    std::size_t off = parameter_count();
    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t in = arch_.layer_sizes[l];
      const std::size_t out = arch_.layer_sizes[l + 1];
      off -= in * out + (arch_.bias ? out : 0);
      const double* W = w.data() + off;
      double* gW = grad.data() + off;
      const std::vector<double>& d = ws.delta_[l + 1];
      const std::vector<double>& a = ws.act_[l];
      for (std::size_t i = 0; i < out; ++i) {
        double* grow = gW + i * in;
        for (std::size_t j = 0; j < in; ++j) grow[j] = d[i] * a[j];
      }
      if (arch_.bias) {
        double* gb = gW + in * out;
        for (std::size_t i = 0; i < out; ++i) gb[i] = d[i];
      }
      if (l == 0) break;
      std::vector<double>& dprev = ws.delta_[l];
      std::fill(dprev.begin(), dprev.end(), 0.0);
      for (std::size_t i = 0; i < out; ++i) {
        const double* row = W + i * in;
        for (std::size_t j = 0; j < in; ++j) dprev[j] += row[j] * d[i];
      }
      const std::vector<double>& zprev = ws.pre_[l];
      if (arch_.activation == Activation::relu) {
        for (std::size_t j = 0; j < in; ++j) {
          if (!(zprev[j] > 0.0)) dprev[j] = 0.0;
        }
      } else {
        for (std::size_t j = 0; j < in; ++j) {
          const double t = std::tanh(zprev[j]);
          dprev[j] *= 1.0 - t * t;
        }
      }
    }
    return loss;
  }

 private:
  void check_label(const Example& z) const {
    if (z.y >= arch_.class_count()) {
      throw std::out_of_range("label " + std::to_string(z.y) + " outside [0, " +
                              std::to_string(arch_.class_count()) + ")");
    }
  }

  static double cross_entropy(std::span<const double> logits, std::size_t y) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    return (mx - logits[y]) + std::log(sum);
  }

  Architecture arch_;
};

// Convenience free functions; they allocate a workspace per call.

inline double nll(std::span<const double> w, const Example& z, const Architecture& arch) {
  Mlp net(arch);
  MlpWorkspace ws(arch);
  return net.nll(w, z, ws);
}

inline int zero_one(std::span<const double> w, const Example& z, const Architecture& arch) {
  Mlp net(arch);
  MlpWorkspace ws(arch);
  return net.zero_one(w, z, ws);
}

inline std::vector<double> grad_nll(std::span<const double> w, const Example& z,
                                    const Architecture& arch) {
  Mlp net(arch);
  MlpWorkspace ws(arch);
  std::vector<double> g(arch.parameter_count());
  net.nll_and_grad(w, z, g, ws);
  return g;
}

}  // namespace vibound
