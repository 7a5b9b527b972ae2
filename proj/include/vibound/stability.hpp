// Stability-bound machinery: per-step gradient differences, empirical
// expansion rates, the accumulated parameter-difference bound, and the
// KL-route and Wasserstein-route generalization bounds built on it.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vibound/datasets.hpp"
#include "vibound/objectives.hpp"
#include "vibound/random.hpp"
#include "vibound/trainer.hpp"

namespace vibound {

/// Norms of grad F(theta_{t-1}, z_bar, eps_t) - grad F(theta_{t-1}, z, eps_t),
/// split into the m block and the s block.
struct DeltaRecord {
  std::size_t t = 0;
  double delta_m_l2 = 0.0;
  double delta_s_l1 = 0.0;
  double delta_s_l2 = 0.0;
};

inline DeltaRecord delta_norms(const ParamGradient& a, const ParamGradient& b, std::size_t t = 0) {
  DeltaRecord r;
  r.t = t;
  double m2 = 0.0, s1 = 0.0, s2 = 0.0;
  for (std::size_t k = 0; k < a.m.size(); ++k) {
    const double d = b.m[k] - a.m[k];
    m2 += d * d;
  }
  for (std::size_t k = 0; k < a.s.size(); ++k) {
    const double d = b.s[k] - a.s[k];
    s1 += std::abs(d);
    s2 += d * d;
  }
  r.delta_m_l2 = std::sqrt(m2);
  r.delta_s_l1 = s1;
  r.delta_s_l2 = std::sqrt(s2);
  return r;
}

/// Gradient difference between z and z_bar under one shared noise block.
inline DeltaRecord grad_delta(const VarParams& params_pre, const Example& z, const Example& z_bar,
                              const NoiseBlock& noise, const ObjectiveConfig& cfg, const Architecture& arch) {
  const VariationalObjective obj(arch, cfg);
  auto ws = obj.make_workspace();
  const PreparedParams pp(params_pre);
  ParamGradient gz(obj.dimension()), gzb(obj.dimension());
  obj.value_and_grad(pp, z, noise, gz, ws);
  obj.value_and_grad(pp, z_bar, noise, gzb, ws);
  return delta_norms(gz, gzb);
}

/// (train index, held-out index) pairs, drawn uniformly with replacement.
inline std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::size_t train_n, std::size_t test_n,
                                                                     std::size_t count, std::uint64_t seed) {
  if (count > 0 && (train_n == 0 || test_n == 0)) throw std::invalid_argument("sample_pairs: empty pool");
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> pairs(count);
  for (auto& p : pairs) {
    p.first = static_cast<std::size_t>(rng.below(train_n));
    p.second = static_cast<std::size_t>(rng.below(test_n));
  }
  return pairs;
}

/// Step hook measuring the pair-averaged gradient difference on the
/// pre-update state of every step. Pair k at step t shares
/// stream.pair_draw(t, k) between z and z_bar (noise and augmentation).
class DeltaMeter {
 public:
  DeltaMeter(const VariationalProblem& problem, const Dataset& held_out,
             std::vector<std::pair<std::size_t, std::size_t>> pairs, bool keep_per_pair = false)
      : problem_(&problem), held_out_(&held_out), pairs_(std::move(pairs)), keep_per_pair_(keep_per_pair),
        scratch_(problem.make_scratch()), gz_(problem.dimension()), gzb_(problem.dimension()) {}

  void operator()(const StepContext& ctx, const VarParams& params) {
    DeltaRecord mean;
    mean.t = ctx.t;
    if (!pairs_.empty()) {
      problem_->prepare(params, scratch_);
      for (std::size_t k = 0; k < pairs_.size(); ++k) {
        const ExampleDraw draw = ctx.stream->pair_draw(ctx.t, k);
        problem_->gradient_for(problem_->dataset()[pairs_[k].first], draw, gz_, scratch_);
        problem_->gradient_for((*held_out_)[pairs_[k].second], draw, gzb_, scratch_);
        const DeltaRecord r = delta_norms(gz_, gzb_, ctx.t);
        mean.delta_m_l2 += r.delta_m_l2;
        mean.delta_s_l1 += r.delta_s_l1;
        mean.delta_s_l2 += r.delta_s_l2;
        if (keep_per_pair_) per_pair_.push_back(r);
      }
      const double inv = 1.0 / static_cast<double>(pairs_.size());
      mean.delta_m_l2 *= inv;
      mean.delta_s_l1 *= inv;
      mean.delta_s_l2 *= inv;
    }
    records_.push_back(mean);
  }

  const std::vector<DeltaRecord>& records() const { return records_; }
  /// Row-major (step, pair) when keep_per_pair was set.
  const std::vector<DeltaRecord>& per_pair() const { return per_pair_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const { return pairs_; }

 private:
  const VariationalProblem* problem_;
  const Dataset* held_out_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  bool keep_per_pair_;
  VariationalProblem::Scratch scratch_;
  ParamGradient gz_, gzb_;
  std::vector<DeltaRecord> records_;
  std::vector<DeltaRecord> per_pair_;
};

// Expansion rates

namespace detail {

struct BlockNorms {
  double m_l1 = 0.0, m_l2 = 0.0, s_l1 = 0.0, s_l2 = 0.0;
};

/// Block norms of the state difference. With momentum the velocity is part
/// of the state: m block = (m, v_m), s block = (s, v_s).
inline BlockNorms state_difference(const VarParams& a, const MomentumState& va, const VarParams& b,
                                   const MomentumState& vb, bool with_velocity) {
  BlockNorms n;
  double m2 = 0.0, s2 = 0.0;
  auto acc = [](std::span<const double> x, std::span<const double> y, double& l1, double& l2sq) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double d = x[k] - y[k];
      l1 += std::abs(d);
      l2sq += d * d;
    }
  };
  acc(a.m, b.m, n.m_l1, m2);
  acc(a.s, b.s, n.s_l1, s2);
  if (with_velocity && va.velocity.size() == a.size() && vb.velocity.size() == b.size()) {
    acc(va.velocity.m, vb.velocity.m, n.m_l1, m2);
    acc(va.velocity.s, vb.velocity.s, n.s_l1, s2);
  }
  n.m_l2 = std::sqrt(m2);
  n.s_l2 = std::sqrt(s2);
  return n;
}

inline double ratio_or_one(double num, double den) { return den > 0.0 ? num / den : 1.0; }

}  // namespace detail

/// Per-step expansion rates of twin runs that share the stream but start
/// from different initialisations: eta_t is the largest of the m/s block,
/// L1/L2 ratios ||theta_t - theta'_t|| / ||theta_{t-1} - theta'_{t-1}||.
template <GradientOracle Oracle>
std::vector<double> estimate_expansion(const Oracle& oracle, VarParams init_a, VarParams init_b,
                                       const TrainConfig& cfg, const EpsilonStream& stream) {
  if (init_a == init_b) throw std::invalid_argument("estimate_expansion: initialisations must differ");
  TrainConfig quiet = cfg;
  quiet.snapshot_stride = 0;
  SgdRun<Oracle> a(oracle, std::move(init_a), quiet, stream);
  SgdRun<Oracle> b(oracle, std::move(init_b), quiet, stream);
  const bool with_velocity = cfg.momentum > 0.0;
  std::vector<double> eta;
  eta.reserve(a.total_steps());
  auto prev = detail::state_difference(a.params(), a.momentum_state(), b.params(), b.momentum_state(), with_velocity);
  while (!a.done()) {
    a.step();
    b.step();
    const auto cur =
        detail::state_difference(a.params(), a.momentum_state(), b.params(), b.momentum_state(), with_velocity);
    const double r = std::max({detail::ratio_or_one(cur.m_l1, prev.m_l1), detail::ratio_or_one(cur.m_l2, prev.m_l2),
                               detail::ratio_or_one(cur.s_l1, prev.s_l1), detail::ratio_or_one(cur.s_l2, prev.s_l2)});
    eta.push_back(r);
    prev = cur;
  }
  return eta;
}

/// Twin-run estimate for the variational problem using two init seeds.
inline std::vector<double> estimate_expansion(const VariationalProblem& problem, const TrainConfig& cfg,
                                              const EpsilonStream& stream,
                                              std::pair<std::uint64_t, std::uint64_t> init_seeds) {
  if (init_seeds.first == init_seeds.second) {
    throw std::invalid_argument("estimate_expansion: init seeds must differ");
  }
  return estimate_expansion(problem, problem.initial_params(init_seeds.first),
                            problem.initial_params(init_seeds.second), cfg, stream);
}

struct ExpansionProfile {
  std::vector<double> eta;   // aggregated per-step rate
  std::vector<double> mean;  // per-step mean across runs
  std::vector<double> std;   // per-step population std across runs
  std::size_t runs = 0;

  std::size_t size() const { return eta.size(); }

  /// prod_{i <= t} eta_i for t = 1..T.
  std::vector<double> cumulative() const {
    std::vector<double> c(eta.size());
    double log_acc = 0.0;
    for (std::size_t t = 0; t < eta.size(); ++t) {
      log_acc += std::log(eta[t]);
      c[t] = std::exp(log_acc);
    }
    return c;
  }
};

/// Per-step mean + 4 * (population) std across runs.
inline ExpansionProfile aggregate_expansion(const std::vector<std::vector<double>>& runs) {
  if (runs.size() < 2) throw std::invalid_argument("aggregate_expansion: need at least two runs");
  const std::size_t T = runs.front().size();
  for (const auto& r : runs) {
    if (r.size() != T) throw std::invalid_argument("aggregate_expansion: runs have different lengths");
  }
  ExpansionProfile p;
  p.runs = runs.size();
  p.eta.resize(T);
  p.mean.resize(T);
  p.std.resize(T);
  const double R = static_cast<double>(runs.size());
  for (std::size_t t = 0; t < T; ++t) {
    double mean = 0.0;
    for (const auto& r : runs) mean += r[t];
    mean /= R;
    double var = 0.0;
    for (const auto& r : runs) var += (r[t] - mean) * (r[t] - mean);
    const double sd = std::sqrt(var / R);
    p.mean[t] = mean;
    p.std[t] = sd;
    p.eta[t] = mean + 4.0 * sd;
  }
  return p;
}

/// Bounds on E||m - m_bar||_2, E||sigma - sigma_bar||_1 and E||sigma - sigma_bar||_2.
/// The sigma entries are computed from s-space differences; the softplus std
/// map is 1-Lipschitz, so they upper-bound the sigma-space norms.
struct ParamDiffBounds {
  double m_l2 = 0.0;
  double sigma_l1 = 0.0;
  double sigma_l2 = 0.0;
};

/// log prod_{i=t+1}^{T} eta_i for t = 1..T (index t-1).
inline std::vector<double> log_suffix_products(std::span<const double> eta) {
  std::vector<double> out(eta.size());
  double acc = 0.0;
  for (std::size_t k = eta.size(); k-- > 0;) {
    out[k] = acc;
    if (!(eta[k] > 0.0)) throw std::invalid_argument("expansion rate must be positive at step " + std::to_string(k + 1));
    acc += std::log(eta[k]);
  }
  return out;
}

/// (1/n) sum_t (prod_{i>t} eta_i) alpha_t E[Delta_t], per norm flavour.
inline ParamDiffBounds param_diff_bound(std::span<const DeltaRecord> deltas, std::span<const double> eta,
                                        std::span<const double> alphas, std::size_t n) {
  if (deltas.size() != eta.size() || alphas.size() != eta.size()) {
    throw std::invalid_argument("param_diff_bound: deltas, eta and alphas must have equal length");
  }
  if (n == 0) throw std::invalid_argument("param_diff_bound: n must be positive");
  const auto log_suffix = log_suffix_products(eta);
  ParamDiffBounds b;
  for (std::size_t k = 0; k < eta.size(); ++k) {
    const double w = std::exp(log_suffix[k]) * alphas[k];
    b.m_l2 += w * deltas[k].delta_m_l2;
    b.sigma_l1 += w * deltas[k].delta_s_l1;
    b.sigma_l2 += w * deltas[k].delta_s_l2;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  b.m_l2 *= inv_n;
  b.sigma_l1 *= inv_n;
  b.sigma_l2 *= inv_n;
  return b;
}

struct StabilityBoundInputs {
  double C = 1.0;              // loss bound
  std::optional<double> K;     // Lipschitz constant; absent: reported without K
  double sigma0 = 0.01;
  std::size_t n = 1;
};

namespace detail {

inline void check_diffs(const ParamDiffBounds& d) {
  if (!(d.m_l2 >= 0.0 && d.sigma_l1 >= 0.0 && d.sigma_l2 >= 0.0)) {
    throw std::invalid_argument("stability bound: parameter differences must be nonnegative");
  }
}

}  // namespace detail

/// (2C/sqrt(sigma0)) sqrt(E||dsigma||_1) + (C/sigma0) E||dsigma||_2 + (C/sigma0) E||dm||_2.
inline double kl_route_bound(const ParamDiffBounds& d, const StabilityBoundInputs& in) {
  detail::check_diffs(d);
  if (!(in.C > 0.0) || !(in.sigma0 > 0.0)) throw std::invalid_argument("kl_route_bound: C and sigma0 must be positive");
  return 2.0 * in.C / std::sqrt(in.sigma0) * std::sqrt(d.sigma_l1) + in.C / in.sigma0 * d.sigma_l2 +
         in.C / in.sigma0 * d.m_l2;
}

/// K (E||dm||_2 + E||dsigma||_2), with K = 1 when not supplied.
inline double w2_route_bound(const ParamDiffBounds& d, const StabilityBoundInputs& in) {
  detail::check_diffs(d);
  const double K = in.K.value_or(1.0);
  if (!(K > 0.0)) throw std::invalid_argument("w2_route_bound: K must be positive");
  return K * d.m_l2 + K * d.sigma_l2;
}

/// 2 c beta log(T+1) / (n log 2), valid for alpha_t = c/((t+2) log(t+2)) when cL < 1
/// and every per-example gradient is bounded by beta.
inline double logT_asymptotic_bound(double c, double L, double beta, std::size_t T, std::size_t n) {
  if (!(c > 0.0 && L > 0.0 && beta > 0.0) || T == 0 || n == 0) {
    throw std::invalid_argument("logT_asymptotic_bound: c, L, beta, T, n must be positive");
  }
  if (!(c * L < 1.0)) throw std::invalid_argument("logT_asymptotic_bound: requires c * L < 1");
  return 2.0 * c * beta * std::log(static_cast<double>(T) + 1.0) / (static_cast<double>(n) * std::log(2.0));
}

/// Final differences of two runs on S and S_bar under one stream.
struct PairedDifference {
  double m_l2 = 0.0;
  double s_l1 = 0.0;
  double s_l2 = 0.0;
  double sigma_l1 = 0.0;
  double sigma_l2 = 0.0;
  double theta_l2 = 0.0;  // over the whole (m, s) vector
};

inline PairedDifference parameter_difference(const VarParams& a, const VarParams& b) {
  PairedDifference d;
  const auto sa = sigma_of(a);
  const auto sb = sigma_of(b);
  double m2 = 0.0, s2 = 0.0, g2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double dm = a.m[k] - b.m[k];
    const double ds = a.s[k] - b.s[k];
    const double dg = sa[k] - sb[k];
    m2 += dm * dm;
    d.s_l1 += std::abs(ds);
    s2 += ds * ds;
    d.sigma_l1 += std::abs(dg);
    g2 += dg * dg;
  }
  d.m_l2 = std::sqrt(m2);
  d.s_l2 = std::sqrt(s2);
  d.sigma_l2 = std::sqrt(g2);
  d.theta_l2 = std::sqrt(m2 + s2);
  return d;
}

/// Trains on S and on S_bar from one initialisation and one stream.
template <GradientOracle Oracle>
PairedDifference paired_training(const Oracle& on_s, const Oracle& on_s_bar, const VarParams& init,
                                 const TrainConfig& cfg, const EpsilonStream& stream) {
  TrainConfig quiet = cfg;
  quiet.snapshot_stride = 0;
  const auto a = train(on_s, init, quiet, stream);
  const auto b = train(on_s_bar, init, quiet, stream);
  return parameter_difference(a.params, b.params);
}

}  // namespace vibound
