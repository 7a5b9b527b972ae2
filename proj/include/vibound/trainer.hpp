// SGD over variational parameters with all randomness drawn from an
// EpsilonStream, trajectory recording and posterior loss evaluation.
#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vibound/datasets.hpp"
#include "vibound/model.hpp"
#include "vibound/objectives.hpp"
#include "vibound/random.hpp"

namespace vibound {

enum class ScheduleKind { step_decay, logT };

struct TrainConfig {
  double learning_rate = 0.005;  // initial alpha for step_decay
  double momentum = 0.99;        // 0 selects plain SGD
  double lr_decay_factor = 0.9;
  std::size_t lr_decay_every_epochs = 5;
  std::size_t batch_size = 100;
  std::size_t epochs = 1;
  ScheduleKind schedule = ScheduleKind::step_decay;
  double logt_c = 0.1;         // alpha_t = c / ((t+2) log(t+2)) under logT
  double clip_norm = 0.0;      // per-example gradient clipping; 0 disables
  std::size_t snapshot_stride = 1;  // 0 disables parameter snapshots

  void validate(std::size_t n) const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) {
      throw std::invalid_argument("TrainConfig: lr_decay_factor must be in (0,1]");
    }
    if (lr_decay_every_epochs < 1) throw std::invalid_argument("TrainConfig: lr_decay_every_epochs must be >= 1");
    if (batch_size < 1 || batch_size > n) throw std::invalid_argument("TrainConfig: batch_size must be in [1, n]");
    if (schedule == ScheduleKind::logT && !(logt_c > 0.0)) throw std::invalid_argument("TrainConfig: logt_c must be positive");
    if (!(clip_norm >= 0.0)) throw std::invalid_argument("TrainConfig: clip_norm must be nonnegative");
  }

  std::size_t steps_per_epoch(std::size_t n) const { return (n + batch_size - 1) / batch_size; }
  std::size_t total_steps(std::size_t n) const { return epochs * steps_per_epoch(n); }

  /// Learning rate at 1-based step t.
  double alpha(std::size_t t, std::size_t n) const {
    if (schedule == ScheduleKind::logT) {
      const double u = static_cast<double>(t) + 2.0;
      return logt_c / (u * std::log(u));
    }
    const std::size_t epoch = (t - 1) / steps_per_epoch(n);
    return learning_rate * std::pow(lr_decay_factor, static_cast<double>(epoch / lr_decay_every_epochs));
  }
};

struct MomentumState {
  ParamGradient velocity;
};

/// In-place update. Plain mode: theta -= alpha * g. Momentum mode:
/// v = mu * v + g; theta -= alpha * v.
inline void sgd_update(VarParams& params, MomentumState& state, const ParamGradient& g, double alpha,
                       double momentum) {
  const std::size_t d = params.size();
  if (g.m.size() != d || g.s.size() != d || params.s.size() != d) {
    throw std::invalid_argument("sgd_step: gradient dimension mismatch");
  }
  if (momentum == 0.0) {
    for (std::size_t k = 0; k < d; ++k) params.m[k] -= alpha * g.m[k];
    for (std::size_t k = 0; k < d; ++k) params.s[k] -= alpha * g.s[k];
    return;
  }
  if (state.velocity.size() != d) state.velocity = ParamGradient(d);
  auto& v = state.velocity;
  for (std::size_t k = 0; k < d; ++k) {
    v.m[k] = momentum * v.m[k] + g.m[k];
    params.m[k] -= alpha * v.m[k];
  }
  for (std::size_t k = 0; k < d; ++k) {
    v.s[k] = momentum * v.s[k] + g.s[k];
    params.s[k] -= alpha * v.s[k];
  }
}

inline std::pair<VarParams, MomentumState> sgd_step(VarParams params, const ParamGradient& g, double alpha,
                                                    MomentumState state, double momentum = 0.0) {
  sgd_update(params, state, g, alpha, momentum);
  return {std::move(params), std::move(state)};
}

struct StepRecord {
  std::size_t t = 0;
  double alpha = 0.0;
  std::size_t epoch = 0;
  std::size_t batch = 0;  // batch number within the epoch
  std::size_t batch_size = 0;
  // Mean gradient-difference norms at this step, filled in by the stability pass.
  double delta_m_l2 = 0.0;
  double delta_s_l1 = 0.0;
  double delta_s_l2 = 0.0;
};

struct Snapshot {
  std::size_t t = 0;  // parameters after step t (t = 0: initialisation)
  VarParams params;
};

struct Trajectory {
  std::vector<StepRecord> steps;
  std::vector<Snapshot> snapshots;
};

/// One record per line.
inline void write_trajectory(std::ostream& out, const Trajectory& traj) {
  for (const StepRecord& r : traj.steps) {
    nlohmann::ordered_json j;
    j["t"] = r.t;
    j["alpha"] = r.alpha;
    j["epoch"] = r.epoch;
    j["batch"] = r.batch;
    j["batch_size"] = r.batch_size;
    j["delta_m_l2"] = r.delta_m_l2;
    j["delta_s_l1"] = r.delta_s_l1;
    j["delta_s_l2"] = r.delta_s_l2;
    out << j.dump() << '\n';
  }
}

/// What a hook sees before the update of step t.
struct StepContext {
  std::size_t t = 0;
  double alpha = 0.0;
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::span<const std::size_t> indices;  // dataset rows of this batch
  const EpsilonStream* stream = nullptr;

  ExampleDraw draw(std::size_t slot) const { return stream->draw(t, slot); }
};

/// Per-example stochastic gradient oracle: the problem supplies
/// grad F(theta, z_i, eps) for a dataset row and an example draw.
template <class P>
concept GradientOracle = requires(const P& p, const VarParams& theta, std::size_t i, ExampleDraw d,
                                  ParamGradient& g, typename P::Scratch& scratch) {
  { p.size() } -> std::convertible_to<std::size_t>;
  { p.dimension() } -> std::convertible_to<std::size_t>;
  { p.make_scratch() } -> std::same_as<typename P::Scratch>;
  p.prepare(theta, scratch);
  p.example_gradient(i, d, g, scratch);
};

class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(std::size_t step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

using StepHook = std::function<void(const StepContext&, const VarParams&)>;

/// A training run that can be advanced one step at a time, so twin runs can
/// be compared in lockstep.
template <GradientOracle Oracle>
class SgdRun {
 public:
  SgdRun(const Oracle& oracle, VarParams init, TrainConfig cfg, EpsilonStream stream)
      : oracle_(&oracle), cfg_(std::move(cfg)), stream_(stream), params_(std::move(init)),
        scratch_(oracle.make_scratch()), example_grad_(oracle.dimension()), batch_grad_(oracle.dimension()) {
    cfg_.validate(oracle.size());
    if (params_.size() != oracle.dimension() || params_.s.size() != oracle.dimension()) {
      throw std::invalid_argument("SgdRun: initial parameters do not match the problem dimension");
    }
    n_ = oracle.size();
    total_ = cfg_.total_steps(n_);
    if (cfg_.snapshot_stride > 0) traj_.snapshots.push_back({0, params_});
  }

  bool done() const { return t_ >= total_; }
  std::size_t step_index() const { return t_; }
  std::size_t total_steps() const { return total_; }
  const VarParams& params() const { return params_; }
  const MomentumState& momentum_state() const { return momentum_; }
  const Trajectory& trajectory() const { return traj_; }
  Trajectory& trajectory() { return traj_; }
  const TrainConfig& config() const { return cfg_; }

  /// Context of the upcoming step (requires !done()).
  StepContext next_context() {
    const std::size_t t = t_ + 1;
    const std::size_t spe = cfg_.steps_per_epoch(n_);
    const std::size_t epoch = (t - 1) / spe;
    const std::size_t batch = (t - 1) % spe;
    if (epoch != perm_epoch_) {
      perm_ = stream_.permutation(epoch, n_);
      perm_epoch_ = epoch;
    }
    const std::size_t begin = batch * cfg_.batch_size;
    const std::size_t end = std::min(begin + cfg_.batch_size, n_);
    StepContext ctx;
    ctx.t = t;
    ctx.alpha = cfg_.alpha(t, n_);
    ctx.epoch = epoch;
    ctx.batch = batch;
    ctx.indices = std::span<const std::size_t>(perm_.data() + begin, end - begin);
    ctx.stream = &stream_;
    return ctx;
  }

  void step(const StepHook& hook = {}) {
    const StepContext ctx = next_context();
    if (hook) hook(ctx, params_);

    oracle_->prepare(params_, scratch_);
    batch_grad_.set_zero();
    for (std::size_t slot = 0; slot < ctx.indices.size(); ++slot) {
      oracle_->example_gradient(ctx.indices[slot], ctx.draw(slot), example_grad_, scratch_);
      double scale = 1.0;
      if (cfg_.clip_norm > 0.0) {
        const double norm = example_grad_.l2_norm();
        if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
      }
      batch_grad_.add_scaled(example_grad_, scale);
    }
    const double inv_b = 1.0 / static_cast<double>(ctx.indices.size());
    double sq = 0.0;
    for (double& v : batch_grad_.m) {
      v *= inv_b;
      sq += v * v;
    }
    for (double& v : batch_grad_.s) {
      v *= inv_b;
      sq += v * v;
    }
    if (!std::isfinite(sq)) throw TrainingDivergence(ctx.t, "non-finite gradient");

    sgd_update(params_, momentum_, batch_grad_, ctx.alpha, cfg_.momentum);
    t_ = ctx.t;
    traj_.steps.push_back(StepRecord{ctx.t, ctx.alpha, ctx.epoch, ctx.batch, ctx.indices.size(), 0.0, 0.0, 0.0});
    if (cfg_.snapshot_stride > 0 && (t_ % cfg_.snapshot_stride == 0 || t_ == total_)) {
      traj_.snapshots.push_back({t_, params_});
    }
  }

  void run(const StepHook& hook = {}) {
    while (!done()) step(hook);
  }

 private:
  const Oracle* oracle_;
  TrainConfig cfg_;
  EpsilonStream stream_;
  VarParams params_;
  MomentumState momentum_;
  typename Oracle::Scratch scratch_;
  ParamGradient example_grad_;
  ParamGradient batch_grad_;
  Trajectory traj_;
  std::vector<std::size_t> perm_;
  std::size_t perm_epoch_ = static_cast<std::size_t>(-1);
  std::size_t n_ = 0;
  std::size_t total_ = 0;
  std::size_t t_ = 0;
};

struct TrainResult {
  VarParams params;
  Trajectory trajectory;
};

template <GradientOracle Oracle>
TrainResult train(const Oracle& oracle, VarParams init, const TrainConfig& cfg, const EpsilonStream& stream,
                  const StepHook& hook = {}) {
  SgdRun<Oracle> run(oracle, std::move(init), cfg, stream);
  run.run(hook);
  return {run.params(), std::move(run.trajectory())};
}

struct PosteriorConfig {
  double sigma0 = 0.01;      // std floor
  double init_sigma = 0.05;  // initial std
};

/// The variational objective over a dataset, optionally with augmentation.
class VariationalProblem {
 public:
  struct Scratch {
    std::optional<PreparedParams> prepared;
    ObjectiveWorkspace workspace;
    NoiseBlock noise;
  };

  VariationalProblem(std::shared_ptr<const Dataset> data, Architecture arch, ObjectiveConfig obj,
                     PosteriorConfig posterior = {}, AugmentConfig augment = {})
      : data_(std::move(data)), objective_(std::move(arch), std::move(obj)), posterior_(posterior),
        augment_(augment) {
    if (!data_) throw std::invalid_argument("VariationalProblem: null dataset");
    data_->validate();
    if (data_->feature_dim != objective_.architecture().input_dim() ||
        data_->class_count != objective_.architecture().class_count()) {
      throw std::invalid_argument("VariationalProblem: dataset does not match architecture");
    }
  }

  std::size_t size() const { return data_->size(); }
  std::size_t dimension() const { return objective_.dimension(); }
  const Dataset& dataset() const { return *data_; }
  std::shared_ptr<const Dataset> dataset_ptr() const { return data_; }
  const VariationalObjective& objective() const { return objective_; }
  const PosteriorConfig& posterior() const { return posterior_; }
  const AugmentConfig& augmentation() const { return augment_; }

  VarParams initial_params(std::uint64_t seed) const {
    return init_params(objective_.architecture(), posterior_.sigma0, posterior_.init_sigma, seed);
  }

  Scratch make_scratch() const {
    return Scratch{std::nullopt, objective_.make_workspace(), NoiseBlock(objective_.config().mc_samples, dimension())};
  }

  void prepare(const VarParams& theta, Scratch& scratch) const { scratch.prepared.emplace(theta); }

  void example_gradient(std::size_t i, ExampleDraw draw, ParamGradient& g, Scratch& scratch) const {
    gradient_for((*data_)[i], draw, g, scratch);
  }

  /// grad F(theta, z, eps) for an arbitrary example under the given draw;
  /// prepare() must have been called.
  void gradient_for(const Example& z, ExampleDraw draw, ParamGradient& g, Scratch& scratch,
                    bool include_kl = true) const {
    fill_noise(draw, scratch.noise);
    if (augment_.enabled()) {
      const Example za = augment(z, make_augment_draw(draw, augment_, data_->feature_dim));
      objective_.value_and_grad(*scratch.prepared, za, scratch.noise, g, scratch.workspace, include_kl);
    } else {
      objective_.value_and_grad(*scratch.prepared, z, scratch.noise, g, scratch.workspace, include_kl);
    }
  }

  void fill_noise(ExampleDraw draw, NoiseBlock& noise) const {
    Rng rng(derive_seed(draw.seed, {1}));
    rng.fill_normal(noise.data);
  }

 private:
  std::shared_ptr<const Dataset> data_;
  VariationalObjective objective_;
  PosteriorConfig posterior_;
  AugmentConfig augment_;
};

/// Trains from the stream's own initialisation.
inline TrainResult train(const VariationalProblem& problem, const TrainConfig& cfg, const EpsilonStream& stream,
                         const StepHook& hook = {}) {
  return train(problem, problem.initial_params(stream.init_seed()), cfg, stream, hook);
}

enum class LossKind { zero_one, nll };

/// Monte-Carlo estimate of E_{w ~ Q}[mean loss over ds].
inline double posterior_loss(const VarParams& params, const Dataset& ds, const Architecture& arch, LossKind loss,
                             std::size_t n_eval_samples, std::uint64_t seed) {
  if (ds.examples.empty()) throw std::invalid_argument("posterior_loss: empty dataset");
  if (n_eval_samples < 1) throw std::invalid_argument("posterior_loss: need at least one sample");
  const Mlp net(arch);
  MlpWorkspace ws(arch);
  std::vector<double> noise(params.size());
  double total = 0.0;
  for (std::size_t k = 0; k < n_eval_samples; ++k) {
    Rng rng(derive_seed(seed, {k}));
    rng.fill_normal(noise);
    const std::vector<double> w = sample_weights(params, noise);
    double acc = 0.0;
    for (const Example& z : ds.examples) {
      acc += loss == LossKind::zero_one ? static_cast<double>(net.zero_one(w, z, ws)) : net.nll(w, z, ws);
    }
    total += acc / static_cast<double>(ds.size());
  }
  return total / static_cast<double>(n_eval_samples);
}

}  // namespace vibound
