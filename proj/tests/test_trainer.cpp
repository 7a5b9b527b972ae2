#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <memory>

#include "oracles.hpp"
#include "vibound/trainer.hpp"

using namespace vibound;

namespace {

TrainConfig plain(double lr, std::size_t batch, std::size_t epochs) {
  TrainConfig cfg;
  cfg.learning_rate = lr;
  cfg.momentum = 0.0;
  cfg.lr_decay_factor = 1.0;
  cfg.batch_size = batch;
  cfg.epochs = epochs;
  return cfg;
}

std::shared_ptr<const Dataset> blobs(std::size_t n, double spread, std::uint64_t seed) {
  return std::make_shared<const Dataset>(gen_blobs(n, 2, 2, spread, seed));
}

ObjectiveConfig elbo_config(const Architecture& arch, std::size_t n) {
  ObjectiveConfig obj;
  obj.n = n;
  obj.kl_coefficient = 0.1;
  obj.prior = DiagGaussian::isotropic(std::vector<double>(arch.parameter_count(), 0.0), 1.0);
  return obj;
}

}  // namespace

TEST(SgdStep, ZeroGradientLeavesParametersUnchanged) {
  const auto p = oracle::flat_params({1.0, -2.0, 3.5}, {-1.0, 0.0, 2.0});
  const auto [next, state] = sgd_step(p, ParamGradient(3), 0.3, MomentumState{});
  EXPECT_EQ(next, p);
}

TEST(SgdStep, UnitGradientMovesOneCoordinate) {
  const auto p = oracle::flat_params({1.0, -2.0, 3.5}, {-1.0, 0.0, 2.0});
  ParamGradient g(3);
  g.m[1] = 1.0;
  const auto [next, state] = sgd_step(p, g, 0.25, MomentumState{});
  EXPECT_EQ(next.m[0], 1.0);
  EXPECT_EQ(next.m[1], -2.25);
  EXPECT_EQ(next.m[2], 3.5);
  EXPECT_EQ(next.s, p.s);
}

TEST(SgdStep, PlainStepIsExactlyThetaMinusAlphaG) {
  Rng rng(50);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + rng.below(30);
    auto p = oracle::flat_params(std::vector<double>(d), std::vector<double>(d));
    ParamGradient g(d);
    for (std::size_t k = 0; k < d; ++k) {
      p.m[k] = rng.normal();
      p.s[k] = rng.normal();
      g.m[k] = rng.normal();
      g.s[k] = rng.normal();
    }
    const double alpha = rng.uniform();
    const auto [next, state] = sgd_step(p, g, alpha, MomentumState{});
    for (std::size_t k = 0; k < d; ++k) {
      EXPECT_EQ(next.m[k], p.m[k] - alpha * g.m[k]);
      EXPECT_EQ(next.s[k], p.s[k] - alpha * g.s[k]);
    }
  }
}

TEST(SgdStep, MomentumAccumulatesVelocity) {
  const auto p = oracle::flat_params({0.0}, {0.0});
  ParamGradient g(1);
  g.m[0] = 1.0;
  g.s[0] = -2.0;
  auto [p1, st1] = sgd_step(p, g, 0.1, MomentumState{}, 0.5);
  auto [p2, st2] = sgd_step(p1, g, 0.1, st1, 0.5);
  // v1 = g, v2 = 0.5 g + g
  EXPECT_DOUBLE_EQ(p2.m[0], -0.1 * 1.0 - 0.1 * 1.5);
  EXPECT_DOUBLE_EQ(p2.s[0], 0.1 * 2.0 + 0.1 * 3.0);
  EXPECT_DOUBLE_EQ(st2.velocity.m[0], 1.5);
}

TEST(SgdStep, DimensionMismatchThrows) {
  const auto p = oracle::flat_params({0.0, 1.0}, {0.0, 1.0});
  EXPECT_THROW(sgd_step(p, ParamGradient(3), 0.1, MomentumState{}), std::invalid_argument);
}

TEST(Train, QuadraticFollowsClosedForm) {
  oracle::QuadraticOracle q{8, 3, 2.0, {}};
  const auto init = oracle::flat_params({1.0, -0.5, 2.0}, {0.3, 0.1, -1.0});
  const double alpha = 0.05;
  const auto result = train(q, init, plain(alpha, 8, 40), EpsilonStream(51));
  ASSERT_EQ(result.trajectory.steps.size(), 40u);
  const double factor = std::pow(1.0 - alpha * 2.0, 40.0);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(result.params.m[k], init.m[k] * factor, 1e-12);
    EXPECT_NEAR(result.params.s[k], init.s[k] * factor, 1e-12);
  }
}

TEST(Train, ZeroEpochsReturnsInitialisation) {
  oracle::QuadraticOracle q{4, 2, 1.0, {}};
  const auto init = oracle::flat_params({1.0, 2.0}, {3.0, 4.0});
  const auto result = train(q, init, plain(0.1, 2, 0), EpsilonStream(52));
  EXPECT_EQ(result.params, init);
  EXPECT_TRUE(result.trajectory.steps.empty());
}

TEST(Train, FullBatchIgnoresPermutation) {
  oracle::QuadraticOracle q{16, 2, 1.0, {}};
  for (std::size_t i = 0; i < 16; ++i) q.shift.push_back(0.25 * static_cast<double>(i) - 1.0);
  const auto init = oracle::flat_params({1.0, 2.0}, {0.0, 0.0});
  const auto a = train(q, init, plain(0.1, 16, 10), EpsilonStream(53));
  const auto b = train(q, init, plain(0.1, 16, 10), EpsilonStream(54));
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(a.params.m[k], b.params.m[k], 1e-12);
}

TEST(Train, LastPartialBatchAndEpochCoverage) {
  oracle::QuadraticOracle q{105, 1, 1.0, {}};
  const auto cfg = plain(0.01, 10, 3);
  EXPECT_EQ(cfg.steps_per_epoch(105), 11u);
  std::vector<std::vector<int>> seen(3, std::vector<int>(105, 0));
  std::vector<std::size_t> last_sizes;
  const auto result = train(q, oracle::flat_params({1.0}, {1.0}), cfg, EpsilonStream(55),
                            [&](const StepContext& ctx, const VarParams&) {
                              for (std::size_t i : ctx.indices) ++seen[ctx.epoch][i];
                              if (ctx.batch == 10) last_sizes.push_back(ctx.indices.size());
                            });
  EXPECT_EQ(result.trajectory.steps.size(), 33u);
  for (const auto& epoch : seen) {
    for (int c : epoch) EXPECT_EQ(c, 1);
  }
  EXPECT_EQ(last_sizes, (std::vector<std::size_t>{5, 5, 5}));
}

TEST(Train, ClippingBoundsTheStep) {
  oracle::ConstantOracle c{10, 4, 100.0};
  auto cfg = plain(0.1, 5, 1);
  cfg.clip_norm = 1.0;
  SgdRun<oracle::ConstantOracle> run(c, oracle::flat_params(std::vector<double>(4), std::vector<double>(4)), cfg,
                                     EpsilonStream(56));
  run.step();
  double sq = 0.0;
  for (double v : run.params().m) sq += v * v;
  for (double v : run.params().s) sq += v * v;
  EXPECT_NEAR(std::sqrt(sq), 0.1, 1e-12);
}

TEST(Train, NonFiniteGradientRaisesDivergence) {
  oracle::ConstantOracle c{4, 2, std::numeric_limits<double>::quiet_NaN()};
  try {
    train(c, oracle::flat_params({0.0, 0.0}, {0.0, 0.0}), plain(0.1, 2, 1), EpsilonStream(57));
    FAIL() << "expected divergence";
  } catch (const TrainingDivergence& e) {
    EXPECT_EQ(e.step(), 1u);
  }
}

TEST(TrainConfig, ValidationAndSchedules) {
  auto cfg = plain(0.1, 10, 1);
  EXPECT_THROW(cfg.validate(5), std::invalid_argument);
  cfg.batch_size = 5;
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(5), std::invalid_argument);

  TrainConfig step;
  step.learning_rate = 0.5;
  step.lr_decay_factor = 0.5;
  step.lr_decay_every_epochs = 2;
  step.batch_size = 10;
  // 100 examples: 10 steps per epoch, decay every 20 steps
  EXPECT_EQ(step.alpha(1, 100), 0.5);
  EXPECT_EQ(step.alpha(20, 100), 0.5);
  EXPECT_EQ(step.alpha(21, 100), 0.25);
  EXPECT_EQ(step.alpha(41, 100), 0.125);

  TrainConfig logt;
  logt.schedule = ScheduleKind::logT;
  logt.logt_c = 0.7;
  for (std::size_t t : {1u, 2u, 10u, 1000u}) {
    const double u = static_cast<double>(t) + 2.0;
    EXPECT_DOUBLE_EQ(logt.alpha(t, 100), 0.7 / (u * std::log(u)));
  }
}

TEST(VariationalTraining, DeterministicGivenStream) {
  const auto data = blobs(60, 0.5, 58);
  const Architecture arch{{2, 4, 2}, Activation::relu, true};
  const VariationalProblem problem(data, arch, elbo_config(arch, 60));
  TrainConfig cfg = plain(0.05, 10, 2);
  cfg.momentum = 0.9;
  const auto a = train(problem, cfg, EpsilonStream(59));
  const auto b = train(problem, cfg, EpsilonStream(59));
  const auto c = train(problem, cfg, EpsilonStream(60));
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params, c.params);
}

TEST(VariationalTraining, SeparableBlobsAreLearned) {
  const auto data = blobs(200, 0.3, 61);
  const Architecture arch{{2, 8, 2}, Activation::relu, true};
  const VariationalProblem problem(data, arch, elbo_config(arch, 200));
  TrainConfig cfg = plain(0.05, 20, 20);
  cfg.momentum = 0.9;
  const auto result = train(problem, cfg, EpsilonStream(62));
  EXPECT_EQ(result.trajectory.steps.size(), 200u);
  EXPECT_LT(posterior_loss(result.params, *data, arch, LossKind::zero_one, 10, 63), 0.05);
}

TEST(PosteriorLoss, RangeAndDegenerateLimit) {
  const auto data = blobs(50, 1.0, 64);
  const Architecture arch{{2, 3, 2}, Activation::tanh, true};
  auto params = init_params(arch, 1e-300, 0.5, 65);
  const double err = posterior_loss(params, *data, arch, LossKind::zero_one, 20, 66);
  EXPECT_GE(err, 0.0);
  EXPECT_LE(err, 1.0);

  // Collapse the posterior onto its mean.
  for (double& s : params.s) s = -800.0;
  double mean_nll = 0.0;
  for (const auto& z : data->examples) mean_nll += oracle::mlp_nll(params.m, z, arch);
  mean_nll /= 50.0;
  EXPECT_NEAR(posterior_loss(params, *data, arch, LossKind::nll, 3, 67), mean_nll, 1e-12);
}

TEST(PosteriorLoss, VarianceShrinksWithSamples) {
  const auto data = blobs(20, 1.0, 68);
  const Architecture arch{{2, 3, 2}, Activation::tanh, true};
  const auto params = init_params(arch, 0.01, 0.8, 69);
  auto variance = [&](std::size_t k, std::uint64_t base) {
    const std::size_t R = 400;
    std::vector<double> v(R);
    double mean = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      v[r] = posterior_loss(params, *data, arch, LossKind::nll, k, derive_seed(base, {r}));
      mean += v[r] / R;
    }
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean) / (R - 1);
    return var;
  };
  const double ratio = variance(1, 70) / variance(2, 71);
  EXPECT_GE(ratio, 1.5);
  EXPECT_LE(ratio, 2.5);
}
