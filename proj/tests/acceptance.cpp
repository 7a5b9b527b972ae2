// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Usage: acceptance <path to vibound CLI>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "paired.hpp"
#include "vibound/vibound.hpp"

using namespace vibound;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  std::array<char, 512> buf{};
  std::snprintf(buf.data(), buf.size(), f, args...);
  return buf.data();
}

DiagGaussian random_gauss(Rng& rng, std::size_t d, double lo, double hi) {
  std::vector<double> m(d), s(d);
  for (std::size_t k = 0; k < d; ++k) {
    m[k] = rng.normal();
    s[k] = lo + (hi - lo) * rng.uniform();
  }
  return DiagGaussian(m, s);
}

Outcome chain_rule_kl() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto doc = cmd_counterexamples();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto kls = bernoulli_chain_kls({});
  const bool ok = std::abs(kls.joint_kl - 0.173) <= 1e-3 && std::abs(kls.marginal_plus_conditional - 0.081) <= 1e-3 &&
                  kls.joint_kl > kls.marginal_plus_conditional && doc["checks"][0]["status"] == "PASS" &&
                  doc["checks"][1]["status"] == "PASS" && secs < 1.0;
  return {ok, fmt("joint KL %.6f, marginal+conditional %.6f, %.3f s", kls.joint_kl, kls.marginal_plus_conditional, secs)};
}

Outcome two_point() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  double largest_final_kl = 0.0;
  for (std::size_t steps : {10u, 100u, 1000u}) {
    for (double lr : {0.01, 0.1}) {
      LogisticExtremeSetup setup;
      setup.steps = steps;
      setup.learning_rate = lr;
      const auto run = logistic_extreme_run(setup);
      ok = ok && run.stability_bound == 0.0;
      for (std::size_t t = 1; t < run.pac_kl_trajectory.size(); ++t) {
        ok = ok && run.pac_kl_trajectory[t] > run.pac_kl_trajectory[t - 1];
      }
      for (std::size_t t = 0; t < steps; ++t) {
        const double m = run.mean_trajectory[t];
        ok = ok && run.pac_kl_trajectory[t] == m * m / (2.0 * setup.sigma * setup.sigma);
      }
      if (steps == 1000 && lr == 0.1) largest_final_kl = run.pac_kl_trajectory.back();
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ok = ok && largest_final_kl > 1e3 && secs < 10.0;
  return {ok, fmt("stability bound 0 in all 6 runs: %s, final KL %.1f, %.2f s", ok ? "yes" : "no", largest_final_kl, secs)};
}

Outcome closed_forms() {
  Rng rng(301);
  double worst_kl = 0.0, worst_w2 = 0.0;
  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng.below(5);
    const auto q = random_gauss(rng, d, 0.3, 2.0);
    const auto p = random_gauss(rng, d, 0.3, 2.0);
    const double quad = oracle::kl_by_quadrature(q, p);
    worst_kl = std::max(worst_kl, std::abs(kl_diag_gauss(q, p) - quad) / std::abs(quad));
  }
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = random_gauss(rng, 1, 0.2, 2.0);
    const auto p = random_gauss(rng, 1, 0.2, 2.0);
    const double mc = oracle::w2_quantile_coupling(q.mean[0], q.std[0], p.mean[0], p.std[0], 1000000,
                                                   5000 + static_cast<std::uint64_t>(trial));
    const double closed = w2_diag_gauss(q, p);
    worst_w2 = std::max(worst_w2, std::abs(closed - mc) / closed);
  }
  const double s0 = 0.01;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng.below(6);
    const auto q = random_gauss(rng, d, s0, 10.0 * s0);
    auto p = random_gauss(rng, d, s0, 10.0 * s0);
    for (std::size_t k = 0; k < d; ++k) p.mean[k] = q.mean[k] + 0.05 * rng.normal();
    if (kl_upper_bound(q, p, s0) < kl_diag_gauss(q, p)) ++violations;
  }
  const bool ok = worst_kl <= 1e-6 && worst_w2 <= 1e-2 && violations == 0;
  return {ok, fmt("max rel KL err %.2e, max rel W2 err %.2e, upper-bound violations %d", worst_kl, worst_w2, violations)};
}

Outcome gradients() {
  Rng rng(302);
  double worst = 0.0;
  std::size_t probed = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto arch = oracle::random_arch(rng, 16, trial % 3 == 0 ? Activation::relu : Activation::tanh);
    for (ObjectiveKind kind : {ObjectiveKind::elbo, ObjectiveKind::dlm}) {
      ObjectiveConfig cfg;
      cfg.kind = kind;
      cfg.kl_coefficient = 0.5;
      cfg.n = 7;
      cfg.mc_samples = 1 + rng.below(4);
      cfg.prior = DiagGaussian::isotropic(std::vector<double>(arch.parameter_count(), 0.0), 1.0);
      VarParams p;
      p.sigma0 = 0.01;
      for (std::size_t k = 0; k < arch.parameter_count(); ++k) {
        p.m.push_back(0.5 * rng.normal());
        p.s.push_back(-2.0 + 0.5 * rng.normal());
      }
      const auto z = oracle::random_example(rng, arch);
      NoiseBlock noise(cfg.mc_samples, arch.parameter_count());
      rng.fill_normal(noise.data);
      const auto g = objective_grad(p, z, noise, cfg, arch);
      const double h = 1e-6;
      for (std::size_t k = 0; k < p.size(); ++k) {
        for (int block = 0; block < 2; ++block) {
          double& x = block == 0 ? p.m[k] : p.s[k];
          const double x0 = x;
          x = x0 + h;
          const double fp = objective_value(p, z, noise, cfg, arch);
          x = x0 - h;
          const double fm = objective_value(p, z, noise, cfg, arch);
          x = x0;
          const double an = block == 0 ? g.m[k] : g.s[k];
          // relative error with a floor for coordinates whose gradient is ~0
          worst = std::max(worst, std::abs((fp - fm) / (2 * h) - an) / std::max(std::abs(an), 1e-3));
          ++probed;
        }
      }
    }
  }
  return {worst <= 1e-4, fmt("%zu coordinates probed, max rel err %.2e", probed, worst)};
}

Outcome diff_soundness() {
  const auto t0 = std::chrono::steady_clock::now();
  int held = 0;
  double tightest = 0.0;
  for (std::uint64_t seed = 1000; seed < 1050; ++seed) {
    const auto trial = paired::diff_trial(seed);
    const bool ok = trial.measured.m_l2 <= trial.bound.m_l2 && trial.measured.sigma_l1 <= trial.bound.sigma_l1 &&
                    trial.measured.sigma_l2 <= trial.bound.sigma_l2;
    held += ok;
    tightest = std::max(tightest, trial.measured.m_l2 / trial.bound.m_l2);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {held == 50 && secs < 120.0,
          fmt("%d/50 trials within bound (largest measured/bound ratio %.3f), %.1f s", held, tightest, secs)};
}

Outcome logt_soundness() {
  int held = 0;
  double tightest = 0.0;
  for (std::uint64_t seed = 2000; seed < 2020; ++seed) {
    const auto trial = paired::logt_trial(seed);
    held += trial.c * trial.L < 1.0 && trial.measured <= trial.bound;
    tightest = std::max(tightest, trial.measured / trial.bound);
  }
  return {held == 20, fmt("%d/20 trials within closed form (largest ratio %.3f)", held, tightest)};
}

Outcome expansion_analytics() {
  double worst = 0.0;
  for (double alpha : {0.01, 0.2, 0.5, 0.9, 1.5}) {
    oracle::QuadraticOracle q{8, 4, 1.3, {}};
    TrainConfig cfg;
    cfg.learning_rate = alpha;
    cfg.momentum = 0.0;
    cfg.lr_decay_factor = 1.0;
    cfg.batch_size = 4;
    cfg.epochs = 10;
    const auto eta = estimate_expansion(q, oracle::flat_params({1, 2, 3, 4}, {0, 0, 1, 0}),
                                        oracle::flat_params({0, -1, 3, 2}, {1, 1, 1, 1}), cfg, EpsilonStream(303));
    for (double e : eta) worst = std::max(worst, std::abs(e - std::abs(1.0 - alpha * 1.3)));
  }
  oracle::ConstantOracle c{8, 3, 0.0};
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 5;
  const auto eta = estimate_expansion(c, oracle::flat_params({1, 2, 3}, {0, 0, 0}),
                                      oracle::flat_params({1, 2, 4}, {0, 1, 0}), cfg, EpsilonStream(304));
  bool unit = !eta.empty();
  for (double e : eta) unit = unit && e == 1.0;
  return {worst <= 1e-9 && unit, fmt("max |eta - |1 - alpha L|| %.2e, zero-gradient rates all 1: %s", worst, unit ? "yes" : "no")};
}

std::map<std::string, std::string> ordering_task(std::uint64_t seed) {
  return {{"n_train", "2000"},      {"n_test", "1000"},    {"classes", "10"},    {"feature_dim", "8"},
          {"spread", "0.5"},        {"hidden", "32"},      {"epochs", "20"},     {"expansion_runs", "3"},
          {"run_count", "2"},       {"pair_count", "10"},  {"eval_samples", "5"}, {"seed", std::to_string(seed)}};
}

Outcome random_label_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  int bound_wins = 0, gap_wins = 0;
  std::string rows;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto cfg = config_from_pairs(ordering_task(seed));
    const auto clean = run_condition(cfg, {ObjectiveKind::elbo, 0.0, false}).report;
    const auto noisy = run_condition(cfg, {ObjectiveKind::elbo, 0.5, false}).report;
    bound_wins += noisy.stability_kl > clean.stability_kl;
    gap_wins += noisy.gap_zero_one > clean.gap_zero_one;
    rows += fmt(" [%llu: %.3g vs %.3g]", static_cast<unsigned long long>(seed), noisy.stability_kl, clean.stability_kl);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {bound_wins >= 9 && gap_wins >= 9 && secs < 900.0,
          fmt("random-label bound larger in %d/10, gap larger in %d/10, %.0f s;", bound_wins, gap_wins, secs) + rows};
}

Outcome objective_ordering() {
  int wins = 0;
  std::string rows;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto kv = ordering_task(seed);
    kv["mc_samples_dlm"] = "8";
    const auto cfg = config_from_pairs(kv);
    const auto elbo = run_condition(cfg, {ObjectiveKind::elbo, 0.0, false}).report;
    const auto dlm = run_condition(cfg, {ObjectiveKind::dlm, 0.0, false}).report;
    wins += dlm.stability_w2 >= elbo.stability_w2;
    rows += fmt(" [%llu: dlm %.3g elbo %.3g]", static_cast<unsigned long long>(seed), dlm.stability_w2, elbo.stability_w2);
  }
  return {wins >= 7, fmt("DLM W2 bound >= ELBO in %d/10;", wins) + rows};
}

Outcome pac_bayes_calculators() {
  Rng rng(305);
  PacBayesConfig cfg;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const double kl = 100.0 * rng.uniform();
    const std::size_t n = 2 + rng.below(50000);
    const double numeric =
        oracle::golden_min([&](double u) { return germain_bound(kl, cfg, n, std::exp(u)); }, -10.0, 20.0);
    const double closed = germain_bound(kl, cfg, n);
    worst = std::max(worst, std::abs(numeric - closed) / closed);
  }
  const std::size_t j_max = union_bound_j_max(cfg);
  int agree = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + rng.below(20);
    std::vector<double> mean(d), sd(d), m0(d);
    for (std::size_t k = 0; k < d; ++k) {
      mean[k] = 0.1 * rng.normal();
      sd[k] = 0.01 + 0.3 * rng.uniform();
      m0[k] = 0.1 * rng.normal();
    }
    const DiagGaussian q(mean, sd);
    const std::size_t n = 100 + rng.below(10000);
    const auto result = union_bound(q, m0, cfg, n);
    std::size_t best_j = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j <= 10 * j_max; ++j) {
      const double lambda = cfg.union_c * std::exp(-static_cast<double>(j) / cfg.union_b);
      const double kl = kl_diag_gauss(q, DiagGaussian::isotropic(m0, std::sqrt(lambda)));
      const double value = std::sqrt((kl + 2.0 * std::log(static_cast<double>(j)) +
                                      std::log(std::numbers::pi * std::numbers::pi * n / (6.0 * cfg.delta))) /
                                     (2.0 * (n - 1.0)));
      if (value < best) {
        best = value;
        best_j = j;
      }
    }
    agree += result.j == best_j;
  }
  return {worst <= 1e-6 && agree == 20, fmt("Germain max rel err %.2e, union minimiser agrees on %d/20", worst, agree)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& cli, const std::string& args, const fs::path& stdout_file) {
  const std::string cmd = "\"" + cli + "\" " + args + " > \"" + stdout_file.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

Outcome reproducibility(const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / "vibound_acceptance_repro";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path config = root / "run.cfg";
  {
    std::ofstream out(config);
    out << "n_train = 200\nn_test = 100\nclasses = 3\nfeature_dim = 4\nhidden = 8\nepochs = 3\nbatch_size = 50\n"
           "pair_count = 5\nrun_count = 2\nexpansion_runs = 2\neval_samples = 3\nmomentum = 0.9\n"
           "learning_rate = 0.05\nrandom_label_fractions = 0, 0.5\n";
  }
  const std::vector<std::string> commands = {"expansion", "bound", "compare", "counterexamples", "pacbayes"};
  std::size_t files = 0, mismatches = 0;
  int failures = 0;
  for (const auto& command : commands) {
    for (const char* side : {"a", "b"}) {
      const fs::path dir = root / command / side;
      fs::create_directories(dir);
      const std::string args = command + " --config \"" + config.string() + "\" --out \"" + dir.string() +
                               "\" --seed 11 --format json";
      failures += run_cli(cli, args, root / (command + "_" + side + ".stdout")) != 0;
    }
    if (slurp(root / (command + "_a.stdout")) != slurp(root / (command + "_b.stdout"))) ++mismatches;
    for (const auto& entry : fs::directory_iterator(root / command / "a")) {
      ++files;
      if (slurp(entry.path()) != slurp(root / command / "b" / entry.path().filename())) ++mismatches;
    }
  }

  // Recompute every bound summary number from the emitted traces.
  std::size_t recomputed = 0, differing = 0;
  const auto cfg = config_from_pairs(
      {{"n_train", "200"}, {"n_test", "100"}, {"classes", "3"}, {"feature_dim", "4"}, {"hidden", "8"},
       {"epochs", "3"}, {"batch_size", "50"}, {"pair_count", "5"}, {"run_count", "2"}, {"expansion_runs", "2"},
       {"eval_samples", "3"}, {"momentum", "0.9"}, {"learning_rate", "0.05"}, {"seed", "11"}});
  const fs::path dir = root / "bound" / "a";
  std::size_t conditions = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("bound_", 0) != 0 || name == "bound_summary.json") continue;
    ++conditions;
    const auto doc = ordered_json::parse(slurp(entry.path()));
    const std::string label = doc["condition"];
    const auto trace = read_trace_csv((dir / ("trace_" + label + ".csv")).string());
    std::vector<std::vector<DeltaRecord>> runs;
    for (std::size_t r = 0; r < doc["runs"].size(); ++r) {
      runs.push_back(read_trajectory_deltas((dir / ("trajectory_" + label + "_run" + std::to_string(r) + ".ndjson")).string()));
    }
    const auto series = read_expansion_series((dir / ("expansion_" + label + ".csv")).string());
    const auto profile = aggregate_expansion(series);
    BoundReport rep;
    rep.n_train = doc["n_train"];
    assemble_stability(rep, average_deltas(runs), profile.eta, trace.alphas, cfg);
    for (const auto& run : doc["runs"]) {
      RunOutcome o;
      o.train_zero_one = run["train_zero_one"];
      o.test_zero_one = run["test_zero_one"];
      o.train_nll = run["train_nll"];
      o.test_nll = run["test_nll"];
      o.prior = {run["objective_prior"]["kl"], run["objective_prior"]["germain"], run["objective_prior"]["mcallester"]};
      o.q0 = {run["initialization_q0"]["kl"], run["initialization_q0"]["germain"], run["initialization_q0"]["mcallester"]};
      o.union_bound.bound = run["union_bound"]["bound"];
      rep.runs.push_back(o);
    }
    assemble_run_means(rep);
    const std::vector<std::pair<double, double>> checks = {
        {rep.stability_kl, doc["stability"]["kl_route"]},
        {rep.stability_w2, doc["stability"]["w2_route"]},
        {rep.diffs.m_l2, doc["parameter_differences"]["m_l2"]},
        {rep.diffs.sigma_l1, doc["parameter_differences"]["sigma_l1"]},
        {rep.diffs.sigma_l2, doc["parameter_differences"]["sigma_l2"]},
        {rep.train_zero_one, doc["losses"]["train_zero_one"]},
        {rep.test_zero_one, doc["losses"]["test_zero_one"]},
        {rep.gap_zero_one, doc["losses"]["gap_zero_one"]},
        {rep.train_nll, doc["losses"]["train_nll"]},
        {rep.test_nll, doc["losses"]["test_nll"]},
        {rep.gap_nll, doc["losses"]["gap_nll"]},
        {rep.prior.kl, doc["pac_bayes"]["objective_prior"]["kl"]},
        {rep.prior.germain, doc["pac_bayes"]["objective_prior"]["germain"]},
        {rep.prior.mcallester, doc["pac_bayes"]["objective_prior"]["mcallester"]},
        {rep.q0.kl, doc["pac_bayes"]["initialization_q0"]["kl"]},
        {rep.q0.germain, doc["pac_bayes"]["initialization_q0"]["germain"]},
        {rep.q0.mcallester, doc["pac_bayes"]["initialization_q0"]["mcallester"]},
        {rep.union_bound, doc["pac_bayes"]["union_bound"]},
        {profile.cumulative().back(), doc["expansion"]["final_cumulative"]}};
    for (const auto& [mine, theirs] : checks) {
      ++recomputed;
      differing += mine != theirs;
    }
    for (std::size_t t = 0; t < trace.eta.size(); ++t) {
      ++recomputed;
      differing += trace.eta[t] != profile.eta[t];
    }
  }
  const bool ok = failures == 0 && mismatches == 0 && files > 0 && conditions == 2 && differing == 0;
  return {ok, fmt("%d CLI failures, %zu files compared, %zu mismatches; %zu values recomputed from traces, %zu differ",
                  failures, files, mismatches, recomputed, differing)};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <path to vibound CLI>\n";
    return 2;
  }
  const std::string cli = argv[1];
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"chain-rule KL values", chain_rule_kl},
      {"two-point task: zero stability bound, diverging KL", two_point},
      {"closed-form divergences vs oracles", closed_forms},
      {"objective gradients vs finite differences", gradients},
      {"parameter-difference bound soundness", diff_soundness},
      {"logT schedule closed-form soundness", logt_soundness},
      {"expansion-rate analytics", expansion_analytics},
      {"random-label ordering", random_label_ordering},
      {"DLM vs ELBO W2-route ordering", objective_ordering},
      {"PAC-Bayes calculators", pac_bayes_calculators},
      {"reproducibility", [&] { return reproducibility(cli); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
