// Config-driven orchestration of the measurement protocol: expansion-rate
// estimation, training under label-noise/augmentation conditions, gradient
// difference measurement, bound assembly and report emission.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vibound/counterexamples.hpp"
#include "vibound/datasets.hpp"
#include "vibound/gauss_math.hpp"
#include "vibound/model.hpp"
#include "vibound/objectives.hpp"
#include "vibound/pac_bayes.hpp"
#include "vibound/stability.hpp"
#include "vibound/trainer.hpp"

namespace vibound {

using ordered_json = nlohmann::ordered_json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OutputFormat { text, json };

/// Every recognised key with its default, in documentation order.
inline const std::vector<std::pair<std::string, std::string>>& config_defaults() {
  static const std::vector<std::pair<std::string, std::string>> defaults = {
      {"dataset", "blobs"},            // blobs | csv | two_point
      {"n_train", "2000"},
      {"n_test", "1000"},
      {"classes", "10"},
      {"feature_dim", "8"},
      {"spread", "0.5"},
      {"data_seed", ""},               // empty: same as seed
      {"train_csv", ""},
      {"test_csv", ""},
      {"random_label_fractions", "0"},  // list; crossed with augmentations
      {"augmentations", "off"},         // list of on/off
      {"jitter_scale", "0.3"},
      {"flip_probability", "0"},
      {"flip_axis", "0"},
      {"hidden", "32"},                 // list of hidden widths; "none" for a linear model
      {"activation", "relu"},
      {"bias", "true"},
      {"objective", "elbo"},
      {"compare_objectives", "elbo,dlm"},
      {"kl_coefficient", "0.1"},
      {"prior_std", "1.0"},
      {"mc_samples_elbo", "1"},
      {"mc_samples_dlm", "8"},
      {"sigma0", "0.01"},
      {"init_sigma", "0.05"},
      {"learning_rate", "0.005"},
      {"momentum", "0.99"},
      {"lr_decay", "0.9"},
      {"lr_decay_every", "5"},
      {"batch_size", "100"},
      {"epochs", "20"},
      {"schedule", "step_decay"},       // step_decay | logT
      {"logt_c", "0.1"},
      {"clip_norm", "0"},
      {"pair_count", "50"},
      {"run_count", "10"},
      {"run_seeds", ""},                // explicit list overrides run_count
      {"expansion_runs", "10"},
      {"expansion_seeds", ""},          // explicit list overrides expansion_runs
      {"expansion_profile", ""},        // path to a saved profile; empty: compute inline
      {"eval_samples", "10"},
      {"loss_bound_C", "1.0"},
      {"lipschitz_K", ""},
      {"delta", "0.025"},
      {"union_b", "100"},
      {"union_c", "0.1"},
      {"two_point_sigma", "0.05"},
      {"seed", "0"},
      {"threads", "1"},
      {"output_dir", "."},
      {"format", "text"},
  };
  return defaults;
}

struct ExperimentConfig {
  std::string dataset = "blobs";
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::size_t classes = 10;
  std::size_t feature_dim = 8;
  double spread = 0.5;
  std::optional<std::uint64_t> data_seed;
  std::string train_csv, test_csv;
  std::vector<double> random_label_fractions{0.0};
  std::vector<bool> augmentations{false};
  AugmentConfig augment{0.3, 0.0, 0};
  std::vector<std::size_t> hidden{32};
  Activation activation = Activation::relu;
  bool bias = true;
  ObjectiveKind objective = ObjectiveKind::elbo;
  std::vector<ObjectiveKind> compare_objectives{ObjectiveKind::elbo, ObjectiveKind::dlm};
  double kl_coefficient = 0.1;
  double prior_std = 1.0;
  std::size_t mc_samples_elbo = 1;
  std::size_t mc_samples_dlm = 8;
  PosteriorConfig posterior{};
  TrainConfig train{};
  std::size_t pair_count = 50;
  std::vector<std::uint64_t> run_seeds;  // empty: derived from seed and run_count
  std::size_t run_count = 10;
  std::size_t expansion_runs = 10;
  std::vector<std::uint64_t> expansion_seed_list;  // empty: derived from seed
  std::string expansion_profile;
  std::size_t eval_samples = 10;
  double loss_bound_C = 1.0;
  std::optional<double> lipschitz_K;
  PacBayesConfig pac{};
  double two_point_sigma = 0.05;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string output_dir = ".";
  OutputFormat format = OutputFormat::text;

  std::uint64_t effective_data_seed() const { return data_seed.value_or(seed); }

  std::size_t mc_samples_for(ObjectiveKind k) const {
    return k == ObjectiveKind::elbo ? mc_samples_elbo : mc_samples_dlm;
  }

  Architecture architecture() const {
    Architecture a;
    a.layer_sizes.push_back(dataset == "two_point" ? 1 : feature_dim);
    for (std::size_t h : hidden) a.layer_sizes.push_back(h);
    a.layer_sizes.push_back(dataset == "two_point" ? 2 : classes);
    a.activation = activation;
    a.bias = bias;
    return a;
  }

  /// Seeds of the epsilon runs.
  std::vector<std::uint64_t> epsilon_seeds() const {
    if (!run_seeds.empty()) return run_seeds;
    std::vector<std::uint64_t> s(run_count);
    for (std::size_t r = 0; r < run_count; ++r) s[r] = derive_seed(seed, {10, r});
    return s;
  }

  std::vector<std::uint64_t> expansion_seeds() const {
    if (!expansion_seed_list.empty()) return expansion_seed_list;
    std::vector<std::uint64_t> s(expansion_runs);
    for (std::size_t r = 0; r < expansion_runs; ++r) s[r] = derive_seed(seed, {20, r});
    return s;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, ',')) {
    const std::string t = trim(cur);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(x)) {
    throw ConfigError("config key '" + key + "': expected a real number, got '" + v + "'");
  }
  return x;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" + v + "'");
  }
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline ObjectiveKind parse_objective(const std::string& key, const std::string& v) {
  if (v == "elbo") return ObjectiveKind::elbo;
  if (v == "dlm") return ObjectiveKind::dlm;
  throw ConfigError("config key '" + key + "': expected elbo or dlm, got '" + v + "'");
}

inline void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config key '" + key + "': " + what);
}

}  // namespace detail

/// Builds a config from key/value pairs; unknown keys and out-of-range values
/// are rejected with the offending key named.
inline ExperimentConfig config_from_pairs(const std::map<std::string, std::string>& given) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : config_defaults()) kv[k] = v;
  for (const auto& [k, v] : given) {
    if (!kv.contains(k)) throw ConfigError("unknown config key '" + k + "'");
    kv[k] = v;
  }
  using namespace detail;
  auto real = [&](const std::string& k) { return parse_real(k, kv.at(k)); };
  auto uint = [&](const std::string& k) { return parse_uint(k, kv.at(k)); };

  ExperimentConfig c;
  c.dataset = kv.at("dataset");
  require(c.dataset == "blobs" || c.dataset == "csv" || c.dataset == "two_point", "dataset",
          "expected blobs, csv or two_point");
  c.n_train = uint("n_train");
  c.n_test = uint("n_test");
  c.classes = uint("classes");
  c.feature_dim = uint("feature_dim");
  c.spread = real("spread");
  require(c.n_train >= 2, "n_train", "must be at least 2");
  require(c.n_test >= 1, "n_test", "must be at least 1");
  require(c.classes >= 2, "classes", "must be at least 2");
  require(c.feature_dim >= 1, "feature_dim", "must be at least 1");
  require(c.spread >= 0.0, "spread", "must be nonnegative");
  if (!kv.at("data_seed").empty()) c.data_seed = uint("data_seed");
  c.train_csv = kv.at("train_csv");
  c.test_csv = kv.at("test_csv");
  if (c.dataset == "csv") {
    require(!c.train_csv.empty(), "train_csv", "required when dataset = csv");
    require(!c.test_csv.empty(), "test_csv", "required when dataset = csv");
  }

  c.random_label_fractions.clear();
  for (const auto& v : split_list(kv.at("random_label_fractions"))) {
    const double f = parse_real("random_label_fractions", v);
    require(f >= 0.0 && f <= 1.0, "random_label_fractions", "each fraction must be in [0,1]");
    c.random_label_fractions.push_back(f);
  }
  require(!c.random_label_fractions.empty(), "random_label_fractions", "must list at least one value");
  c.augmentations.clear();
  for (const auto& v : split_list(kv.at("augmentations"))) c.augmentations.push_back(parse_bool("augmentations", v));
  require(!c.augmentations.empty(), "augmentations", "must list at least one value");
  c.augment.jitter_scale = real("jitter_scale");
  c.augment.flip_probability = real("flip_probability");
  c.augment.flip_axis = uint("flip_axis");
  require(c.augment.jitter_scale >= 0.0, "jitter_scale", "must be nonnegative");
  require(c.augment.flip_probability >= 0.0 && c.augment.flip_probability <= 1.0, "flip_probability",
          "must be in [0,1]");
  require(c.augment.flip_axis < c.feature_dim, "flip_axis", "must be below feature_dim");

  c.hidden.clear();
  if (trim(kv.at("hidden")) != "none") {
    for (const auto& v : split_list(kv.at("hidden"))) {
      const auto h = parse_uint("hidden", v);
      require(h >= 1 && h <= 4096, "hidden", "widths must be in [1, 4096]");
      c.hidden.push_back(h);
    }
  }
  const std::string act = kv.at("activation");
  require(act == "relu" || act == "tanh", "activation", "expected relu or tanh");
  c.activation = act == "relu" ? Activation::relu : Activation::tanh;
  c.bias = parse_bool("bias", kv.at("bias"));

  c.objective = parse_objective("objective", kv.at("objective"));
  c.compare_objectives.clear();
  for (const auto& v : split_list(kv.at("compare_objectives"))) {
    c.compare_objectives.push_back(parse_objective("compare_objectives", v));
  }
  require(c.compare_objectives.size() == 2, "compare_objectives", "must list exactly two objectives");
  c.kl_coefficient = real("kl_coefficient");
  require(c.kl_coefficient >= 0.0, "kl_coefficient", "must be nonnegative");
  c.prior_std = real("prior_std");
  require(c.prior_std > 0.0, "prior_std", "must be positive");
  c.mc_samples_elbo = uint("mc_samples_elbo");
  c.mc_samples_dlm = uint("mc_samples_dlm");
  require(c.mc_samples_elbo >= 1 && c.mc_samples_elbo <= 1024, "mc_samples_elbo", "must be in [1, 1024]");
  require(c.mc_samples_dlm >= 1 && c.mc_samples_dlm <= 1024, "mc_samples_dlm", "must be in [1, 1024]");

  c.posterior.sigma0 = real("sigma0");
  c.posterior.init_sigma = real("init_sigma");
  require(c.posterior.sigma0 > 0.0, "sigma0", "must be positive");
  require(c.posterior.init_sigma > c.posterior.sigma0, "init_sigma", "must exceed sigma0");

  TrainConfig& t = c.train;
  t.learning_rate = real("learning_rate");
  t.momentum = real("momentum");
  t.lr_decay_factor = real("lr_decay");
  t.lr_decay_every_epochs = uint("lr_decay_every");
  t.batch_size = uint("batch_size");
  t.epochs = uint("epochs");
  t.logt_c = real("logt_c");
  t.clip_norm = real("clip_norm");
  t.snapshot_stride = 0;
  const std::string sched = kv.at("schedule");
  require(sched == "step_decay" || sched == "logT", "schedule", "expected step_decay or logT");
  t.schedule = sched == "logT" ? ScheduleKind::logT : ScheduleKind::step_decay;
  require(t.learning_rate > 0.0, "learning_rate", "must be positive");
  require(t.momentum >= 0.0 && t.momentum < 1.0, "momentum", "must be in [0,1)");
  require(t.lr_decay_factor > 0.0 && t.lr_decay_factor <= 1.0, "lr_decay", "must be in (0,1]");
  require(t.lr_decay_every_epochs >= 1, "lr_decay_every", "must be at least 1");
  require(t.batch_size >= 1, "batch_size", "must be at least 1");
  if (c.dataset != "csv") require(t.batch_size <= c.n_train, "batch_size", "must not exceed n_train");
  require(t.epochs >= 1 && t.epochs <= 100000, "epochs", "must be in [1, 100000]");
  require(t.logt_c > 0.0, "logt_c", "must be positive");
  require(t.clip_norm >= 0.0, "clip_norm", "must be nonnegative");

  c.pair_count = uint("pair_count");
  c.run_count = uint("run_count");
  for (const auto& v : split_list(kv.at("run_seeds"))) c.run_seeds.push_back(parse_uint("run_seeds", v));
  if (!c.run_seeds.empty()) {
    std::set<std::uint64_t> uniq(c.run_seeds.begin(), c.run_seeds.end());
    require(uniq.size() == c.run_seeds.size(), "run_seeds", "seeds must be distinct");
    c.run_count = c.run_seeds.size();
  }
  require(c.run_count >= 1, "run_count", "must be at least 1");
  c.expansion_runs = uint("expansion_runs");
  for (const auto& v : split_list(kv.at("expansion_seeds"))) {
    c.expansion_seed_list.push_back(parse_uint("expansion_seeds", v));
  }
  if (!c.expansion_seed_list.empty()) {
    std::set<std::uint64_t> uniq(c.expansion_seed_list.begin(), c.expansion_seed_list.end());
    require(uniq.size() == c.expansion_seed_list.size(), "expansion_seeds",
            "seeds must be distinct (identical runs give a degenerate spread)");
    c.expansion_runs = c.expansion_seed_list.size();
  }
  require(c.expansion_runs >= 2, "expansion_runs", "must be at least 2 (mean + 4 std needs a spread)");
  c.expansion_profile = kv.at("expansion_profile");
  c.eval_samples = uint("eval_samples");
  require(c.eval_samples >= 1, "eval_samples", "must be at least 1");
  c.loss_bound_C = real("loss_bound_C");
  require(c.loss_bound_C > 0.0, "loss_bound_C", "must be positive");
  if (!kv.at("lipschitz_K").empty()) {
    c.lipschitz_K = real("lipschitz_K");
    require(*c.lipschitz_K > 0.0, "lipschitz_K", "must be positive");
  }
  c.pac.delta = real("delta");
  require(c.pac.delta > 0.0 && c.pac.delta < 1.0, "delta", "must be in (0,1)");
  c.pac.C = c.loss_bound_C;
  c.pac.union_b = uint("union_b");
  require(c.pac.union_b >= 1, "union_b", "must be at least 1");
  c.pac.union_c = real("union_c");
  require(c.pac.union_c > c.pac.union_lambda_floor, "union_c", "must exceed 1e-10");
  c.two_point_sigma = real("two_point_sigma");
  require(c.two_point_sigma > 0.0, "two_point_sigma", "must be positive");
  c.seed = uint("seed");
  c.threads = uint("threads");
  require(c.threads >= 1 && c.threads <= 256, "threads", "must be in [1, 256]");
  c.output_dir = kv.at("output_dir");
  const std::string fmt = kv.at("format");
  require(fmt == "text" || fmt == "json", "format", "expected text or json");
  c.format = fmt == "json" ? OutputFormat::json : OutputFormat::text;
  return c;
}

/// Parses flat `key = value` lines; `#` starts a comment.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (kv.contains(key)) throw ConfigError("config key '" + key + "' given twice");
    kv[key] = value;
  }
  return kv;
}

inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// Reports

struct PacBayesSummary {
  double kl = 0.0;
  double germain = 0.0;
  double mcallester = 0.0;
};

struct RunOutcome {
  std::uint64_t seed = 0;
  double train_zero_one = 0.0, test_zero_one = 0.0;
  double train_nll = 0.0, test_nll = 0.0;
  PacBayesSummary prior, q0;
  UnionBoundResult union_bound;
};

struct BoundReport {
  std::string label;
  ObjectiveKind objective = ObjectiveKind::elbo;
  double random_label_fraction = 0.0;
  bool augmentation = false;
  std::size_t n_train = 0, n_test = 0, steps = 0, pair_count = 0;
  std::vector<RunOutcome> runs;
  double train_zero_one = 0.0, test_zero_one = 0.0, gap_zero_one = 0.0;
  double train_nll = 0.0, test_nll = 0.0, gap_nll = 0.0;
  ParamDiffBounds diffs;
  double stability_kl = 0.0;
  double stability_w2 = 0.0;
  bool w2_includes_K = false;
  PacBayesSummary prior, q0;
  double union_bound = 0.0;
  double expansion_final_cumulative = 1.0;
  double expansion_max_eta = 1.0;
  std::size_t expansion_runs = 0;
  bool momentum_caveat = false;
  std::vector<std::string> warnings;
  std::vector<double> pac_mcallester_by_epoch;  // only filled for the two-example logistic task
};

/// Everything one condition produced, including the raw traces.
struct ConditionResult {
  BoundReport report;
  ExpansionProfile profile;
  std::vector<std::vector<double>> expansion_series;
  std::vector<std::vector<DeltaRecord>> run_deltas;  // per epsilon run, per step
  std::vector<DeltaRecord> mean_deltas;              // averaged over runs
  std::vector<double> alphas;
  std::vector<Trajectory> trajectories;
};

struct ConditionSpec {
  ObjectiveKind objective = ObjectiveKind::elbo;
  double random_label_fraction = 0.0;
  bool augmentation = false;

  std::string label() const {
    return std::string(to_string(objective)) + "_rl" + format_double(random_label_fraction) +
           (augmentation ? "_aug" : "_noaug");
  }
};

inline std::vector<ConditionSpec> conditions_of(const ExperimentConfig& cfg, ObjectiveKind kind) {
  std::vector<ConditionSpec> out;
  for (bool aug : cfg.augmentations) {
    for (double f : cfg.random_label_fractions) out.push_back({kind, f, aug});
  }
  return out;
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Results must be
/// written to per-index slots; the first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  auto worker = [&] {
    while (true) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= count || error) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < std::min(threads, count); ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct ExperimentData {
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> test;
};

inline ExperimentData build_datasets(const ExperimentConfig& cfg, double random_label_fraction) {
  Dataset train, test;
  if (cfg.dataset == "blobs") {
    auto all = gen_blobs(cfg.n_train + cfg.n_test, cfg.classes, cfg.feature_dim, cfg.spread, cfg.effective_data_seed());
    std::tie(train, test) = split_at(all, cfg.n_train);
  } else if (cfg.dataset == "csv") {
    train = load_csv(cfg.train_csv, {cfg.classes, cfg.feature_dim});
    test = load_csv(cfg.test_csv, {cfg.classes, cfg.feature_dim});
  } else {
    train = gen_two_point(cfg.n_train, derive_seed(cfg.effective_data_seed(), {1}));
    test = gen_two_point(cfg.n_test, derive_seed(cfg.effective_data_seed(), {2}));
  }
  if (random_label_fraction > 0.0) {
    train = corrupt_labels(train, random_label_fraction, derive_seed(cfg.effective_data_seed(), {7}));
  }
  return {std::make_shared<const Dataset>(std::move(train)), std::make_shared<const Dataset>(std::move(test))};
}

inline ObjectiveConfig objective_config(const ExperimentConfig& cfg, ObjectiveKind kind, std::size_t n) {
  ObjectiveConfig oc;
  oc.kind = kind;
  oc.kl_coefficient = cfg.kl_coefficient;
  oc.n = n;
  oc.mc_samples = cfg.mc_samples_for(kind);
  oc.prior = DiagGaussian::isotropic(std::vector<double>(cfg.architecture().parameter_count(), 0.0), cfg.prior_std);
  return oc;
}

inline VariationalProblem make_problem(const ExperimentConfig& cfg, const ConditionSpec& spec,
                                       std::shared_ptr<const Dataset> train) {
  AugmentConfig aug = spec.augmentation ? cfg.augment : AugmentConfig{0.0, 0.0, 0};
  const std::size_t n = train->size();
  return VariationalProblem(std::move(train), cfg.architecture(), objective_config(cfg, spec.objective, n),
                            cfg.posterior, aug);
}

// Expansion-profile files: csv with columns t, run_0..run_{R-1}, mean, std, eta, cumulative.

inline std::string expansion_csv(const ExpansionProfile& p, const std::vector<std::vector<double>>& series) {
  std::ostringstream out;
  out << "t";
  for (std::size_t r = 0; r < series.size(); ++r) out << ",run_" << r;
  out << ",mean,std,eta,cumulative\n";
  const auto cum = p.cumulative();
  for (std::size_t t = 0; t < p.size(); ++t) {
    out << (t + 1);
    for (const auto& s : series) out << ',' << format_double(s[t]);
    out << ',' << format_double(p.mean[t]) << ',' << format_double(p.std[t]) << ',' << format_double(p.eta[t]) << ','
        << format_double(cum[t]) << '\n';
  }
  return out.str();
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_cells(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace detail

/// Reads the per-run series back from an expansion csv.
inline std::vector<std::vector<double>> read_expansion_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing expansion profile " + path);
  const auto rows = detail::read_csv_cells(in);
  if (rows.empty()) throw std::runtime_error("empty expansion profile " + path);
  const auto& header = rows[0];
  std::size_t runs = 0;
  while (runs + 1 < header.size() && header[runs + 1] == "run_" + std::to_string(runs)) ++runs;
  std::vector<std::vector<double>> series(runs);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    for (std::size_t r = 0; r < runs; ++r) series[r].push_back(detail::parse_real("expansion_profile", rows[i][r + 1]));
  }
  return series;
}

/// Twin-run expansion series for one condition.
inline std::vector<std::vector<double>> expansion_series_for(const ExperimentConfig& cfg,
                                                             const VariationalProblem& problem) {
  const auto seeds = cfg.expansion_seeds();
  std::vector<std::vector<double>> series(seeds.size());
  parallel_for(seeds.size(), cfg.threads, [&](std::size_t r) {
    const EpsilonStream stream(seeds[r]);
    series[r] = estimate_expansion(problem, cfg.train, stream, {stream.init_seed(0), stream.init_seed(1)});
  });
  return series;
}

inline PacBayesSummary pac_summary(double kl, const PacBayesConfig& pac, std::size_t n) {
  return {kl, germain_bound(kl, pac, n), mcallester_bound(kl, pac, n)};
}

/// Assembles the stability part of a report from traces; shared by the
/// pipeline and by recomputation from emitted files.
inline void assemble_stability(BoundReport& rep, const std::vector<DeltaRecord>& mean_deltas,
                               const std::vector<double>& eta, const std::vector<double>& alphas,
                               const ExperimentConfig& cfg) {
  rep.diffs = param_diff_bound(mean_deltas, eta, alphas, rep.n_train);
  StabilityBoundInputs in;
  in.C = cfg.loss_bound_C;
  in.K = cfg.lipschitz_K;
  in.sigma0 = cfg.posterior.sigma0;
  in.n = rep.n_train;
  rep.stability_kl = kl_route_bound(rep.diffs, in);
  rep.stability_w2 = w2_route_bound(rep.diffs, in);
  rep.w2_includes_K = cfg.lipschitz_K.has_value();
}

/// Mean over runs, summed in run order.
inline std::vector<DeltaRecord> average_deltas(const std::vector<std::vector<DeltaRecord>>& runs) {
  std::vector<DeltaRecord> mean(runs.front().size());
  for (std::size_t t = 0; t < mean.size(); ++t) {
    mean[t].t = t + 1;
    for (const auto& r : runs) {
      mean[t].delta_m_l2 += r[t].delta_m_l2;
      mean[t].delta_s_l1 += r[t].delta_s_l1;
      mean[t].delta_s_l2 += r[t].delta_s_l2;
    }
    const double inv = 1.0 / static_cast<double>(runs.size());
    mean[t].delta_m_l2 *= inv;
    mean[t].delta_s_l1 *= inv;
    mean[t].delta_s_l2 *= inv;
  }
  return mean;
}

/// Averages of the per-run losses and PAC-Bayes values, in run order.
inline void assemble_run_means(BoundReport& rep) {
  const double inv = 1.0 / static_cast<double>(rep.runs.size());
  rep.train_zero_one = rep.test_zero_one = rep.train_nll = rep.test_nll = 0.0;
  rep.prior = rep.q0 = PacBayesSummary{};
  rep.union_bound = 0.0;
  for (const RunOutcome& r : rep.runs) {
    rep.train_zero_one += r.train_zero_one;
    rep.test_zero_one += r.test_zero_one;
    rep.train_nll += r.train_nll;
    rep.test_nll += r.test_nll;
    rep.prior.kl += r.prior.kl;
    rep.prior.germain += r.prior.germain;
    rep.prior.mcallester += r.prior.mcallester;
    rep.q0.kl += r.q0.kl;
    rep.q0.germain += r.q0.germain;
    rep.q0.mcallester += r.q0.mcallester;
    rep.union_bound += r.union_bound.bound;
  }
  for (double* v : {&rep.train_zero_one, &rep.test_zero_one, &rep.train_nll, &rep.test_nll, &rep.prior.kl,
                    &rep.prior.germain, &rep.prior.mcallester, &rep.q0.kl, &rep.q0.germain, &rep.q0.mcallester,
                    &rep.union_bound}) {
    *v *= inv;
  }
  rep.gap_zero_one = std::abs(rep.test_zero_one - rep.train_zero_one);
  rep.gap_nll = std::abs(rep.test_nll - rep.train_nll);
}

/// The two-example logistic task routed through its dedicated scalar model.
inline ConditionResult run_two_point_condition(const ExperimentConfig& cfg, const ConditionSpec& spec) {
  ConditionResult res;
  BoundReport& rep = res.report;
  rep.label = "two_point";
  rep.objective = spec.objective;
  rep.n_train = cfg.n_train;
  rep.n_test = cfg.n_test;
  LogisticExtremeSetup setup;
  setup.sigma = cfg.two_point_sigma;
  setup.learning_rate = cfg.train.learning_rate;
  setup.steps = cfg.train.epochs;  // full batch: one step per epoch
  setup.n_data = cfg.n_train;
  setup.mc_samples = cfg.mc_samples_for(spec.objective);
  setup.seed = cfg.seed;
  const auto run = logistic_extreme_run(setup);
  rep.steps = setup.steps;
  rep.pair_count = 1;
  rep.stability_kl = run.stability_bound;
  rep.stability_w2 = run.w2_bound;
  res.mean_deltas = run.deltas;
  res.run_deltas = {run.deltas};
  res.alphas.assign(setup.steps, setup.learning_rate);
  res.profile.eta.assign(setup.steps, 1.0 + setup.learning_rate / 4.0);
  res.profile.mean = res.profile.eta;
  res.profile.std.assign(setup.steps, 0.0);
  rep.diffs = param_diff_bound(res.mean_deltas, res.profile.eta, res.alphas, cfg.n_train);
  for (double kl : run.pac_kl_trajectory) rep.pac_mcallester_by_epoch.push_back(mcallester_bound(kl, cfg.pac, cfg.n_train));
  const double kl = run.pac_kl_trajectory.back();
  RunOutcome out;
  out.seed = cfg.seed;
  // Both example types have the loss profile of (x=1, y=1), so every sample
  // of either set has the same expected loss and the gap is exactly 0.
  const double m_final = run.mean_trajectory.back();
  const double nll = GaussHermite(64).expect_normal(m_final, setup.sigma,
                                                    [](double w) { return logistic_nll(w, 1.0, 1); });
  const double err = 0.5 * std::erfc(m_final / (setup.sigma * std::numbers::sqrt2));  // P(w < 0)
  out.train_nll = out.test_nll = nll;
  out.train_zero_one = out.test_zero_one = err;
  out.prior = pac_summary(kl, cfg.pac, cfg.n_train);
  out.q0 = out.prior;  // prior and initialisation coincide: N(0, sigma^2)
  out.union_bound = union_bound(DiagGaussian({run.mean_trajectory.back()}, {setup.sigma}), {0.0}, cfg.pac, cfg.n_train);
  rep.runs = {out};
  assemble_run_means(rep);
  rep.expansion_final_cumulative = res.profile.cumulative().back();
  rep.expansion_max_eta = res.profile.eta.front();
  return res;
}

/// Full protocol for one condition: expansion profile, epsilon runs with
/// pair deltas, losses, PAC-Bayes comparators, bound assembly.
inline ConditionResult run_condition(const ExperimentConfig& cfg, const ConditionSpec& spec,
                                     const ExpansionProfile* preset_profile = nullptr) {
  if (cfg.dataset == "two_point") return run_two_point_condition(cfg, spec);

  ConditionResult res;
  const ExperimentData data = build_datasets(cfg, spec.random_label_fraction);
  const VariationalProblem problem = make_problem(cfg, spec, data.train);
  const std::size_t n = data.train->size();
  TrainConfig tc = cfg.train;
  tc.validate(n);
  const std::size_t T = tc.total_steps(n);

  BoundReport& rep = res.report;
  rep.label = spec.label();
  rep.objective = spec.objective;
  rep.random_label_fraction = spec.random_label_fraction;
  rep.augmentation = spec.augmentation;
  rep.n_train = n;
  rep.n_test = data.test->size();
  rep.steps = T;
  rep.pair_count = cfg.pair_count;
  rep.momentum_caveat = tc.momentum > 0.0;

  if (preset_profile) {
    res.profile = *preset_profile;
  } else {
    res.expansion_series = expansion_series_for(cfg, problem);
    res.profile = aggregate_expansion(res.expansion_series);
  }
  if (res.profile.size() != T) {
    throw std::runtime_error("expansion profile has " + std::to_string(res.profile.size()) + " steps, run has " +
                             std::to_string(T));
  }
  rep.expansion_runs = res.profile.runs;

  const auto seeds = cfg.epsilon_seeds();
  res.run_deltas.resize(seeds.size());
  res.trajectories.resize(seeds.size());
  rep.runs.resize(seeds.size());
  const Architecture arch = cfg.architecture();
  parallel_for(seeds.size(), cfg.threads, [&](std::size_t r) {
    const EpsilonStream stream(seeds[r]);
    auto pairs = sample_pairs(n, data.test->size(), cfg.pair_count, stream.pair_selection_seed());
    DeltaMeter meter(problem, *data.test, std::move(pairs));
    const VarParams init = problem.initial_params(stream.init_seed());
    auto result = train(problem, init, tc, stream, std::ref(meter));
    for (std::size_t t = 0; t < T; ++t) {
      StepRecord& s = result.trajectory.steps[t];
      s.delta_m_l2 = meter.records()[t].delta_m_l2;
      s.delta_s_l1 = meter.records()[t].delta_s_l1;
      s.delta_s_l2 = meter.records()[t].delta_s_l2;
    }
    res.run_deltas[r] = meter.records();
    res.trajectories[r] = std::move(result.trajectory);

    RunOutcome& out = rep.runs[r];
    out.seed = seeds[r];
    const std::uint64_t eval_seed = derive_seed(seeds[r], {30});
    out.train_zero_one = posterior_loss(result.params, *data.train, arch, LossKind::zero_one, cfg.eval_samples, eval_seed);
    out.test_zero_one = posterior_loss(result.params, *data.test, arch, LossKind::zero_one, cfg.eval_samples, eval_seed);
    out.train_nll = posterior_loss(result.params, *data.train, arch, LossKind::nll, cfg.eval_samples, eval_seed);
    out.test_nll = posterior_loss(result.params, *data.test, arch, LossKind::nll, cfg.eval_samples, eval_seed);
    const DiagGaussian q = posterior_of(result.params);
    const DiagGaussian q0 = posterior_of(init);
    out.prior = pac_summary(kl_diag_gauss(q, problem.objective().config().prior), cfg.pac, n);
    out.q0 = pac_summary(kl_diag_gauss(q, q0), cfg.pac, n);
    out.union_bound = union_bound(q, init.m, cfg.pac, n);
  });

  res.mean_deltas = average_deltas(res.run_deltas);
  res.alphas.resize(T);
  for (std::size_t t = 0; t < T; ++t) res.alphas[t] = tc.alpha(t + 1, n);
  assemble_stability(rep, res.mean_deltas, res.profile.eta, res.alphas, cfg);
  assemble_run_means(rep);
  const auto cum = res.profile.cumulative();
  rep.expansion_final_cumulative = cum.empty() ? 1.0 : cum.back();
  rep.expansion_max_eta = res.profile.eta.empty() ? 1.0 : *std::max_element(res.profile.eta.begin(), res.profile.eta.end());
  if (cfg.pair_count == 0) rep.warnings.push_back("pair_count = 0: no pairs sampled, stability bounds are 0");
  if (rep.momentum_caveat) {
    rep.warnings.push_back("momentum > 0: expansion rates measured on the (parameter, velocity) state; "
                           "stability bounds are empirical, not certified");
  }
  return res;
}

// Serialisation

inline ordered_json to_json(const PacBayesSummary& p) {
  ordered_json j;
  j["kl"] = p.kl;
  j["germain"] = p.germain;
  j["mcallester"] = p.mcallester;
  return j;
}

inline ordered_json to_json(const BoundReport& r) {
  ordered_json j;
  j["condition"] = r.label;
  j["objective"] = to_string(r.objective);
  j["random_label_fraction"] = r.random_label_fraction;
  j["augmentation"] = r.augmentation;
  j["n_train"] = r.n_train;
  j["n_test"] = r.n_test;
  j["steps"] = r.steps;
  j["pair_count"] = r.pair_count;
  j["losses"] = {{"train_zero_one", r.train_zero_one}, {"test_zero_one", r.test_zero_one},
                 {"gap_zero_one", r.gap_zero_one},     {"train_nll", r.train_nll},
                 {"test_nll", r.test_nll},             {"gap_nll", r.gap_nll}};
  j["parameter_differences"] = {
      {"m_l2", r.diffs.m_l2}, {"sigma_l1", r.diffs.sigma_l1}, {"sigma_l2", r.diffs.sigma_l2}};
  j["stability"] = {{"kl_route", r.stability_kl},
                    {"w2_route", r.stability_w2},
                    {"w2_includes_K", r.w2_includes_K},
                    {"sigma_norms_from_s_space", true}};
  j["pac_bayes"] = {{"objective_prior", to_json(r.prior)},
                    {"initialization_q0", to_json(r.q0)},
                    {"union_bound", r.union_bound}};
  if (!r.pac_mcallester_by_epoch.empty()) j["pac_bayes"]["mcallester_by_epoch"] = r.pac_mcallester_by_epoch;
  j["expansion"] = {{"runs", r.expansion_runs},
                    {"final_cumulative", r.expansion_final_cumulative},
                    {"max_eta", r.expansion_max_eta}};
  j["momentum_caveat"] = r.momentum_caveat;
  ordered_json runs = ordered_json::array();
  for (const RunOutcome& o : r.runs) {
    runs.push_back({{"seed", o.seed},
                    {"train_zero_one", o.train_zero_one},
                    {"test_zero_one", o.test_zero_one},
                    {"train_nll", o.train_nll},
                    {"test_nll", o.test_nll},
                    {"objective_prior", to_json(o.prior)},
                    {"initialization_q0", to_json(o.q0)},
                    {"union_bound", {{"bound", o.union_bound.bound}, {"j", o.union_bound.j}, {"kl", o.union_bound.kl}}}});
  }
  j["runs"] = runs;
  j["warnings"] = r.warnings;
  return j;
}

namespace detail {

inline void render_text(std::ostream& out, const ordered_json& j, int indent) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  auto scalar = [](const ordered_json& v) -> std::string {
    if (v.is_number_float()) return format_double(v.get<double>());
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& v = it.value();
    if (v.is_object()) {
      out << pad << it.key() << ":\n";
      render_text(out, v, indent + 1);
    } else if (v.is_array() && !v.empty() && v.front().is_object()) {
      out << pad << it.key() << ":\n";
      for (std::size_t i = 0; i < v.size(); ++i) {
        out << pad << "  - [" << i << "]\n";
        render_text(out, v[i], indent + 2);
      }
    } else if (v.is_array()) {
      out << pad << it.key() << ": [";
      for (std::size_t i = 0; i < v.size(); ++i) out << (i ? ", " : "") << scalar(v[i]);
      out << "]\n";
    } else {
      out << pad << it.key() << ": " << scalar(v) << '\n';
    }
  }
}

}  // namespace detail

/// Indented `key: value` rendering of a structured document.
inline std::string render(const ordered_json& j, OutputFormat fmt) {
  if (fmt == OutputFormat::json) return j.dump(2) + "\n";
  std::ostringstream out;
  detail::render_text(out, j, 0);
  return out.str();
}

inline std::string extension(OutputFormat fmt) { return fmt == OutputFormat::json ? ".json" : ".txt"; }

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

/// Aggregated trace: t, alpha, eta, mean deltas.
inline std::string trace_csv(const ConditionResult& res) {
  std::ostringstream out;
  out << "t,alpha,eta,delta_m_l2,delta_s_l1,delta_s_l2\n";
  for (std::size_t t = 0; t < res.mean_deltas.size(); ++t) {
    const DeltaRecord& d = res.mean_deltas[t];
    out << (t + 1) << ',' << format_double(res.alphas[t]) << ',' << format_double(res.profile.eta[t]) << ','
        << format_double(d.delta_m_l2) << ',' << format_double(d.delta_s_l1) << ',' << format_double(d.delta_s_l2)
        << '\n';
  }
  return out.str();
}

struct TraceData {
  std::vector<double> alphas;
  std::vector<double> eta;
  std::vector<DeltaRecord> deltas;
};

inline TraceData read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace " + path);
  const auto rows = detail::read_csv_cells(in);
  TraceData d;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& c = rows[i];
    if (c.size() != 6) throw std::runtime_error(path + ": malformed trace row " + std::to_string(i + 1));
    d.alphas.push_back(detail::parse_real("trace", c[1]));
    d.eta.push_back(detail::parse_real("trace", c[2]));
    DeltaRecord r;
    r.t = detail::parse_uint("trace", c[0]);
    r.delta_m_l2 = detail::parse_real("trace", c[3]);
    r.delta_s_l1 = detail::parse_real("trace", c[4]);
    r.delta_s_l2 = detail::parse_real("trace", c[5]);
    d.deltas.push_back(r);
  }
  return d;
}

/// Reads per-step delta norms back from a trajectory file.
inline std::vector<DeltaRecord> read_trajectory_deltas(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory " + path);
  std::vector<DeltaRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    DeltaRecord r;
    r.t = j.at("t").get<std::size_t>();
    r.delta_m_l2 = j.at("delta_m_l2").get<double>();
    r.delta_s_l1 = j.at("delta_s_l1").get<double>();
    r.delta_s_l2 = j.at("delta_s_l2").get<double>();
    out.push_back(r);
  }
  return out;
}

/// Writes the summary document, aggregated trace and per-run trajectories.
inline void write_condition(const ConditionResult& res, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  const std::string label = res.report.label;
  write_text_file(dir / ("bound_" + label + extension(cfg.format)), render(to_json(res.report), cfg.format));
  write_text_file(dir / ("trace_" + label + ".csv"), trace_csv(res));
  for (std::size_t r = 0; r < res.trajectories.size(); ++r) {
    std::ostringstream traj;
    write_trajectory(traj, res.trajectories[r]);
    write_text_file(dir / ("trajectory_" + label + "_run" + std::to_string(r) + ".ndjson"), traj.str());
  }
  if (!res.expansion_series.empty()) {
    write_text_file(dir / ("expansion_" + label + ".csv"), expansion_csv(res.profile, res.expansion_series));
  }
}

// Commands. Each returns the summary document it wrote.

inline ordered_json cmd_expansion(const ExperimentConfig& cfg) {
  const std::filesystem::path dir(cfg.output_dir);
  ordered_json summary;
  summary["command"] = "expansion";
  ordered_json conds = ordered_json::array();
  for (const ConditionSpec& spec : conditions_of(cfg, cfg.objective)) {
    const ExperimentData data = build_datasets(cfg, spec.random_label_fraction);
    const VariationalProblem problem = make_problem(cfg, spec, data.train);
    const auto series = expansion_series_for(cfg, problem);
    const ExpansionProfile profile = aggregate_expansion(series);
    write_text_file(dir / ("expansion_" + spec.label() + ".csv"), expansion_csv(profile, series));
    const auto cum = profile.cumulative();
    conds.push_back({{"condition", spec.label()},
                     {"runs", profile.runs},
                     {"steps", profile.size()},
                     {"final_cumulative", cum.back()},
                     {"max_eta", *std::max_element(profile.eta.begin(), profile.eta.end())},
                     {"file", "expansion_" + spec.label() + ".csv"}});
  }
  summary["conditions"] = conds;
  write_text_file(dir / ("expansion_summary" + extension(cfg.format)), render(summary, cfg.format));
  return summary;
}

inline std::optional<ExpansionProfile> load_profile(const ExperimentConfig& cfg) {
  if (cfg.expansion_profile.empty()) return std::nullopt;
  if (!std::filesystem::exists(cfg.expansion_profile)) {
    throw std::runtime_error("expansion profile not found: " + cfg.expansion_profile);
  }
  return aggregate_expansion(read_expansion_series(cfg.expansion_profile));
}

inline ordered_json cmd_bound(const ExperimentConfig& cfg) {
  const std::filesystem::path dir(cfg.output_dir);
  const auto preset = load_profile(cfg);
  ordered_json summary;
  summary["command"] = "bound";
  ordered_json conds = ordered_json::array();
  const auto specs = cfg.dataset == "two_point" ? std::vector<ConditionSpec>{{cfg.objective, 0.0, false}}
                                                 : conditions_of(cfg, cfg.objective);
  for (const ConditionSpec& spec : specs) {
    const ConditionResult res = run_condition(cfg, spec, preset ? &*preset : nullptr);
    write_condition(res, cfg, dir);
    conds.push_back(to_json(res.report));
  }
  summary["conditions"] = conds;
  write_text_file(dir / ("bound_summary" + extension(cfg.format)), render(summary, cfg.format));
  return summary;
}

/// One row per side of the comparison.
struct CompareRow {
  std::string condition;
  double train_nll = 0.0, test_nll = 0.0, gap_nll = 0.0;
  double stability_w2 = 0.0, stability_kl = 0.0;
  double mcallester_prior = 0.0, mcallester_q0 = 0.0;

  bool operator==(const CompareRow&) const = default;
};

inline std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream out;
  out << "condition,train_nll,test_nll,gap_nll,stability_w2,stability_kl,mcallester_prior,mcallester_q0\n";
  for (const auto& r : rows) {
    out << r.condition << ',' << format_double(r.train_nll) << ',' << format_double(r.test_nll) << ','
        << format_double(r.gap_nll) << ',' << format_double(r.stability_w2) << ',' << format_double(r.stability_kl)
        << ',' << format_double(r.mcallester_prior) << ',' << format_double(r.mcallester_q0) << '\n';
  }
  return out.str();
}

inline std::vector<CompareRow> parse_compare_csv(std::istream& in) {
  const auto rows = detail::read_csv_cells(in);
  std::vector<CompareRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& c = rows[i];
    if (c.size() != 8) throw std::runtime_error("compare table: malformed row " + std::to_string(i + 1));
    CompareRow r;
    r.condition = c[0];
    r.train_nll = detail::parse_real("compare", c[1]);
    r.test_nll = detail::parse_real("compare", c[2]);
    r.gap_nll = detail::parse_real("compare", c[3]);
    r.stability_w2 = detail::parse_real("compare", c[4]);
    r.stability_kl = detail::parse_real("compare", c[5]);
    r.mcallester_prior = detail::parse_real("compare", c[6]);
    r.mcallester_q0 = detail::parse_real("compare", c[7]);
    out.push_back(std::move(r));
  }
  return out;
}

inline CompareRow compare_row(const BoundReport& r) {
  return {r.label, r.train_nll, r.test_nll, r.gap_nll, r.stability_w2, r.stability_kl, r.prior.mcallester, r.q0.mcallester};
}

/// Both objectives on the first configured condition, identical seeds.
inline ordered_json cmd_compare(const ExperimentConfig& cfg) {
  const std::filesystem::path dir(cfg.output_dir);
  std::vector<CompareRow> rows;
  ordered_json summary;
  summary["command"] = "compare";
  ordered_json sides = ordered_json::array();
  std::vector<BoundReport> reports;
  for (std::size_t k = 0; k < cfg.compare_objectives.size(); ++k) {
    ConditionSpec spec{cfg.compare_objectives[k], cfg.random_label_fractions.front(), cfg.augmentations.front()};
    ConditionResult res = run_condition(cfg, spec);
    if (cfg.compare_objectives[0] == cfg.compare_objectives[1]) res.report.label += "_side" + std::to_string(k);
    write_condition(res, cfg, dir);
    rows.push_back(compare_row(res.report));
    sides.push_back(to_json(res.report));
    reports.push_back(res.report);
  }
  summary["sides"] = sides;
  summary["ordering"] = {
      {"higher_w2_bound", reports[0].stability_w2 >= reports[1].stability_w2 ? rows[0].condition : rows[1].condition},
      {"higher_gap_nll", reports[0].gap_nll >= reports[1].gap_nll ? rows[0].condition : rows[1].condition},
      {"higher_test_nll", reports[0].test_nll >= reports[1].test_nll ? rows[0].condition : rows[1].condition}};
  write_text_file(dir / "compare.csv", compare_csv(rows));
  write_text_file(dir / ("compare_summary" + extension(cfg.format)), render(summary, cfg.format));
  return summary;
}

struct CounterexampleCheck {
  std::string name;
  double value = 0.0;
  double expected = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// The four headline numbers of the two constructions with pass/fail.
inline std::vector<CounterexampleCheck> counterexample_checks() {
  std::vector<CounterexampleCheck> out;
  const auto kls = bernoulli_chain_kls({});
  out.push_back({"bernoulli_joint_kl", kls.joint_kl, 0.173, 1e-3, std::abs(kls.joint_kl - 0.173) <= 1e-3});
  out.push_back({"bernoulli_marginal_plus_conditional", kls.marginal_plus_conditional, 0.081, 1e-3,
                 std::abs(kls.marginal_plus_conditional - 0.081) <= 1e-3 &&
                     kls.joint_kl > kls.marginal_plus_conditional});
  LogisticExtremeSetup setup;
  setup.steps = 1000;
  setup.learning_rate = 0.1;
  const auto run = logistic_extreme_run(setup);
  out.push_back({"logistic_stability_bound", run.stability_bound, 0.0, 0.0, run.stability_bound == 0.0});
  bool increasing = true;
  for (std::size_t t = 1; t < run.pac_kl_trajectory.size(); ++t) {
    increasing = increasing && run.pac_kl_trajectory[t] > run.pac_kl_trajectory[t - 1];
  }
  const double final_kl = run.pac_kl_trajectory.back();
  out.push_back({"logistic_final_pac_kl", final_kl, 1e3, 0.0, increasing && final_kl > 1e3});
  return out;
}

inline ordered_json cmd_counterexamples() {
  ordered_json j;
  j["command"] = "counterexamples";
  ordered_json checks = ordered_json::array();
  bool all = true;
  for (const auto& c : counterexample_checks()) {
    checks.push_back({{"name", c.name},
                      {"value", c.value},
                      {"expected", c.expected},
                      {"tolerance", c.tolerance},
                      {"status", c.pass ? "PASS" : "FAIL"}});
    all = all && c.pass;
  }
  j["checks"] = checks;
  j["all_pass"] = all;
  return j;
}

/// PAC-Bayes comparators for a single trained posterior (first condition, first run).
inline ordered_json cmd_pacbayes(const ExperimentConfig& cfg) {
  const ConditionSpec spec{cfg.objective, cfg.random_label_fractions.front(), cfg.augmentations.front()};
  ordered_json j;
  j["command"] = "pacbayes";
  j["condition"] = spec.label();
  if (cfg.dataset == "two_point") {
    const auto res = run_two_point_condition(cfg, spec);
    j["objective_prior"] = to_json(res.report.prior);
    j["union_bound"] = res.report.union_bound;
    j["mcallester_by_epoch"] = res.report.pac_mcallester_by_epoch;
  } else {
    const ExperimentData data = build_datasets(cfg, spec.random_label_fraction);
    const VariationalProblem problem = make_problem(cfg, spec, data.train);
    const std::size_t n = data.train->size();
    const EpsilonStream stream(cfg.epsilon_seeds().front());
    const VarParams init = problem.initial_params(stream.init_seed());
    TrainConfig tc = cfg.train;
    const auto result = train(problem, init, tc, stream);
    const DiagGaussian q = posterior_of(result.params);
    const auto ub = union_bound(q, init.m, cfg.pac, n);
    j["n_train"] = n;
    j["delta"] = cfg.pac.delta;
    j["objective_prior"] = to_json(pac_summary(kl_diag_gauss(q, problem.objective().config().prior), cfg.pac, n));
    j["initialization_q0"] = to_json(pac_summary(kl_diag_gauss(q, posterior_of(init)), cfg.pac, n));
    j["union_bound"] = {{"bound", ub.bound}, {"j", ub.j}, {"lambda", ub.lambda}, {"kl", ub.kl}};
  }
  const std::filesystem::path dir(cfg.output_dir);
  write_text_file(dir / ("pacbayes" + extension(cfg.format)), render(j, cfg.format));
  return j;
}

}  // namespace vibound
