// Command-line entry point: expansion, bound, compare, counterexamples, pacbayes.
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "vibound/vibound.hpp"

namespace {

vibound::ExperimentConfig load(const std::string& path, const std::string& out, const std::string& seed,
                               const std::string& format) {
  std::map<std::string, std::string> kv;
  if (!path.empty()) kv = vibound::read_config_file(path);
  if (!out.empty()) kv["output_dir"] = out;
  if (!seed.empty()) kv["seed"] = seed;
  if (!format.empty()) kv["format"] = format;
  return vibound::config_from_pairs(kv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stability and PAC-Bayes generalization bounds for Gaussian variational networks"};
  app.require_subcommand(1);
  std::string config, out, seed, format;
  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config, "flat key = value config file");
    if (needs_config) opt->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--format", format, "text or json")->check(CLI::IsMember({"text", "json"}));
  };
  auto* expansion = app.add_subcommand("expansion", "estimate the per-step expansion profile");
  auto* bound = app.add_subcommand("bound", "train, measure gradient differences and assemble bounds");
  auto* compare = app.add_subcommand("compare", "ELBO against DLM under identical seeds");
  auto* counter = app.add_subcommand("counterexamples", "evaluate the two small constructions");
  auto* pacbayes = app.add_subcommand("pacbayes", "PAC-Bayes comparators for one trained posterior");
  for (auto* s : {expansion, bound, compare, pacbayes}) add_common(s, true);
  add_common(counter, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const auto cfg = load(config, out, seed, format);
    vibound::ordered_json doc;
    if (expansion->parsed()) {
      doc = vibound::cmd_expansion(cfg);
    } else if (bound->parsed()) {
      doc = vibound::cmd_bound(cfg);
    } else if (compare->parsed()) {
      doc = vibound::cmd_compare(cfg);
    } else if (pacbayes->parsed()) {
      doc = vibound::cmd_pacbayes(cfg);
    } else {
      doc = vibound::cmd_counterexamples();
      if (!out.empty()) {
        vibound::write_text_file(std::filesystem::path(out) / ("counterexamples" + vibound::extension(cfg.format)),
                                 vibound::render(doc, cfg.format));
      }
      std::cout << vibound::render(doc, cfg.format);
      return doc["all_pass"].get<bool>() ? 0 : 1;
    }
    std::cout << vibound::render(doc, cfg.format);
  } catch (const vibound::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const vibound::TrainingDivergence& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
