#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hfrl/experiment/analyze.hpp"
#include "hfrl/experiment/compare.hpp"
#include "hfrl/experiment/config.hpp"
#include "hfrl/experiment/runner.hpp"

namespace ex = hfrl::experiment;

int main(int argc, char** argv) {
  CLI::App app{"Federated traffic-signal control experiments"};
  app.require_subcommand(1);

  std::string config_path, method, out;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "train and evaluate one configuration");
  run->add_option("--config", config_path, "TOML experiment file")->required()->check(CLI::ExistingFile);
  run->add_option("--method", method, "override the method");
  run->add_option("--seed", seed, "run a single seed");
  run->add_option("--out", out, "output directory");

  std::string run_dir;
  std::string rounds_arg;
  ex::AnalyzeOptions aopt;
  std::string metric = "cosine";
  std::optional<std::uint64_t> aseed;
  auto* analyze = app.add_subcommand("analyze", "similarity and cluster analysis of a run");
  analyze->add_option("--run", run_dir, "artifact directory")->required()->check(CLI::ExistingDirectory);
  analyze->add_option("--rounds", rounds_arg, "comma-separated rounds, e.g. 1,25,75,100");
  analyze->add_option("--top-k", aopt.top_k, "similar intersections per agent");
  analyze->add_option("--groups", aopt.groups, "hierarchical cluster count");
  analyze->add_option("--seed", aseed, "seed to analyze (default: first)");
  analyze->add_option("--metric", metric, "cosine or neg-euclidean");

  std::vector<std::string> dirs;
  std::string json_out;
  auto* cmp = app.add_subcommand("compare", "mean and std per method across runs");
  cmp->add_option("dirs", dirs, "artifact directories")->required()->expected(2, -1);
  cmp->add_option("--json", json_out, "also write the table as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto cfg = ex::load_config(config_path);
      if (!method.empty()) cfg.method = method;
      if (seed) cfg.seeds = {*seed};
      if (!out.empty()) cfg.out = out;
      ex::run_experiment(cfg, std::cout);
    } else if (*analyze) {
      if (!rounds_arg.empty()) {
        std::size_t pos = 0;
        while (pos <= rounds_arg.size()) {
          const auto comma = rounds_arg.find(',', pos);
          const auto tok = rounds_arg.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
          if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
            throw std::invalid_argument("--rounds expects comma-separated round numbers, got '" + rounds_arg + "'");
          aopt.rounds.push_back(std::stoul(tok));
          if (comma == std::string::npos) break;
          pos = comma + 1;
        }
      }
      aopt.seed = aseed;
      aopt.metric = hfrl::analysis::metric_from_string(metric);
      ex::run_analysis(run_dir, aopt, std::cout);
    } else if (*cmp) {
      std::vector<nlohmann::json> summaries;
      for (const auto& d : dirs) summaries.push_back(ex::read_summary(d));
      const auto c = ex::compare(summaries);
      std::cout << ex::format_table(c);
      if (!json_out.empty()) ex::write_file(json_out, ex::to_json(c).dump(2) + "\n");
    }
  } catch (const hfrl::rl::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
