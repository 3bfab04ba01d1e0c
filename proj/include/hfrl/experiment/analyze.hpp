#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfrl/analysis.hpp"
#include "hfrl/experiment/compare.hpp"
#include "hfrl/experiment/runner.hpp"
#include "hfrl/rl/checkpoint.hpp"
#include "hfrl/svg.hpp"
#include "hfrl/traffic/simulation.hpp"

namespace hfrl::experiment {

struct AnalyzeOptions {
  std::vector<std::size_t> rounds;  // empty: every stored snapshot
  std::size_t top_k = 4;
  std::size_t groups = 2;
  std::optional<std::uint64_t> seed;
  analysis::Metric metric = analysis::Metric::cosine;
};

inline std::vector<std::size_t> snapshot_rounds_on_disk(const fs::path& seed_dir) {
  std::vector<std::size_t> out;
  if (!fs::exists(seed_dir)) return out;
  for (const auto& e : fs::directory_iterator(seed_dir)) {
    const auto name = e.path().filename().string();
    if (e.is_directory() && name.rfind("round_", 0) == 0) out.push_back(std::stoul(name.substr(6)));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::vector<double>> load_agent_params(const fs::path& round_dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(round_dir))
    if (e.path().extension() == ".ckpt") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<std::vector<double>> out;
  for (const auto& f : files) out.push_back(rl::load_checkpoint(f.string()).params.flatten());
  return out;
}

inline std::string join_rounds(const std::vector<std::size_t>& v) {
  std::string s;
  for (auto x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

// Similarity matrices, hierarchical clusters and top-k lists for stored
// parameter snapshots of one seed, plus importance and cluster-label
// series when the run logged them.
inline void run_analysis(const fs::path& run, const AnalyzeOptions& opt, std::ostream& log) {
  const auto summary = read_summary(run);
  const auto& cfg = summary.at("config");
  const int rows = cfg.at("rows").get<int>(), cols = cfg.at("cols").get<int>();
  const std::uint64_t seed = opt.seed ? *opt.seed : summary.at("seeds").at(0).at("seed").get<std::uint64_t>();
  std::vector<std::string> names;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) names.push_back(traffic::intersection_name(r, c));

  const auto seed_dir = run / "params" / ("seed_" + std::to_string(seed));
  const auto available = snapshot_rounds_on_disk(seed_dir);
  if (available.empty()) throw std::runtime_error("no parameter snapshots for seed " + std::to_string(seed) + " in " + run.string());
  const auto wanted = opt.rounds.empty() ? available : opt.rounds;
  for (auto t : wanted)
    if (!std::binary_search(available.begin(), available.end(), t))
      throw std::out_of_range("round " + std::to_string(t) + " has no snapshot; available rounds: " + join_rounds(available));

  std::vector<nlohmann::json> rounds_log;
  if (fs::exists(run / "rounds.jsonl")) rounds_log = analysis::read_rounds((run / "rounds.jsonl").string(), seed);
  std::vector<analysis::Snapshot> snaps;
  if (!rounds_log.empty()) {
    std::vector<std::uint64_t> w(wanted.begin(), wanted.end());
    snaps = analysis::snapshot_series(rounds_log, w);
  }

  nlohmann::json top;
  for (std::size_t idx = 0; idx < wanted.size(); ++idx) {
    const auto t = wanted[idx];
    const auto params = load_agent_params(seed_dir / ("round_" + std::to_string(t)));
    if (params.size() < 2) throw std::runtime_error("analysis needs per-agent models (found " + std::to_string(params.size()) + ")");
    auto sim = analysis::similarity(params, opt.metric);
    sim.round = t;
    for (const auto& d : sim.diagnostics) log << "  round " << t << ": " << d << "\n";

    std::string csv = "agent";
    for (std::size_t j = 0; j < params.size(); ++j) csv += "," + names[j];
    csv += "\n";
    for (std::size_t i = 0; i < params.size(); ++i) {
      csv += names[i];
      for (std::size_t j = 0; j < params.size(); ++j) csv += "," + fmt(sim(i, j));
      csv += "\n";
    }
    write_file(run / ("similarity_round_" + std::to_string(t) + ".csv"), csv);

    const auto groups = std::min(opt.groups, params.size());
    const auto hc = analysis::hierarchical_cluster(sim, groups);
    nlohmann::json cj;
    cj["round"] = t;
    cj["seed"] = seed;
    cj["metric"] = analysis::to_string(opt.metric);
    cj["agents"] = names;
    cj["hierarchical"]["groups"] = groups;
    cj["hierarchical"]["labels"] = hc.labels;
    cj["hierarchical"]["linkage"] = hc.dendrogram.linkage;
    for (const auto& m : hc.dendrogram.merges)
      cj["hierarchical"]["merges"].push_back({{"a", m.a}, {"b", m.b}, {"height", m.height}, {"size", m.size}});
    if (!snaps.empty()) {
      const auto& s = snaps[idx];
      if (!s.labels.empty()) cj["kmeans_labels"] = s.labels;
      if (!s.importance.empty()) {
        const auto aff = analysis::importance_affinity(s.importance);
        cj["importance_groups"] = analysis::hierarchical_cluster(aff, groups).labels;
        cj["importance"] = s.importance;
      }
    }
    nlohmann::json tk;
    const auto k = std::min(opt.top_k, params.size() - 1);
    for (std::size_t i = 0; i < params.size(); ++i) {
      nlohmann::json lst = nlohmann::json::array();
      for (auto j : analysis::top_k_similar(sim, i, k)) lst.push_back({{"agent", names[j]}, {"similarity", sim(i, j)}});
      tk[names[i]] = lst;
    }
    cj["top_k"] = tk;
    write_file(run / ("clusters_round_" + std::to_string(t) + ".json"), cj.dump(2) + "\n");
    write_file(run / ("heatmap_round_" + std::to_string(t) + ".svg"),
               svg::heatmap(sim.values, std::vector<std::string>(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(params.size())),
                            "parameter similarity, round " + std::to_string(t)));
    top["rounds"][std::to_string(t)] = tk;
    log << "  round " << t << ": hierarchical groups " << nlohmann::json(hc.labels).dump() << "\n";
  }
  top["seed"] = seed;
  top["k"] = opt.top_k;
  top["final_round"] = wanted.back();
  write_file(run / "top_k.json", top.dump(2) + "\n");

  // Importance-weight evolution over every logged round.
  bool any = false;
  std::string evo = "round,receiver,candidate,weight\n";
  for (const auto& j : rounds_log) {
    if (!j.contains("importance")) continue;
    any = true;
    const auto rho = j["importance"].get<std::vector<std::vector<double>>>();
    for (std::size_t n = 0; n < rho.size(); ++n)
      for (std::size_t i = 0; i < rho[n].size(); ++i)
        evo += std::to_string(j["round"].get<std::uint64_t>()) + "," + names[n] + "," + names[i] + "," + fmt(rho[n][i]) + "\n";
  }
  if (any) write_file(run / "importance_evolution.csv", evo);
  log << "analysis written to " << run.string() << "\n";
}

}  // namespace hfrl::experiment
