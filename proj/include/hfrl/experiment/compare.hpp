#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfrl/experiment/config.hpp"
#include "hfrl/metrics.hpp"

namespace hfrl::experiment {

struct MethodRow {
  std::string method;
  std::size_t seeds = 0;
  metrics::MeanStd travel_time;
  metrics::MeanStd waiting_time;
  metrics::MeanStd mean_reward;
  std::map<std::string, metrics::MeanStd> comm;  // per-episode bytes by component
  int rank = 0;
  bool flagged = false;  // trained method not better than fixed-time
};

struct Comparison {
  std::string scenario;
  std::vector<MethodRow> rows;  // in rank order
};

inline nlohmann::json read_summary(const std::filesystem::path& dir) {
  std::ifstream f(dir / "summary.json");
  if (!f) throw std::runtime_error("no summary.json in " + dir.string());
  return nlohmann::json::parse(f);
}

// Per-method mean and sample std of the final evaluation across seeds.
// Directories sharing a method pool their seeds.
inline Comparison compare(const std::vector<nlohmann::json>& summaries) {
  if (summaries.size() < 2) throw std::invalid_argument("compare: need at least two runs");
  Comparison c;
  c.scenario = summaries[0].at("scenario").get<std::string>();
  std::map<std::string, std::vector<const nlohmann::json*>> by_method;
  std::vector<std::string> order;
  for (const auto& s : summaries) {
    const auto sc = s.at("scenario").get<std::string>();
    if (sc != c.scenario) throw std::invalid_argument("compare: scenario mismatch (" + c.scenario + " vs " + sc + ")");
    const auto m = s.at("method").get<std::string>();
    if (!by_method.count(m)) order.push_back(m);
    for (const auto& seed : s.at("seeds")) by_method[m].push_back(&seed);
  }
  static const char* components[] = {"params_up", "params_down", "actions", "observations", "vehicle_data", "total"};
  for (const auto& m : order) {
    MethodRow r;
    r.method = m;
    std::vector<double> tt, wt, rw;
    std::map<std::string, std::vector<double>> cc;
    for (const auto* s : by_method[m]) {
      const auto& fin = s->at("final");
      if (!fin.at("travel_time").is_null()) tt.push_back(fin["travel_time"].get<double>());
      wt.push_back(fin.at("waiting_time").get<double>());
      rw.push_back(fin.at("mean_reward").get<double>());
      for (const char* k : components) cc[k].push_back(s->at("comm_per_episode").at(k).get<double>());
    }
    r.seeds = by_method[m].size();
    r.travel_time = metrics::mean_std(tt);
    r.waiting_time = metrics::mean_std(wt);
    r.mean_reward = metrics::mean_std(rw);
    for (auto& [k, v] : cc) r.comm[k] = metrics::mean_std(v);
    c.rows.push_back(std::move(r));
  }
  std::stable_sort(c.rows.begin(), c.rows.end(),
                   [](const MethodRow& a, const MethodRow& b) { return a.travel_time.mean < b.travel_time.mean; });
  const MethodRow* fixed = nullptr;
  for (std::size_t i = 0; i < c.rows.size(); ++i) {
    c.rows[i].rank = static_cast<int>(i) + 1;
    if (c.rows[i].method == "fixed") fixed = &c.rows[i];
  }
  if (fixed)
    for (auto& r : c.rows)
      if (is_learning(r.method) && r.travel_time.mean >= fixed->travel_time.mean) r.flagged = true;
  return c;
}

inline nlohmann::json to_json(const Comparison& c) {
  nlohmann::json j;
  j["scenario"] = c.scenario;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : c.rows) {
    nlohmann::json x{{"method", r.method},
                     {"rank", r.rank},
                     {"seeds", r.seeds},
                     {"travel_time", {{"mean", r.travel_time.mean}, {"std", r.travel_time.std}}},
                     {"waiting_time", {{"mean", r.waiting_time.mean}, {"std", r.waiting_time.std}}},
                     {"mean_reward", {{"mean", r.mean_reward.mean}, {"std", r.mean_reward.std}}},
                     {"not_better_than_fixed", r.flagged}};
    for (const auto& [k, v] : r.comm) x["comm_per_episode"][k] = {{"mean", v.mean}, {"std", v.std}};
    j["rows"].push_back(std::move(x));
  }
  return j;
}

inline std::string format_table(const Comparison& c) {
  std::string out = "scenario " + c.scenario + "\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-4s %-13s %5s %20s %20s %24s\n", "rank", "method", "seeds", "travel time (s)",
                "waiting time (s)", "comm bytes/episode");
  out += buf;
  for (const auto& r : c.rows) {
    const auto& tot = r.comm.at("total");
    std::snprintf(buf, sizeof buf, "%-4d %-13s %5zu %11.2f +- %-6.2f %11.2f +- %-6.2f %14.0f +- %-8.0f%s\n", r.rank,
                  r.method.c_str(), r.seeds, r.travel_time.mean, r.travel_time.std, r.waiting_time.mean,
                  r.waiting_time.std, tot.mean, tot.std, r.flagged ? "  [not better than fixed]" : "");
    out += buf;
  }
  return out;
}

}  // namespace hfrl::experiment
