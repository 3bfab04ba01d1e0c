#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <toml.hpp>

#include "hfrl/metrics.hpp"
#include "hfrl/rl/learner.hpp"
#include "hfrl/traffic/network.hpp"

namespace hfrl::experiment {

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"fedavg", "cluster", "fomo", "decentralized", "centralized", "fixed", "actuated"};
  return m;
}

inline bool is_learning(const std::string& method) { return method != "fixed" && method != "actuated"; }

struct Scenario {
  std::string name;
  traffic::NetworkSpec network;
  traffic::DemandSpec demand;
};

// Named network/demand presets. The sensitivity variants use V = 300
// veh/lane/h with selected entries doubled.
inline Scenario scenario_preset(const std::string& name) {
  Scenario s;
  s.name = name;
  auto sensitivity = [&](std::initializer_list<const char*> doubled) {
    s.network = traffic::grid3x3();
    s.demand.inflow_per_lane = 300.0;
    for (const char* e : doubled) s.demand.demand_multipliers[e] = 2.0;
  };
  if (name == "grid1x1") {
    s.network = traffic::grid_spec(1, 1);
  } else if (name == "grid3x3") {
    s.network = traffic::grid3x3();
  } else if (name == "grid3x3_heavy") {
    s.network = traffic::grid3x3();
    s.demand.inflow_per_lane = 400.0;
  } else if (name == "grid5x5") {
    s.network = traffic::grid5x5();
  } else if (name == "grid5x5_heavy") {
    s.network = traffic::grid5x5();
    s.demand.inflow_per_lane = 400.0;
  } else if (name == "sensitivity1") {
    sensitivity({"W1"});
  } else if (name == "sensitivity2") {
    sensitivity({"S0", "S2"});
  } else if (name == "sensitivity3") {
    sensitivity({"S0", "E2"});
  } else if (name == "sensitivity4") {
    sensitivity({"S1", "N1"});
  } else if (name == "hetero3x3") {
    s.network = traffic::grid3x3();
    s.demand.demand_multipliers = {{"W0", 4.0}, {"N2", 4.0}};
  } else {
    throw std::invalid_argument("unknown scenario '" + name + "'");
  }
  return s;
}

struct HyperPreset {
  rl::ArchSpec arch;
  rl::TrainConfig train;
};

inline HyperPreset hyper_preset(const std::string& name) {
  HyperPreset p;
  p.train.grad_clip = 40.0;
  if (name == "table") {
    p.train.lr = 1e-4;
    p.train.gamma = 0.99;
    p.train.rollout_length = 20;
    p.train.minibatch_size = 20;
  } else if (name == "prose") {
    p.train.lr = 1e-3;
    p.train.gamma = 0.95;
    p.train.rollout_length = 240;
    p.train.minibatch_size = 240;
  } else if (name == "desk") {
    // Adam at the prose learning rate; 240-step fragments, 20-step minibatches.
    p.train.lr = 1e-3;
    p.train.gamma = 0.99;
    p.train.rollout_length = 240;
    p.train.minibatch_size = 20;
    p.train.optimizer = rl::OptimizerKind::adam;
    p.train.normalize_advantages = true;
  } else if (name == "paper-arch") {
    p = hyper_preset("table");
    p.arch.hidden = {256, 256};
    p.arch.activation = nn::Activation::relu;
  } else {
    throw std::invalid_argument("unknown hyperparameter preset '" + name + "'");
  }
  return p;
}

struct ExperimentConfig {
  Scenario scenario = scenario_preset("grid3x3");
  std::string method = "fedavg";
  std::size_t episodes = 1;             // evaluation episodes per evaluation point
  std::size_t steps_per_episode = 720;
  std::size_t local_steps = 240;        // environment steps per communication round
  std::size_t rounds = 40;              // communication rounds T
  std::size_t eval_every = 5;
  std::string preset = "table";
  rl::ArchSpec arch;
  rl::TrainConfig train;
  std::size_t clusters = 4;
  double alpha = 1.0;
  bool standardize_features = true;
  std::vector<std::uint64_t> seeds{1};
  std::string out = "runs/out";
  double fixed_green = 42.0;
  double actuated_gap = 3.0;
  metrics::CommCostModel comm;
  std::vector<std::size_t> snapshot_rounds;  // empty: {1, T/4, 3T/4, T}

  ExperimentConfig() {
    const auto p = hyper_preset(preset);
    arch = p.arch;
    train = p.train;
  }

  std::size_t agents() const {
    return static_cast<std::size_t>(scenario.network.rows) * static_cast<std::size_t>(scenario.network.cols);
  }

  std::vector<std::size_t> snapshots() const {
    if (!snapshot_rounds.empty()) return snapshot_rounds;
    std::set<std::size_t> s{1, std::max<std::size_t>(1, rounds / 4), std::max<std::size_t>(1, 3 * rounds / 4), rounds};
    return {s.begin(), s.end()};
  }

  void validate() const {
    if (std::find(known_methods().begin(), known_methods().end(), method) == known_methods().end())
      throw std::invalid_argument("unknown method '" + method + "'");
    scenario.network.validate();
    scenario.demand.validate();
    if (episodes < 1) throw std::invalid_argument("config: episodes must be >= 1");
    if (steps_per_episode < 1) throw std::invalid_argument("config: steps_per_episode must be >= 1");
    if (seeds.empty()) throw std::invalid_argument("config: at least one seed is required");
    if (!(fixed_green > 0.0)) throw std::invalid_argument("config: fixed_green must be positive");
    if (!(actuated_gap > 0.0)) throw std::invalid_argument("config: actuated_gap must be positive");
    comm.validate();
    if (!is_learning(method)) return;
    train.validate();
    if (rounds < 1 || local_steps < 1 || eval_every < 1)
      throw std::invalid_argument("config: rounds, local_steps and eval_every must be >= 1");
    if (steps_per_episode % local_steps != 0)
      throw std::invalid_argument("config: local_steps (" + std::to_string(local_steps) +
                                  ") must divide steps_per_episode (" + std::to_string(steps_per_episode) + ")");
    if (method == "cluster" && (clusters < 1 || clusters > agents()))
      throw std::invalid_argument("config: clusters must be in [1, " + std::to_string(agents()) + "]");
    if (method == "fomo" && !(alpha > 0.0)) throw std::invalid_argument("config: alpha must be positive");
    for (auto t : snapshot_rounds)
      if (t < 1 || t > rounds) throw std::invalid_argument("config: snapshot round outside [1, rounds]");
  }
};

namespace detail {

template <class T>
void read(const toml::table& t, const char* key, T& dst) {
  if (auto v = t[key].value<T>()) dst = *v;
}

inline void read_size(const toml::table& t, const char* key, std::size_t& dst) {
  if (auto v = t[key].value<std::int64_t>()) {
    if (*v < 0) throw std::invalid_argument(std::string("config: ") + key + " must be >= 0");
    dst = static_cast<std::size_t>(*v);
  }
}

inline std::vector<std::size_t> read_sizes(const toml::node_view<const toml::node>& n, const char* key) {
  std::vector<std::size_t> out;
  const auto* arr = n.as_array();
  if (!arr) throw std::invalid_argument(std::string("config: ") + key + " must be an array of integers");
  for (const auto& e : *arr) {
    auto v = e.value<std::int64_t>();
    if (!v || *v < 0) throw std::invalid_argument(std::string("config: ") + key + " must hold non-negative integers");
    out.push_back(static_cast<std::size_t>(*v));
  }
  return out;
}

}  // namespace detail

// Applies a parsed TOML tree on top of the defaults. Presets are resolved
// first so explicit keys override them.
inline ExperimentConfig config_from_toml(const toml::table& t) {
  ExperimentConfig c;
  if (auto s = t["scenario"].value<std::string>()) c.scenario = scenario_preset(*s);
  if (auto s = t["scale"].value<std::string>()) {
    if (*s == "paper-scale") {
      c.steps_per_episode = 1000;
      c.local_steps = 1000;
      c.rounds = 100;
    } else if (*s != "desk") {
      throw std::invalid_argument("unknown scale '" + *s + "'");
    }
  }
  if (auto s = t["preset"].value<std::string>()) {
    const auto p = hyper_preset(*s);
    c.preset = *s;
    c.arch = p.arch;
    c.train = p.train;
  }
  detail::read(t, "method", c.method);
  detail::read_size(t, "episodes", c.episodes);
  detail::read_size(t, "steps_per_episode", c.steps_per_episode);
  detail::read_size(t, "local_steps", c.local_steps);
  detail::read_size(t, "rounds", c.rounds);
  detail::read_size(t, "eval_every", c.eval_every);
  detail::read_size(t, "clusters", c.clusters);
  detail::read(t, "alpha", c.alpha);
  detail::read(t, "standardize_features", c.standardize_features);
  detail::read(t, "out", c.out);
  detail::read(t, "fixed_green", c.fixed_green);
  detail::read(t, "actuated_gap", c.actuated_gap);
  if (t.contains("seeds")) {
    c.seeds.clear();
    for (auto s : detail::read_sizes(t["seeds"], "seeds")) c.seeds.push_back(s);
  }
  if (t.contains("snapshot_rounds")) c.snapshot_rounds = detail::read_sizes(t["snapshot_rounds"], "snapshot_rounds");

  if (const auto* tr = t["train"].as_table()) {
    auto& x = c.train;
    detail::read(*tr, "lr", x.lr);
    detail::read(*tr, "gamma", x.gamma);
    detail::read_size(*tr, "horizon", x.horizon);
    detail::read_size(*tr, "rollout_length", x.rollout_length);
    detail::read_size(*tr, "minibatch_size", x.minibatch_size);
    detail::read_size(*tr, "epochs", x.epochs);
    detail::read(*tr, "grad_clip", x.grad_clip);
    detail::read(*tr, "normalize_advantages", x.normalize_advantages);
    detail::read(*tr, "value_coef", x.loss.value_coef);
    detail::read(*tr, "entropy_coef", x.loss.entropy_coef);
    detail::read(*tr, "entropy", x.loss.entropy);
    if (auto o = (*tr)["optimizer"].value<std::string>()) x.optimizer = rl::optimizer_from_string(*o);
    if (tr->contains("hidden")) c.arch.hidden = detail::read_sizes((*tr)["hidden"], "train.hidden");
    if (auto a = (*tr)["activation"].value<std::string>()) c.arch.activation = nn::activation_from_string(*a);
  }
  if (const auto* nt = t["network"].as_table()) {
    auto& n = c.scenario.network;
    detail::read(*nt, "lane_length", n.lane_length);
    detail::read(*nt, "speed_limit", n.speed_limit);
    detail::read(*nt, "jam_spacing", n.jam_spacing);
    detail::read(*nt, "saturation_flow", n.saturation_flow);
    detail::read(*nt, "min_green", n.timing.min_green);
    detail::read(*nt, "max_green", n.timing.max_green);
    detail::read(*nt, "yellow", n.timing.yellow);
    const bool resized = nt->contains("rows") || nt->contains("cols");
    if (auto v = (*nt)["rows"].value<int>()) n.rows = *v;
    if (auto v = (*nt)["cols"].value<int>()) n.cols = *v;
    if (resized) {
      n.row_roads = traffic::default_layout(n.rows);
      n.col_roads = traffic::default_layout(n.cols);
    }
  }
  if (const auto* dt = t["demand"].as_table()) {
    auto& d = c.scenario.demand;
    detail::read(*dt, "inflow_per_lane", d.inflow_per_lane);
    if (auto s = (*dt)["turns"].value<std::string>()) {
      if (*s == "real-world") d.turns = traffic::real_world_turns();
      else if (*s == "grid") d.turns = traffic::TurnRatios{};
      else throw std::invalid_argument("unknown turn preset '" + *s + "'");
    }
    detail::read(*dt, "straight", d.turns.straight);
    detail::read(*dt, "right", d.turns.right);
    detail::read(*dt, "left", d.turns.left);
    if (const auto* m = (*dt)["multipliers"].as_table())
      for (const auto& [k, v] : *m) {
        auto x = v.value<double>();
        if (!x) throw std::invalid_argument("config: demand multiplier for " + std::string(k.str()) + " must be a number");
        d.demand_multipliers[std::string(k.str())] = *x;
      }
  }
  if (const auto* ct = t["comm"].as_table()) {
    detail::read(*ct, "bytes_per_param", c.comm.bytes_per_param);
    detail::read(*ct, "obs_bytes", c.comm.obs_bytes);
    detail::read(*ct, "action_bytes", c.comm.action_bytes);
    detail::read(*ct, "vehicle_report_bytes", c.comm.vehicle_report_bytes);
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  toml::table t;
  try {
    t = toml::parse_file(path);
  } catch (const toml::parse_error& e) {
    throw std::invalid_argument("config " + path + ": " + std::string(e.description()));
  }
  return config_from_toml(t);
}

inline ExperimentConfig parse_config(std::string_view text) {
  toml::table t;
  try {
    t = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw std::invalid_argument("config: " + std::string(e.description()));
  }
  return config_from_toml(t);
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["scenario"] = c.scenario.name;
  j["rows"] = c.scenario.network.rows;
  j["cols"] = c.scenario.network.cols;
  j["inflow_per_lane"] = c.scenario.demand.inflow_per_lane;
  j["demand_multipliers"] = c.scenario.demand.demand_multipliers;
  j["turns"] = {c.scenario.demand.turns.straight, c.scenario.demand.turns.right, c.scenario.demand.turns.left};
  j["method"] = c.method;
  j["episodes"] = c.episodes;
  j["steps_per_episode"] = c.steps_per_episode;
  j["local_steps"] = c.local_steps;
  j["rounds"] = c.rounds;
  j["eval_every"] = c.eval_every;
  j["preset"] = c.preset;
  j["hidden"] = c.arch.hidden;
  j["activation"] = nn::to_string(c.arch.activation);
  j["lr"] = c.train.lr;
  j["gamma"] = c.train.gamma;
  j["horizon"] = c.train.horizon;
  j["rollout_length"] = c.train.rollout_length;
  j["minibatch_size"] = c.train.minibatch_size;
  j["epochs"] = c.train.epochs;
  j["optimizer"] = rl::to_string(c.train.optimizer);
  j["grad_clip"] = c.train.grad_clip;
  j["normalize_advantages"] = c.train.normalize_advantages;
  j["entropy_coef"] = c.train.loss.entropy ? c.train.loss.entropy_coef : 0.0;
  j["clusters"] = c.clusters;
  j["alpha"] = c.alpha;
  j["seeds"] = c.seeds;
  j["fixed_green"] = c.fixed_green;
  j["actuated_gap"] = c.actuated_gap;
  return j;
}

}  // namespace hfrl::experiment
