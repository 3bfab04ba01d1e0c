#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hfrl/traffic/simulation.hpp"

namespace hfrl::metrics {

struct EpisodeMetrics {
  std::optional<double> mean_travel_time;  // absent when nothing arrived
  double mean_waiting_time = 0.0;
  std::size_t completed_count = 0;
  std::size_t spawned_count = 0;
  std::vector<double> reward_series;  // per-step mean reward over agents

  double mean_reward() const {
    if (reward_series.empty()) return 0.0;
    double s = 0.0;
    for (double r : reward_series) s += r;
    return s / static_cast<double>(reward_series.size());
  }
};

// Mean of arrival - departure over completed vehicles.
inline std::optional<double> travel_time(std::span<const traffic::CompletedVehicle> done) {
  if (done.empty()) return std::nullopt;
  double s = 0.0;
  for (const auto& v : done) s += v.arrival_time - v.depart_time;
  return s / static_cast<double>(done.size());
}

// Mean halted time over every vehicle that entered the network, including
// those still active at the end of the episode.
inline double waiting_time(std::span<const traffic::Vehicle* const> active,
                           std::span<const traffic::CompletedVehicle> done, double dt = 1.0) {
  const std::size_t n = active.size() + done.size();
  if (n == 0) return 0.0;
  double s = 0.0;
  for (const auto* v : active) s += v->waiting_steps;
  for (const auto& v : done) s += v.waiting_steps;
  return s * dt / static_cast<double>(n);
}

inline EpisodeMetrics episode_metrics(const traffic::SimState& s, std::vector<double> rewards, double dt = 1.0) {
  EpisodeMetrics m;
  m.mean_travel_time = travel_time(s.completed);
  const auto active = traffic::active_vehicles(s);
  m.mean_waiting_time = waiting_time(active, s.completed, dt);
  m.completed_count = s.completed.size();
  m.spawned_count = s.spawned_total;
  m.reward_series = std::move(rewards);
  return m;
}

// Declared message sizes in bytes.
struct CommCostModel {
  double bytes_per_param = 4.0;
  double obs_bytes = 32.0;
  double action_bytes = 4.0;
  double vehicle_report_bytes = 16.0;

  void validate() const {
    if (!(bytes_per_param > 0 && obs_bytes > 0 && action_bytes > 0 && vehicle_report_bytes > 0))
      throw std::invalid_argument("comm model: all byte constants must be positive");
  }
};

// What a run (or one training episode of it) did, as needed by the cost model.
struct CommLog {
  std::size_t agents = 0;             // N intersections
  std::size_t params_per_agent = 0;   // P (actor + critic)
  std::size_t rounds = 0;             // communication rounds
  std::size_t control_steps = 0;      // environment steps
  std::uint64_t vehicle_steps = 0;    // sum over steps of active vehicles
};

struct CommCost {
  double params_up = 0.0;     // (1) edge -> server parameters
  double params_down = 0.0;   // (2) server -> edge parameters
  double actions = 0.0;       // (3) actions to the traffic lights
  double observations = 0.0;  // (4) observations from the traffic lights
  double vehicle_data = 0.0;  // (5) vehicle -> traffic light reports

  double total() const { return params_up + params_down + actions + observations + vehicle_data; }

  CommCost& operator+=(const CommCost& o) {
    params_up += o.params_up;
    params_down += o.params_down;
    actions += o.actions;
    observations += o.observations;
    vehicle_data += o.vehicle_data;
    return *this;
  }
};

inline bool is_federated(const std::string& method) {
  return method == "fedavg" || method == "cluster" || method == "fomo";
}

// Federated: parameters up and down once per agent per round, plus the
// per-step action/observation exchange between each light and its edge
// device and the vehicle reports. Decentralized: the per-step terms only.
// Centralized: no parameter exchange, but observations and actions make a
// second hop to and from the central server every step.
inline CommCost comm_cost(const CommLog& log, const CommCostModel& m, const std::string& method) {
  m.validate();
  CommCost c;
  const double N = static_cast<double>(log.agents);
  const double steps = static_cast<double>(log.control_steps);
  if (is_federated(method)) {
    const double per = static_cast<double>(log.params_per_agent) * m.bytes_per_param * N * static_cast<double>(log.rounds);
    c.params_up = per;
    c.params_down = per;
  } else if (method != "decentralized" && method != "centralized") {
    throw std::invalid_argument("comm_cost: unknown method '" + method + "'");
  }
  const double hops = method == "centralized" ? 2.0 : 1.0;
  c.actions = hops * m.action_bytes * N * steps;
  c.observations = hops * m.obs_bytes * N * steps;
  c.vehicle_data = m.vehicle_report_bytes * static_cast<double>(log.vehicle_steps);
  return c;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1), 0 for n < 2
};

// Welford's single-pass update.
inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd r;
  double m2 = 0.0;
  std::size_t n = 0;
  for (double x : xs) {
    ++n;
    const double d = x - r.mean;
    r.mean += d / static_cast<double>(n);
    m2 += d * (x - r.mean);
  }
  r.std = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0;
  return r;
}

}  // namespace hfrl::metrics
