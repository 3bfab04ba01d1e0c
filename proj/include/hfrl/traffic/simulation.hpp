#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hfrl/rng.hpp"
#include "hfrl/traffic/network.hpp"

namespace hfrl::traffic {

inline constexpr double kHaltSpeed = 0.1;  // m/s

struct Vehicle {
  std::uint64_t id = 0;
  std::vector<int> route;  // link ids, entry link first, exit link last
  std::size_t leg = 0;     // index into route of the current link
  double depart_time = 0.0;
  double position = 0.0;   // m from the upstream end of the current link
  double speed = 0.0;
  double overshoot = 0.0;  // distance past the stop line reachable this step
  int waiting_steps = 0;
};

struct CompletedVehicle {
  std::uint64_t id = 0;
  double depart_time = 0.0;
  double arrival_time = 0.0;
  int waiting_steps = 0;
};

struct Lane {
  std::deque<Vehicle> vehicles;  // front() is closest to the stop line
  double discharge_credit = 0.0;
};

struct Link {
  int id = 0;
  Heading heading = Heading::north;
  int from = -1;  // upstream intersection, -1 for a boundary entry
  int to = -1;    // downstream intersection, -1 for a boundary exit
  std::string entry_name;  // set on entry links only
  std::vector<Lane> lanes;

  bool is_entry() const { return from < 0; }
  bool is_exit() const { return to < 0; }
};

enum class LightColor { green, yellow, red };

// Fixed cycle: 0 NS-green, 1 NS-yellow, 2 EW-green, 3 EW-yellow.
struct SignalState {
  int phase_index = 0;
  double time_in_phase = 0.0;
  double min_green = 4.0;
  double max_green = 120.0;
  double yellow_duration = 3.0;
  std::optional<double> last_discharge;  // clock of the latest discharge in this phase

  bool is_green() const { return phase_index % 2 == 0; }

  LightColor color_for(Heading h) const {
    const bool ns_phase = phase_index < 2;
    if (ns_phase != is_north_south(h)) return LightColor::red;
    return is_green() ? LightColor::green : LightColor::yellow;
  }
};

struct Intersection {
  int id = 0;
  int row = 0;
  int col = 0;
  std::string name;
  std::array<int, 4> inbound{};   // by heading of travel of the arriving link
  std::array<int, 4> outbound{};  // by heading of travel of the leaving link
};

struct ScheduledArrival {
  double time = 0.0;
  std::vector<int> route;
};

struct EntryLane {
  int link = 0;
  int lane = 0;
  std::deque<ScheduledArrival> future;  // not yet due
  std::deque<Vehicle> pending;          // due but blocked by a full entry lane
};

struct Observation {
  double occupancy = 0.0;
  double queue_ratio = 0.0;
  double avg_speed = 1.0;
  double phase_green = 0.0;
  double phase_yellow = 0.0;
  double phase_red = 0.0;

  static constexpr std::size_t dim = 6;

  std::array<double, dim> to_array() const {
    return {occupancy, queue_ratio, avg_speed, phase_green, phase_yellow, phase_red};
  }
  std::vector<double> to_vector() const {
    auto a = to_array();
    return {a.begin(), a.end()};
  }
};

struct SimState {
  NetworkSpec spec;
  double clock = 0.0;
  std::vector<Link> links;
  std::vector<Intersection> intersections;
  std::vector<SignalState> signals;
  std::vector<EntryLane> entries;
  std::vector<CompletedVehicle> completed;
  std::uint64_t spawned_total = 0;
  std::uint64_t vehicle_steps = 0;  // sum over steps of active vehicles
  bool hold_all_red = false;        // diagnostic override: every head red

  std::size_t num_intersections() const { return intersections.size(); }

  std::size_t active_count() const {
    std::size_t n = 0;
    for (const auto& l : links)
      for (const auto& lane : l.lanes) n += lane.vehicles.size();
    return n;
  }

  std::size_t pending_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.pending.size();
    return n;
  }

  std::size_t scheduled_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.future.size();
    return n;
  }

  LightColor color(const Link& l) const {
    if (l.is_exit()) return LightColor::green;
    if (hold_all_red) return LightColor::red;
    return signals[static_cast<std::size_t>(l.to)].color_for(l.heading);
  }

  int find_intersection(const std::string& name) const {
    for (const auto& i : intersections)
      if (i.name == name) return i.id;
    throw std::out_of_range("unknown intersection '" + name + "'");
  }

  int find_entry_link(const std::string& name) const {
    for (const auto& l : links)
      if (l.entry_name == name) return l.id;
    throw std::out_of_range("unknown entry '" + name + "'");
  }
};

inline std::string intersection_name(int row, int col) {
  std::string s;
  if (col < 26) s.push_back(static_cast<char>('A' + col));
  else s = "c" + std::to_string(col) + "r";
  return s + std::to_string(row);
}

namespace detail {

inline int add_link(SimState& s, Heading h, int from, int to, int lanes, std::string entry = {}) {
  Link l;
  l.id = static_cast<int>(s.links.size());
  l.heading = h;
  l.from = from;
  l.to = to;
  l.entry_name = std::move(entry);
  l.lanes.resize(static_cast<std::size_t>(lanes));
  s.links.push_back(std::move(l));
  return s.links.back().id;
}

inline bool lane_has_room(const Lane& lane, const NetworkSpec& spec) {
  if (lane.vehicles.empty()) return true;
  if (static_cast<int>(lane.vehicles.size()) >= spec.lane_capacity()) return false;
  return lane.vehicles.back().position >= spec.jam_spacing - 1e-9;
}

// Lane of `link` with room and the fewest vehicles (lowest index on ties), or -1.
inline int pick_lane(const Link& link, const NetworkSpec& spec) {
  int best = -1;
  std::size_t best_n = 0;
  for (std::size_t i = 0; i < link.lanes.size(); ++i) {
    if (!lane_has_room(link.lanes[i], spec)) continue;
    if (best < 0 || link.lanes[i].vehicles.size() < best_n) {
      best = static_cast<int>(i);
      best_n = link.lanes[i].vehicles.size();
    }
  }
  return best;
}

}  // namespace detail

// Builds an empty grid network: every intersection has one inbound and one
// outbound link per heading; boundary approaches are fed by entry links and
// drained by exit links.
inline SimState build_network(const NetworkSpec& spec) {
  spec.validate();
  SimState s;
  s.spec = spec;
  const int R = spec.rows, C = spec.cols;
  auto id_of = [C](int r, int c) { return r * C + c; };
  s.intersections.resize(static_cast<std::size_t>(R * C));
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      auto& in = s.intersections[static_cast<std::size_t>(id_of(r, c))];
      in.id = id_of(r, c);
      in.row = r;
      in.col = c;
      in.name = intersection_name(r, c);
      in.inbound.fill(-1);
      in.outbound.fill(-1);
    }
  auto lanes_of = [&](Heading h, int r, int c) {
    return is_north_south(h) ? spec.lanes_for(spec.col_roads[static_cast<std::size_t>(c)])
                             : spec.lanes_for(spec.row_roads[static_cast<std::size_t>(r)]);
  };
  // Outbound links from every intersection.
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      for (int hi = 0; hi < 4; ++hi) {
        const auto h = static_cast<Heading>(hi);
        int nr = r, nc = c;
        switch (h) {
          case Heading::north: ++nr; break;
          case Heading::south: --nr; break;
          case Heading::east: ++nc; break;
          case Heading::west: --nc; break;
        }
        const bool inside = nr >= 0 && nr < R && nc >= 0 && nc < C;
        const int to = inside ? id_of(nr, nc) : -1;
        const int lid = detail::add_link(s, h, id_of(r, c), to, lanes_of(h, r, c));
        s.intersections[static_cast<std::size_t>(id_of(r, c))].outbound[static_cast<std::size_t>(hi)] = lid;
        if (inside) s.intersections[static_cast<std::size_t>(to)].inbound[static_cast<std::size_t>(hi)] = lid;
      }
  // Entry links feeding the boundary.
  for (int c = 0; c < C; ++c) {
    const int lid_s = detail::add_link(s, Heading::north, -1, id_of(0, c), lanes_of(Heading::north, 0, c), "S" + std::to_string(c));
    s.intersections[static_cast<std::size_t>(id_of(0, c))].inbound[static_cast<std::size_t>(Heading::north)] = lid_s;
    const int lid_n = detail::add_link(s, Heading::south, -1, id_of(R - 1, c), lanes_of(Heading::south, R - 1, c), "N" + std::to_string(c));
    s.intersections[static_cast<std::size_t>(id_of(R - 1, c))].inbound[static_cast<std::size_t>(Heading::south)] = lid_n;
  }
  for (int r = 0; r < R; ++r) {
    const int lid_w = detail::add_link(s, Heading::east, -1, id_of(r, 0), lanes_of(Heading::east, r, 0), "W" + std::to_string(r));
    s.intersections[static_cast<std::size_t>(id_of(r, 0))].inbound[static_cast<std::size_t>(Heading::east)] = lid_w;
    const int lid_e = detail::add_link(s, Heading::west, -1, id_of(r, C - 1), lanes_of(Heading::west, r, C - 1), "E" + std::to_string(r));
    s.intersections[static_cast<std::size_t>(id_of(r, C - 1))].inbound[static_cast<std::size_t>(Heading::west)] = lid_e;
  }
  for (const auto& in : s.intersections)
    for (int k = 0; k < 4; ++k)
      if (in.inbound[static_cast<std::size_t>(k)] < 0 || in.outbound[static_cast<std::size_t>(k)] < 0)
        throw std::logic_error("network: intersection " + in.name + " is missing an approach");

  SignalState sig;
  sig.min_green = spec.timing.min_green;
  sig.max_green = spec.timing.max_green;
  sig.yellow_duration = spec.timing.yellow;
  s.signals.assign(s.intersections.size(), sig);

  for (const auto& l : s.links)
    if (l.is_entry())
      for (std::size_t k = 0; k < l.lanes.size(); ++k) s.entries.push_back({l.id, static_cast<int>(k), {}, {}});
  return s;
}

// Draws a route starting on `entry_link`, turning at each intersection
// according to `turns` until the vehicle reaches an exit link.
inline std::vector<int> draw_route(const SimState& s, int entry_link, const TurnRatios& turns, RngStream& rng) {
  std::vector<int> route{entry_link};
  const std::array<double, 3> w{turns.straight, turns.right, turns.left};
  const std::size_t max_legs = static_cast<std::size_t>(4 * (s.spec.rows + s.spec.cols) + 4);
  int cur = entry_link;
  while (!s.links[static_cast<std::size_t>(cur)].is_exit()) {
    const auto& l = s.links[static_cast<std::size_t>(cur)];
    Heading next = l.heading;
    // Past the leg cap only straight movements are drawn, which always exit.
    if (route.size() < max_legs) {
      switch (rng.categorical(w)) {
        case 1: next = turn_right(l.heading); break;
        case 2: next = turn_left(l.heading); break;
        default: break;
      }
    }
    cur = s.intersections[static_cast<std::size_t>(l.to)].outbound[static_cast<std::size_t>(next)];
    route.push_back(cur);
  }
  return route;
}

// Replaces the arrival schedule with seeded Poisson arrivals on every entry
// lane over [0, horizon] seconds. Routes are fixed at generation time.
inline void schedule_demand(SimState& s, const DemandSpec& demand, std::uint64_t seed, double horizon = 3600.0) {
  demand.validate();
  for (const auto& [name, m] : demand.demand_multipliers) (void)s.find_entry_link(name);
  for (std::size_t e = 0; e < s.entries.size(); ++e) {
    auto& entry = s.entries[e];
    entry.future.clear();
    const auto& link = s.links[static_cast<std::size_t>(entry.link)];
    const double rate = demand.inflow_per_lane * demand.multiplier(link.entry_name) / 3600.0;
    if (rate <= 0.0) continue;
    RngStream rng(seed, e);
    double t = 0.0;
    while (true) {
      t += rng.exponential(rate);
      if (t > horizon) break;
      entry.future.push_back({t, draw_route(s, entry.link, demand.turns, rng)});
    }
  }
}

// Advances the network by dt seconds. actions[i] == 1 asks intersection i to
// leave its current green phase.
inline void step(SimState& s, std::span<const int> actions, double dt = 1.0) {
  if (actions.size() != s.intersections.size())
    throw std::invalid_argument("step: expected " + std::to_string(s.intersections.size()) + " actions, got " +
                                std::to_string(actions.size()));
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  const auto& spec = s.spec;
  const double t_end = s.clock + dt;

  // (a) signal logic
  for (std::size_t i = 0; i < s.signals.size(); ++i) {
    const int a = actions[i];
    if (a != 0 && a != 1) throw std::invalid_argument("step: actions must be 0 or 1");
    auto& sig = s.signals[i];
    bool advance = false;
    if (sig.is_green()) {
      advance = sig.time_in_phase >= sig.max_green - 1e-9 ||
                (a == 1 && sig.time_in_phase >= sig.min_green - 1e-9);
    } else {
      advance = sig.time_in_phase >= sig.yellow_duration - 1e-9;
    }
    if (advance) {
      sig.phase_index = (sig.phase_index + 1) % 4;
      sig.time_in_phase = 0.0;
      sig.last_discharge.reset();
    }
  }

  // (b1) release due arrivals into the pending queues, then insert.
  for (auto& e : s.entries) {
    while (!e.future.empty() && e.future.front().time <= s.clock + 1e-9) {
      Vehicle v;
      v.id = s.spawned_total++;
      v.route = std::move(e.future.front().route);
      e.future.pop_front();
      e.pending.push_back(std::move(v));
    }
    auto& lane = s.links[static_cast<std::size_t>(e.link)].lanes[static_cast<std::size_t>(e.lane)];
    if (!e.pending.empty() && detail::lane_has_room(lane, spec)) {
      Vehicle v = std::move(e.pending.front());
      e.pending.pop_front();
      v.depart_time = s.clock;
      v.position = 0.0;
      v.speed = 0.0;
      lane.vehicles.push_back(std::move(v));
    }
  }

  // (b2) movement: free flow at the speed limit up to the stop line or the
  // back of the vehicle ahead.
  const double reach = spec.speed_limit * dt;
  for (auto& link : s.links)
    for (auto& lane : link.lanes) {
      double limit = link.is_exit() ? std::numeric_limits<double>::infinity() : spec.lane_length;
      bool leader = true;
      for (auto& v : lane.vehicles) {
        const double target = std::max(v.position, std::min(v.position + reach, limit));
        v.overshoot = leader && !link.is_exit() ? std::max(0.0, v.position + reach - spec.lane_length) : 0.0;
        v.speed = (target - v.position) / dt;
        v.position = target;
        limit = v.position - spec.jam_spacing;
        leader = false;
      }
    }

  // (b3) arrivals at the network boundary
  for (auto& link : s.links) {
    if (!link.is_exit()) continue;
    for (auto& lane : link.lanes)
      while (!lane.vehicles.empty() && lane.vehicles.front().position >= spec.lane_length - 1e-9) {
        const auto& v = lane.vehicles.front();
        const double past = v.position - spec.lane_length;
        const double arrival = v.speed > 0.0 ? t_end - std::min(dt, past / v.speed) : t_end;
        s.completed.push_back({v.id, v.depart_time, arrival, v.waiting_steps});
        lane.vehicles.pop_front();
      }
  }

  // (b4) queue-server discharge across green stop lines. Links are visited
  // in id order so results never depend on container iteration details.
  const double per_step = spec.saturation_flow / 3600.0 * dt;
  const double cap = std::max(1.0, per_step);
  for (auto& link : s.links) {
    if (link.is_exit()) continue;
    const bool green = s.color(link) == LightColor::green;
    for (auto& lane : link.lanes) {
      if (!green) {
        lane.discharge_credit = 0.0;
        continue;
      }
      lane.discharge_credit = std::min(cap, lane.discharge_credit + per_step);
      while (lane.discharge_credit >= 1.0 - 1e-12 && !lane.vehicles.empty() &&
             lane.vehicles.front().position >= spec.lane_length - 1e-9) {
        Vehicle& v = lane.vehicles.front();
        auto& next = s.links[static_cast<std::size_t>(v.route[v.leg + 1])];
        const int k = detail::pick_lane(next, spec);
        if (k < 0) break;  // spillback
        Vehicle moved = std::move(v);
        lane.vehicles.pop_front();
        auto& dest = next.lanes[static_cast<std::size_t>(k)].vehicles;
        double pos = std::min(moved.overshoot, spec.lane_length);
        if (!dest.empty()) pos = std::min(pos, dest.back().position - spec.jam_spacing);
        moved.leg += 1;
        moved.position = std::max(0.0, pos);
        moved.overshoot = 0.0;
        next.lanes[static_cast<std::size_t>(k)].vehicles.push_back(std::move(moved));
        lane.discharge_credit -= 1.0;
        s.signals[static_cast<std::size_t>(link.to)].last_discharge = t_end;
      }
    }
  }

  // (c) clocks and waiting counters
  std::uint64_t active = 0;
  for (auto& link : s.links)
    for (auto& lane : link.lanes)
      for (auto& v : lane.vehicles) {
        ++active;
        if (v.speed <= kHaltSpeed) ++v.waiting_steps;
      }
  s.vehicle_steps += active;
  for (auto& sig : s.signals) sig.time_in_phase += dt;
  s.clock = t_end;
}

inline void step(SimState& s, const std::vector<int>& actions, double dt = 1.0) {
  step(s, std::span<const int>(actions.data(), actions.size()), dt);
}

inline Observation observe(const SimState& s, int intersection) {
  if (intersection < 0 || static_cast<std::size_t>(intersection) >= s.intersections.size())
    throw std::out_of_range("observe: unknown intersection " + std::to_string(intersection));
  const auto& in = s.intersections[static_cast<std::size_t>(intersection)];
  const auto& spec = s.spec;
  Observation o;
  double occ = 0.0, queue = 0.0, speed_sum = 0.0;
  std::size_t lanes = 0, vehicles = 0, green = 0, yellow = 0, red = 0;
  for (int lid : in.inbound) {
    const auto& link = s.links[static_cast<std::size_t>(lid)];
    const auto color = s.color(link);
    for (const auto& lane : link.lanes) {
      ++lanes;
      std::size_t halted = 0;
      for (const auto& v : lane.vehicles) {
        speed_sum += v.speed;
        if (v.speed <= kHaltSpeed) ++halted;
      }
      vehicles += lane.vehicles.size();
      occ += std::min(1.0, static_cast<double>(lane.vehicles.size()) * spec.jam_spacing / spec.lane_length);
      queue += std::min(1.0, static_cast<double>(halted) * spec.jam_spacing / spec.lane_length);
      switch (color) {
        case LightColor::green: ++green; break;
        case LightColor::yellow: ++yellow; break;
        case LightColor::red: ++red; break;
      }
    }
  }
  const double n = static_cast<double>(lanes);
  o.occupancy = occ / n;
  o.queue_ratio = queue / n;
  o.avg_speed = vehicles == 0 ? 1.0 : std::clamp(speed_sum / static_cast<double>(vehicles) / spec.speed_limit, 0.0, 1.0);
  o.phase_green = static_cast<double>(green) / n;
  o.phase_yellow = static_cast<double>(yellow) / n;
  o.phase_red = static_cast<double>(red) / n;
  return o;
}

// R = -(o + q)^2
inline double local_reward(const Observation& obs) {
  const double c = obs.occupancy + obs.queue_ratio;
  return -c * c;
}

// All active vehicles, in link/lane order.
inline std::vector<const Vehicle*> active_vehicles(const SimState& s) {
  std::vector<const Vehicle*> out;
  for (const auto& l : s.links)
    for (const auto& lane : l.lanes)
      for (const auto& v : lane.vehicles) out.push_back(&v);
  return out;
}

}  // namespace hfrl::traffic
