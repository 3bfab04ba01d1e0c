#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace hfrl::traffic {

enum class RoadClass { minor, major, central };

// Direction of travel. Rows grow northwards, columns grow eastwards.
enum class Heading { north = 0, east = 1, south = 2, west = 3 };

inline constexpr Heading turn_right(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 1) % 4); }
inline constexpr Heading turn_left(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 3) % 4); }
inline constexpr bool is_north_south(Heading h) { return h == Heading::north || h == Heading::south; }

inline std::string to_string(RoadClass c) {
  switch (c) {
    case RoadClass::minor: return "minor";
    case RoadClass::major: return "major";
    case RoadClass::central: return "central";
  }
  return "?";
}

inline RoadClass road_class_from_string(const std::string& s) {
  if (s == "minor") return RoadClass::minor;
  if (s == "major") return RoadClass::major;
  if (s == "central") return RoadClass::central;
  throw std::invalid_argument("unknown road class '" + s + "'");
}

struct SignalTiming {
  double min_green = 4.0;
  double max_green = 120.0;
  double yellow = 3.0;
};

struct NetworkSpec {
  int rows = 1;
  int cols = 1;
  double lane_length = 100.0;    // m
  double speed_limit = 13.89;    // m/s
  double jam_spacing = 7.5;      // m of lane per stored vehicle
  double saturation_flow = 1800; // veh/h/lane under green
  // Lanes per direction of travel for each road class.
  std::map<RoadClass, int> lanes_per_approach{
      {RoadClass::minor, 1}, {RoadClass::major, 2}, {RoadClass::central, 3}};
  std::vector<RoadClass> row_roads;  // one east-west road per row
  std::vector<RoadClass> col_roads;  // one north-south road per column
  SignalTiming timing;

  int lanes_for(RoadClass c) const {
    auto it = lanes_per_approach.find(c);
    return it == lanes_per_approach.end() ? 0 : it->second;
  }

  int lane_capacity() const { return static_cast<int>(std::floor(lane_length / jam_spacing + 1e-9)); }

  void validate() const {
    if (rows < 1 || cols < 1) throw std::invalid_argument("network: rows and cols must be >= 1");
    if (!(lane_length > 0.0)) throw std::invalid_argument("network: lane_length must be positive");
    if (!(speed_limit > 0.0)) throw std::invalid_argument("network: speed_limit must be positive");
    if (!(jam_spacing > 0.0) || jam_spacing > lane_length)
      throw std::invalid_argument("network: jam_spacing must be in (0, lane_length]");
    if (!(saturation_flow > 0.0)) throw std::invalid_argument("network: saturation_flow must be positive");
    if (static_cast<int>(row_roads.size()) != rows || static_cast<int>(col_roads.size()) != cols)
      throw std::invalid_argument("network: road_class_layout must name one class per row and per column");
    for (auto c : row_roads)
      if (lanes_for(c) < 1) throw std::invalid_argument("network: zero-lane road class " + to_string(c));
    for (auto c : col_roads)
      if (lanes_for(c) < 1) throw std::invalid_argument("network: zero-lane road class " + to_string(c));
    if (!(timing.min_green > 0.0) || timing.min_green > timing.max_green)
      throw std::invalid_argument("network: need 0 < min_green <= max_green");
    if (!(timing.yellow > 0.0)) throw std::invalid_argument("network: yellow must be positive");
  }
};

// Road classes for n parallel roads: the middle road(s) widest, the outer
// roads narrowest. 3 roads -> minor/major/minor; 5 -> minor/major/central/major/minor.
inline std::vector<RoadClass> default_layout(int n) {
  std::vector<RoadClass> out(static_cast<std::size_t>(std::max(n, 0)), RoadClass::minor);
  if (n < 3) return out;
  const double mid = (n - 1) / 2.0;
  for (int i = 0; i < n; ++i) {
    const double d = std::abs(i - mid);
    if (n >= 5) {
      if (d < 0.75) out[i] = RoadClass::central;
      else if (d < 1.75) out[i] = RoadClass::major;
    } else if (d < 0.75) {
      out[i] = RoadClass::major;
    }
  }
  return out;
}

inline NetworkSpec grid_spec(int rows, int cols) {
  NetworkSpec s;
  s.rows = rows;
  s.cols = cols;
  s.row_roads = default_layout(rows);
  s.col_roads = default_layout(cols);
  return s;
}

inline NetworkSpec grid3x3() { return grid_spec(3, 3); }
inline NetworkSpec grid5x5() { return grid_spec(5, 5); }

struct TurnRatios {
  double straight = 0.9;
  double right = 0.1;
  double left = 0.0;
};

inline TurnRatios real_world_turns() { return {0.80, 0.15, 0.05}; }

struct DemandSpec {
  double inflow_per_lane = 200.0;  // veh/lane/h at each boundary entry
  TurnRatios turns;
  // Entry name (e.g. "W0", "N2") -> scale factor on inflow.
  std::map<std::string, double> demand_multipliers;

  double multiplier(const std::string& entry) const {
    auto it = demand_multipliers.find(entry);
    return it == demand_multipliers.end() ? 1.0 : it->second;
  }

  void validate() const {
    if (!(inflow_per_lane >= 0.0)) throw std::invalid_argument("demand: inflow must be >= 0");
    if (turns.straight < 0 || turns.right < 0 || turns.left < 0)
      throw std::invalid_argument("demand: turn ratios must be non-negative");
    if (std::abs(turns.straight + turns.right + turns.left - 1.0) > 1e-9)
      throw std::invalid_argument("demand: turn ratios must sum to 1");
    for (const auto& [name, m] : demand_multipliers)
      if (!(m >= 0.0)) throw std::invalid_argument("demand: multiplier for " + name + " must be >= 0");
  }
};

// Mean inter-arrival time in seconds for a per-lane inflow in veh/h.
inline double mean_headway(double inflow_per_lane) { return 3600.0 / inflow_per_lane; }

}  // namespace hfrl::traffic
