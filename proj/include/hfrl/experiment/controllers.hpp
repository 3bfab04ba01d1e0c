#pragma once

#include <stdexcept>
#include <vector>

#include "hfrl/traffic/simulation.hpp"

namespace hfrl::experiment {

// Switches each green phase once it has run for `green` seconds.
inline std::vector<int> fixed_time_controller(const traffic::SimState& s, double green = 42.0) {
  std::vector<int> a(s.signals.size(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& sig = s.signals[i];
    a[i] = sig.is_green() && sig.time_in_phase >= green - 1e-9 ? 1 : 0;
  }
  return a;
}

// Gap-out actuation: hold green while some vehicle crossed the stop line in
// the last `gap` seconds, otherwise ask to switch. Min and max green are
// left to the simulator.
inline std::vector<int> actuated_controller(const traffic::SimState& s, double gap = 3.0) {
  if (!(gap > 0.0)) throw std::invalid_argument("actuated_controller: gap must be positive");
  std::vector<int> a(s.signals.size(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& sig = s.signals[i];
    if (!sig.is_green()) continue;
    const double idle = sig.last_discharge ? s.clock - *sig.last_discharge : sig.time_in_phase;
    a[i] = idle >= gap - 1e-9 ? 1 : 0;
  }
  return a;
}

}  // namespace hfrl::experiment
