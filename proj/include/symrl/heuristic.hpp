#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "symrl/env.hpp"

namespace symrl {

struct PlanState {
  std::deque<Cell> waypoints;  // remaining path of the current plan, next cell first
  bool returning = false;      // committed to land and charge to full
};

// Greedy coverage planner: fly the shortest battery-safe path to the nearest
// cell whose field of view covers a remaining target; when none is reachable
// on the current charge, return to the nearest landing cell, land, charge to
// full and take off again. Always returns a permitted action.
int heuristic_action(const EnvState& s, PlanState& ps, const ScenarioConfig& cfg);

// (agent - heuristic) / heuristic. Throws std::invalid_argument unless
// heuristic_steps > 0.
double relative_deviation(int agent_steps, int heuristic_steps);

// States a scenario typically passes through: sample i runs the heuristic for
// a random number of steps (at most max_steps) from a fresh scenario on
// maps[i % maps.size()].
std::vector<EnvState> sample_probe_states(const std::vector<MapPtr>& maps, const ScenarioConfig& cfg, int count,
                                          std::uint64_t seed, int max_steps = 40);

}  // namespace symrl
