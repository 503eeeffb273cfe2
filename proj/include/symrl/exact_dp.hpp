#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "symrl/env.hpp"

namespace symrl {

// Exhaustive value iteration over every state reachable from a set of start
// states. Intended for micro instances: the map must have at most 64 cells.
// The step counter is not part of the state, so set a timeout the episodes
// cannot reach.
class ExactSolver {
 public:
  ExactSolver(ScenarioConfig cfg, double gamma);

  // Adds s and everything reachable from it.
  void add_reachable(const EnvState& s);

  // Jacobi sweeps until the largest change is below tol. Returns the number
  // of sweeps; throws std::runtime_error if max_sweeps is exceeded.
  int solve(double tol = 1e-13, int max_sweeps = 1'000'000);

  std::size_t state_count() const { return states_.size(); }
  const EnvState& state(std::size_t i) const { return states_[i]; }
  const ActionMask& mask(std::size_t i) const { return masks_[i]; }
  std::optional<std::size_t> find(const EnvState& s) const;

  // Q*(s, a); NaN for masked actions.
  double q(std::size_t i, int a) const { return q_[i][a]; }
  double value(std::size_t i) const { return v_[i]; }

 private:
  using Key = std::pair<std::uint64_t, std::uint64_t>;
  struct Edge {
    double reward = 0.0;
    bool terminal = false;
    std::size_t next = 0;
  };

  std::optional<Key> key_of(const EnvState& s) const;
  Key intern_key(const EnvState& s);
  int map_id(const MapSpec& map) const;

  ScenarioConfig cfg_;
  double gamma_;
  std::vector<MapPtr> maps_;
  std::map<Key, std::size_t> index_;
  std::vector<EnvState> states_;
  std::vector<ActionMask> masks_;
  std::vector<std::array<Edge, kNumActions>> edges_;
  std::vector<std::array<double, kNumActions>> q_;
  std::vector<double> v_;
};

}  // namespace symrl
