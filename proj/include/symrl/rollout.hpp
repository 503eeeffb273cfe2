#pragma once

#include <cstdint>
#include <vector>

#include "symrl/env.hpp"

namespace symrl {

/// Transitions gathered under the behavior policy. Storage is time-major:
/// entry t * num_envs + e is step t of environment e.
struct RolloutBuffer {
  int num_envs = 0;
  int horizon = 0;

  std::vector<Observation> observations;
  std::vector<ActionMask> masks;
  std::vector<int> actions;
  std::vector<double> behavior_log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<std::uint8_t> episode_ends;  // episode finished with this step
  std::vector<double> last_values;         // V(s_T) per environment for bootstrapping

  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return actions.size(); }
  bool empty() const { return actions.empty(); }
  std::size_t index(int t, int e) const { return static_cast<std::size_t>(t) * num_envs + e; }

  // Throws std::logic_error when the per-step arrays disagree in length.
  void check_consistent() const;
};

}  // namespace symrl
