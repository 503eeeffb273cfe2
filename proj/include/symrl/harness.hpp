#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "symrl/ensemble.hpp"
#include "symrl/env.hpp"
#include "symrl/heuristic.hpp"
#include "symrl/net.hpp"
#include "symrl/ppo.hpp"

namespace symrl {

enum class PolicyKind { kRaw, kEnsemble, kHeuristic };

std::string_view policy_name(PolicyKind kind);
PolicyKind parse_policy(std::string_view name);

// Argmax with lowest-index tie-breaking, taken in the canonical frame: the
// distribution is pulled back by P_frame^{-1}, maximized, and the winner mapped
// back with K_frame.
int greedy_action(const Distribution& dist, GroupElement frame = GroupElement::identity());

// Mode stored in a trainer checkpoint, if the file has a trainer section.
std::optional<AgentMode> checkpoint_mode(const std::string& path);

struct EpisodeOutcome {
  bool solved = false;
  double coverage = 0.0;
  int steps = 0;
  double total_reward = 0.0;
  std::vector<EnvState> trajectory;  // start state plus one state per step, when recorded
  std::vector<int> actions;
};

using ActionFn = std::function<int(const EnvState&)>;

EpisodeOutcome run_episode(EnvState start, const ScenarioConfig& cfg, const ActionFn& act,
                           bool record = false);

// Greedy controller for the given policy; `frame` is the rotation the scenario
// was generated under. For kHeuristic the net may be null.
ActionFn make_controller(const ParamNet* net, PolicyKind kind, const ScenarioConfig& cfg,
                         GroupElement frame = GroupElement::identity());

struct EvalRecord {
  std::string map;
  int rotation = 0;  // degrees
  std::uint64_t seed = 0;
  bool solved = false;
  double coverage = 0.0;
  int steps = 0;
  bool heuristic_solved = false;
  int heuristic_steps = 0;
  double rd = 0.0;  // NaN unless both solved
};

struct EvalAggregate {
  int scenarios = 0;
  double solved_ratio = 0.0;  // NaN when there are no scenarios
  double mean_coverage = 0.0;
  double median_rd = 0.0;  // NaN when no scenario has an RD
};

struct EvalReport {
  std::vector<EvalRecord> records;
  EvalAggregate aggregate;
};

EvalAggregate aggregate_records(const std::vector<EvalRecord>& records);
// Throws std::logic_error if the stored aggregate or any record invariant is off.
void check_report(const EvalReport& report);

struct EvalOptions {
  int scenarios = 100;
  std::uint64_t seed = 1;
  bool rotations = false;  // run each scenario under all four map rotations
  PolicyKind policy = PolicyKind::kRaw;
  bool compare_heuristic = true;
};

// Scenario i uses maps[i % maps.size()] and a seed derived from (seed, i); all
// rotations of one scenario share that seed. Maps smaller than the network are
// padded; larger ones are rejected.
EvalReport evaluate(const ParamNet* net, const std::vector<MapPtr>& maps, const ScenarioConfig& cfg,
                    const EvalOptions& opts);

std::string eval_records_header();
std::string format_eval_record(const EvalRecord& r);
std::string eval_summary_header();
std::string format_eval_summary(std::string_view label, const EvalAggregate& a);

// Median across agents plus the largest absolute deviation from it.
struct Spread {
  double median = 0.0;
  double max_deviation = 0.0;
};
Spread median_spread(std::vector<double> values);

struct ProbeRecord {
  std::size_t state = 0;
  RotationProbe probe;
  RotationSpread raw;
  RotationSpread ensemble;
};

struct ProbeReport {
  std::vector<ProbeRecord> records;
  RotationSpread mean_raw;
  RotationSpread mean_ensemble;
};

ProbeReport probe(const ParamNet& net, const std::vector<EnvState>& states, const ScenarioConfig& cfg);
std::string probe_header();
std::string format_probe(const ProbeReport& report);

// One frame per state of the trajectory.
std::vector<std::string> render_frames(const EpisodeOutcome& episode, const ScenarioConfig& cfg);

struct MapCheck {
  std::string name;
  int side = 0;
  int landing_cells = 0;
  int flyable_cells = 0;
  int unreachable_cells = 0;
  bool rotations_ok = false;
};

MapCheck validate_map(const MapSpec& map);

std::vector<std::string> split_list(std::string_view text, char sep = ',');

}  // namespace symrl
