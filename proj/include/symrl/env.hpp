#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "symrl/grid.hpp"
#include "symrl/symmetry.hpp"

namespace symrl {

// Stepping an action the mask forbids is a caller bug, not an outcome.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class MapFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kUnreachable = -1;
inline constexpr int kMaxFovHalf = 8;

/// Static structure of a square grid world. Construction validates the map
/// and precomputes the shortest flyable distance to any landing cell.
class MapSpec {
 public:
  MapSpec(std::string name, BoolGrid landing, BoolGrid nfz, BoolGrid low_obstacle,
          BoolGrid high_obstacle);

  const std::string& name() const { return name_; }
  int side() const { return landing_.side(); }

  const BoolGrid& landing() const { return landing_; }
  const BoolGrid& nfz() const { return nfz_; }
  const BoolGrid& low_obstacle() const { return low_; }
  const BoolGrid& high_obstacle() const { return high_; }

  bool contains(Cell cell) const { return landing_.contains(cell); }
  bool is_landing(Cell cell) const { return contains(cell) && landing_[cell]; }
  // In bounds and neither a no-fly zone nor a high obstacle.
  bool is_flyable(Cell cell) const { return contains(cell) && !nfz_[cell] && !high_[cell]; }
  bool is_occluder(Cell cell) const { return low_[cell] || high_[cell]; }
  bool target_allowed(Cell cell) const { return !high_[cell]; }

  int landing_distance(Cell cell) const { return distance_[cell]; }
  const std::vector<Cell>& landing_cells() const { return landing_cells_; }

  // Structural equality; the name is not compared.
  bool same_structure(const MapSpec& other) const;

 private:
  std::string name_;
  BoolGrid landing_, nfz_, low_, high_;
  SquareGrid<int> distance_;
  std::vector<Cell> landing_cells_;
};

using MapPtr = std::shared_ptr<const MapSpec>;

/// Map text: header "CPPMAP v1", then one row per line using
/// '.' free, 'L' landing, 'N' no-fly, 'o' low obstacle, 'O' high obstacle.
MapSpec load_map(std::string_view text, std::string name = "map");
MapSpec load_map_file(const std::string& path);
std::string format_map(const MapSpec& map);

MapSpec rotate_map(GroupElement g, const MapSpec& map);
// Centers the map in an M x M grid bordered by high obstacles.
MapSpec pad_map(const MapSpec& map, int side);

struct ScenarioConfig {
  double coverage_reward = 0.4;  // r_c
  double move_penalty = 0.1;     // r_m
  int battery_capacity = 50;     // B_max
  int charge_per_step = 10;
  int fov_half = 2;
  int timeout = 1500;
  int target_count_min = 1;
  int target_count_max = 3;
  int target_size_min = 1;
  int target_size_max = 4;
  int safety_margin = 1;

  void validate() const;
};

struct EnvState {
  MapPtr map;
  BoolGrid target;  // remaining uncovered target cells
  Cell position;
  int battery = 0;
  bool landed = true;
  int step_count = 0;

  int side() const { return map->side(); }

  // Compares the map by structure so rotated copies compare equal.
  friend bool operator==(const EnvState& a, const EnvState& b);
};

enum class Done { kNone, kSolved, kTimeout };

std::string_view done_name(Done d);

struct StepResult {
  EnvState state;
  double reward = 0.0;
  Done done = Done::kNone;
  int newly_covered = 0;
};

EnvState reset(MapPtr map, const ScenarioConfig& cfg, std::uint64_t seed);

std::vector<Cell> field_of_view(const EnvState& s, const ScenarioConfig& cfg);

// Relative cells strictly between the origin and (dr, dc) whose open interior
// the segment between the two cell centers crosses.
const std::vector<Cell>& sight_blockers(int dr, int dc);

ActionMask action_mask(const EnvState& s, const ScenarioConfig& cfg);

StepResult step(const EnvState& s, int action, const ScenarioConfig& cfg);

inline constexpr int kMapChannels = 5;
inline constexpr int kScalarFeatures = 2;

/// Channels: landing, no-fly (nfz or high), occluder (low or high), remaining
/// target, position one-hot. Scalars: battery / B_max, landed.
struct Observation {
  int m = 0;
  std::vector<double> maps;  // [channel][r][c]
  std::array<double, kScalarFeatures> scalars{};

  double at(int channel, int r, int c) const {
    return maps[(static_cast<std::size_t>(channel) * m + r) * m + c];
  }

  friend bool operator==(const Observation&, const Observation&) = default;
};

Observation observe(const EnvState& s, const ScenarioConfig& cfg);

// L_g on states: every layer and the position rotate; battery, landed flag and
// step counter are untouched.
EnvState transform_state(GroupElement g, const EnvState& s);

Observation transform_observation(GroupElement g, const Observation& obs);

/// Reproducible evaluation scenario. Text: header "CPPSCEN v1", then
/// "map <name>", "seed <n>", "start <r> <c>", "targets <n>" and n "<r> <c>"
/// lines.
struct Scenario {
  std::string map_name;
  std::uint64_t seed = 0;
  Cell start;
  std::vector<Cell> targets;
};

Scenario parse_scenario(std::string_view text);
std::string format_scenario(const Scenario& scen);
Scenario scenario_from_state(const EnvState& s, std::uint64_t seed);
EnvState state_from_scenario(MapPtr map, const ScenarioConfig& cfg, const Scenario& scen);

}  // namespace symrl
