#include "symrl/heuristic.hpp"

#include <queue>
#include <random>
#include <stdexcept>
#include <vector>

namespace symrl {

namespace {

bool covers_target(const EnvState& s, Cell at, const ScenarioConfig& cfg) {
  EnvState probe = s;
  probe.position = at;
  probe.landed = false;
  for (Cell c : field_of_view(probe, cfg))
    if (s.target[c]) return true;
  return false;
}

// Shortest path to the nearest covering cell along moves the mask would allow.
// The k-th move into x needs landing_distance(x) + 1 + margin <= battery - k.
std::deque<Cell> plan_to_target(const EnvState& s, const ScenarioConfig& cfg) {
  const MapSpec& map = *s.map;
  const int m = map.side();
  SquareGrid<int> depth(m, -1);
  SquareGrid<int> parent(m, -1);
  std::queue<Cell> frontier;
  depth[s.position] = 0;
  frontier.push(s.position);
  while (!frontier.empty()) {
    const Cell cur = frontier.front();
    frontier.pop();
    if (depth[cur] > 0 && covers_target(s, cur, cfg)) {
      std::deque<Cell> path;
      for (Cell c = cur; !(c == s.position);) {
        path.push_front(c);
        const int p = parent[c];
        c = Cell{p / m, p % m};
      }
      return path;
    }
    const int k = depth[cur] + 1;
    for (int a = 0; a < kNumDirections; ++a) {
      const Cell d = direction_delta(a);
      const Cell nxt{cur.r + d.r, cur.c + d.c};
      if (!map.is_flyable(nxt) || depth[nxt] >= 0) continue;
      const int dist = map.landing_distance(nxt);
      if (dist == kUnreachable || dist + 1 + cfg.safety_margin > s.battery - k) continue;
      depth[nxt] = k;
      parent[nxt] = static_cast<int>(depth.index(cur.r, cur.c));
      frontier.push(nxt);
    }
  }
  return {};
}

std::deque<Cell> plan_to_landing(const EnvState& s) {
  const MapSpec& map = *s.map;
  std::deque<Cell> path;
  Cell cur = s.position;
  while (!map.is_landing(cur)) {
    const int dist = map.landing_distance(cur);
    bool moved = false;
    for (int a = 0; a < kNumDirections && !moved; ++a) {
      const Cell d = direction_delta(a);
      const Cell nxt{cur.r + d.r, cur.c + d.c};
      if (map.is_flyable(nxt) && map.landing_distance(nxt) == dist - 1) {
        path.push_back(nxt);
        cur = nxt;
        moved = true;
      }
    }
    if (!moved) break;
  }
  return path;
}

int move_towards(Cell from, Cell to) {
  for (int a = 0; a < kNumDirections; ++a) {
    const Cell d = direction_delta(a);
    if (from.r + d.r == to.r && from.c + d.c == to.c) return a;
  }
  return -1;
}

int first_legal(const ActionMask& mask) {
  for (int a = 0; a < kNumActions; ++a)
    if (mask[a]) return a;
  throw ContractViolation("no permitted action in the current state");
}

int choose(const EnvState& s, PlanState& ps, const ScenarioConfig& cfg) {
  const bool targets_left = count_set(s.target) > 0;
  if (s.landed) {
    ps.waypoints.clear();
    if (s.battery < cfg.battery_capacity && (ps.returning || !targets_left)) return kCharge;
    ps.returning = false;
    return kTakeOff;
  }
  if (targets_left && !ps.returning) {
    ps.waypoints = plan_to_target(s, cfg);
    if (!ps.waypoints.empty()) return move_towards(s.position, ps.waypoints.front());
  }
  // Nothing reachable on this charge: go home.
  ps.returning = targets_left;
  if (s.map->is_landing(s.position)) {
    ps.waypoints.clear();
    return kLand;
  }
  ps.waypoints = plan_to_landing(s);
  return ps.waypoints.empty() ? -1 : move_towards(s.position, ps.waypoints.front());
}

}  // namespace

int heuristic_action(const EnvState& s, PlanState& ps, const ScenarioConfig& cfg) {
  const ActionMask mask = action_mask(s, cfg);
  const int a = choose(s, ps, cfg);
  if (a >= 0 && mask[a]) return a;
  ps.waypoints.clear();
  return first_legal(mask);
}

double relative_deviation(int agent_steps, int heuristic_steps) {
  if (heuristic_steps <= 0) throw std::invalid_argument("relative_deviation: heuristic steps must be positive");
  return static_cast<double>(agent_steps - heuristic_steps) / heuristic_steps;
}

std::vector<EnvState> sample_probe_states(const std::vector<MapPtr>& maps, const ScenarioConfig& cfg, int count,
                                          std::uint64_t seed, int max_steps) {
  std::vector<EnvState> out;
  if (maps.empty() || count <= 0) return out;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < count; ++i) {
    EnvState s = reset(maps[i % maps.size()], cfg, rng());
    const int steps = static_cast<int>(rng() % static_cast<std::uint64_t>(max_steps + 1));
    PlanState ps;
    for (int k = 0; k < steps; ++k) {
      const StepResult r = step(s, heuristic_action(s, ps, cfg), cfg);
      if (r.done != Done::kNone) break;
      s = r.state;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace symrl
