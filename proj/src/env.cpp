#include "symrl/env.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <random>
#include <sstream>

namespace symrl {

namespace {

constexpr std::string_view kMapHeader = "CPPMAP v1";
constexpr std::string_view kScenarioHeader = "CPPSCEN v1";

void require_side(const BoolGrid& grid, int m, const char* what) {
  if (grid.side() != m)
    throw MapFormatError(std::string("layer '") + what + "' has mismatched size");
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in{std::string(text)};
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

// Fraction with positive denominator.
struct Frac {
  long num;
  long den;
};

bool less(Frac a, Frac b) { return a.num * b.den < b.num * a.den; }

Frac make_frac(long num, long den) {
  if (den < 0) return {-num, -den};
  return {num, den};
}

bool segment_crosses_cell(int dr, int dc, int i, int j) {
  Frac lo{0, 1};
  Frac hi{1, 1};
  auto clip_axis = [&](int d, int k) {
    if (d == 0) return k == 0;  // |k| < 1/2 must hold for every t
    Frac a = make_frac(2L * k - 1, 2L * d);
    Frac b = make_frac(2L * k + 1, 2L * d);
    if (less(b, a)) std::swap(a, b);
    if (less(lo, a)) lo = a;
    if (less(b, hi)) hi = b;
    return true;
  };
  if (!clip_axis(dr, i) || !clip_axis(dc, j)) return false;
  return less(lo, hi);
}

std::vector<std::vector<Cell>> build_blocker_table() {
  const int side = 2 * kMaxFovHalf + 1;
  std::vector<std::vector<Cell>> table(static_cast<std::size_t>(side) * side);
  for (int dr = -kMaxFovHalf; dr <= kMaxFovHalf; ++dr) {
    for (int dc = -kMaxFovHalf; dc <= kMaxFovHalf; ++dc) {
      auto& blockers = table[static_cast<std::size_t>(dr + kMaxFovHalf) * side + dc + kMaxFovHalf];
      for (int i = std::min(0, dr); i <= std::max(0, dr); ++i) {
        for (int j = std::min(0, dc); j <= std::max(0, dc); ++j) {
          if ((i == 0 && j == 0) || (i == dr && j == dc)) continue;
          if (segment_crosses_cell(dr, dc, i, j)) blockers.push_back({i, j});
        }
      }
    }
  }
  return table;
}

}  // namespace

MapSpec::MapSpec(std::string name, BoolGrid landing, BoolGrid nfz, BoolGrid low_obstacle,
                 BoolGrid high_obstacle)
    : name_(std::move(name)),
      landing_(std::move(landing)),
      nfz_(std::move(nfz)),
      low_(std::move(low_obstacle)),
      high_(std::move(high_obstacle)) {
  const int m = landing_.side();
  if (m <= 0) throw MapFormatError("map is empty");
  require_side(nfz_, m, "nfz");
  require_side(low_, m, "low_obstacle");
  require_side(high_, m, "high_obstacle");
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      if (landing_(r, c) && nfz_(r, c))
        throw MapFormatError("cell is both landing and no-fly at (" + std::to_string(r) + "," +
                             std::to_string(c) + ")");
      if (landing_(r, c) && high_(r, c))
        throw MapFormatError("landing cell under a high obstacle at (" + std::to_string(r) + "," +
                             std::to_string(c) + ")");
      if (landing_(r, c)) landing_cells_.push_back({r, c});
    }
  }
  if (landing_cells_.empty()) throw MapFormatError("map has no landing cell");

  distance_ = SquareGrid<int>(m, kUnreachable);
  std::deque<Cell> frontier;
  for (Cell cell : landing_cells_) {
    distance_[cell] = 0;
    frontier.push_back(cell);
  }
  while (!frontier.empty()) {
    Cell cur = frontier.front();
    frontier.pop_front();
    for (int a = 0; a < kNumDirections; ++a) {
      Cell d = direction_delta(a);
      Cell next{cur.r + d.r, cur.c + d.c};
      if (!is_flyable(next) || distance_[next] != kUnreachable) continue;
      distance_[next] = distance_[cur] + 1;
      frontier.push_back(next);
    }
  }
}

bool MapSpec::same_structure(const MapSpec& other) const {
  return landing_ == other.landing_ && nfz_ == other.nfz_ && low_ == other.low_ &&
         high_ == other.high_;
}

MapSpec load_map(std::string_view text, std::string name) {
  auto lines = split_lines(text);
  if (lines.empty() || lines.front() != kMapHeader)
    throw MapFormatError("missing 'CPPMAP v1' header");
  lines.erase(lines.begin());
  const int rows = static_cast<int>(lines.size());
  if (rows == 0) throw MapFormatError("map has no rows");
  const int cols = static_cast<int>(lines.front().size());
  for (const auto& line : lines)
    if (static_cast<int>(line.size()) != cols) throw MapFormatError("map rows have unequal length");
  if (rows != cols)
    throw MapFormatError("map is not square (" + std::to_string(rows) + "x" +
                         std::to_string(cols) + ")");
  const int m = rows;
  BoolGrid landing(m), nfz(m), low(m), high(m);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      switch (lines[r][c]) {
        case '.': break;
        case 'L': landing(r, c) = 1; break;
        case 'N': nfz(r, c) = 1; break;
        case 'o': low(r, c) = 1; break;
        case 'O': high(r, c) = 1; break;
        default:
          throw MapFormatError(std::string("unknown map character '") + lines[r][c] + "' at (" +
                               std::to_string(r) + "," + std::to_string(c) + ")");
      }
    }
  }
  return MapSpec(std::move(name), std::move(landing), std::move(nfz), std::move(low),
                 std::move(high));
}

MapSpec load_map_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MapFormatError("cannot open map file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  std::string stem = path;
  if (auto slash = stem.find_last_of('/'); slash != std::string::npos) stem = stem.substr(slash + 1);
  if (auto dot = stem.find_last_of('.'); dot != std::string::npos) stem = stem.substr(0, dot);
  return load_map(buf.str(), stem);
}

std::string format_map(const MapSpec& map) {
  std::string out(kMapHeader);
  out += '\n';
  const int m = map.side();
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      char ch = '.';
      if (map.landing()(r, c)) ch = 'L';
      else if (map.nfz()(r, c)) ch = 'N';
      else if (map.high_obstacle()(r, c)) ch = 'O';
      else if (map.low_obstacle()(r, c)) ch = 'o';
      out += ch;
    }
    out += '\n';
  }
  return out;
}

MapSpec rotate_map(GroupElement g, const MapSpec& map) {
  std::string name = map.name();
  if (g.k() != 0) name += "@r" + std::to_string(g.degrees());
  return MapSpec(std::move(name), rotate_grid(g, map.landing()), rotate_grid(g, map.nfz()),
                 rotate_grid(g, map.low_obstacle()), rotate_grid(g, map.high_obstacle()));
}

MapSpec pad_map(const MapSpec& map, int side) {
  const int m = map.side();
  if (side < m) throw std::invalid_argument("cannot pad a map to a smaller size");
  if (side == m) return map;
  const int off = (side - m) / 2;
  BoolGrid landing(side), nfz(side), low(side), high(side, 1);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      landing(r + off, c + off) = map.landing()(r, c);
      nfz(r + off, c + off) = map.nfz()(r, c);
      low(r + off, c + off) = map.low_obstacle()(r, c);
      high(r + off, c + off) = map.high_obstacle()(r, c);
    }
  }
  return MapSpec(map.name(), std::move(landing), std::move(nfz), std::move(low), std::move(high));
}

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("scenario config field '" + field + "' " + why);
  };
  if (!(coverage_reward > 0)) fail("coverage_reward", "must be positive");
  if (!(move_penalty > 0)) fail("move_penalty", "must be positive");
  if (charge_per_step < 1) fail("charge_per_step", "must be positive");
  if (fov_half < 1 || fov_half > kMaxFovHalf)
    fail("fov_half", "must be in [1, " + std::to_string(kMaxFovHalf) + "]");
  if (timeout < 1) fail("timeout", "must be at least 1");
  if (safety_margin < 0) fail("safety_margin", "must be non-negative");
  if (battery_capacity < safety_margin + 3)
    fail("battery_capacity", "must exceed safety_margin + 2 so take off is possible");
  if (target_count_min < 1 || target_count_max < target_count_min)
    fail("target_count", "range must satisfy 1 <= min <= max");
  if (target_size_min < 1 || target_size_max < target_size_min)
    fail("target_size", "range must satisfy 1 <= min <= max");
}

bool operator==(const EnvState& a, const EnvState& b) {
  if (a.map != b.map && !(a.map && b.map && a.map->same_structure(*b.map))) return false;
  return a.target == b.target && a.position == b.position && a.battery == b.battery &&
         a.landed == b.landed && a.step_count == b.step_count;
}

std::string_view done_name(Done d) {
  switch (d) {
    case Done::kNone: return "none";
    case Done::kSolved: return "solved";
    case Done::kTimeout: return "timeout";
  }
  return "none";
}

EnvState reset(MapPtr map, const ScenarioConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int m = map->side();
  const auto& landings = map->landing_cells();
  EnvState s;
  s.position = landings[std::uniform_int_distribution<std::size_t>(0, landings.size() - 1)(rng)];
  s.battery = cfg.battery_capacity;
  s.landed = true;
  s.step_count = 0;

  std::uniform_int_distribution<int> count_dist(cfg.target_count_min, cfg.target_count_max);
  std::uniform_int_distribution<int> size_dist(std::min(cfg.target_size_min, m),
                                               std::min(cfg.target_size_max, m));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    BoolGrid target(m);
    const int count = count_dist(rng);
    for (int i = 0; i < count; ++i) {
      const int h = size_dist(rng);
      const int w = size_dist(rng);
      const int r0 = std::uniform_int_distribution<int>(0, m - h)(rng);
      const int c0 = std::uniform_int_distribution<int>(0, m - w)(rng);
      for (int r = r0; r < r0 + h; ++r)
        for (int c = c0; c < c0 + w; ++c)
          if (map->target_allowed({r, c})) target(r, c) = 1;
    }
    if (count_set(target) > 0) {
      s.target = std::move(target);
      s.map = std::move(map);
      return s;
    }
  }
  throw std::runtime_error("could not place any target cell on map '" + map->name() + "'");
}

const std::vector<Cell>& sight_blockers(int dr, int dc) {
  static const std::vector<std::vector<Cell>> table = build_blocker_table();
  if (std::abs(dr) > kMaxFovHalf || std::abs(dc) > kMaxFovHalf)
    throw std::out_of_range("sight offset exceeds the maximum field of view");
  const int side = 2 * kMaxFovHalf + 1;
  return table[static_cast<std::size_t>(dr + kMaxFovHalf) * side + dc + kMaxFovHalf];
}

std::vector<Cell> field_of_view(const EnvState& s, const ScenarioConfig& cfg) {
  std::vector<Cell> visible;
  if (s.landed) return visible;
  const MapSpec& map = *s.map;
  const int h = cfg.fov_half;
  for (int dr = -h; dr <= h; ++dr) {
    for (int dc = -h; dc <= h; ++dc) {
      Cell cell{s.position.r + dr, s.position.c + dc};
      if (!map.contains(cell)) continue;
      bool blocked = false;
      for (Cell b : sight_blockers(dr, dc)) {
        Cell bc{s.position.r + b.r, s.position.c + b.c};
        if (map.contains(bc) && map.is_occluder(bc)) {
          blocked = true;
          break;
        }
      }
      if (!blocked) visible.push_back(cell);
    }
  }
  return visible;
}

ActionMask action_mask(const EnvState& s, const ScenarioConfig& cfg) {
  ActionMask mask{};
  const MapSpec& map = *s.map;
  if (s.landed) {
    mask[kTakeOff] = s.battery > 1 + cfg.safety_margin;
    mask[kCharge] = s.battery < cfg.battery_capacity;
    return mask;
  }
  for (int a = 0; a < kNumDirections; ++a) {
    Cell d = direction_delta(a);
    Cell dest{s.position.r + d.r, s.position.c + d.c};
    if (!map.is_flyable(dest)) continue;
    const int dist = map.landing_distance(dest);
    if (dist == kUnreachable) continue;
    mask[a] = dist + 1 + cfg.safety_margin <= s.battery - 1;
  }
  mask[kLand] = map.is_landing(s.position);
  return mask;
}

StepResult step(const EnvState& s, int action, const ScenarioConfig& cfg) {
  if (action < 0 || action >= kNumActions)
    throw ContractViolation("action index " + std::to_string(action) + " out of range");
  if (!action_mask(s, cfg)[action])
    throw ContractViolation("action '" + std::string(action_name(action)) +
                            "' is masked in the current state");
  StepResult out;
  out.state = s;
  EnvState& next = out.state;
  if (is_direction(action)) {
    Cell d = direction_delta(action);
    next.position = {s.position.r + d.r, s.position.c + d.c};
    next.battery -= 1;
  } else if (action == kTakeOff) {
    next.landed = false;
    next.battery -= 1;
  } else if (action == kLand) {
    next.landed = true;
    next.battery -= 1;
  } else {
    next.battery = std::min(cfg.battery_capacity, s.battery + cfg.charge_per_step);
  }
  for (Cell cell : field_of_view(next, cfg)) {
    if (next.target[cell]) {
      next.target[cell] = 0;
      ++out.newly_covered;
    }
  }
  next.step_count += 1;
  out.reward = cfg.coverage_reward * out.newly_covered - cfg.move_penalty;
  if (next.landed && count_set(next.target) == 0) out.done = Done::kSolved;
  else if (next.step_count >= cfg.timeout) out.done = Done::kTimeout;
  return out;
}

Observation observe(const EnvState& s, const ScenarioConfig& cfg) {
  const MapSpec& map = *s.map;
  const int m = map.side();
  Observation obs;
  obs.m = m;
  obs.maps.assign(static_cast<std::size_t>(kMapChannels) * m * m, 0.0);
  const std::size_t plane = static_cast<std::size_t>(m) * m;
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * m + c;
      obs.maps[i] = map.landing()(r, c);
      obs.maps[plane + i] = map.nfz()(r, c) || map.high_obstacle()(r, c);
      obs.maps[2 * plane + i] = map.is_occluder({r, c});
      obs.maps[3 * plane + i] = s.target(r, c);
    }
  }
  obs.maps[4 * plane + static_cast<std::size_t>(s.position.r) * m + s.position.c] = 1.0;
  obs.scalars = {static_cast<double>(s.battery) / cfg.battery_capacity, s.landed ? 1.0 : 0.0};
  return obs;
}

EnvState transform_state(GroupElement g, const EnvState& s) {
  if (g.k() == 0) return s;
  EnvState out = s;
  out.map = std::make_shared<const MapSpec>(rotate_map(g, *s.map));
  out.target = rotate_grid(g, s.target);
  out.position = rotate_cell(g, s.position, s.side());
  return out;
}

Observation transform_observation(GroupElement g, const Observation& obs) {
  if (g.k() == 0) return obs;
  const int m = obs.m;
  const std::size_t plane = static_cast<std::size_t>(m) * m;
  Observation out;
  out.m = m;
  out.scalars = obs.scalars;
  out.maps.resize(obs.maps.size());
  for (int ch = 0; ch < kMapChannels; ++ch) {
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < m; ++c) {
        Cell rc = rotate_cell(g, {r, c}, m);
        out.maps[ch * plane + static_cast<std::size_t>(rc.r) * m + rc.c] =
            obs.maps[ch * plane + static_cast<std::size_t>(r) * m + c];
      }
    }
  }
  return out;
}

Scenario parse_scenario(std::string_view text) {
  auto lines = split_lines(text);
  if (lines.empty() || lines.front() != kScenarioHeader)
    throw MapFormatError("missing 'CPPSCEN v1' header");
  Scenario scen;
  bool have_map = false, have_start = false;
  std::size_t i = 1;
  for (; i < lines.size(); ++i) {
    std::istringstream in(lines[i]);
    std::string key;
    if (!(in >> key)) continue;
    if (key == "map") {
      if (!(in >> scen.map_name)) throw MapFormatError("scenario 'map' needs a name");
      have_map = true;
    } else if (key == "seed") {
      if (!(in >> scen.seed)) throw MapFormatError("scenario 'seed' needs an integer");
    } else if (key == "start") {
      if (!(in >> scen.start.r >> scen.start.c)) throw MapFormatError("scenario 'start' needs r c");
      have_start = true;
    } else if (key == "targets") {
      std::size_t n = 0;
      if (!(in >> n)) throw MapFormatError("scenario 'targets' needs a count");
      for (std::size_t t = 0; t < n; ++t) {
        if (++i >= lines.size()) throw MapFormatError("scenario target list is truncated");
        std::istringstream cell(lines[i]);
        Cell c;
        if (!(cell >> c.r >> c.c)) throw MapFormatError("bad target line '" + lines[i] + "'");
        scen.targets.push_back(c);
      }
    } else {
      throw MapFormatError("unknown scenario key '" + key + "'");
    }
  }
  if (!have_map || !have_start) throw MapFormatError("scenario needs 'map' and 'start'");
  return scen;
}

std::string format_scenario(const Scenario& scen) {
  std::ostringstream out;
  out << kScenarioHeader << '\n'
      << "map " << scen.map_name << '\n'
      << "seed " << scen.seed << '\n'
      << "start " << scen.start.r << ' ' << scen.start.c << '\n'
      << "targets " << scen.targets.size() << '\n';
  for (Cell c : scen.targets) out << c.r << ' ' << c.c << '\n';
  return out.str();
}

Scenario scenario_from_state(const EnvState& s, std::uint64_t seed) {
  Scenario scen;
  scen.map_name = s.map->name();
  scen.seed = seed;
  scen.start = s.position;
  const int m = s.side();
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c)
      if (s.target(r, c)) scen.targets.push_back({r, c});
  return scen;
}

EnvState state_from_scenario(MapPtr map, const ScenarioConfig& cfg, const Scenario& scen) {
  if (!map->is_landing(scen.start)) throw MapFormatError("scenario start is not a landing cell");
  EnvState s;
  s.target = BoolGrid(map->side());
  for (Cell c : scen.targets) {
    if (!map->contains(c)) throw MapFormatError("scenario target outside the map");
    if (!map->target_allowed(c)) throw MapFormatError("scenario target under a high obstacle");
    s.target[c] = 1;
  }
  s.position = scen.start;
  s.battery = cfg.battery_capacity;
  s.landed = true;
  s.map = std::move(map);
  return s;
}

}  // namespace symrl
