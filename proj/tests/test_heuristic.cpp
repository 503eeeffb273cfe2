#include <doctest.h>

#include <deque>

#include "support.hpp"
#include "symrl/heuristic.hpp"

using namespace symrl;

namespace {

EnvState flying(const MapPtr& map, const ScenarioConfig& cfg, Cell at) {
  EnvState s = reset(map, cfg, 1);
  for (auto& v : s.target.data()) v = 0;
  s.landed = false;
  s.position = at;
  return s;
}

}  // namespace

TEST_CASE("relative deviation") {
  CHECK(relative_deviation(80, 100) == doctest::Approx(-0.20));
  CHECK(relative_deviation(100, 100) == 0.0);
  CHECK(relative_deviation(130, 100) == doctest::Approx(0.30));
  CHECK_THROWS_AS(relative_deviation(10, 0), std::invalid_argument);
}

TEST_CASE("lands when everything is covered") {
  ScenarioConfig cfg;
  auto map = test::map_from_text(".....\n.....\n..L..\n.....\n.....\n");
  EnvState s = flying(map, cfg, {2, 2});
  PlanState ps;
  CHECK(heuristic_action(s, ps, cfg) == kLand);
}

TEST_CASE("moves toward the nearest covering cell") {
  ScenarioConfig cfg;
  cfg.fov_half = 1;
  auto map = test::map_from_text(".....\n.....\nL....\n.....\n.....\n");
  EnvState s = flying(map, cfg, {2, 1});
  s.target(2, 3) = 1;
  PlanState ps;
  CHECK(heuristic_action(s, ps, cfg) == kEast);

  // BFS oracle on random single targets: the chosen move shortens the
  // distance to the set of cells whose view holds a target.
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    EnvState t = flying(map, cfg, {static_cast<int>(rng() % 5), static_cast<int>(rng() % 5)});
    const Cell target{static_cast<int>(rng() % 5), static_cast<int>(rng() % 5)};
    if (std::max(std::abs(target.r - t.position.r), std::abs(target.c - t.position.c)) <= 1) continue;
    t.target[target] = 1;
    SquareGrid<int> dist(5, -1);
    std::deque<Cell> q;
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c)
        if (std::max(std::abs(target.r - r), std::abs(target.c - c)) <= 1) {
          dist(r, c) = 0;
          q.push_back({r, c});
        }
    while (!q.empty()) {
      const Cell cur = q.front();
      q.pop_front();
      for (int a = 0; a < 4; ++a) {
        const Cell d = direction_delta(a);
        const Cell n{cur.r + d.r, cur.c + d.c};
        if (!dist.contains(n) || dist[n] >= 0) continue;
        dist[n] = dist[cur] + 1;
        q.push_back(n);
      }
    }
    PlanState p;
    const int a = heuristic_action(t, p, cfg);
    REQUIRE(is_direction(a));
    const Cell d = direction_delta(a);
    CHECK(dist[Cell{t.position.r + d.r, t.position.c + d.c}] == dist[t.position] - 1);
  }
}

TEST_CASE("returns home at the battery threshold") {
  ScenarioConfig cfg;
  auto map = test::shipped_map("corridor10");
  std::mt19937_64 rng(4);
  int checked = 0;
  for (int r = 0; r < 10; ++r) {
    for (int c = 0; c < 10; ++c) {
      const Cell at{r, c};
      if (!map->is_flyable(at) || map->is_landing(at) || map->landing_distance(at) < 0) continue;
      EnvState s = reset(map, cfg, rng());
      s.landed = false;
      s.position = at;
      s.battery = map->landing_distance(at) + 1 + cfg.safety_margin;
      PlanState ps;
      const int a = heuristic_action(s, ps, cfg);
      REQUIRE(is_direction(a));
      const Cell d = direction_delta(a);
      CHECK(map->landing_distance({r + d.r, c + d.c}) == map->landing_distance(at) - 1);
      ++checked;
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("solves the shipped micro maps") {
  ScenarioConfig cfg;
  cfg.timeout = 400;
  for (const std::string name : {"micro5", "micro6", "open8", "symmetric9", "corridor10", "acceptance12", "city12"}) {
    auto map = test::shipped_map(name);
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
      auto play = [&] {
        EnvState s = reset(map, cfg, seed);
        PlanState ps;
        std::vector<int> actions;
        for (;;) {
          const int a = heuristic_action(s, ps, cfg);
          REQUIRE(action_mask(s, cfg)[a]);
          actions.push_back(a);
          const StepResult r = step(s, a, cfg);
          s = r.state;
          if (r.done != Done::kNone) return std::pair{r.done, actions};
        }
      };
      const auto first = play();
      CAPTURE(name);
      CAPTURE(seed);
      CHECK(first.first == Done::kSolved);
      CHECK(play().second == first.second);
    }
  }
}

TEST_CASE("probe states") {
  ScenarioConfig cfg;
  const std::vector<MapPtr> maps{test::shipped_map("acceptance12")};
  const auto a = sample_probe_states(maps, cfg, 12, 7);
  const auto b = sample_probe_states(maps, cfg, 12, 7);
  REQUIRE(a.size() == 12);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  CHECK(sample_probe_states(maps, cfg, 0, 7).empty());
}
