#include "symrl/exact_dp.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace symrl {

ExactSolver::ExactSolver(ScenarioConfig cfg, double gamma) : cfg_(cfg), gamma_(gamma) {
  cfg_.validate();
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("ExactSolver: gamma must be in [0,1)");
}

int ExactSolver::map_id(const MapSpec& map) const {
  for (std::size_t i = 0; i < maps_.size(); ++i)
    if (maps_[i]->same_structure(map)) return static_cast<int>(i);
  return -1;
}

std::optional<ExactSolver::Key> ExactSolver::key_of(const EnvState& s) const {
  const int id = map_id(*s.map);
  if (id < 0) return std::nullopt;
  std::uint64_t bits = 0;
  const auto& t = s.target.data();
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i]) bits |= std::uint64_t{1} << i;
  const std::uint64_t rest = (static_cast<std::uint64_t>(id) << 48) |
                             (static_cast<std::uint64_t>(s.position.r) << 40) |
                             (static_cast<std::uint64_t>(s.position.c) << 32) |
                             (static_cast<std::uint64_t>(s.battery) << 1) | (s.landed ? 1u : 0u);
  return Key{bits, rest};
}

ExactSolver::Key ExactSolver::intern_key(const EnvState& s) {
  if (s.map->side() * s.map->side() > 64) throw std::invalid_argument("ExactSolver: map larger than 64 cells");
  if (map_id(*s.map) < 0) maps_.push_back(s.map);
  return *key_of(s);
}

std::optional<std::size_t> ExactSolver::find(const EnvState& s) const {
  const auto k = key_of(s);
  if (!k) return std::nullopt;
  const auto it = index_.find(*k);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void ExactSolver::add_reachable(const EnvState& start) {
  auto add = [&](const EnvState& s) -> std::pair<std::size_t, bool> {
    const Key k = intern_key(s);
    auto [it, fresh] = index_.try_emplace(k, states_.size());
    if (fresh) {
      EnvState copy = s;
      copy.step_count = 0;
      states_.push_back(std::move(copy));
      masks_.push_back(action_mask(s, cfg_));
      edges_.emplace_back();
      q_.emplace_back();
      v_.push_back(0.0);
    }
    return {it->second, fresh};
  };
  std::deque<std::size_t> work;
  if (auto [i, fresh] = add(start); fresh) work.push_back(i);
  while (!work.empty()) {
    const std::size_t i = work.front();
    work.pop_front();
    for (int a = 0; a < kNumActions; ++a) {
      if (!masks_[i][a]) continue;
      const StepResult r = step(states_[i], a, cfg_);
      if (r.done == Done::kTimeout) throw std::logic_error("ExactSolver: timeout reached; raise the timeout");
      Edge e;
      e.reward = r.reward;
      e.terminal = r.done == Done::kSolved;
      if (!e.terminal) {
        auto [j, fresh] = add(r.state);
        e.next = j;
        if (fresh) work.push_back(j);
      }
      edges_[i][a] = e;
    }
  }
}

int ExactSolver::solve(double tol, int max_sweeps) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = states_.size();
  std::vector<double> next(n);
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < kNumActions; ++a) {
        if (!masks_[i][a]) {
          q_[i][a] = nan;
          continue;
        }
        const Edge& e = edges_[i][a];
        q_[i][a] = e.reward + (e.terminal ? 0.0 : gamma_ * v_[e.next]);
        best = std::max(best, q_[i][a]);
      }
      next[i] = best;
      delta = std::max(delta, std::abs(next[i] - v_[i]));
    }
    v_.swap(next);
    if (delta < tol) {
      // Refresh Q against the final values.
      for (std::size_t i = 0; i < n; ++i)
        for (int a = 0; a < kNumActions; ++a)
          if (masks_[i][a]) {
            const Edge& e = edges_[i][a];
            q_[i][a] = e.reward + (e.terminal ? 0.0 : gamma_ * v_[e.next]);
          }
      return sweep;
    }
  }
  throw std::runtime_error("ExactSolver: value iteration did not converge");
}

}  // namespace symrl
