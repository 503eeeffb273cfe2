#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace symrl::test {

MapPtr shipped_map(const std::string& name) {
  return std::make_shared<const MapSpec>(load_map_file(std::string(SYMRL_MAPS_DIR) + "/" + name + ".map"));
}

MapPtr map_from_text(const std::string& body, const std::string& name) {
  return std::make_shared<const MapSpec>(load_map("CPPMAP v1\n" + body, name));
}

EnvState random_state(const MapPtr& map, const ScenarioConfig& cfg, std::mt19937_64& rng, int max_steps) {
  EnvState s = reset(map, cfg, rng());
  const int steps = static_cast<int>(rng() % static_cast<std::uint64_t>(max_steps + 1));
  for (int k = 0; k < steps; ++k) {
    const ActionMask mask = action_mask(s, cfg);
    std::vector<int> legal;
    for (int a = 0; a < kNumActions; ++a)
      if (mask[a]) legal.push_back(a);
    if (legal.empty()) break;
    const StepResult r = step(s, legal[rng() % legal.size()], cfg);
    if (r.done != Done::kNone) break;
    s = r.state;
  }
  return s;
}

Architecture tiny_arch(int side) {
  Architecture a;
  a.side = side;
  a.convs = {{3, 3, 2}};
  a.hidden = {12};
  a.activation = Activation::kTanh;
  return a;
}

std::vector<double> numeric_gradient(const ParamNet& net, const LossBuilder& loss, double h) {
  ParamNet probe = net;
  std::vector<double> out(net.parameter_count());
  auto params = probe.mutable_parameters();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = evaluate_loss(probe, loss);
    params[i] = keep - h;
    const double down = evaluate_loss(probe, loss);
    params[i] = keep;
    out[i] = (up - down) / (2 * h);
  }
  return out;
}

double gradient_mismatch(const std::vector<double>& analytic, const std::vector<double>& numeric, double rel,
                         double abs_floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]);
    const double allowed = std::max(rel * std::max(std::abs(analytic[i]), std::abs(numeric[i])), abs_floor);
    worst = std::max(worst, err / allowed);
  }
  return worst;
}

RolloutBuffer random_buffer(const MapPtr& map, const ScenarioConfig& cfg, int steps, std::mt19937_64& rng) {
  RolloutBuffer b;
  b.num_envs = 1;
  b.horizon = steps;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < steps; ++t) {
    const EnvState s = random_state(map, cfg, rng);
    const ActionMask mask = action_mask(s, cfg);
    std::vector<int> legal;
    for (int a = 0; a < kNumActions; ++a)
      if (mask[a]) legal.push_back(a);
    b.observations.push_back(observe(s, cfg));
    b.masks.push_back(mask);
    b.actions.push_back(legal[rng() % legal.size()]);
    b.behavior_log_probs.push_back(std::log(1.0 / static_cast<double>(legal.size())) + 0.2 * u(rng));
    b.rewards.push_back(u(rng));
    b.values.push_back(u(rng));
    b.episode_ends.push_back(0);
    b.advantages.push_back(u(rng));
    b.returns.push_back(u(rng));
  }
  b.last_values.push_back(0.0);
  return b;
}

}  // namespace symrl::test
