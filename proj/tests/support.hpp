#pragma once

#include <random>
#include <string>
#include <vector>

#include "symrl/env.hpp"
#include "symrl/net.hpp"
#include "symrl/rollout.hpp"

namespace symrl::test {

MapPtr shipped_map(const std::string& name);
MapPtr map_from_text(const std::string& body, const std::string& name = "inline");

// Fresh scenario followed by a random mask-respecting walk.
EnvState random_state(const MapPtr& map, const ScenarioConfig& cfg, std::mt19937_64& rng,
                      int max_steps = 60);

// Tiny tanh network, comfortably under 5000 parameters for side <= 8.
Architecture tiny_arch(int side);

// Central differences of `loss` in every parameter.
std::vector<double> numeric_gradient(const ParamNet& net, const LossBuilder& loss, double h = 1e-5);

// Largest violation of |a - b| <= max(rel * max(|a|,|b|), abs_floor), as a
// ratio to the allowed error. <= 1 means every coordinate passes.
double gradient_mismatch(const std::vector<double>& analytic, const std::vector<double>& numeric,
                         double rel = 1e-4, double abs_floor = 1e-6);

// Buffer of random states from `map` with plausible stored quantities.
RolloutBuffer random_buffer(const MapPtr& map, const ScenarioConfig& cfg, int steps,
                            std::mt19937_64& rng);

}  // namespace symrl::test
