#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "symrl/env.hpp"
#include "symrl/net.hpp"
#include "symrl/ppo.hpp"

namespace symrl {

/// Everything a training run needs. Text form is one "key = value" per line;
/// '#' starts a comment. Map paths are resolved relative to the config file.
struct RunConfig {
  TrainerConfig trainer;
  ScenarioConfig scenario;
  Architecture architecture;
  std::vector<std::string> maps;
};

// Throws std::invalid_argument naming the offending key.
RunConfig parse_run_config(std::string_view text, const std::string& base_dir = "");
RunConfig load_run_config(const std::string& path);
// Applies one "key=value" override on top of an existing config.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string format_run_config(const RunConfig& cfg);

std::vector<MapPtr> load_maps(const std::vector<std::string>& paths);

}  // namespace symrl
