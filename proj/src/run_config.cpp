#include "symrl/run_config.hpp"

#include <cerrno>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace symrl {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view why) {
  throw std::invalid_argument("config field '" + std::string(key) + "': " + std::string(why) + " (got '" +
                              std::string(value) + "')");
}

template <class T>
T parse_integer(std::string_view key, std::string_view v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "expected an integer");
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) bad(key, v, "expected a number");
  return d;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad(key, v, "expected true or false");
}

std::string real_text(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define INT_FIELD(name, expr)                                                               \
  Field {                                                                                   \
    name, [](RunConfig& c, std::string_view v) { c.expr = parse_integer<decltype(c.expr)>(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.expr); }                           \
  }
#define REAL_FIELD(name, expr)                                                  \
  Field {                                                                       \
    name, [](RunConfig& c, std::string_view v) { c.expr = parse_real(name, v); }, \
        [](const RunConfig& c) { return real_text(c.expr); }                    \
  }
#define BOOL_FIELD(name, expr)                                                  \
  Field {                                                                       \
    name, [](RunConfig& c, std::string_view v) { c.expr = parse_bool(name, v); }, \
        [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"agent_mode",
            [](RunConfig& c, std::string_view v) {
              try {
                c.trainer.mode = parse_mode(v);
              } catch (const std::invalid_argument& e) {
                throw std::invalid_argument(std::string("config field 'agent_mode': ") + e.what());
              }
            },
            [](const RunConfig& c) { return std::string(mode_name(c.trainer.mode)); }},
      INT_FIELD("rollout_steps", trainer.rollout_steps),
      INT_FIELD("num_envs", trainer.num_envs),
      INT_FIELD("minibatch_size", trainer.minibatch_size),
      INT_FIELD("epochs", trainer.epochs),
      REAL_FIELD("clip_epsilon", trainer.clip_epsilon),
      REAL_FIELD("gae_lambda", trainer.gae_lambda),
      REAL_FIELD("entropy_weight", trainer.entropy_weight),
      REAL_FIELD("value_weight", trainer.value_weight),
      REAL_FIELD("policy_reg_weight", trainer.policy_reg_weight),
      REAL_FIELD("value_reg_weight", trainer.value_reg_weight),
      REAL_FIELD("learning_rate", trainer.learning_rate),
      REAL_FIELD("gamma0", trainer.gamma0),
      REAL_FIELD("gamma_max", trainer.gamma_max),
      REAL_FIELD("gamma_kappa", trainer.gamma_kappa),
      INT_FIELD("total_steps", trainer.total_steps),
      INT_FIELD("seed", trainer.seed),
      BOOL_FIELD("normalize_advantages", trainer.normalize_advantages),
      REAL_FIELD("max_grad_norm", trainer.max_grad_norm),
      Field{"reg_divergence",
            [](RunConfig& c, std::string_view v) {
              if (v == "kl")
                c.trainer.reg_divergence = Divergence::kForwardKl;
              else if (v == "reverse_kl")
                c.trainer.reg_divergence = Divergence::kReverseKl;
              else
                bad("reg_divergence", v, "expected kl or reverse_kl");
            },
            [](const RunConfig& c) {
              return std::string(c.trainer.reg_divergence == Divergence::kForwardKl ? "kl" : "reverse_kl");
            }},
      BOOL_FIELD("reg_detach", trainer.reg_detach),
      INT_FIELD("probe_states", trainer.probe_states),
      INT_FIELD("checkpoint_every", trainer.checkpoint_every),
      REAL_FIELD("stop_solved_ratio", trainer.stop_solved_ratio),
      INT_FIELD("stop_min_episodes", trainer.stop_min_episodes),
      REAL_FIELD("coverage_reward", scenario.coverage_reward),
      REAL_FIELD("move_penalty", scenario.move_penalty),
      INT_FIELD("battery_capacity", scenario.battery_capacity),
      INT_FIELD("charge_per_step", scenario.charge_per_step),
      INT_FIELD("fov_half", scenario.fov_half),
      INT_FIELD("timeout", scenario.timeout),
      INT_FIELD("target_count_min", scenario.target_count_min),
      INT_FIELD("target_count_max", scenario.target_count_max),
      INT_FIELD("target_size_min", scenario.target_size_min),
      INT_FIELD("target_size_max", scenario.target_size_max),
      INT_FIELD("safety_margin", scenario.safety_margin),
      Field{"architecture",
            [](RunConfig& c, std::string_view v) {
              try {
                c.architecture = Architecture::parse(v);
              } catch (const std::exception& e) {
                throw std::invalid_argument(std::string("config field 'architecture': ") + e.what());
              }
            },
            [](const RunConfig& c) { return c.architecture.to_string(); }},
      Field{"maps",
            [](RunConfig& c, std::string_view v) {
              c.maps.clear();
              std::size_t pos = 0;
              while (pos <= v.size()) {
                const auto comma = v.find(',', pos);
                const auto item = trim(v.substr(pos, comma == std::string_view::npos ? v.npos : comma - pos));
                if (!item.empty()) c.maps.emplace_back(item);
                if (comma == std::string_view::npos) break;
                pos = comma + 1;
              }
              if (c.maps.empty()) bad("maps", v, "expected a comma-separated list of map files");
            },
            [](const RunConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.maps.size(); ++i) s += (i ? "," : "") + c.maps[i];
              return s;
            }},
  };
  return table;
}

#undef INT_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD

void validate(const RunConfig& cfg) {
  try {
    cfg.trainer.validate();
    cfg.scenario.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

}  // namespace

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config field '" + std::string(key) + "'");
}

RunConfig parse_run_config(std::string_view text, const std::string& base_dir) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
  if (!base_dir.empty()) {
    for (std::string& m : cfg.maps) {
      std::filesystem::path p(m);
      if (p.is_relative()) m = (std::filesystem::path(base_dir) / p).lexically_normal().string();
    }
  }
  validate(cfg);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::filesystem::absolute(path).parent_path().string());
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) {
    if (std::string_view(f.key) == "maps" && cfg.maps.empty()) continue;
    out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::vector<MapPtr> load_maps(const std::vector<std::string>& paths) {
  std::vector<MapPtr> out;
  for (const std::string& p : paths) out.push_back(std::make_shared<const MapSpec>(load_map_file(p)));
  return out;
}

}  // namespace symrl
