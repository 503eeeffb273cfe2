// symrl: train, evaluate, probe and render coverage-planning agents.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "symrl/harness.hpp"
#include "symrl/kernels.hpp"
#include "symrl/run_config.hpp"

namespace fs = std::filesystem;
using namespace symrl;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string maps;
  std::uint64_t seed = 1;
  std::string out;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  for (const std::string& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!c.maps.empty()) cfg.maps = split_list(c.maps);
  for (std::string& m : cfg.maps) m = fs::absolute(m).lexically_normal().string();
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string real(double v) {
  std::ostringstream s;
  s.precision(9);
  s << v;
  return s.str();
}

int cmd_train(const Common& c, const std::string& seeds_text, bool seed_given, const std::string& resume) {
  RunConfig cfg = resolve_config(c);
  std::vector<std::uint64_t> seeds;
  if (!seeds_text.empty()) {
    for (const std::string& s : split_list(seeds_text)) seeds.push_back(std::stoull(s));
  } else {
    seeds.push_back(seed_given ? c.seed : cfg.trainer.seed);
  }
  if (!resume.empty() && seeds.size() != 1) throw std::invalid_argument("--resume takes exactly one seed");
  if (cfg.maps.empty()) throw std::invalid_argument("config field 'maps' is required for training");
  const std::vector<MapPtr> maps = load_maps(cfg.maps);
  const fs::path root = c.out.empty() ? fs::path("runs") : fs::path(c.out);
  std::cout << "threads " << kernels::max_threads() << '\n';
  for (std::uint64_t seed : seeds) {
    RunConfig run = cfg;
    run.trainer.seed = seed;
    const fs::path dir = root / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    write_file(dir / "config.cfg", format_run_config(run));
    Trainer trainer = resume.empty()
                          ? Trainer(run.trainer, run.scenario, run.architecture, maps)
                          : Trainer::resume(run.trainer, run.scenario, run.architecture, maps, resume);
    trainer.run(dir.string());
    const auto& h = trainer.history();
    std::ostringstream report;
    report << "mode " << mode_name(run.trainer.mode) << "\nseed " << seed << "\nupdates " << trainer.updates()
           << "\nsteps " << trainer.interaction_steps() << "\ngamma " << real(trainer.gamma())
           << "\nsteps_to_0.9 " << steps_to_threshold(h, 0.9, run.trainer.stop_min_episodes)
           << "\nfinal_solved_ratio " << (h.empty() ? std::string("nan") : real(h.back().solved_ratio)) << '\n';
    write_file(dir / "report.txt", report.str());
    std::cout << "seed " << seed << ": " << trainer.updates() << " updates, " << trainer.interaction_steps()
              << " steps -> " << dir.string() << '\n';
  }
  return 0;
}

PolicyKind choose_policy(const std::string& name, const std::string& checkpoint) {
  if (name != "auto") return parse_policy(name);
  if (checkpoint.empty()) return PolicyKind::kHeuristic;
  const auto mode = checkpoint_mode(checkpoint);
  return mode && uses_ensemble(*mode) ? PolicyKind::kEnsemble : PolicyKind::kRaw;
}

int cmd_eval(const Common& c, const std::vector<std::string>& checkpoints, bool rotations, int scenarios,
             const std::string& policy) {
  const RunConfig cfg = resolve_config(c);
  if (cfg.maps.empty()) throw std::invalid_argument("eval needs --maps or a config with maps");
  const std::vector<MapPtr> maps = load_maps(cfg.maps);
  std::vector<std::string> ckpts = checkpoints;
  if (ckpts.empty()) ckpts.push_back("");
  std::string records = "agent," + eval_records_header() + "\n";
  std::string summary = eval_summary_header() + "\n";
  std::vector<double> solved, cover, rd;
  for (const std::string& path : ckpts) {
    const PolicyKind kind = choose_policy(policy, path);
    std::optional<ParamNet> net;
    if (kind != PolicyKind::kHeuristic) {
      if (path.empty()) throw std::invalid_argument("policy " + std::string(policy_name(kind)) + " needs --checkpoint");
      net = load_checkpoint(path);
    }
    EvalOptions opts;
    opts.scenarios = scenarios;
    opts.seed = c.seed;
    opts.rotations = rotations;
    opts.policy = kind;
    const EvalReport rep = evaluate(net ? &*net : nullptr, maps, cfg.scenario, opts);
    const std::string label = path.empty() ? std::string("heuristic") : fs::path(path).parent_path().filename().string() + "/" + fs::path(path).stem().string();
    for (const EvalRecord& r : rep.records) records += label + "," + format_eval_record(r) + "\n";
    summary += format_eval_summary(label, rep.aggregate) + "\n";
    if (rotations) {
      for (GroupElement g : group_elements()) {
        std::vector<EvalRecord> sub;
        for (const EvalRecord& r : rep.records)
          if (r.rotation == g.degrees()) sub.push_back(r);
        summary += format_eval_summary(label + "@r" + std::to_string(g.degrees()), aggregate_records(sub)) + "\n";
      }
    }
    solved.push_back(rep.aggregate.solved_ratio);
    cover.push_back(rep.aggregate.mean_coverage);
    rd.push_back(rep.aggregate.median_rd);
  }
  if (ckpts.size() > 1) {
    const Spread s = median_spread(solved), cv = median_spread(cover), r = median_spread(rd);
    summary += "median," + std::to_string(scenarios * (rotations ? 4 : 1)) + "," + real(s.median) + "," +
               real(cv.median) + "," + real(r.median) + "\n";
    summary += "max_deviation,," + real(s.max_deviation) + "," + real(cv.max_deviation) + "," +
               real(r.max_deviation) + "\n";
  }
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_file(fs::path(c.out) / "records.csv", records);
    write_file(fs::path(c.out) / "summary.csv", summary);
  }
  std::cout << summary;
  return 0;
}

int cmd_probe(const Common& c, const std::string& checkpoint, int states) {
  const RunConfig cfg = resolve_config(c);
  if (cfg.maps.empty()) throw std::invalid_argument("probe needs --maps or a config with maps");
  const ParamNet net = load_checkpoint(checkpoint);
  const auto samples = sample_probe_states(load_maps(cfg.maps), cfg.scenario, states, c.seed);
  const ProbeReport rep = probe(net, samples, cfg.scenario);
  const std::string summary = "policy,states,mean_kl_spread,mean_value_spread\nraw," + std::to_string(samples.size()) +
                              "," + real(rep.mean_raw.kl) + "," + real(rep.mean_raw.value) + "\nensemble," +
                              std::to_string(samples.size()) + "," + real(rep.mean_ensemble.kl) + "," +
                              real(rep.mean_ensemble.value) + "\n";
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_file(fs::path(c.out) / "probe.csv", format_probe(rep));
    write_file(fs::path(c.out) / "probe_summary.csv", summary);
  } else {
    std::cout << format_probe(rep);
  }
  std::cout << summary;
  return 0;
}

int cmd_render(const Common& c, const std::string& checkpoint, const std::string& policy,
               const std::string& scenario_file, int rotation) {
  const RunConfig cfg = resolve_config(c);
  if (cfg.maps.empty()) throw std::invalid_argument("render needs --maps or a config with maps");
  const std::vector<MapPtr> maps = load_maps(cfg.maps);
  MapPtr map = maps.front();
  std::optional<ParamNet> net;
  const PolicyKind kind = choose_policy(policy, checkpoint);
  if (kind != PolicyKind::kHeuristic) {
    net = load_checkpoint(checkpoint);
    if (map->side() < net->architecture().side)
      map = std::make_shared<const MapSpec>(pad_map(*map, net->architecture().side));
  }
  EnvState start;
  if (!scenario_file.empty()) {
    std::ifstream in(scenario_file);
    if (!in) throw std::runtime_error("cannot open scenario " + scenario_file);
    std::stringstream ss;
    ss << in.rdbuf();
    start = state_from_scenario(map, cfg.scenario, parse_scenario(ss.str()));
  } else {
    start = reset(map, cfg.scenario, c.seed);
  }
  if (rotation % 90 != 0) throw std::invalid_argument("--rotation must be a multiple of 90");
  const GroupElement g(rotation / 90);
  start = transform_state(g, start);
  const EpisodeOutcome ep = run_episode(start, cfg.scenario, make_controller(net ? &*net : nullptr, kind, cfg.scenario, g), true);
  for (const std::string& f : render_frames(ep, cfg.scenario)) std::cout << f << '\n';
  std::cout << (ep.solved ? "solved" : "not solved") << " in " << ep.steps << " steps, coverage "
            << real(ep.coverage) << '\n';
  return 0;
}

int cmd_maps_validate(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  if (cfg.maps.empty()) throw std::invalid_argument("maps-validate needs --maps");
  int failures = 0;
  std::cout << "map,side,landing_cells,flyable_cells,unreachable_cells,rotations_ok,augment_pool_ok\n";
  for (const std::string& path : cfg.maps) {
    try {
      const MapPtr m = std::make_shared<const MapSpec>(load_map_file(path));
      const MapCheck chk = validate_map(*m);
      const auto pool = training_maps({m}, AgentMode::kAugment);
      bool pool_ok = pool.size() == 4;
      for (std::size_t i = 0; i < pool.size() && pool_ok; ++i)
        pool_ok = pool[i]->same_structure(rotate_map(group_elements()[i], *m));
      std::cout << chk.name << ',' << chk.side << ',' << chk.landing_cells << ',' << chk.flyable_cells << ','
                << chk.unreachable_cells << ',' << (chk.rotations_ok ? 1 : 0) << ',' << (pool_ok ? 1 : 0) << '\n';
      if (!chk.rotations_ok || !pool_ok || chk.unreachable_cells > 0) ++failures;
    } catch (const std::exception& e) {
      std::cerr << path << ": " << e.what() << '\n';
      ++failures;
    }
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  CLI::App app{"symrl: symmetry-aware coverage path planning agents"};
  app.require_subcommand(1);

  Common c;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "run config file (key = value lines)");
    sub->add_option("--set", c.sets, "override a config field, key=value")->take_all();
    sub->add_option("--maps", c.maps, "comma-separated map files");
    sub->add_option("--out", c.out, "output directory");
  };

  std::string seeds, resume, policy = "auto", scenario_file, checkpoint;
  std::vector<std::string> checkpoints;
  bool rotations = false;
  int scenarios = 100, states = 64, rotation = 0;

  auto* train = app.add_subcommand("train", "train one agent per seed");
  add_common(train);
  auto* train_seed = train->add_option("--seed", c.seed, "single run seed");
  train->add_option("--seeds", seeds, "comma-separated run seeds");
  train->add_option("--resume", resume, "continue from a trainer checkpoint");

  auto* eval = app.add_subcommand("eval", "greedy evaluation on generated scenarios");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoints, "checkpoint file; repeat for several agents");
  eval->add_option("--seed", c.seed, "scenario seed");
  eval->add_flag("--rotations", rotations, "run every scenario under all four map rotations");
  eval->add_option("--scenarios", scenarios, "number of scenarios");
  eval->add_option("--policy", policy, "auto, raw, ensemble or heuristic");

  auto* prb = app.add_subcommand("probe", "per-rotation policy and value disagreement");
  add_common(prb);
  prb->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  prb->add_option("--seed", c.seed, "state sampling seed");
  prb->add_option("--scenarios", states, "number of probe states");

  auto* render = app.add_subcommand("render", "ASCII frames of one greedy episode");
  add_common(render);
  render->add_option("--checkpoint", checkpoint, "checkpoint file");
  render->add_option("--policy", policy, "auto, raw, ensemble or heuristic");
  render->add_option("--seed", c.seed, "scenario seed, as listed in eval records");
  render->add_option("--scenario", scenario_file, "scenario file (CPPSCEN v1)");
  render->add_option("--rotation", rotation, "rotate the scenario by this many degrees");

  auto* validate = app.add_subcommand("maps-validate", "check map files");
  add_common(validate);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(c, seeds, train_seed->count() > 0, resume);
    if (*eval) return cmd_eval(c, checkpoints, rotations, scenarios, policy);
    if (*prb) return cmd_probe(c, checkpoint, states);
    if (*render) return cmd_render(c, checkpoint, policy, scenario_file, rotation);
    if (*validate) return cmd_maps_validate(c);
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
