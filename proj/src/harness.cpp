#include "symrl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace symrl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double coverage_of(int initial, const EnvState& s) {
  if (initial == 0) return 1.0;
  return static_cast<double>(initial - static_cast<int>(count_set(s.target))) / initial;
}

}  // namespace

std::string_view policy_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kRaw: return "raw";
    case PolicyKind::kEnsemble: return "ensemble";
    case PolicyKind::kHeuristic: return "heuristic";
  }
  return "?";
}

PolicyKind parse_policy(std::string_view name) {
  if (name == "raw") return PolicyKind::kRaw;
  if (name == "ensemble") return PolicyKind::kEnsemble;
  if (name == "heuristic") return PolicyKind::kHeuristic;
  throw std::invalid_argument("unknown policy '" + std::string(name) + "'; valid: raw, ensemble, heuristic");
}

int greedy_action(const Distribution& dist, GroupElement frame) {
  int best = -1;
  double best_p = -1.0;
  for (int a = 0; a < kNumActions; ++a) {
    const double p = dist[transform_action(frame, a)];
    if (p > best_p) {
      best_p = p;
      best = a;
    }
  }
  return transform_action(frame, best);
}

std::optional<AgentMode> checkpoint_mode(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  read_checkpoint(in);
  std::string header, key, mode;
  if (!std::getline(in >> std::ws, header) || header != "SYMRL-TRAIN v1") return std::nullopt;
  in >> key >> mode;
  if (key != "mode") return std::nullopt;
  return parse_mode(mode);
}

EpisodeOutcome run_episode(EnvState start, const ScenarioConfig& cfg, const ActionFn& act, bool record) {
  EpisodeOutcome out;
  const int initial = static_cast<int>(count_set(start.target));
  EnvState s = std::move(start);
  if (record) out.trajectory.push_back(s);
  for (;;) {
    const int a = act(s);
    StepResult r = step(s, a, cfg);
    out.total_reward += r.reward;
    ++out.steps;
    if (record) {
      out.actions.push_back(a);
      out.trajectory.push_back(r.state);
    }
    s = std::move(r.state);
    if (r.done != Done::kNone) {
      out.solved = r.done == Done::kSolved;
      break;
    }
  }
  out.coverage = coverage_of(initial, s);
  return out;
}

ActionFn make_controller(const ParamNet* net, PolicyKind kind, const ScenarioConfig& cfg, GroupElement frame) {
  if (kind == PolicyKind::kHeuristic) {
    auto plan = std::make_shared<PlanState>();
    return [plan, cfg](const EnvState& s) { return heuristic_action(s, *plan, cfg); };
  }
  if (!net) throw std::invalid_argument("a network policy needs a checkpoint");
  if (kind == PolicyKind::kEnsemble) {
    return [net, cfg, frame](const EnvState& s) {
      return greedy_action(ensemble_eval(*net, observe(s, cfg), action_mask(s, cfg)).ensemble_dist, frame);
    };
  }
  return [net, cfg, frame](const EnvState& s) {
    const Observation obs = observe(s, cfg);
    const NetEvaluation ev = net->evaluate(ObservationBatch::from(std::span<const Observation>(&obs, 1)));
    return greedy_action(masked_policy(ev.logits, action_mask(s, cfg)), frame);
  };
}

// ---------------------------------------------------------------------------

EvalAggregate aggregate_records(const std::vector<EvalRecord>& records) {
  EvalAggregate a;
  a.scenarios = static_cast<int>(records.size());
  if (records.empty()) {
    a.solved_ratio = a.mean_coverage = a.median_rd = kNaN;
    return a;
  }
  double solved = 0.0, cov = 0.0;
  std::vector<double> rds;
  for (const EvalRecord& r : records) {
    solved += r.solved ? 1.0 : 0.0;
    cov += r.coverage;
    if (!std::isnan(r.rd)) rds.push_back(r.rd);
  }
  a.solved_ratio = solved / records.size();
  a.mean_coverage = cov / records.size();
  a.median_rd = rds.empty() ? kNaN : median_spread(rds).median;
  return a;
}

void check_report(const EvalReport& report) {
  for (const EvalRecord& r : report.records) {
    if (!(r.coverage >= 0.0 && r.coverage <= 1.0)) throw std::logic_error("eval record coverage outside [0,1]");
    if (r.solved && r.coverage != 1.0) throw std::logic_error("solved eval record with coverage below 1");
    if (!std::isnan(r.rd) && !(r.solved && r.heuristic_solved))
      throw std::logic_error("eval record has an RD without two solved episodes");
  }
  const EvalAggregate re = aggregate_records(report.records);
  auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
  if (re.scenarios != report.aggregate.scenarios || !same(re.solved_ratio, report.aggregate.solved_ratio) ||
      !same(re.mean_coverage, report.aggregate.mean_coverage) || !same(re.median_rd, report.aggregate.median_rd))
    throw std::logic_error("eval aggregates do not match their records");
}

EvalReport evaluate(const ParamNet* net, const std::vector<MapPtr>& maps, const ScenarioConfig& cfg,
                    const EvalOptions& opts) {
  cfg.validate();
  EvalReport report;
  if (opts.scenarios > 0 && maps.empty()) throw std::invalid_argument("evaluation needs at least one map");
  std::vector<MapPtr> pool;
  for (const MapPtr& m : maps) {
    if (net && m->side() != net->architecture().side) {
      if (m->side() > net->architecture().side)
        throw std::invalid_argument("map/checkpoint size mismatch: map '" + m->name() + "' has side " +
                                    std::to_string(m->side()) + ", network expects " +
                                    std::to_string(net->architecture().side));
      pool.push_back(std::make_shared<const MapSpec>(pad_map(*m, net->architecture().side)));
    } else {
      pool.push_back(m);
    }
  }
  const int rotations = opts.rotations ? kGroupOrder : 1;
  const int jobs = std::max(0, opts.scenarios) * rotations;
  report.records.resize(jobs);
  const auto elems = group_elements();
#pragma omp parallel for schedule(dynamic)
  for (int j = 0; j < jobs; ++j) {
    const int i = j / rotations;
    const GroupElement g = elems[j % rotations];
    const std::size_t mi = static_cast<std::size_t>(i) % pool.size();
    const std::uint64_t seed = derive_seed(opts.seed, static_cast<std::uint64_t>(i));
    const EnvState start = transform_state(g, reset(pool[mi], cfg, seed));
    EvalRecord& rec = report.records[j];
    rec.map = maps[mi]->name();
    rec.rotation = g.degrees();
    rec.seed = seed;
    const EpisodeOutcome agent = run_episode(start, cfg, make_controller(net, opts.policy, cfg, g));
    rec.solved = agent.solved;
    rec.coverage = agent.coverage;
    rec.steps = agent.steps;
    rec.rd = kNaN;
    if (opts.compare_heuristic) {
      const EpisodeOutcome h = run_episode(start, cfg, make_controller(nullptr, PolicyKind::kHeuristic, cfg));
      rec.heuristic_solved = h.solved;
      rec.heuristic_steps = h.steps;
      if (agent.solved && h.solved) rec.rd = relative_deviation(agent.steps, h.steps);
    }
  }
  report.aggregate = aggregate_records(report.records);
  check_report(report);
  return report;
}

std::string eval_records_header() {
  return "map,rotation,seed,solved,coverage,steps,heuristic_solved,heuristic_steps,rd";
}

std::string format_eval_record(const EvalRecord& r) {
  return r.map + "," + std::to_string(r.rotation) + "," + std::to_string(r.seed) + "," + (r.solved ? "1" : "0") +
         "," + real(r.coverage) + "," + std::to_string(r.steps) + "," + (r.heuristic_solved ? "1" : "0") + "," +
         std::to_string(r.heuristic_steps) + "," + real(r.rd);
}

std::string eval_summary_header() { return "label,scenarios,solved_ratio,mean_coverage,median_rd"; }

std::string format_eval_summary(std::string_view label, const EvalAggregate& a) {
  return std::string(label) + "," + std::to_string(a.scenarios) + "," + real(a.solved_ratio) + "," +
         real(a.mean_coverage) + "," + real(a.median_rd);
}

Spread median_spread(std::vector<double> values) {
  Spread s;
  if (values.empty()) return {kNaN, kNaN};
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  s.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  for (double v : values) s.max_deviation = std::max(s.max_deviation, std::abs(v - s.median));
  return s;
}

// ---------------------------------------------------------------------------

ProbeReport probe(const ParamNet& net, const std::vector<EnvState>& states, const ScenarioConfig& cfg) {
  ProbeReport report;
  std::vector<Observation> obs;
  std::vector<ActionMask> masks;
  for (const EnvState& s : states) {
    obs.push_back(observe(s, cfg));
    masks.push_back(action_mask(s, cfg));
  }
  const auto probes = probe_rotations(net, obs, masks);
  for (std::size_t i = 0; i < probes.size(); ++i) {
    ProbeRecord r;
    r.state = i;
    r.probe = probes[i];
    r.raw = rotation_spread(r.probe.raw_dists, r.probe.raw_values);
    r.ensemble = rotation_spread(r.probe.ensemble_dists, r.probe.ensemble_values);
    report.mean_raw.kl += r.raw.kl;
    report.mean_raw.value += r.raw.value;
    report.mean_ensemble.kl += r.ensemble.kl;
    report.mean_ensemble.value += r.ensemble.value;
    report.records.push_back(r);
  }
  if (!probes.empty()) {
    const double k = static_cast<double>(probes.size());
    report.mean_raw.kl /= k;
    report.mean_raw.value /= k;
    report.mean_ensemble.kl /= k;
    report.mean_ensemble.value /= k;
  }
  return report;
}

std::string probe_header() {
  std::string h = "state,policy,rotation";
  for (int a = 0; a < kNumActions; ++a) h += ",p_" + std::string(action_name(a));
  return h + ",value,value_dev,kl_spread,value_spread";
}

std::string format_probe(const ProbeReport& report) {
  std::string out = probe_header() + "\n";
  for (const ProbeRecord& r : report.records) {
    for (int which = 0; which < 2; ++which) {
      const auto& dists = which == 0 ? r.probe.raw_dists : r.probe.ensemble_dists;
      const auto& values = which == 0 ? r.probe.raw_values : r.probe.ensemble_values;
      const RotationSpread& sp = which == 0 ? r.raw : r.ensemble;
      const double vbar = order_free_mean(values);
      for (int g = 0; g < kGroupOrder; ++g) {
        out += std::to_string(r.state) + (which == 0 ? ",raw," : ",ensemble,") + std::to_string(g * 90);
        for (double p : dists[g]) out += "," + real(p);
        out += "," + real(values[g]) + "," + real(std::abs(values[g] - vbar)) + "," + real(sp.kl) + "," +
               real(sp.value) + "\n";
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> render_frames(const EpisodeOutcome& episode, const ScenarioConfig& cfg) {
  std::vector<std::string> frames;
  if (episode.trajectory.empty()) return frames;
  const EnvState& first = episode.trajectory.front();
  const MapSpec& map = *first.map;
  const int m = map.side();
  BoolGrid visited(m);
  for (std::size_t t = 0; t < episode.trajectory.size(); ++t) {
    const EnvState& s = episode.trajectory[t];
    visited[s.position] = 1;
    BoolGrid fov(m);
    for (Cell c : field_of_view(s, cfg)) fov[c] = 1;
    std::ostringstream f;
    f << "step " << t << " battery " << s.battery << "/" << cfg.battery_capacity << " "
      << (s.landed ? "landed" : "flying") << " remaining " << count_set(s.target);
    if (t > 0) f << " action " << action_name(episode.actions[t - 1]);
    f << '\n';
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < m; ++c) {
        const Cell cell{r, c};
        char ch = '.';
        if (map.is_landing(cell)) ch = 'L';
        else if (map.high_obstacle()[cell]) ch = 'O';
        else if (map.nfz()[cell]) ch = 'N';
        else if (map.low_obstacle()[cell]) ch = 'o';
        else if (visited[cell]) ch = ':';
        if (first.target[cell]) ch = s.target[cell] ? 'T' : 'x';
        if (s.position == cell) ch = s.landed ? 'A' : '@';
        f << ch << (fov[cell] ? '\'' : ' ');
      }
      f << '\n';
    }
    frames.push_back(f.str());
  }
  return frames;
}

MapCheck validate_map(const MapSpec& map) {
  MapCheck out;
  out.name = map.name();
  out.side = map.side();
  out.landing_cells = static_cast<int>(map.landing_cells().size());
  for (int r = 0; r < map.side(); ++r)
    for (int c = 0; c < map.side(); ++c)
      if (map.is_flyable({r, c})) {
        ++out.flyable_cells;
        if (map.landing_distance({r, c}) == kUnreachable) ++out.unreachable_cells;
      }
  bool ok = true;
  MapSpec cur = map;
  for (GroupElement g : group_elements()) {
    const MapSpec rot = rotate_map(g, map);
    for (int r = 0; r < map.side() && ok; ++r)
      for (int c = 0; c < map.side() && ok; ++c) {
        const Cell src{r, c};
        const Cell dst = rotate_cell(g, src, map.side());
        ok = rot.is_landing(dst) == map.is_landing(src) && rot.is_flyable(dst) == map.is_flyable(src) &&
             rot.is_occluder(dst) == map.is_occluder(src) &&
             rot.landing_distance(dst) == map.landing_distance(src);
      }
    cur = rotate_map(kRot90, cur);
  }
  out.rotations_ok = ok && cur.same_structure(map);
  return out;
}

std::vector<std::string> split_list(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto next = text.find(sep, pos);
    std::string_view item = text.substr(pos, next == std::string_view::npos ? text.npos : next - pos);
    while (!item.empty() && (item.front() == ' ' || item.front() == '\t')) item.remove_prefix(1);
    while (!item.empty() && (item.back() == ' ' || item.back() == '\t')) item.remove_suffix(1);
    if (!item.empty()) out.emplace_back(item);
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace symrl
