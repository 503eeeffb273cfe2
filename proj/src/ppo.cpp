#include "symrl/ppo.hpp"

#include "symrl/heuristic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace symrl {

namespace {

constexpr std::string_view kModeNames[] = {"baseline", "augment", "ensemble", "regularized", "ens_reg"};
constexpr std::string_view kTrainHeader = "SYMRL-TRAIN v1";

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double read_double(std::istream& in) {
  std::string tok;
  in >> tok;
  if (!in) throw std::runtime_error("truncated trainer state");
  return std::strtod(tok.c_str(), nullptr);
}

void expect(std::istream& in, std::string_view word) {
  std::string tok;
  in >> tok;
  if (tok != word) throw std::runtime_error("trainer state: expected '" + std::string(word) + "', got '" + tok + "'");
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace

static std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

std::string_view mode_name(AgentMode mode) { return kModeNames[static_cast<int>(mode)]; }

AgentMode parse_mode(std::string_view name) {
  for (int i = 0; i < 5; ++i)
    if (kModeNames[i] == name) return static_cast<AgentMode>(i);
  throw std::invalid_argument("unknown agent_mode '" + std::string(name) +
                              "'; valid modes: baseline, augment, ensemble, regularized, ens_reg");
}

bool uses_ensemble(AgentMode mode) { return mode == AgentMode::kEnsemble || mode == AgentMode::kEnsReg; }

bool uses_regularization(AgentMode mode) {
  return mode == AgentMode::kRegularized || mode == AgentMode::kEnsReg;
}

void TrainerConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("invalid " + field + ": " + why);
  };
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) fail("clip_epsilon", "must be in (0,1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda", "must be in [0,1]");
  if (!(gamma0 > 0.0 && gamma0 <= gamma_max)) fail("gamma0", "must be positive and <= gamma_max");
  if (!(gamma_max < 1.0)) fail("gamma_max", "must be < 1");
  if (!(gamma_kappa > 0.0 && gamma_kappa < 1.0)) fail("gamma_kappa", "must be in (0,1)");
  if (rollout_steps < 0) fail("rollout_steps", "must be >= 0");
  if (num_envs <= 0) fail("num_envs", "must be positive");
  if (rollout_steps % num_envs != 0) fail("rollout_steps", "must be a multiple of num_envs");
  if (minibatch_size <= 0) fail("minibatch_size", "must be positive");
  if (epochs < 0) fail("epochs", "must be >= 0");
  if (!(learning_rate >= 0.0)) fail("learning_rate", "must be >= 0");
  if (total_steps < 0) fail("total_steps", "must be >= 0");
  if (probe_states < 0) fail("probe_states", "must be >= 0");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
  if (!(entropy_weight >= 0.0 && value_weight >= 0.0)) fail("entropy_weight/value_weight", "must be >= 0");
  if (!(policy_reg_weight >= 0.0 && value_reg_weight >= 0.0))
    fail("policy_reg_weight/value_reg_weight", "must be >= 0");
}

double schedule_gamma(double gamma, bool solved, const TrainerConfig& cfg) {
  if (!solved) return gamma;
  return std::min(cfg.gamma_max, 1.0 - (1.0 - gamma) * cfg.gamma_kappa);
}

std::vector<MapPtr> training_maps(const std::vector<MapPtr>& base, AgentMode mode) {
  if (mode != AgentMode::kAugment) return base;
  std::vector<MapPtr> out;
  for (const MapPtr& m : base) {
    for (GroupElement g : group_elements())
      out.push_back(g == GroupElement::identity() ? m : std::make_shared<const MapSpec>(rotate_map(g, *m)));
  }
  return out;
}

// ---------------------------------------------------------------------------

EnvPool::EnvPool(std::vector<MapPtr> maps, ScenarioConfig cfg, int num_envs, std::uint64_t seed)
    : maps_(std::move(maps)), cfg_(cfg) {
  if (maps_.empty()) throw std::invalid_argument("environment pool needs at least one map");
  slots_.resize(num_envs);
  for (int e = 0; e < num_envs; ++e) {
    slots_[e].rng.seed(derive_seed(seed, 0x1000 + e));
    restart(e);
  }
}

void EnvPool::restart(int e) {
  EnvSlot& s = slots_[e];
  s.map_index = static_cast<int>(s.rng() % maps_.size());
  s.state = reset(maps_[s.map_index], cfg_, s.rng());
  s.initial_targets = static_cast<int>(count_set(s.state.target));
  s.episode_reward = 0.0;
}

void EnvPool::write(std::ostream& out) const {
  out << "pool " << slots_.size() << '\n';
  for (const EnvSlot& s : slots_) {
    out << s.map_index << ' ' << s.state.position.r << ' ' << s.state.position.c << ' ' << s.state.battery
        << ' ' << (s.state.landed ? 1 : 0) << ' ' << s.state.step_count << ' ' << s.initial_targets << ' '
        << hex(s.episode_reward) << ' ';
    for (std::uint8_t v : s.state.target.data()) out << (v ? '1' : '0');
    out << '\n' << s.rng << '\n';
  }
}

void EnvPool::read(std::istream& in) {
  expect(in, "pool");
  std::size_t n = 0;
  in >> n;
  if (n != slots_.size()) throw std::runtime_error("trainer state: environment count differs from config");
  for (EnvSlot& s : slots_) {
    int landed = 0;
    in >> s.map_index >> s.state.position.r >> s.state.position.c >> s.state.battery >> landed >>
        s.state.step_count >> s.initial_targets;
    s.episode_reward = read_double(in);
    std::string bits;
    in >> bits >> s.rng;
    if (!in || s.map_index < 0 || s.map_index >= static_cast<int>(maps_.size()))
      throw std::runtime_error("trainer state: bad environment record");
    s.state.map = maps_[s.map_index];
    s.state.landed = landed != 0;
    const int m = s.state.map->side();
    if (bits.size() != static_cast<std::size_t>(m) * m) throw std::runtime_error("trainer state: target size");
    s.state.target = BoolGrid(m);
    for (std::size_t i = 0; i < bits.size(); ++i) s.state.target.data()[i] = bits[i] == '1';
  }
}

// ---------------------------------------------------------------------------

PolicyEvaluation evaluate_policy(const ParamNet& net, AgentMode mode, std::span<const Observation> obs,
                                 std::span<const ActionMask> masks) {
  PolicyEvaluation out;
  if (obs.empty()) return out;
  if (uses_ensemble(mode)) {
    for (const EnsembleOutput& e : ensemble_eval_batch(net, obs, masks)) {
      out.dists.push_back(e.ensemble_dist);
      out.values.push_back(e.ensemble_value);
    }
    return out;
  }
  const NetEvaluation ev = net.evaluate(ObservationBatch::from(obs));
  for (std::size_t i = 0; i < obs.size(); ++i) {
    out.dists.push_back(
        masked_policy(std::span<const double>(ev.logits).subspan(i * kNumActions, kNumActions), masks[i]));
    out.values.push_back(ev.values[i]);
  }
  return out;
}

int sample_action(const Distribution& p, std::mt19937_64& rng) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double cum = 0.0;
  int last = -1;
  for (int a = 0; a < kNumActions; ++a) {
    if (!(p[a] > 0.0)) continue;
    cum += p[a];
    last = a;
    if (u < cum) return a;
  }
  if (last < 0) throw std::invalid_argument("sample_action: distribution has no support");
  return last;
}

RolloutResult collect_rollout(EnvPool& pool, const ParamNet& net, AgentMode mode, int horizon) {
  RolloutResult res;
  RolloutBuffer& buf = res.buffer;
  const int n = pool.size();
  buf.num_envs = n;
  buf.horizon = horizon;
  const std::size_t total = static_cast<std::size_t>(n) * horizon;
  buf.observations.reserve(total);
  buf.masks.reserve(total);
  buf.actions.reserve(total);
  buf.behavior_log_probs.reserve(total);
  buf.rewards.reserve(total);
  buf.values.reserve(total);
  buf.episode_ends.reserve(total);

  const ScenarioConfig& cfg = pool.scenario();
  std::vector<Observation> obs(n);
  std::vector<ActionMask> masks(n);
  std::vector<int> actions(n);
  std::vector<StepResult> results(n);

  auto observe_all = [&] {
#pragma omp parallel for schedule(static)
    for (int e = 0; e < n; ++e) {
      obs[e] = observe(pool.slot(e).state, cfg);
      masks[e] = action_mask(pool.slot(e).state, cfg);
    }
  };

  for (int t = 0; t < horizon; ++t) {
    observe_all();
    const PolicyEvaluation ev = evaluate_policy(net, mode, obs, masks);
    for (int e = 0; e < n; ++e) actions[e] = sample_action(ev.dists[e], pool.slot(e).rng);
#pragma omp parallel for schedule(static)
    for (int e = 0; e < n; ++e) results[e] = step(pool.slot(e).state, actions[e], cfg);
    for (int e = 0; e < n; ++e) {
      EnvSlot& slot = pool.slot(e);
      StepResult& r = results[e];
      buf.observations.push_back(std::move(obs[e]));
      buf.masks.push_back(masks[e]);
      buf.actions.push_back(actions[e]);
      buf.behavior_log_probs.push_back(std::log(ev.dists[e][actions[e]]));
      buf.rewards.push_back(r.reward);
      buf.values.push_back(ev.values[e]);
      buf.episode_ends.push_back(r.done != Done::kNone ? 1 : 0);
      slot.episode_reward += r.reward;
      if (r.done != Done::kNone) {
        EpisodeRecord rec;
        rec.solved = r.done == Done::kSolved;
        rec.steps = r.state.step_count;
        const int left = static_cast<int>(count_set(r.state.target));
        rec.coverage = slot.initial_targets > 0
                           ? static_cast<double>(slot.initial_targets - left) / slot.initial_targets
                           : 1.0;
        rec.total_reward = slot.episode_reward;
        res.episodes.push_back(rec);
        pool.restart(e);
      } else {
        slot.state = std::move(r.state);
      }
    }
  }
  if (horizon > 0) {
    observe_all();
    buf.last_values = evaluate_policy(net, mode, obs, masks).values;
  }
  return res;
}

void compute_gae(RolloutBuffer& buffer, double gamma, double lambda) {
  buffer.check_consistent();
  const int n = buffer.num_envs, T = buffer.horizon;
  buffer.advantages.assign(buffer.size(), 0.0);
  buffer.returns.assign(buffer.size(), 0.0);
  if (buffer.empty()) return;
  if (buffer.last_values.size() != static_cast<std::size_t>(n))
    throw std::logic_error("compute_gae: last_values must hold one value per environment");
  for (int e = 0; e < n; ++e) {
    double gae = 0.0;
    for (int t = T - 1; t >= 0; --t) {
      const std::size_t i = buffer.index(t, e);
      const double live = buffer.episode_ends[i] ? 0.0 : 1.0;
      const double next = t == T - 1 ? buffer.last_values[e] : buffer.values[buffer.index(t + 1, e)];
      const double delta = buffer.rewards[i] + gamma * next * live - buffer.values[i];
      gae = delta + gamma * lambda * live * gae;
      buffer.advantages[i] = gae;
      buffer.returns[i] = gae + buffer.values[i];
    }
  }
}

void normalize_advantages(RolloutBuffer& buffer) {
  auto& a = buffer.advantages;
  if (a.empty()) return;
  double mean = 0.0;
  for (double v : a) mean += v;
  mean /= static_cast<double>(a.size());
  double var = 0.0;
  for (double v : a) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(a.size()));
  const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
  for (double& v : a) v = (v - mean) * inv;
}

// ---------------------------------------------------------------------------

ad::Var ppo_loss(NetGraph& graph, const RolloutBuffer& buffer, std::span<const std::size_t> idx,
                 const TrainerConfig& cfg, LossStats* stats) {
  ad::Tape& tape = graph.tape();
  const int n = static_cast<int>(idx.size());
  if (n == 0) throw std::invalid_argument("ppo_loss: empty minibatch");
  std::vector<Observation> obs;
  std::vector<ActionMask> masks;
  std::vector<std::uint8_t> mask_bytes;
  std::vector<double> old_logp(n), adv(n), ret(n);
  std::vector<std::size_t> chosen(n);
  obs.reserve(n);
  masks.reserve(n);
  for (int i = 0; i < n; ++i) {
    const std::size_t k = idx[i];
    obs.push_back(buffer.observations[k]);
    masks.push_back(buffer.masks[k]);
    for (bool v : buffer.masks[k]) mask_bytes.push_back(v ? 1 : 0);
    old_logp[i] = buffer.behavior_log_probs[k];
    adv[i] = buffer.advantages[k];
    ret[i] = buffer.returns[k];
    chosen[i] = static_cast<std::size_t>(i) * kNumActions + buffer.actions[k];
  }

  const bool ens = uses_ensemble(cfg.mode);
  const bool reg = uses_regularization(cfg.mode);
  ad::Var logp, probs, value, preg, vreg;
  if (ens || reg) {
    const BranchBatch br = make_branches(obs, masks);
    const BranchOutputs bo = forward_branches(graph, br);
    if (ens) {
      probs = ensemble_policy(tape, bo);
      logp = ad::log(tape, ad::take(tape, probs, chosen));
      value = ensemble_value(tape, bo);
    } else {
      // Branch rows 0..n-1 are the untransformed states.
      const auto head = all_indices(static_cast<std::size_t>(n) * kNumActions);
      ad::Var logits = ad::take(tape, bo.logits, head, {n, kNumActions});
      logp = ad::take(tape, ad::masked_log_softmax(tape, logits, mask_bytes), chosen);
      probs = ad::masked_softmax(tape, logits, mask_bytes);
      value = ad::take(tape, bo.values, all_indices(n));
    }
    if (reg) {
      const RegularizationOptions opts{cfg.reg_divergence, cfg.reg_detach};
      preg = policy_regularization(tape, bo, opts);
      vreg = value_regularization(tape, bo, opts);
    }
  } else {
    const NetOutputs out = graph.forward(ObservationBatch::from(obs));
    logp = ad::take(tape, ad::masked_log_softmax(tape, out.logits, mask_bytes), chosen);
    probs = ad::masked_softmax(tape, out.logits, mask_bytes);
    value = out.value;
  }

  ad::Var old = tape.constant(ad::Tensor({n}, old_logp));
  ad::Var a = tape.constant(ad::Tensor({n}, adv));
  ad::Var ratio = ad::exp(tape, ad::sub(tape, logp, old));
  ad::Var surr1 = ad::mul(tape, ratio, a);
  ad::Var surr2 = ad::mul(tape, ad::clamp(tape, ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon), a);
  ad::Var policy_loss = ad::scale(tape, ad::mean(tape, ad::minimum(tape, surr1, surr2)), -1.0);
  ad::Var value_loss =
      ad::mean(tape, ad::square(tape, ad::sub(tape, value, tape.constant(ad::Tensor({n}, ret)))));
  ad::Var entropy = ad::mean(tape, ad::entropy_rows(tape, probs));

  ad::Var total = ad::add(tape, policy_loss, ad::scale(tape, value_loss, cfg.value_weight));
  total = ad::sub(tape, total, ad::scale(tape, entropy, cfg.entropy_weight));
  if (reg) {
    total = ad::add(tape, total, ad::scale(tape, preg, cfg.policy_reg_weight));
    total = ad::add(tape, total, ad::scale(tape, vreg, cfg.value_reg_weight));
  }

  if (stats) {
    stats->total = tape.scalar(total);
    stats->policy = tape.scalar(policy_loss);
    stats->value = tape.scalar(value_loss);
    stats->entropy = tape.scalar(entropy);
    stats->policy_reg = reg ? tape.scalar(preg) : 0.0;
    stats->value_reg = reg ? tape.scalar(vreg) : 0.0;
    const auto& lp = tape.value(logp).data;
    const auto& rv = tape.value(ratio).data;
    double kl = 0.0, clipped = 0.0;
    for (int i = 0; i < n; ++i) {
      kl += old_logp[i] - lp[i];
      if (std::abs(rv[i] - 1.0) > cfg.clip_epsilon) clipped += 1.0;
    }
    stats->approx_kl = kl / n;
    stats->clip_fraction = clipped / n;
  }
  return total;
}

UpdateStats ppo_update(ParamNet& net, Adam& adam, const RolloutBuffer& buffer, const TrainerConfig& cfg,
                       std::mt19937_64& rng) {
  UpdateStats out;
  const std::size_t N = buffer.size();
  if (N == 0) return out;
  if (buffer.advantages.size() != N || buffer.returns.size() != N)
    throw std::logic_error("ppo_update: advantages and returns must be computed first");
  std::vector<std::size_t> perm = all_indices(N);
  const std::size_t mb = static_cast<std::size_t>(cfg.minibatch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = N - 1; i > 0; --i) std::swap(perm[i], perm[rng() % (i + 1)]);
    for (std::size_t start = 0, b = 0; start < N; start += mb, ++b) {
      const std::span<const std::size_t> idx(perm.data() + start, std::min(mb, N - start));
      LossStats ls;
      GradientTape gt;
      try {
        gt = backward(net, [&](NetGraph& g) { return ppo_loss(g, buffer, idx, cfg, &ls); });
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("ppo_update: " + std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                 ", minibatch " + std::to_string(b) + " (policy " + hex(ls.policy) +
                                 ", value " + hex(ls.value) + ")");
      }
      out.grad_norm += clip_gradient_norm(gt.gradient, cfg.max_grad_norm);
      adam.step(net, gt.gradient, cfg.learning_rate);
      out.mean.total += ls.total;
      out.mean.policy += ls.policy;
      out.mean.value += ls.value;
      out.mean.entropy += ls.entropy;
      out.mean.policy_reg += ls.policy_reg;
      out.mean.value_reg += ls.value_reg;
      out.mean.approx_kl += ls.approx_kl;
      out.mean.clip_fraction += ls.clip_fraction;
      ++out.minibatches;
    }
  }
  if (out.minibatches > 0) {
    const double k = out.minibatches;
    for (double* v : {&out.mean.total, &out.mean.policy, &out.mean.value, &out.mean.entropy,
                      &out.mean.policy_reg, &out.mean.value_reg, &out.mean.approx_kl, &out.mean.clip_fraction,
                      &out.grad_norm})
      *v /= k;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <class Row, class F>
void visit_metrics(Row& r, F&& f) {
  f("solved_ratio", r.solved_ratio);
  f("mean_episode_steps", r.mean_episode_steps);
  f("mean_coverage", r.mean_coverage);
  f("mean_episode_reward", r.mean_episode_reward);
  f("loss_total", r.update_stats.mean.total);
  f("loss_policy", r.update_stats.mean.policy);
  f("loss_value", r.update_stats.mean.value);
  f("entropy", r.update_stats.mean.entropy);
  f("policy_reg", r.update_stats.mean.policy_reg);
  f("value_reg", r.update_stats.mean.value_reg);
  f("approx_kl", r.update_stats.mean.approx_kl);
  f("clip_fraction", r.update_stats.mean.clip_fraction);
  f("grad_norm", r.update_stats.grad_norm);
  f("gamma", r.gamma);
  f("probe_raw_kl", r.probe_raw_kl);
  f("probe_raw_value", r.probe_raw_value);
  f("probe_ensemble_kl", r.probe_ensemble_kl);
  f("probe_ensemble_value", r.probe_ensemble_value);
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string metrics_header() {
  std::string h = "update,steps,episodes";
  MetricsRow r;
  visit_metrics(r, [&](const char* name, double&) { h += std::string(",") + name; });
  return h;
}

std::string format_metrics_row(const MetricsRow& row) {
  std::string s = std::to_string(row.update) + "," + std::to_string(row.steps) + "," + std::to_string(row.episodes);
  visit_metrics(row, [&](const char*, const double& v) { s += "," + format_real(v); });
  return s;
}

std::int64_t steps_to_threshold(const std::vector<MetricsRow>& history, double threshold, int min_episodes) {
  for (const MetricsRow& r : history)
    if (r.episodes >= min_episodes && r.solved_ratio >= threshold) return r.steps;
  return -1;
}

// ---------------------------------------------------------------------------

namespace {

void check_maps(const std::vector<MapPtr>& maps, const Architecture& arch) {
  if (maps.empty()) throw std::invalid_argument("training needs at least one map");
  for (const MapPtr& m : maps)
    if (m->side() != arch.side)
      throw std::invalid_argument("map '" + m->name() + "' has side " + std::to_string(m->side()) +
                                  " but the network expects " + std::to_string(arch.side));
}

}  // namespace

Trainer::Trainer(TrainerConfig cfg, ScenarioConfig scenario, Architecture arch, std::vector<MapPtr> maps)
    : cfg_(cfg), scenario_(scenario), net_(arch, derive_seed(cfg.seed, 1)) {
  cfg_.validate();
  scenario_.validate();
  check_maps(maps, arch);
  adam_ = Adam(net_.parameter_count());
  pool_ = EnvPool(training_maps(maps, cfg_.mode), scenario_, cfg_.num_envs, derive_seed(cfg_.seed, 2));
  rng_.seed(derive_seed(cfg_.seed, 3));
  gamma_ = cfg_.gamma0;
  for (const EnvState& s : sample_probe_states(pool_.maps(), scenario_, cfg_.probe_states, derive_seed(cfg_.seed, 4))) {
    probe_obs_.push_back(observe(s, scenario_));
    probe_masks_.push_back(action_mask(s, scenario_));
  }
}

Trainer Trainer::resume(TrainerConfig cfg, ScenarioConfig scenario, Architecture arch, std::vector<MapPtr> maps,
                        const std::string& checkpoint_path) {
  Trainer t(cfg, scenario, arch, std::move(maps));
  std::ifstream in(checkpoint_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + checkpoint_path);
  ParamNet net = read_checkpoint(in);
  if (!(net.architecture() == t.net_.architecture()))
    throw std::runtime_error("checkpoint architecture " + net.architecture().to_string() +
                             " does not match config " + t.net_.architecture().to_string());
  t.net_ = std::move(net);
  t.read_state(in);
  return t;
}

bool Trainer::finished() const {
  return stopped_ || cfg_.rollout_steps == 0 || steps_ + cfg_.rollout_steps > cfg_.total_steps;
}

MetricsRow Trainer::probe_row() const {
  MetricsRow row;
  if (probe_obs_.empty()) return row;
  const auto probes = probe_rotations(net_, probe_obs_, probe_masks_);
  for (const RotationProbe& p : probes) {
    const RotationSpread raw = rotation_spread(p.raw_dists, p.raw_values);
    const RotationSpread ens = rotation_spread(p.ensemble_dists, p.ensemble_values);
    row.probe_raw_kl += raw.kl;
    row.probe_raw_value += raw.value;
    row.probe_ensemble_kl += ens.kl;
    row.probe_ensemble_value += ens.value;
  }
  const double k = static_cast<double>(probes.size());
  row.probe_raw_kl /= k;
  row.probe_raw_value /= k;
  row.probe_ensemble_kl /= k;
  row.probe_ensemble_value /= k;
  return row;
}

bool Trainer::iterate() {
  if (finished()) return false;
  RolloutResult r = collect_rollout(pool_, net_, cfg_.mode, cfg_.horizon());
  steps_ += static_cast<std::int64_t>(r.buffer.size());
  for (const EpisodeRecord& ep : r.episodes) gamma_ = schedule_gamma(gamma_, ep.solved, cfg_);
  compute_gae(r.buffer, gamma_, cfg_.gae_lambda);
  if (cfg_.normalize_advantages) normalize_advantages(r.buffer);
  const UpdateStats us = ppo_update(net_, adam_, r.buffer, cfg_, rng_);
  ++updates_;

  MetricsRow row = probe_row();
  row.update = updates_;
  row.steps = steps_;
  row.episodes = static_cast<int>(r.episodes.size());
  row.update_stats = us;
  row.gamma = gamma_;
  if (r.episodes.empty()) {
    row.solved_ratio = row.mean_episode_steps = row.mean_coverage = row.mean_episode_reward =
        std::numeric_limits<double>::quiet_NaN();
  } else {
    double solved = 0.0;
    for (const EpisodeRecord& ep : r.episodes) {
      solved += ep.solved ? 1.0 : 0.0;
      row.mean_episode_steps += ep.steps;
      row.mean_coverage += ep.coverage;
      row.mean_episode_reward += ep.total_reward;
    }
    const double k = static_cast<double>(r.episodes.size());
    row.solved_ratio = solved / k;
    row.mean_episode_steps /= k;
    row.mean_coverage /= k;
    row.mean_episode_reward /= k;
  }
  history_.push_back(row);
  if (cfg_.stop_solved_ratio > 0.0 && row.episodes >= cfg_.stop_min_episodes &&
      row.solved_ratio >= cfg_.stop_solved_ratio)
    stopped_ = true;
  return true;
}

std::string Trainer::metrics_csv() const {
  std::string s = metrics_header() + "\n";
  for (const MetricsRow& r : history_) s += format_metrics_row(r) + "\n";
  return s;
}

void Trainer::run(const std::string& run_dir) {
  namespace fs = std::filesystem;
  auto write_metrics = [&] {
    if (run_dir.empty()) return;
    std::ofstream out(fs::path(run_dir) / "metrics.csv", std::ios::binary | std::ios::trunc);
    out << metrics_csv();
  };
  if (!run_dir.empty()) fs::create_directories(run_dir);
  write_metrics();
  for (;;) {
    bool progressed = false;
    try {
      progressed = iterate();
    } catch (...) {
      if (!run_dir.empty()) save((fs::path(run_dir) / "failed.ckpt").string());
      throw;
    }
    if (!progressed) break;
    write_metrics();
    if (!run_dir.empty() && cfg_.checkpoint_every > 0 && updates_ % cfg_.checkpoint_every == 0)
      save((fs::path(run_dir) / ("update_" + std::to_string(updates_) + ".ckpt")).string());
  }
  if (!run_dir.empty()) save((fs::path(run_dir) / "final.ckpt").string());
}

void Trainer::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    write(out);
    if (!out) throw std::runtime_error("failed writing checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

void Trainer::write(std::ostream& out) const {
  write_checkpoint(out, net_);
  out << kTrainHeader << '\n';
  out << "mode " << mode_name(cfg_.mode) << '\n';
  out << "gamma " << hex(gamma_) << '\n';
  out << "steps " << steps_ << '\n';
  out << "updates " << updates_ << '\n';
  out << "stopped " << (stopped_ ? 1 : 0) << '\n';
  out << "rng " << rng_ << '\n';
  out << "adam\n";
  adam_.write(out);
  out << '\n';
  pool_.write(out);
  out << "metrics " << history_.size() << '\n';
  for (const MetricsRow& r : history_) {
    out << r.update << ' ' << r.steps << ' ' << r.episodes << ' ' << r.update_stats.minibatches;
    visit_metrics(r, [&](const char*, const double& v) { out << ' ' << hex(v); });
    out << '\n';
  }
}

void Trainer::read_state(std::istream& in) {
  std::string line;
  std::getline(in >> std::ws, line);
  if (line != kTrainHeader) throw std::runtime_error("checkpoint has no trainer state");
  std::string mode;
  expect(in, "mode");
  in >> mode;
  if (parse_mode(mode) != cfg_.mode)
    throw std::runtime_error("checkpoint was trained in mode " + mode + ", config says " +
                             std::string(mode_name(cfg_.mode)));
  expect(in, "gamma");
  gamma_ = read_double(in);
  expect(in, "steps");
  in >> steps_;
  expect(in, "updates");
  in >> updates_;
  int stopped = 0;
  expect(in, "stopped");
  in >> stopped;
  stopped_ = stopped != 0;
  expect(in, "rng");
  in >> rng_;
  expect(in, "adam");
  adam_.read(in);
  pool_.read(in);
  expect(in, "metrics");
  std::size_t k = 0;
  in >> k;
  history_.assign(k, MetricsRow{});
  for (MetricsRow& r : history_) {
    in >> r.update >> r.steps >> r.episodes >> r.update_stats.minibatches;
    visit_metrics(r, [&](const char*, double& v) { v = read_double(in); });
  }
  if (!in) throw std::runtime_error("truncated trainer state");
}

}  // namespace symrl
