#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "support.hpp"
#include "symrl/ensemble.hpp"
#include "symrl/ppo.hpp"

using namespace symrl;

namespace {

ScenarioConfig micro_cfg() {
  ScenarioConfig cfg;
  cfg.battery_capacity = 20;
  cfg.timeout = 60;
  return cfg;
}

TrainerConfig small_trainer(AgentMode mode) {
  TrainerConfig t;
  t.mode = mode;
  t.rollout_steps = 64;
  t.num_envs = 4;
  t.minibatch_size = 32;
  t.epochs = 2;
  t.learning_rate = 1e-3;
  t.total_steps = 256;
  t.probe_states = 4;
  t.seed = 5;
  return t;
}

// A^_t = sum_l (gamma lambda)^l delta_{t+l}, truncated at the episode end,
// bootstrapped from last_values at the rollout edge.
std::vector<double> gae_oracle(const RolloutBuffer& b, double gamma, double lambda) {
  std::vector<double> adv(b.size(), 0.0);
  for (int e = 0; e < b.num_envs; ++e) {
    for (int t = 0; t < b.horizon; ++t) {
      double acc = 0.0, w = 1.0;
      for (int u = t; u < b.horizon; ++u) {
        const std::size_t i = b.index(u, e);
        double next = 0.0;
        if (!b.episode_ends[i]) next = u + 1 < b.horizon ? b.values[b.index(u + 1, e)] : b.last_values[e];
        acc += w * (b.rewards[i] + gamma * next - b.values[i]);
        if (b.episode_ends[i]) break;
        w *= gamma * lambda;
      }
      adv[b.index(t, e)] = acc;
    }
  }
  return adv;
}

RolloutBuffer random_gae_buffer(int num_envs, int horizon, std::mt19937_64& rng, double end_prob) {
  RolloutBuffer b;
  b.num_envs = num_envs;
  b.horizon = horizon;
  std::uniform_real_distribution<double> u(-1.0, 1.0), p(0.0, 1.0);
  const std::size_t n = static_cast<std::size_t>(num_envs) * horizon;
  Observation dummy;
  for (std::size_t i = 0; i < n; ++i) {
    b.observations.push_back(dummy);
    b.masks.push_back(ActionMask{});
    b.actions.push_back(0);
    b.behavior_log_probs.push_back(0.0);
    b.rewards.push_back(u(rng));
    b.values.push_back(u(rng));
    b.episode_ends.push_back(p(rng) < end_prob);
  }
  for (int e = 0; e < num_envs; ++e) b.last_values.push_back(u(rng));
  return b;
}

}  // namespace

TEST_CASE("seeds and modes") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 50; ++s)
    for (std::uint64_t k = 0; k < 8; ++k) seen.insert(derive_seed(s, k));
  CHECK(seen.size() == 400);
  CHECK(derive_seed(3, 1) == derive_seed(3, 1));

  for (auto m : {AgentMode::kBaseline, AgentMode::kAugment, AgentMode::kEnsemble, AgentMode::kRegularized,
                 AgentMode::kEnsReg})
    CHECK(parse_mode(mode_name(m)) == m);
  try {
    parse_mode("equivariant");
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    for (const char* name : {"baseline", "augment", "ensemble", "regularized", "ens_reg"})
      CHECK(what.find(name) != std::string::npos);
  }
}

TEST_CASE("gamma schedule") {
  TrainerConfig cfg;
  CHECK(schedule_gamma(0.95, true, cfg) == doctest::Approx(0.950250).epsilon(1e-12));
  CHECK(schedule_gamma(0.95, false, cfg) == 0.95);
  double g = cfg.gamma0;
  for (int i = 0; i < 5000; ++i) {
    const double next = schedule_gamma(g, true, cfg);
    CHECK(next >= g);
    CHECK(next <= cfg.gamma_max);
    g = next;
  }
  CHECK(g == cfg.gamma_max);
}

TEST_CASE("augment map pool") {
  const std::vector<MapPtr> base{test::shipped_map("acceptance12"), test::shipped_map("city12")};
  CHECK(training_maps(base, AgentMode::kBaseline).size() == 2);
  const auto pool = training_maps(base, AgentMode::kAugment);
  REQUIRE(pool.size() == 8);
  for (std::size_t i = 0; i < base.size(); ++i) {
    int matched = 0;
    for (GroupElement g : group_elements()) {
      const MapSpec want = rotate_map(g, *base[i]);
      for (const auto& m : pool) matched += m->same_structure(want);
    }
    CHECK(matched == 4);
  }
}

TEST_CASE("gae") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    RolloutBuffer b = random_gae_buffer(1 + trial % 3, 10, rng, 0.2);
    const double gamma = 0.9 + 0.01 * (trial % 9), lambda = 0.1 * (trial % 11);
    compute_gae(b, gamma, lambda);
    const auto oracle = gae_oracle(b, gamma, lambda);
    for (std::size_t i = 0; i < b.size(); ++i) {
      CHECK(std::abs(b.advantages[i] - oracle[i]) <= 1e-10);
      CHECK(b.returns[i] == b.advantages[i] + b.values[i]);
    }
  }

  RolloutBuffer td = random_gae_buffer(2, 12, rng, 0.25);
  compute_gae(td, 0.97, 0.0);
  for (int e = 0; e < 2; ++e)
    for (int t = 0; t < 12; ++t) {
      const std::size_t i = td.index(t, e);
      const double next = td.episode_ends[i] ? 0.0 : t + 1 < 12 ? td.values[td.index(t + 1, e)] : td.last_values[e];
      CHECK(td.advantages[i] == td.rewards[i] + 0.97 * next - td.values[i]);
    }

  RolloutBuffer mc = random_gae_buffer(1, 9, rng, 0.0);
  mc.episode_ends.back() = 1;
  compute_gae(mc, 0.9, 1.0);
  for (int t = 0; t < 9; ++t) {
    double g = 0.0;
    for (int u = 8; u >= t; --u) g = mc.rewards[u] + 0.9 * g;
    CHECK(mc.advantages[t] == doctest::Approx(g - mc.values[t]).epsilon(1e-12));
  }

  RolloutBuffer norm = random_gae_buffer(4, 25, rng, 0.1);
  compute_gae(norm, 0.95, 0.95);
  normalize_advantages(norm);
  double mean = 0.0, var = 0.0;
  for (double a : norm.advantages) mean += a;
  mean /= norm.size();
  for (double a : norm.advantages) var += (a - mean) * (a - mean);
  CHECK(std::abs(mean) <= 1e-6);
  CHECK(std::abs(std::sqrt(var / norm.size()) - 1.0) <= 1e-6);
}

TEST_CASE("rollout collection") {
  const ScenarioConfig cfg = micro_cfg();
  const std::vector<MapPtr> maps{test::shipped_map("micro6")};
  const ParamNet net(test::tiny_arch(6), 2);
  {
    EnvPool pool(maps, cfg, 4, 9);
    const RolloutResult r = collect_rollout(pool, net, AgentMode::kBaseline, 0);
    CHECK(r.buffer.empty());
    CHECK(r.episodes.empty());
  }
  for (AgentMode mode : {AgentMode::kBaseline, AgentMode::kEnsemble}) {
    EnvPool a(maps, cfg, 4, 9), b(maps, cfg, 4, 9);
    const RolloutResult ra = collect_rollout(a, net, mode, 80);
    const RolloutResult rb = collect_rollout(b, net, mode, 80);
    CHECK(ra.buffer.size() == 320);
    CHECK(ra.buffer.actions == rb.buffer.actions);
    CHECK(ra.buffer.behavior_log_probs == rb.buffer.behavior_log_probs);
    CHECK(ra.buffer.rewards == rb.buffer.rewards);
    CHECK(!ra.episodes.empty());

    const PolicyEvaluation replay = evaluate_policy(net, mode, ra.buffer.observations, ra.buffer.masks);
    for (std::size_t i = 0; i < ra.buffer.size(); ++i) {
      CHECK(ra.buffer.masks[i][ra.buffer.actions[i]]);
      CHECK(std::abs(std::log(replay.dists[i][ra.buffer.actions[i]]) - ra.buffer.behavior_log_probs[i]) <= 1e-9);
      CHECK(std::abs(replay.values[i] - ra.buffer.values[i]) <= 1e-9);
    }
  }
}

TEST_CASE("sampling") {
  Distribution p{0.0, 0.5, 0.0, 0.25, 0.25, 0.0, 0.0};
  std::mt19937_64 rng(3);
  std::array<int, kNumActions> counts{};
  for (int i = 0; i < 40000; ++i) ++counts[sample_action(p, rng)];
  for (int a = 0; a < kNumActions; ++a) {
    if (p[a] == 0.0) CHECK(counts[a] == 0);
    else CHECK(counts[a] / 40000.0 == doctest::Approx(p[a]).epsilon(0.05));
  }
}

TEST_CASE("ensemble behaviour ratios are invariant") {
  const ScenarioConfig cfg = micro_cfg();
  const ParamNet before(test::tiny_arch(6), 1), after(test::tiny_arch(6), 2);
  std::mt19937_64 rng(4);
  auto map = test::shipped_map("micro6");
  for (int i = 0; i < 30; ++i) {
    const EnvState s = test::random_state(map, cfg, rng);
    const ActionMask m = action_mask(s, cfg);
    for (int a = 0; a < kNumActions; ++a) {
      if (!m[a]) continue;
      const double base = ensemble_log_prob(after, observe(s, cfg), m, a) - ensemble_log_prob(before, observe(s, cfg), m, a);
      for (GroupElement g : group_elements()) {
        const EnvState t = transform_state(g, s);
        const ActionMask tm = action_mask(t, cfg);
        const int ta = transform_action(g, a);
        CHECK(ensemble_log_prob(after, observe(t, cfg), tm, ta) - ensemble_log_prob(before, observe(t, cfg), tm, ta) ==
              base);
      }
    }
  }
}

TEST_CASE("ppo loss gradients") {
  const ScenarioConfig cfg = micro_cfg();
  const Architecture arch = Architecture::parse("m=6;conv=1x3s2;fc=8;act=tanh");
  const ParamNet net(arch, 17);
  CHECK(net.parameter_count() <= 250);
  std::mt19937_64 rng(8);
  RolloutBuffer buf = test::random_buffer(test::shipped_map("micro6"), cfg, 12, rng);

  for (AgentMode mode : {AgentMode::kBaseline, AgentMode::kEnsemble, AgentMode::kRegularized, AgentMode::kEnsReg}) {
    TrainerConfig tc;
    tc.mode = mode;
    tc.reg_detach = false;
    // Keep every ratio well inside or well outside the clip region.
    const PolicyEvaluation now = evaluate_policy(net, mode, buf.observations, buf.masks);
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double lp = std::log(now.dists[i][buf.actions[i]]);
      buf.behavior_log_probs[i] = lp + (i % 3 == 0 ? 0.5 : (i % 3 == 1 ? -0.05 : 0.08));
    }
    std::vector<std::size_t> idx(buf.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const LossBuilder loss = [&](NetGraph& g) { return ppo_loss(g, buf, idx, tc, nullptr); };
    CAPTURE(mode_name(mode));
    CHECK(test::gradient_mismatch(backward(net, loss).gradient, test::numeric_gradient(net, loss)) <= 1.0);
  }
}

TEST_CASE("surrogate edge cases") {
  const ScenarioConfig cfg = micro_cfg();
  const ParamNet net(test::tiny_arch(6), 23);
  std::mt19937_64 rng(12);
  RolloutBuffer buf = test::random_buffer(test::shipped_map("micro6"), cfg, 10, rng);
  std::vector<std::size_t> idx(buf.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  TrainerConfig tc;
  tc.value_weight = 0.0;
  tc.entropy_weight = 0.0;
  tc.policy_reg_weight = tc.value_reg_weight = 0.0;
  for (AgentMode mode : {AgentMode::kBaseline, AgentMode::kEnsReg}) {
    tc.mode = mode;
    RolloutBuffer zero = buf;
    std::fill(zero.advantages.begin(), zero.advantages.end(), 0.0);
    const auto g = backward(net, [&](NetGraph& gr) { return ppo_loss(gr, zero, idx, tc); }).gradient;
    for (double v : g) CHECK(v == 0.0);
  }

  // Ratio far above 1 + eps with a positive advantage: clipped, no gradient.
  tc.mode = AgentMode::kBaseline;
  RolloutBuffer clipped = buf;
  const PolicyEvaluation now = evaluate_policy(net, tc.mode, buf.observations, buf.masks);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    clipped.behavior_log_probs[i] = std::log(now.dists[i][buf.actions[i]]) - 1.0;
    clipped.advantages[i] = 1.0 + 0.1 * static_cast<double>(i);
  }
  LossStats stats;
  const auto g = backward(net, [&](NetGraph& gr) { return ppo_loss(gr, clipped, idx, tc, &stats); }).gradient;
  for (double v : g) CHECK(v == 0.0);
  CHECK(stats.clip_fraction == 1.0);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  const ScenarioConfig cfg = micro_cfg();
  const std::vector<MapPtr> maps{test::shipped_map("micro6")};
  for (AgentMode mode : {AgentMode::kBaseline, AgentMode::kEnsReg}) {
    ParamNet net(test::tiny_arch(6), 4);
    const ParamNet before = net;
    EnvPool pool(maps, cfg, 4, 3);
    RolloutResult r = collect_rollout(pool, net, mode, 32);
    compute_gae(r.buffer, 0.95, 0.95);
    normalize_advantages(r.buffer);
    TrainerConfig tc = small_trainer(mode);
    tc.learning_rate = 0.0;
    Adam adam(net.parameter_count());
    std::mt19937_64 rng(1);
    const UpdateStats us = ppo_update(net, adam, r.buffer, tc, rng);
    CHECK(us.minibatches == 8);
    CHECK(net == before);
  }
}

TEST_CASE("trainer") {
  const ScenarioConfig cfg = micro_cfg();
  const std::vector<MapPtr> maps{test::shipped_map("micro6")};
  const Architecture arch = test::tiny_arch(6);

  TrainerConfig short_run = small_trainer(AgentMode::kBaseline);
  short_run.total_steps = 63;
  Trainer empty(short_run, cfg, arch, maps);
  empty.run();
  CHECK(empty.updates() == 0);
  CHECK(empty.metrics_csv() == metrics_header() + "\n");

  for (AgentMode mode : {AgentMode::kBaseline, AgentMode::kAugment, AgentMode::kEnsReg}) {
    const TrainerConfig tc = small_trainer(mode);
    Trainer a(tc, cfg, arch, maps), b(tc, cfg, arch, maps);
    a.run();
    b.run();
    CHECK(a.updates() == 4);
    CHECK(a.metrics_csv() == b.metrics_csv());
    CHECK(a.net() == b.net());

    // Interrupt after two updates and resume from the checkpoint.
    Trainer c(tc, cfg, arch, maps);
    c.iterate();
    c.iterate();
    const std::string path = "trainer_resume_" + std::string(mode_name(mode)) + ".ckpt";
    c.save(path);
    Trainer d = Trainer::resume(tc, cfg, arch, maps, path);
    d.run();
    CHECK(d.metrics_csv() == a.metrics_csv());
    CHECK(d.net() == a.net());
    CHECK(d.gamma() == a.gamma());
    std::remove(path.c_str());
  }
}

TEST_CASE("metrics formatting and thresholds") {
  MetricsRow row;
  row.update = 3;
  row.steps = 300;
  row.solved_ratio = std::numeric_limits<double>::quiet_NaN();
  const std::string line = format_metrics_row(row);
  CHECK(line.rfind("3,300,0,nan,", 0) == 0);
  std::size_t commas = 0, header_commas = 0;
  for (char ch : line) commas += ch == ',';
  for (char ch : metrics_header()) header_commas += ch == ',';
  CHECK(commas == header_commas);

  std::vector<MetricsRow> hist(4);
  for (int i = 0; i < 4; ++i) {
    hist[i].steps = 100 * (i + 1);
    hist[i].episodes = 12;
  }
  hist[0].solved_ratio = 0.95;
  hist[0].episodes = 5;
  hist[1].solved_ratio = 0.5;
  hist[2].solved_ratio = 0.9;
  hist[3].solved_ratio = 1.0;
  CHECK(steps_to_threshold(hist, 0.9, 10) == 300);
  CHECK(steps_to_threshold(hist, 1.01, 10) == -1);
}
