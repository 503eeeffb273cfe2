#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "symrl/ensemble.hpp"

using namespace symrl;

namespace {

struct Sample {
  std::vector<EnvState> states;
  std::vector<Observation> obs;
  std::vector<ActionMask> masks;
};

Sample sample_states(const MapPtr& map, int n, std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.battery_capacity = 20;
  std::mt19937_64 rng(seed);
  Sample s;
  for (int i = 0; i < n; ++i) {
    s.states.push_back(test::random_state(map, cfg, rng));
    s.obs.push_back(observe(s.states.back(), cfg));
    s.masks.push_back(action_mask(s.states.back(), cfg));
  }
  return s;
}

double tv(const Distribution& p, const Distribution& q) {
  double d = 0.0;
  for (int a = 0; a < kNumActions; ++a) d += std::abs(p[a] - q[a]);
  return 0.5 * d;
}

// Tiles rows b -> g * B + b.
std::vector<std::size_t> tile_index(int batch) {
  std::vector<std::size_t> idx;
  for (int g = 0; g < kGroupOrder; ++g)
    for (int b = 0; b < batch; ++b) idx.push_back(static_cast<std::size_t>(b));
  return idx;
}

}  // namespace

TEST_CASE("zero network gives the uniform ensemble") {
  const ParamNet zero = ParamNet::zeros(test::tiny_arch(6));
  const Sample s = sample_states(test::shipped_map("micro6"), 20, 1);
  for (std::size_t i = 0; i < s.obs.size(); ++i) {
    const EnsembleOutput out = ensemble_eval(zero, s.obs[i], s.masks[i]);
    int allowed = 0;
    for (bool m : s.masks[i]) allowed += m;
    for (int a = 0; a < kNumActions; ++a)
      CHECK(out.ensemble_dist[a] == doctest::Approx(s.masks[i][a] ? 1.0 / allowed : 0.0).epsilon(1e-12));
  }
}

TEST_CASE("symmetric state gives identical branches") {
  ScenarioConfig cfg;
  auto map = test::shipped_map("symmetric9");
  EnvState s = reset(map, cfg, 1);
  for (auto& v : s.target.data()) v = 0;
  s.target(0, 0) = s.target(0, 8) = s.target(8, 0) = s.target(8, 8) = 1;
  s.battery = 30;
  CHECK(s.position == Cell{4, 4});
  for (GroupElement g : group_elements()) CHECK(transform_state(g, s) == s);
  const ParamNet net(test::tiny_arch(9), 4);
  const EnsembleOutput out = ensemble_eval(net, s, cfg);
  for (int g = 1; g < kGroupOrder; ++g) {
    CHECK(out.per_rotation_dists[g] == out.per_rotation_dists[0]);
    CHECK(out.per_rotation_values[g] == out.per_rotation_values[0]);
  }
}

TEST_CASE("ensemble output invariants and equivariance") {
  ScenarioConfig cfg;
  cfg.battery_capacity = 20;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ParamNet net(test::tiny_arch(6), 100 + seed);
    const Sample s = sample_states(test::shipped_map("micro6"), 10, seed);
    for (std::size_t i = 0; i < s.obs.size(); ++i) {
      const EnsembleOutput out = ensemble_eval(net, s.obs[i], s.masks[i]);
      const EnsembleOutput literal = ensemble_eval(net, s.states[i], cfg);
      CHECK(literal.ensemble_dist == out.ensemble_dist);
      CHECK(literal.ensemble_value == out.ensemble_value);
      double vmean = 0.0;
      for (int g = 0; g < kGroupOrder; ++g) vmean += out.per_rotation_values[g] / 4;
      CHECK(out.ensemble_value == doctest::Approx(vmean).epsilon(1e-12));
      for (int a = 0; a < kNumActions; ++a) {
        double mean = 0.0;
        for (int g = 0; g < kGroupOrder; ++g) {
          mean += out.per_rotation_dists[g][a] / 4;
          if (!s.masks[i][a]) CHECK(out.per_rotation_dists[g][a] == 0.0);
        }
        CHECK(std::abs(out.ensemble_dist[a] - mean) <= 1e-12);
      }
      for (GroupElement h : group_elements()) {
        const EnsembleOutput rot = ensemble_eval(net, transform_state(h, s.states[i]), cfg);
        CHECK(tv(permute_distribution(h, out.ensemble_dist), rot.ensemble_dist) <= 1e-6);
        CHECK(std::abs(rot.ensemble_value - out.ensemble_value) <= 1e-6 * std::max(1.0, std::abs(out.ensemble_value)));
      }
    }
  }
}

TEST_CASE("ensemble log probability") {
  const ParamNet net(test::tiny_arch(6), 8);
  const Sample s = sample_states(test::shipped_map("micro6"), 20, 3);

  ScenarioConfig cfg;
  cfg.battery_capacity = 20;
  const EnvState start = reset(test::shipped_map("micro6"), cfg, 2);
  const ActionMask only = action_mask(start, cfg);
  CHECK(only[kTakeOff]);
  CHECK(ensemble_log_prob(net, observe(start, cfg), only, kTakeOff) == doctest::Approx(0.0));
  CHECK_THROWS_AS(ensemble_log_prob(net, observe(start, cfg), only, kCharge), ContractViolation);

  for (std::size_t i = 0; i < s.obs.size(); ++i) {
    const EnsembleOutput out = ensemble_eval(net, s.obs[i], s.masks[i]);
    for (int a = 0; a < kNumActions; ++a) {
      if (!s.masks[i][a]) continue;
      const double lp = ensemble_log_prob(net, s.obs[i], s.masks[i], a);
      CHECK(std::abs(std::exp(lp) - out.ensemble_dist[a]) <= 1e-9);
      // Behaviour ratios of transformed pairs coincide.
      for (GroupElement g : group_elements())
        CHECK(ensemble_log_prob(net, transform_observation(g, s.obs[i]), transform_mask(g, s.masks[i]),
                                transform_action(g, a)) == lp);
    }
  }
}

TEST_CASE("ensemble log probability gradient flows through every branch") {
  const ParamNet net(test::tiny_arch(6), 21);
  const Sample s = sample_states(test::shipped_map("micro6"), 4, 5);
  std::size_t pick = 0;
  while (s.states[pick].landed) ++pick;
  int action = 0;
  while (!s.masks[pick][action]) ++action;
  const std::vector<Observation> one{s.obs[pick]};
  const std::vector<ActionMask> mone{s.masks[pick]};
  const BranchBatch br = make_branches(one, mone);
  const std::vector<std::size_t> chosen{static_cast<std::size_t>(action)};

  const LossBuilder ensemble_lp = [&](NetGraph& g) {
    const BranchOutputs bo = forward_branches(g, br);
    return ad::sum(g.tape(), ad::log(g.tape(), ad::take(g.tape(), ensemble_policy(g.tape(), bo), chosen)));
  };
  const GradientTape full = backward(net, ensemble_lp);
  CHECK(full.loss == doctest::Approx(ensemble_log_prob(net, s.obs[pick], s.masks[pick], action)).epsilon(1e-12));
  CHECK(test::gradient_mismatch(full.gradient, test::numeric_gradient(net, ensemble_lp)) <= 1.0);

  // Identity branch on its own: the ensemble gradient differs from it.
  std::vector<std::uint8_t> mask_bytes;
  for (bool m : s.masks[pick]) mask_bytes.push_back(m);
  const LossBuilder identity_only = [&](NetGraph& g) {
    const NetOutputs o = g.forward(ObservationBatch::from(one));
    return ad::sum(g.tape(), ad::take(g.tape(), ad::masked_log_softmax(g.tape(), o.logits, mask_bytes), chosen));
  };
  const auto gi = backward(net, identity_only).gradient;
  double diff = 0.0;
  for (std::size_t i = 0; i < gi.size(); ++i) diff = std::max(diff, std::abs(gi[i] - full.gradient[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("kl and value regularization arithmetic") {
  Distribution p{}, q{};
  p[0] = 0.8;
  p[1] = 0.2;
  q[0] = q[1] = 0.5;
  const double expect = 0.8 * std::log(1.6) + 0.2 * std::log(0.4);
  CHECK(kl_divergence(p, q) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(kl_divergence(p, q) == doctest::Approx(0.1927).epsilon(1e-3));
  CHECK(kl_divergence(p, p) == 0.0);

  CHECK(value_reg_from_values({1, 1, 1, 5}) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(value_reg_from_values({2.5, 2.5, 2.5, 2.5}) == 0.0);

  CHECK(order_free_mean({1, 2, 3, 4}) == order_free_mean({4, 2, 1, 3}));
}

TEST_CASE("regularization losses") {
  const Sample s = sample_states(test::shipped_map("micro6"), 16, 7);
  const ParamNet zero = ParamNet::zeros(test::tiny_arch(6));
  CHECK(policy_reg_loss(zero, s.obs, s.masks) == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
  CHECK(value_reg_loss(zero, s.obs, s.masks) == 0.0);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ParamNet net(test::tiny_arch(6), seed);
    const double preg = policy_reg_loss(net, s.obs, s.masks);
    CHECK(preg > 0.0);
    // Zero only when no branch disagrees with the ensemble.
    bool any_diff = false;
    for (std::size_t i = 0; i < s.obs.size(); ++i) {
      const EnsembleOutput out = ensemble_eval(net, s.obs[i], s.masks[i]);
      for (int g = 0; g < kGroupOrder; ++g)
        any_diff = any_diff || tv(out.per_rotation_dists[g], out.ensemble_dist) > 1e-9;
    }
    CHECK(any_diff);
    CHECK(policy_reg_loss(net, s.obs, s.masks, {Divergence::kReverseKl, true}) > 0.0);

    const double vreg = value_reg_loss(net, s.obs, s.masks);
    for (GroupElement h : group_elements()) {
      std::vector<Observation> ro;
      std::vector<ActionMask> rm;
      for (std::size_t i = 0; i < s.obs.size(); ++i) {
        ro.push_back(transform_observation(h, s.obs[i]));
        rm.push_back(transform_mask(h, s.masks[i]));
      }
      CHECK(value_reg_loss(net, ro, rm) == doctest::Approx(vreg).epsilon(1e-12));
      CHECK(policy_reg_loss(net, ro, rm) == doctest::Approx(preg).epsilon(1e-12));
    }

    // Scalar oracle per state.
    double vo = 0.0, po = 0.0;
    for (std::size_t i = 0; i < s.obs.size(); ++i) {
      const EnsembleOutput out = ensemble_eval(net, s.obs[i], s.masks[i]);
      vo += value_reg_from_values(out.per_rotation_values);
      for (int g = 0; g < kGroupOrder; ++g) po += kl_divergence(out.per_rotation_dists[g], out.ensemble_dist);
    }
    const double n = static_cast<double>(s.obs.size());
    CHECK(vreg == doctest::Approx(vo / n).epsilon(1e-10));
    CHECK(preg == doctest::Approx(po / (4 * n)).epsilon(1e-10));
  }
}

TEST_CASE("rotated frames of the ensemble") {
  const ParamNet net(test::tiny_arch(6), 31);
  const Sample s = sample_states(test::shipped_map("micro6"), 6, 9);
  const BranchBatch br = make_branches(s.obs, s.masks);
  ad::Tape tape;
  NetGraph graph(net, tape, false);
  const BranchOutputs bo = forward_branches(graph, br);
  const auto frames = group_elements();
  const auto& all = tape.value(ensemble_policy(tape, bo, frames)).data;
  const auto& canon = tape.value(ensemble_policy(tape, bo)).data;
  const int B = static_cast<int>(s.obs.size());
  for (int h = 0; h < kGroupOrder; ++h) {
    for (int b = 0; b < B; ++b) {
      Distribution c{}, r{};
      for (int a = 0; a < kNumActions; ++a) {
        c[a] = canon[b * kNumActions + a];
        r[a] = all[(h * B + b) * kNumActions + a];
      }
      CHECK(permute_distribution(GroupElement(h), c) == r);
    }
  }
}

TEST_CASE("regularization gradients") {
  const ParamNet net(test::tiny_arch(6), 41);
  CHECK(net.parameter_count() <= 5000);
  const Sample s = sample_states(test::shipped_map("micro6"), 5, 11);
  const BranchBatch br = make_branches(s.obs, s.masks);
  const int B = static_cast<int>(s.obs.size());

  for (Divergence div : {Divergence::kForwardKl, Divergence::kReverseKl}) {
    const RegularizationOptions live{div, false};
    const LossBuilder through = [&](NetGraph& g) {
      return policy_regularization(g.tape(), forward_branches(g, br), live);
    };
    CHECK(test::gradient_mismatch(backward(net, through).gradient, test::numeric_gradient(net, through)) <= 1.0);
  }
  const LossBuilder vthrough = [&](NetGraph& g) {
    return value_regularization(g.tape(), forward_branches(g, br), {Divergence::kForwardKl, false});
  };
  CHECK(test::gradient_mismatch(backward(net, vthrough).gradient, test::numeric_gradient(net, vthrough)) <= 1.0);

  // Detached target: compare against the same loss with the target computed
  // from a frozen copy of the network.
  const ParamNet frozen = net;
  const auto frames = group_elements();
  const LossBuilder fixed_policy_target = [&](NetGraph& g) {
    ad::Tape& t = g.tape();
    NetGraph cold(frozen, t, false);
    const BranchOutputs target = forward_branches(cold, br);
    const ad::Var q = ad::detach(t, ensemble_policy(t, target, frames));
    return ad::mean(t, ad::kl_rows(t, forward_branches(g, br).probs, q));
  };
  const LossBuilder fixed_value_target = [&](NetGraph& g) {
    ad::Tape& t = g.tape();
    NetGraph cold(frozen, t, false);
    const ad::Var vbar = ad::take(t, ensemble_value(t, forward_branches(cold, br)), tile_index(B));
    return ad::mean(t, ad::square(t, ad::sub(t, forward_branches(g, br).values, vbar)));
  };
  const LossBuilder detached_policy = [&](NetGraph& g) {
    return policy_regularization(g.tape(), forward_branches(g, br));
  };
  const LossBuilder detached_value = [&](NetGraph& g) {
    return value_regularization(g.tape(), forward_branches(g, br));
  };
  CHECK(evaluate_loss(net, detached_policy) == doctest::Approx(evaluate_loss(net, fixed_policy_target)).epsilon(1e-12));
  CHECK(evaluate_loss(net, detached_value) == doctest::Approx(evaluate_loss(net, fixed_value_target)).epsilon(1e-12));
  CHECK(test::gradient_mismatch(backward(net, detached_policy).gradient,
                                test::numeric_gradient(frozen, fixed_policy_target)) <= 1.0);
  CHECK(test::gradient_mismatch(backward(net, detached_value).gradient,
                                test::numeric_gradient(frozen, fixed_value_target)) <= 1.0);
}

TEST_CASE("naive augmented objective") {
  ScenarioConfig cfg;
  cfg.battery_capacity = 20;
  std::mt19937_64 rng(13);
  const RolloutBuffer buf = test::random_buffer(test::shipped_map("micro6"), cfg, 32, rng);
  const ParamNet net(test::tiny_arch(6), 51);
  const ParamNet zero = ParamNet::zeros(test::tiny_arch(6));

  const std::array<GroupElement, 1> trivial{kIdentity};
  CHECK(naive_augmented_po_objective(raw_policy(net), buf, trivial) == po_objective(raw_policy(net), buf));
  CHECK(std::abs(naive_augmented_po_objective(raw_policy(net), buf) - po_objective(raw_policy(net), buf)) > 1e-6);
  CHECK(std::abs(naive_augmented_po_objective(raw_policy(zero), buf) - po_objective(raw_policy(zero), buf)) <= 1e-12);
  const PolicyFn ens = ensemble_policy_fn(net);
  CHECK(std::abs(naive_augmented_po_objective(ens, buf) - po_objective(ens, buf)) <= 1e-12);
}
