#include "symrl/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace symrl {

void RolloutBuffer::check_consistent() const {
  const std::size_t n = actions.size();
  auto same = [n](std::size_t k) { return k == n; };
  if (!same(observations.size()) || !same(masks.size()) || !same(behavior_log_probs.size()) ||
      !same(rewards.size()) || !same(values.size()) || !same(episode_ends.size()))
    throw std::logic_error("rollout buffer arrays have inconsistent lengths");
  if (!advantages.empty() && !same(advantages.size()))
    throw std::logic_error("rollout buffer advantages have the wrong length");
  if (!returns.empty() && !same(returns.size()))
    throw std::logic_error("rollout buffer returns have the wrong length");
  if (num_envs > 0 && n != static_cast<std::size_t>(num_envs) * horizon)
    throw std::logic_error("rollout buffer size is not num_envs * horizon");
}

namespace {

std::vector<std::uint8_t> mask_bytes(const ActionMask& mask) {
  std::vector<std::uint8_t> out(kNumActions);
  for (int a = 0; a < kNumActions; ++a) out[a] = mask[a] ? 1 : 0;
  return out;
}

bool any_permitted(const ActionMask& mask) {
  return std::any_of(mask.begin(), mask.end(), [](bool b) { return b; });
}

}  // namespace

Distribution masked_policy(std::span<const double> logits, const ActionMask& mask) {
  if (logits.size() != static_cast<std::size_t>(kNumActions))
    throw std::invalid_argument("masked_policy expects 7 logits");
  if (!any_permitted(mask)) throw std::invalid_argument("masked_policy: no permitted action");
  ad::Tape tape;
  ad::Var x = tape.constant(ad::Tensor({1, kNumActions}, std::vector<double>(logits.begin(), logits.end())));
  const auto bytes = mask_bytes(mask);
  ad::Var p = ad::masked_softmax(tape, x, bytes);
  Distribution out{};
  std::copy_n(tape.value(p).data.begin(), kNumActions, out.begin());
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) acc += p[i] * (std::log(p[i]) - std::log(q[i]));
  return acc;
}

double kl_divergence(const Distribution& p, const Distribution& q) {
  return kl_divergence(std::span<const double>(p), std::span<const double>(q));
}

double order_free_mean(std::array<double, kGroupOrder> values) {
  std::sort(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc * (1.0 / kGroupOrder);
}

BranchBatch make_branches(std::span<const Observation> obs, std::span<const ActionMask> masks) {
  if (obs.size() != masks.size()) throw std::invalid_argument("make_branches: size mismatch");
  BranchBatch out;
  out.batch = static_cast<int>(obs.size());
  out.masks.reserve(obs.size() * kGroupOrder * kNumActions);
  for (GroupElement g : group_elements()) {
    for (std::size_t b = 0; b < obs.size(); ++b) {
      out.observations.push(transform_observation(g, obs[b]));
      const ActionMask m = transform_mask(g, masks[b]);
      if (!any_permitted(m)) throw std::invalid_argument("make_branches: state with no permitted action");
      for (bool v : m) out.masks.push_back(v ? 1 : 0);
    }
  }
  return out;
}

BranchOutputs forward_branches(NetGraph& graph, const BranchBatch& branches) {
  NetOutputs o = graph.forward(branches.observations);
  BranchOutputs out;
  out.batch = branches.batch;
  out.logits = o.logits;
  out.values = o.value;
  out.probs = ad::masked_softmax(graph.tape(), o.logits, branches.masks);
  return out;
}

ad::Var ensemble_policy(ad::Tape& tape, const BranchOutputs& branches,
                        std::span<const GroupElement> frames) {
  const int B = branches.batch;
  const int H = static_cast<int>(frames.size());
  const auto& pv = tape.value(branches.probs).data;
  // src[((h*B + b)*7 + a)*4 + g] = index into the branch probabilities.
  std::vector<std::size_t> src(static_cast<std::size_t>(H) * B * kNumActions * kGroupOrder);
  ad::Tensor out({H * B, kNumActions});
  const auto elems = group_elements();
  for (int hi = 0; hi < H; ++hi) {
    for (int b = 0; b < B; ++b) {
      for (int a = 0; a < kNumActions; ++a) {
        std::array<double, kGroupOrder> vals{};
        const std::size_t o = (static_cast<std::size_t>(hi) * B + b) * kNumActions + a;
        for (int gi = 0; gi < kGroupOrder; ++gi) {
          const GroupElement g = elems[gi];
          const int row = compose(g, frames[hi]).k() * B + b;
          const std::size_t s = static_cast<std::size_t>(row) * kNumActions + transform_action(g, a);
          src[o * kGroupOrder + gi] = s;
          vals[gi] = pv[s];
        }
        out.data[o] = order_free_mean(vals);
      }
    }
  }
  ad::Var probs = branches.probs;
  return tape.record(std::move(out), {probs}, [probs, src = std::move(src)](ad::Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& dp = tp.grad(probs);
    for (std::size_t o = 0; o < g.size(); ++o) {
      const double share = g[o] * (1.0 / kGroupOrder);
      for (int gi = 0; gi < kGroupOrder; ++gi) dp[src[o * kGroupOrder + gi]] += share;
    }
  });
}

ad::Var ensemble_policy(ad::Tape& tape, const BranchOutputs& branches) {
  const GroupElement id = GroupElement::identity();
  return ensemble_policy(tape, branches, std::span<const GroupElement>(&id, 1));
}

ad::Var ensemble_value(ad::Tape& tape, const BranchOutputs& branches) {
  const int B = branches.batch;
  const auto& vv = tape.value(branches.values).data;
  ad::Tensor out({B});
  for (int b = 0; b < B; ++b) {
    std::array<double, kGroupOrder> vals{};
    for (int g = 0; g < kGroupOrder; ++g) vals[g] = vv[static_cast<std::size_t>(g) * B + b];
    out.data[b] = order_free_mean(vals);
  }
  ad::Var values = branches.values;
  return tape.record(std::move(out), {values}, [values, B](ad::Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& dv = tp.grad(values);
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < kGroupOrder; ++k) dv[static_cast<std::size_t>(k) * B + b] += g[b] / kGroupOrder;
  });
}

ad::Var policy_regularization(ad::Tape& tape, const BranchOutputs& branches,
                              const RegularizationOptions& opts) {
  const auto frames = group_elements();
  ad::Var target = ensemble_policy(tape, branches, std::span<const GroupElement>(frames));
  if (opts.detach_target) target = ad::detach(tape, target);
  ad::Var per_row = opts.divergence == Divergence::kForwardKl
                        ? ad::kl_rows(tape, branches.probs, target)
                        : ad::kl_rows(tape, target, branches.probs);
  return ad::mean(tape, per_row);
}

ad::Var value_regularization(ad::Tape& tape, const BranchOutputs& branches,
                             const RegularizationOptions& opts) {
  const int B = branches.batch;
  ad::Var target = ensemble_value(tape, branches);
  if (opts.detach_target) target = ad::detach(tape, target);
  // Broadcast V_bar(s_b) to every branch row g * B + b.
  const auto& tv = tape.value(target).data;
  ad::Tensor wide({kGroupOrder * B});
  for (int g = 0; g < kGroupOrder; ++g)
    std::copy(tv.begin(), tv.end(), wide.data.begin() + static_cast<std::ptrdiff_t>(g) * B);
  ad::Var tiled = tape.record(std::move(wide), {target}, [target, B](ad::Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& dt = tp.grad(target);
    for (int k = 0; k < kGroupOrder; ++k)
      for (int b = 0; b < B; ++b) dt[b] += g[static_cast<std::size_t>(k) * B + b];
  });
  return ad::mean(tape, ad::square(tape, ad::sub(tape, branches.values, tiled)));
}

namespace {

std::vector<EnsembleOutput> ensemble_eval_batch_impl(const ParamNet& net, const BranchBatch& br) {
  ad::Tape tape;
  NetGraph graph(net, tape, false);
  BranchOutputs out = forward_branches(graph, br);
  ad::Var pi = ensemble_policy(tape, out);
  ad::Var v = ensemble_value(tape, out);
  const int B = br.batch;
  const auto& pv = tape.value(out.probs).data;
  const auto& vv = tape.value(out.values).data;
  const auto& ev = tape.value(pi).data;
  const auto& evv = tape.value(v).data;
  std::vector<EnsembleOutput> res(B);
  const auto elems = group_elements();
  for (int b = 0; b < B; ++b) {
    EnsembleOutput& r = res[b];
    std::copy_n(ev.begin() + static_cast<std::ptrdiff_t>(b) * kNumActions, kNumActions,
                r.ensemble_dist.begin());
    r.ensemble_value = evv[b];
    for (int gi = 0; gi < kGroupOrder; ++gi) {
      const std::size_t row = static_cast<std::size_t>(gi) * B + b;
      for (int a = 0; a < kNumActions; ++a)
        r.per_rotation_dists[gi][a] = pv[row * kNumActions + transform_action(elems[gi], a)];
      r.per_rotation_values[gi] = vv[row];
    }
  }
  return res;
}

}  // namespace

std::vector<EnsembleOutput> ensemble_eval_batch(const ParamNet& net,
                                                std::span<const Observation> obs,
                                                std::span<const ActionMask> masks) {
  if (obs.empty()) return {};
  return ensemble_eval_batch_impl(net, make_branches(obs, masks));
}

EnsembleOutput ensemble_eval(const ParamNet& net, const Observation& obs, const ActionMask& mask) {
  return ensemble_eval_batch(net, std::span<const Observation>(&obs, 1),
                             std::span<const ActionMask>(&mask, 1))
      .front();
}

EnsembleOutput ensemble_eval(const ParamNet& net, const EnvState& s, const ScenarioConfig& cfg) {
  BranchBatch br;
  br.batch = 1;
  for (GroupElement g : group_elements()) {
    const EnvState t = transform_state(g, s);
    br.observations.push(observe(t, cfg));
    const ActionMask m = action_mask(t, cfg);
    if (!any_permitted(m)) throw std::invalid_argument("ensemble_eval: state with no permitted action");
    for (bool v : m) br.masks.push_back(v ? 1 : 0);
  }
  return ensemble_eval_batch_impl(net, br).front();
}

double ensemble_log_prob(const ParamNet& net, const Observation& obs, const ActionMask& mask,
                         int action) {
  if (action < 0 || action >= kNumActions) throw std::out_of_range("action index out of range");
  if (!mask[action]) throw ContractViolation("ensemble_log_prob: action is masked");
  return std::log(ensemble_eval(net, obs, mask).ensemble_dist[action]);
}

double policy_reg_loss(const ParamNet& net, std::span<const Observation> obs,
                       std::span<const ActionMask> masks, const RegularizationOptions& opts) {
  if (obs.empty()) throw std::invalid_argument("policy_reg_loss: empty batch");
  const BranchBatch br = make_branches(obs, masks);
  ad::Tape tape;
  NetGraph graph(net, tape, false);
  return tape.scalar(policy_regularization(tape, forward_branches(graph, br), opts));
}

double value_reg_loss(const ParamNet& net, std::span<const Observation> obs,
                      std::span<const ActionMask> masks) {
  if (obs.empty()) throw std::invalid_argument("value_reg_loss: empty batch");
  const BranchBatch br = make_branches(obs, masks);
  ad::Tape tape;
  NetGraph graph(net, tape, false);
  return tape.scalar(value_regularization(tape, forward_branches(graph, br)));
}

double value_reg_from_values(const std::array<double, kGroupOrder>& values) {
  const double m = order_free_mean(values);
  double acc = 0.0;
  for (double v : values) acc += (v - m) * (v - m);
  return acc / kGroupOrder;
}

RotationSpread rotation_spread(const std::array<Distribution, kGroupOrder>& dists,
                               const std::array<double, kGroupOrder>& values) {
  Distribution mean{};
  for (int a = 0; a < kNumActions; ++a) {
    std::array<double, kGroupOrder> col{};
    for (int g = 0; g < kGroupOrder; ++g) col[g] = dists[g][a];
    mean[a] = order_free_mean(col);
  }
  const double vbar = order_free_mean(values);
  RotationSpread out;
  for (int g = 0; g < kGroupOrder; ++g) {
    out.kl += kl_divergence(dists[g], mean);
    out.value += std::abs(values[g] - vbar);
  }
  out.kl /= kGroupOrder;
  out.value /= kGroupOrder;
  return out;
}

std::vector<RotationProbe> probe_rotations(const ParamNet& net, std::span<const Observation> obs,
                                           std::span<const ActionMask> masks) {
  const std::size_t n = obs.size();
  std::vector<RotationProbe> out(n);
  if (n == 0) return out;
  // The ensemble evaluated separately at every rotated copy L_g s.
  std::vector<Observation> rot_obs;
  std::vector<ActionMask> rot_masks;
  rot_obs.reserve(n * kGroupOrder);
  for (GroupElement g : group_elements()) {
    for (std::size_t i = 0; i < n; ++i) {
      rot_obs.push_back(transform_observation(g, obs[i]));
      rot_masks.push_back(transform_mask(g, masks[i]));
    }
  }
  const auto direct = ensemble_eval_batch(net, obs, masks);
  const auto rotated = ensemble_eval_batch(net, rot_obs, rot_masks);
  const auto elems = group_elements();
  for (std::size_t i = 0; i < n; ++i) {
    out[i].raw_dists = direct[i].per_rotation_dists;
    out[i].raw_values = direct[i].per_rotation_values;
    for (int gi = 0; gi < kGroupOrder; ++gi) {
      const EnsembleOutput& e = rotated[gi * n + i];
      for (int a = 0; a < kNumActions; ++a)
        out[i].ensemble_dists[gi][a] = e.ensemble_dist[transform_action(elems[gi], a)];
      out[i].ensemble_values[gi] = e.ensemble_value;
    }
  }
  return out;
}

PolicyFn raw_policy(const ParamNet& net) {
  return [&net](std::span<const Observation> obs, std::span<const ActionMask> masks) {
    std::vector<Distribution> out;
    if (obs.empty()) return out;
    const NetEvaluation ev = net.evaluate(ObservationBatch::from(obs));
    out.reserve(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i)
      out.push_back(masked_policy(std::span<const double>(ev.logits).subspan(i * kNumActions, kNumActions),
                                  masks[i]));
    return out;
  };
}

PolicyFn ensemble_policy_fn(const ParamNet& net) {
  return [&net](std::span<const Observation> obs, std::span<const ActionMask> masks) {
    std::vector<Distribution> out;
    for (const EnsembleOutput& e : ensemble_eval_batch(net, obs, masks)) out.push_back(e.ensemble_dist);
    return out;
  };
}

namespace {

void require_advantages(const RolloutBuffer& buffer) {
  buffer.check_consistent();
  if (buffer.advantages.size() != buffer.size())
    throw std::invalid_argument("objective needs advantages in the buffer");
}

}  // namespace

double po_objective(const PolicyFn& policy, const RolloutBuffer& buffer) {
  require_advantages(buffer);
  if (buffer.empty()) return 0.0;
  const auto pi = policy(buffer.observations, buffer.masks);
  double acc = 0.0;
  for (std::size_t t = 0; t < buffer.size(); ++t)
    acc += pi[t][buffer.actions[t]] / std::exp(buffer.behavior_log_probs[t]) * buffer.advantages[t];
  return acc / static_cast<double>(buffer.size());
}

double naive_augmented_po_objective(const PolicyFn& policy, const RolloutBuffer& buffer,
                                    std::span<const GroupElement> group) {
  require_advantages(buffer);
  if (buffer.empty() || group.empty()) return 0.0;
  const std::size_t n = buffer.size();
  std::vector<double> inner(n, 0.0);
  std::vector<Observation> obs(n);
  std::vector<ActionMask> masks(n);
  for (GroupElement g : group) {
    for (std::size_t t = 0; t < n; ++t) {
      obs[t] = transform_observation(g, buffer.observations[t]);
      masks[t] = transform_mask(g, buffer.masks[t]);
    }
    const auto pi = policy(obs, masks);
    for (std::size_t t = 0; t < n; ++t) inner[t] += pi[t][transform_action(g, buffer.actions[t])];
  }
  double acc = 0.0;
  for (std::size_t t = 0; t < n; ++t)
    acc += inner[t] / static_cast<double>(group.size()) / std::exp(buffer.behavior_log_probs[t]) *
           buffer.advantages[t];
  return acc / static_cast<double>(n);
}

double naive_augmented_po_objective(const PolicyFn& policy, const RolloutBuffer& buffer) {
  const auto group = group_elements();
  return naive_augmented_po_objective(policy, buffer, std::span<const GroupElement>(group));
}

}  // namespace symrl
