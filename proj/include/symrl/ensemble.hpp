#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "symrl/autodiff.hpp"
#include "symrl/env.hpp"
#include "symrl/net.hpp"
#include "symrl/rollout.hpp"
#include "symrl/symmetry.hpp"

// Equivariant policy ensemble, invariant value ensemble, and the two
// regularization losses that pull individual rotations toward them.
//
// Branch layout used throughout: a batch of B states is expanded into
// G * B rows, row g * B + b holding L_g applied to state b (g in
// group_elements() order). Branch distributions stay in their own frame until
// explicitly pulled back with P_g^{-1}.
namespace symrl {

// Softmax over permitted actions; exactly 0 on forbidden ones.
// Throws std::invalid_argument on an empty mask.
Distribution masked_policy(std::span<const double> logits, const ActionMask& mask);

// KL(p || q) over the support of p.
double kl_divergence(const Distribution& p, const Distribution& q);
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Summing the four branch contributions in sorted order makes the ensemble
// output depend only on the multiset of branch values, which keeps
// equivariance exact in floating point.
double order_free_mean(std::array<double, kGroupOrder> values);

struct BranchBatch {
  int batch = 0;
  ObservationBatch observations;     // G * B rows
  std::vector<std::uint8_t> masks;   // G * B * 7
};

BranchBatch make_branches(std::span<const Observation> obs, std::span<const ActionMask> masks);

struct BranchOutputs {
  int batch = 0;
  ad::Var logits;  // [G*B, 7]
  ad::Var probs;   // [G*B, 7], branch frame
  ad::Var values;  // [G*B, 1]
};

BranchOutputs forward_branches(NetGraph& graph, const BranchBatch& branches);

// For each frame h in `frames`, rows h_index * B + b hold
// pi_bar(. | L_h s_b) = mean_g P_g^{-1}[pi(. | L_g L_h s_b)], computed by re-indexing the
// branch rows. frames = {e} gives the canonical ensemble.
ad::Var ensemble_policy(ad::Tape& tape, const BranchOutputs& branches,
                        std::span<const GroupElement> frames);
ad::Var ensemble_policy(ad::Tape& tape, const BranchOutputs& branches);

// V_bar(s_b) = mean_g V(L_g s_b); shape [B].
ad::Var ensemble_value(ad::Tape& tape, const BranchOutputs& branches);

enum class Divergence { kForwardKl, kReverseKl };

struct RegularizationOptions {
  Divergence divergence = Divergence::kForwardKl;
  bool detach_target = true;
};

// mean over g, b of D(pi(. | L_g s_b) || pi_bar(. | L_g s_b)).
ad::Var policy_regularization(ad::Tape& tape, const BranchOutputs& branches,
                              const RegularizationOptions& opts = {});
// mean over g, b of (V(L_g s_b) - V_bar(s_b))^2.
ad::Var value_regularization(ad::Tape& tape, const BranchOutputs& branches,
                             const RegularizationOptions& opts = {});

struct EnsembleOutput {
  Distribution ensemble_dist{};
  double ensemble_value = 0.0;
  std::array<Distribution, kGroupOrder> per_rotation_dists{};  // pulled back to the input frame
  std::array<double, kGroupOrder> per_rotation_values{};
};

std::vector<EnsembleOutput> ensemble_eval_batch(const ParamNet& net,
                                                std::span<const Observation> obs,
                                                std::span<const ActionMask> masks);
EnsembleOutput ensemble_eval(const ParamNet& net, const Observation& obs, const ActionMask& mask);
// Literal route: transform the state, observe it, mask it, evaluate.
EnsembleOutput ensemble_eval(const ParamNet& net, const EnvState& s, const ScenarioConfig& cfg);

// Throws ContractViolation if the action is masked.
double ensemble_log_prob(const ParamNet& net, const Observation& obs, const ActionMask& mask,
                         int action);

double policy_reg_loss(const ParamNet& net, std::span<const Observation> obs,
                       std::span<const ActionMask> masks, const RegularizationOptions& opts = {});
double value_reg_loss(const ParamNet& net, std::span<const Observation> obs,
                      std::span<const ActionMask> masks);
// Scalar form of the value loss for a single state's four branch values.
double value_reg_from_values(const std::array<double, kGroupOrder>& values);

// Disagreement between the four pulled-back distributions of one state:
// kl = mean_g KL(d_g || mean d), value = mean_g |V_g - mean V|.
struct RotationSpread {
  double kl = 0.0;
  double value = 0.0;
};

RotationSpread rotation_spread(const std::array<Distribution, kGroupOrder>& dists,
                               const std::array<double, kGroupOrder>& values);

// Per-rotation views of one state under the raw network and under the
// ensemble wrapper, both pulled back to the input frame.
struct RotationProbe {
  std::array<Distribution, kGroupOrder> raw_dists{};
  std::array<double, kGroupOrder> raw_values{};
  std::array<Distribution, kGroupOrder> ensemble_dists{};
  std::array<double, kGroupOrder> ensemble_values{};
};

std::vector<RotationProbe> probe_rotations(const ParamNet& net, std::span<const Observation> obs,
                                           std::span<const ActionMask> masks);

// A stochastic policy as a function of batched observations and masks.
using PolicyFn = std::function<std::vector<Distribution>(std::span<const Observation>,
                                                         std::span<const ActionMask>)>;

PolicyFn raw_policy(const ParamNet& net);
PolicyFn ensemble_policy_fn(const ParamNet& net);

// mean_t pi(a_t|s_t) / pi_old(a_t|s_t) * A_t with pi_old from the buffer.
double po_objective(const PolicyFn& policy, const RolloutBuffer& buffer);
// The naive augmentation: mean_t (1/|G|) sum_g pi(K_g a_t | L_g s_t) / pi_old(a_t|s_t) * A_t.
double naive_augmented_po_objective(const PolicyFn& policy, const RolloutBuffer& buffer,
                                    std::span<const GroupElement> group);
double naive_augmented_po_objective(const PolicyFn& policy, const RolloutBuffer& buffer);

}  // namespace symrl
