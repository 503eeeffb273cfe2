#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "symrl/ensemble.hpp"
#include "symrl/env.hpp"
#include "symrl/net.hpp"
#include "symrl/optim.hpp"
#include "symrl/rollout.hpp"

namespace symrl {

// Independent 64-bit seed for sub-stream `stream` of a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

enum class AgentMode { kBaseline, kAugment, kEnsemble, kRegularized, kEnsReg };

std::string_view mode_name(AgentMode mode);
// Throws std::invalid_argument listing the five valid names.
AgentMode parse_mode(std::string_view name);

// Behavior policy and critic are the ensembles.
bool uses_ensemble(AgentMode mode);
// Adds the two regularization losses.
bool uses_regularization(AgentMode mode);

struct TrainerConfig {
  AgentMode mode = AgentMode::kBaseline;
  int rollout_steps = 4096;  // transitions per rollout, across all environments
  int num_envs = 16;
  int minibatch_size = 256;
  int epochs = 4;
  double clip_epsilon = 0.2;
  double gae_lambda = 0.95;
  double entropy_weight = 0.01;
  double value_weight = 0.5;
  double policy_reg_weight = 0.1;
  double value_reg_weight = 0.1;
  double learning_rate = 3e-4;
  double gamma0 = 0.95;
  double gamma_max = 0.999;
  double gamma_kappa = 0.995;
  std::int64_t total_steps = 1'000'000;
  std::uint64_t seed = 1;
  bool normalize_advantages = true;
  double max_grad_norm = 0.5;  // <= 0 disables clipping
  Divergence reg_divergence = Divergence::kForwardKl;
  bool reg_detach = true;
  int probe_states = 32;
  int checkpoint_every = 0;  // rollouts between checkpoints; 0 writes only the final one
  // Stop once a rollout reaches this solved ratio over at least
  // stop_min_episodes finished episodes. 0 disables.
  double stop_solved_ratio = 0.0;
  int stop_min_episodes = 10;

  int horizon() const { return num_envs > 0 ? rollout_steps / num_envs : 0; }
  void validate() const;
};

double schedule_gamma(double gamma, bool solved, const TrainerConfig& cfg);

// Map pool used for training: the base maps, plus their three rotations in
// augment mode.
std::vector<MapPtr> training_maps(const std::vector<MapPtr>& base, AgentMode mode);

struct EpisodeRecord {
  bool solved = false;
  int steps = 0;
  double coverage = 0.0;
  double total_reward = 0.0;
};

struct EnvSlot {
  EnvState state;
  std::mt19937_64 rng;
  int map_index = 0;
  int initial_targets = 0;
  double episode_reward = 0.0;
};

// Independent environments, each with its own RNG stream so sampling and
// scenario generation do not depend on how the work is scheduled.
class EnvPool {
 public:
  EnvPool() = default;
  EnvPool(std::vector<MapPtr> maps, ScenarioConfig cfg, int num_envs, std::uint64_t seed);

  int size() const { return static_cast<int>(slots_.size()); }
  const ScenarioConfig& scenario() const { return cfg_; }
  const std::vector<MapPtr>& maps() const { return maps_; }
  EnvSlot& slot(int e) { return slots_[e]; }
  const EnvSlot& slot(int e) const { return slots_[e]; }

  // Fresh scenario for environment e drawn from its own stream.
  void restart(int e);

  void write(std::ostream& out) const;
  void read(std::istream& in);

 private:
  std::vector<MapPtr> maps_;
  ScenarioConfig cfg_;
  std::vector<EnvSlot> slots_;
};

struct PolicyEvaluation {
  std::vector<Distribution> dists;
  std::vector<double> values;
};

// Behavior policy and value estimate for a batch.
PolicyEvaluation evaluate_policy(const ParamNet& net, AgentMode mode,
                                 std::span<const Observation> obs,
                                 std::span<const ActionMask> masks);

// Inverse-CDF draw over the 7 entries; zero-probability entries are never
// returned.
int sample_action(const Distribution& p, std::mt19937_64& rng);

struct RolloutResult {
  RolloutBuffer buffer;
  std::vector<EpisodeRecord> episodes;  // in completion order, ties by environment index
};

RolloutResult collect_rollout(EnvPool& pool, const ParamNet& net, AgentMode mode, int horizon);

// GAE with truncation at episode ends; returns = advantages + values.
void compute_gae(RolloutBuffer& buffer, double gamma, double lambda);
void normalize_advantages(RolloutBuffer& buffer);

struct LossStats {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double policy_reg = 0.0;
  double value_reg = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

// Full PPO loss on the samples `idx` of the buffer.
ad::Var ppo_loss(NetGraph& graph, const RolloutBuffer& buffer, std::span<const std::size_t> idx,
                 const TrainerConfig& cfg, LossStats* stats = nullptr);

struct UpdateStats {
  LossStats mean;
  double grad_norm = 0.0;
  int minibatches = 0;
};

// Epochs of shuffled minibatches with one Adam step each. Throws
// std::runtime_error naming the epoch and minibatch on a non-finite loss.
UpdateStats ppo_update(ParamNet& net, Adam& adam, const RolloutBuffer& buffer,
                       const TrainerConfig& cfg, std::mt19937_64& rng);

struct MetricsRow {
  int update = 0;
  std::int64_t steps = 0;
  int episodes = 0;
  double solved_ratio = 0.0;  // NaN when no episode finished
  double mean_episode_steps = 0.0;
  double mean_coverage = 0.0;
  double mean_episode_reward = 0.0;
  UpdateStats update_stats;
  double gamma = 0.0;
  double probe_raw_kl = 0.0;
  double probe_raw_value = 0.0;
  double probe_ensemble_kl = 0.0;
  double probe_ensemble_value = 0.0;
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);

class Trainer {
 public:
  Trainer(TrainerConfig cfg, ScenarioConfig scenario, Architecture arch, std::vector<MapPtr> maps);

  // Restores a checkpoint written by save(); configuration comes from the caller.
  static Trainer resume(TrainerConfig cfg, ScenarioConfig scenario, Architecture arch,
                        std::vector<MapPtr> maps, const std::string& checkpoint_path);

  // One collect/update cycle. Returns false when the budget or the stop
  // criterion is reached and nothing was done.
  bool iterate();
  // Runs to completion. With a non-empty run_dir, writes metrics.csv,
  // periodic checkpoints and final.ckpt there.
  void run(const std::string& run_dir = "");

  bool finished() const;
  const ParamNet& net() const { return net_; }
  const TrainerConfig& config() const { return cfg_; }
  double gamma() const { return gamma_; }
  std::int64_t interaction_steps() const { return steps_; }
  int updates() const { return updates_; }
  const std::vector<MetricsRow>& history() const { return history_; }
  std::string metrics_csv() const;

  void save(const std::string& path) const;
  void write(std::ostream& out) const;

 private:
  void read_state(std::istream& in);
  MetricsRow probe_row() const;

  TrainerConfig cfg_;
  ScenarioConfig scenario_;
  ParamNet net_;
  Adam adam_;
  EnvPool pool_;
  std::mt19937_64 rng_;
  double gamma_ = 0.0;
  std::int64_t steps_ = 0;
  int updates_ = 0;
  bool stopped_ = false;
  std::vector<MetricsRow> history_;
  std::vector<Observation> probe_obs_;
  std::vector<ActionMask> probe_masks_;
};

// Interaction steps at the end of the first rollout whose solved ratio reached
// `threshold` over at least `min_episodes` episodes; -1 if none did.
std::int64_t steps_to_threshold(const std::vector<MetricsRow>& history, double threshold,
                                int min_episodes);

}  // namespace symrl
