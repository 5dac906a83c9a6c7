#pragma once

// Demonstration-bootstrapped PPO over privileged state.
//
// The minimised objective is
//   -alpha * mean(min(r A, clip(r, 1-eps, 1+eps) A))
//   + beta * mean((V(s) - V_targ)^2)
//   - gamma_bc * mean(log pi(a_demo | s_demo))
//   - entropy_coef * mean(H(pi(.|s)))
// with r = pi(a|s) / pi_old(a|s) and A from generalized advantage estimation.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "casher/envworld.hpp"
#include "casher/nnet.hpp"
#include "casher/policies.hpp"
#include "casher/trajectory.hpp"

namespace casher {

struct PpoBcConfig {
  double alpha = 1.0;
  double beta = 0.5;
  double gamma_bc = 0.1;
  double epsilon_clip = 0.2;
  double gamma_discount = 0.99;
  double gae_lambda = 0.95;
  double entropy_coef = 0.0;
  double learning_rate = 1e-3;
  double max_grad_norm = 5.0;
  bool normalize_advantages = true;
  int n_envs = 64;
  int n_steps = kEpisodeLength;
  // 0 selects n_envs * n_steps / 4.
  int ppo_batch_size = 0;
  int bc_batch_size = 32;
  int epochs = 10;
  std::vector<int> hidden{64, 64};
  // Best-snapshot evaluation cadence (iterations) and size (episodes/env).
  int eval_every = 10;
  int eval_rollouts = 10;
  // Training stops early once a snapshot reaches this mean success.
  double target_success = 1.0;

  void validate() const;
  int minibatch_size() const;
};

// Entries are laid out step-major: index = t * n_envs + e.
struct RolloutBuffer {
  int n_envs = 0;
  int n_steps = 0;
  std::vector<int> env_assignment;  // spec index per env copy
  Eigen::MatrixXd features;         // kStateFeatureDim x size()
  std::vector<WorldState> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  std::vector<double> values;
  std::vector<double> log_probs;
  std::vector<double> bootstrap_values;  // V(s_T) per env copy
  StatePolicy snapshot;                  // parameters used for collection

  int episodes_finished = 0;
  int episodes_succeeded = 0;
  std::vector<int> finished_per_spec;
  std::vector<int> successes_per_spec;

  std::size_t size() const { return actions.size(); }
  std::size_t index(int t, int e) const {
    return static_cast<std::size_t>(t) * n_envs + e;
  }
};

struct AdvantageEstimate {
  std::vector<double> advantages;
  std::vector<double> value_targets;
};

// Spec index per env copy, dealt round-robin.
std::vector<int> assign_specs_round_robin(int n_envs, int n_specs);

// Env copies that persist across collection calls; episodes auto-reset.
class RolloutCollector {
 public:
  RolloutCollector(std::span<const EnvSpec> specs, const PpoBcConfig& cfg,
                   std::uint64_t seed);
  RolloutBuffer collect(const StatePolicy& policy);

 private:
  void start_episode(int e);

  std::vector<EnvSpec> specs_;
  PpoBcConfig cfg_;
  std::uint64_t seed_;
  std::vector<int> assignment_;
  std::vector<WorldState> states_;
  std::vector<long> episode_index_;
  std::vector<Rng> rngs_;
};

RolloutBuffer collect_rollouts(const StatePolicy& policy,
                               std::span<const EnvSpec> specs,
                               const PpoBcConfig& cfg, std::uint64_t seed);

// GAE over one env copy's sequence, truncating at episode boundaries.
std::vector<double> gae_advantages(std::span<const double> rewards,
                                   std::span<const double> values,
                                   std::span<const std::uint8_t> dones,
                                   double bootstrap_value, double gamma,
                                   double lambda);

AdvantageEstimate compute_gae(const RolloutBuffer& buffer,
                              const PpoBcConfig& cfg);

double clipped_surrogate(double ratio, double advantage, double epsilon);

struct PpoMinibatch {
  Eigen::MatrixXd features;
  std::vector<int> actions;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;
  std::vector<double> value_targets;
};

struct DemoMinibatch {
  Eigen::MatrixXd features;
  std::vector<int> actions;
  std::size_t size() const { return actions.size(); }
};

enum class GradientClipping { kClip, kNone };

struct PpoBcLoss {
  double total = 0.0;
  double surrogate = 0.0;   // mean clipped surrogate (maximised)
  double value = 0.0;       // mean squared value error
  double bc = 0.0;          // mean demo log-likelihood (maximised)
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;   // before clipping
  ParamVector actor_grad;
  ParamVector critic_grad;
};

PpoBcLoss ppo_bc_loss(const StatePolicy& policy, const PpoMinibatch& minibatch,
                      const DemoMinibatch& demos, const PpoBcConfig& cfg,
                      GradientClipping clipping = GradientClipping::kClip);

// Flattens demonstrations into (features, action) pairs. Throws
// DemoFormatError for out-of-range actions or unknown environments.
DemoMinibatch demo_pairs(std::span<const EnvSpec> specs,
                         std::span<const Trajectory> demos);

struct IterationMetrics {
  int iteration = 0;
  long env_steps = 0;
  double mean_episode_reward = 0.0;
  std::vector<double> per_spec_success;  // over episodes finished this round
  double loss = 0.0;
  double surrogate = 0.0;
  double value_loss = 0.0;
  double bc = 0.0;
  double eval_success = -1.0;  // -1 when no snapshot evaluation ran
};

struct StateTrainingResult {
  StatePolicy policy;  // best evaluated snapshot
  double best_success = 0.0;
  std::vector<double> best_per_env_success;
  long env_steps = 0;
  int iterations = 0;
  std::vector<IterationMetrics> metrics;
};

StateTrainingResult train_state_policy(std::span<const EnvSpec> specs,
                                       std::span<const Trajectory> demos,
                                       const PpoBcConfig& cfg, long budget,
                                       std::uint64_t seed);

// CSV: iteration,env_steps,mean_episode_reward,loss,surrogate,value_loss,
// bc,eval_success,success_<env_id>...
void write_metrics_csv(std::ostream& out,
                       const std::vector<IterationMetrics>& metrics,
                       std::span<const EnvSpec> specs);

}  // namespace casher
