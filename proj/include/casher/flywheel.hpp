#pragma once

// Batched amortized data collection and scanned-deployment fine-tuning.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "casher/dataset.hpp"
#include "casher/distill.hpp"
#include "casher/expert.hpp"
#include "casher/policies.hpp"
#include "casher/ppo_bc.hpp"

namespace casher {

struct FlywheelConfig {
  int batch_size_K = 5;
  double success_threshold_r = 0.5;
  int model_demo_target = 10;
  int model_demo_attempt_cap = 100;
  int demos_per_env_human = 10;
  long rl_budget = 200000;
  int eval_rollouts_per_env = 20;
  // Scanned fine-tuning runs while fewer than scan_success_target + 1
  // successes were gathered, for at most scan_max_iterations rounds.
  int scan_success_target = 10;
  int scan_max_iterations = 5;

  PpoBcConfig ppo;
  DistillConfig distill;
  ExpertConfig expert;

  void validate() const;
};

struct EnvLedgerRow {
  int batch = 0;
  std::string env_id;
  int model_demos = 0;
  int model_attempts = 0;
  double pi_s1_success = 0.0;
  bool failed = false;
  bool moved_by_teacher = false;  // moved into the failed set after
                                  // dataset generation fell short
  std::string teacher;            // "pi_s1" or "pi_s2"
  int distill_trajectories = 0;
  friend bool operator==(const EnvLedgerRow&, const EnvLedgerRow&) = default;
};

struct BatchLedgerRow {
  int batch = 0;
  std::vector<std::string> env_ids;
  int human_demo_count = 0;
  int model_demo_count = 0;
  int model_demo_attempts = 0;
  long rl_env_steps = 0;
  std::vector<double> pi_s1_success;  // parallel to env_ids
  std::vector<std::string> failed;    // ordered as in env_ids
  // Success of the post-distillation generalist on the next batch.
  std::optional<double> heldout_success;
  int dataset_envs = 0;
  long dataset_trajectories = 0;
  std::vector<EnvLedgerRow> envs;
  friend bool operator==(const BatchLedgerRow&, const BatchLedgerRow&) = default;
};

// Carried from batch to batch.
struct FlywheelState {
  GeneralistPolicy policy;
  TrajectoryDataset dataset;         // cumulative
  std::vector<EnvSpec> seen_specs;   // every env the dataset may reference
  int batches_done = 0;
};

FlywheelState initial_flywheel_state(const FlywheelConfig& cfg,
                                     std::uint64_t seed);

// Trajectories whose terminal transition has reward 1, order preserved.
std::vector<Trajectory> filter_successful_rollouts(
    std::span<const Trajectory> trajectories);

// Ids whose success rate is strictly below r, in input order.
std::vector<std::string> below_threshold(std::span<const EnvSpec> specs,
                                         std::span<const double> rates,
                                         double r);

// Stochastic rollouts with fixed seeds; ids with rate strictly below r.
std::set<std::string> failed_environments(Actor& policy,
                                          std::span<const EnvSpec> specs,
                                          double r, int eval_rollouts,
                                          std::uint64_t seed);
std::set<std::string> failed_environments(const StatePolicy& policy,
                                          std::span<const EnvSpec> specs,
                                          double r, int eval_rollouts,
                                          std::uint64_t seed);

// One pass of the collection loop over `batch`. The first batch (empty
// dataset) is bootstrapped from human demonstrations on every env.
BatchLedgerRow run_batch(FlywheelState& state, std::span<const EnvSpec> batch,
                         HumanDemonstrator& human, const FlywheelConfig& cfg,
                         std::uint64_t seed);

struct FlywheelResult {
  GeneralistPolicy policy;
  std::vector<BatchLedgerRow> ledger;
  TrajectoryDataset dataset;
  long expert_demos_consumed = 0;  // from the demonstrator's own counter
};

FlywheelResult run_flywheel(std::span<const EnvSpec> family,
                            const FlywheelConfig& cfg, std::uint64_t seed);
FlywheelResult run_flywheel(std::span<const EnvSpec> family,
                            const FlywheelConfig& cfg, std::uint64_t seed,
                            HumanDemonstrator& human);

inline constexpr int kLedgerSchemaVersion = 1;

// First line "# casher ledger v1", then
// batch,env_ids,human_demo_count,model_demo_count,model_demo_attempts,
// rl_env_steps,pi_s1_success,failed_envs,heldout_success,dataset_envs,
// dataset_trajectories
// List cells are ';'-separated; heldout_success is empty for the last batch.
void write_ledger_csv(std::ostream& out,
                      const std::vector<BatchLedgerRow>& ledger);
// First line "# casher env-ledger v1", then
// batch,env_id,model_demos,model_attempts,pi_s1_success,failed,
// moved_by_teacher,teacher,distill_trajectories
void write_env_ledger_csv(std::ostream& out,
                          const std::vector<BatchLedgerRow>& ledger);

struct ScanResult {
  GeneralistPolicy policy;
  int successes_collected = 0;
  int rollout_attempts = 0;
  int iterations = 0;
  int distill_rounds = 0;  // rounds whose teacher produced a full dataset
  long rl_env_steps = 0;
};

// Improves the generalist on one unseen spec using only its own successful
// rollouts. Throws ZeroShotTooWeak when the first round yields no success. A
// round whose state teacher falls short of per_env successes is skipped; if
// no round succeeds the last TeacherTooWeak is rethrown.
// When `audit` is given, asserts that it handed out no demonstrations.
ScanResult scanned_finetune(const GeneralistPolicy& policy,
                            const EnvSpec& test_spec,
                            const FlywheelConfig& cfg, std::uint64_t seed,
                            const HumanDemonstrator* audit = nullptr);

}  // namespace casher
