#pragma once

// Standard, disturbance and multi-object evaluation plus scaling reports.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "casher/envworld.hpp"
#include "casher/policies.hpp"
#include "casher/rollout.hpp"

namespace casher {

enum class EvalMode { kStandard, kDisturbance, kMultiObject };

const char* eval_mode_name(EvalMode mode);

struct EvalReport {
  std::string policy_id;
  EvalMode mode = EvalMode::kStandard;
  std::vector<std::string> env_ids;
  std::vector<int> successes;  // per env
  int rollouts_per_env = 0;
  // Disturbance bookkeeping: episodes where the push happened / was skipped
  // because the object was carried.
  int disturbances_applied = 0;
  int disturbances_skipped = 0;

  double rate(std::size_t env) const;
  int total_successes() const;
  int total_rollouts() const;
  double mean() const;            // pooled successes / rollouts
  double standard_error() const;  // sqrt(p (1 - p) / n) of the pooled rate
};

EvalReport evaluate_success_rate(Actor& policy, std::span<const EnvSpec> specs,
                                 int rollouts_per_env, std::uint64_t seed,
                                 std::string policy_id = "policy");
// Greedy or sampled generalist actions.
EvalReport evaluate_success_rate(const GeneralistPolicy& policy,
                                 std::span<const EnvSpec> specs,
                                 int rollouts_per_env, std::uint64_t seed,
                                 bool deterministic_actions,
                                 std::string policy_id = "generalist");

EvalReport evaluate_disturbance(Actor& policy, const EnvSpec& spec,
                                int rollouts, int disturbance_step,
                                std::uint64_t seed,
                                std::string policy_id = "policy");

struct MultiObjectRow {
  int objects = 0;        // k
  bool placed = false;    // were k objects placed within the episode budget
  int episodes_used = 0;  // episodes consumed by the time the k-th was placed
                          // (the whole budget when it never was)
};

struct MultiObjectResult {
  std::vector<Vec2> starts;  // object start positions
  std::vector<MultiObjectRow> rows;
  int episodes_budget = 0;
};

// Places n_objects non-overlapping objects around the nominal position, then
// runs up to `episodes` episodes, each targeting the nearest unplaced object.
// Every episode counts towards the budget, successful or not.
MultiObjectResult evaluate_multi_object(Actor& policy, const EnvSpec& spec,
                                        int n_objects, int episodes,
                                        std::uint64_t seed);

struct ScalingRow {
  int env_count = 0;
  double mean_success = 0.0;
  double standard_error = 0.0;
};

// Requires at least two checkpoints; rows come back sorted by env count.
// Policies are evaluated greedily.
std::vector<ScalingRow> scaling_report(
    std::span<const std::pair<int, GeneralistPolicy>> checkpoints,
    std::span<const EnvSpec> heldout, int rollouts, std::uint64_t seed);

// CSV: policy_id,mode,env_id,successes,rollouts,rate,standard_error with
// one row per env (standard_error empty) and a pooled "ALL" row.
void write_eval_csv(std::ostream& out, const EvalReport& report,
                    bool header = true);
// CSV: env_count,mean_success,standard_error
void write_scaling_csv(std::ostream& out, const std::vector<ScalingRow>& rows);
// CSV: objects,placed,episodes_used
void write_multi_object_csv(std::ostream& out, const MultiObjectResult& result);

}  // namespace casher
