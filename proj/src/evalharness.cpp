#include "casher/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "casher/errors.hpp"
#include "casher/log.hpp"
#include "casher/rng.hpp"

namespace casher {

const char* eval_mode_name(EvalMode mode) {
  switch (mode) {
    case EvalMode::kStandard: return "standard";
    case EvalMode::kDisturbance: return "disturbance";
    case EvalMode::kMultiObject: return "multi_object";
  }
  return "unknown";
}

double EvalReport::rate(std::size_t env) const {
  return static_cast<double>(successes.at(env)) / rollouts_per_env;
}

int EvalReport::total_successes() const {
  int n = 0;
  for (int s : successes) n += s;
  return n;
}

int EvalReport::total_rollouts() const {
  return rollouts_per_env * static_cast<int>(successes.size());
}

double EvalReport::mean() const {
  const int n = total_rollouts();
  return n == 0 ? 0.0 : static_cast<double>(total_successes()) / n;
}

double EvalReport::standard_error() const {
  const int n = total_rollouts();
  if (n == 0) return 0.0;
  const double p = mean();
  return std::sqrt(p * (1.0 - p) / n);
}

EvalReport evaluate_success_rate(Actor& policy, std::span<const EnvSpec> specs,
                                 int rollouts_per_env, std::uint64_t seed,
                                 std::string policy_id) {
  require(rollouts_per_env >= 1,
          "evaluate_success_rate: rollouts_per_env must be >= 1");
  EvalReport report;
  report.policy_id = std::move(policy_id);
  report.rollouts_per_env = rollouts_per_env;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    int wins = 0;
    for (int k = 0; k < rollouts_per_env; ++k) {
      const std::uint64_t es = evaluation_episode_seed(seed, i, k);
      if (run_episode(policy, specs[i], es, mix64(es)).trajectory.successful())
        ++wins;
    }
    report.env_ids.push_back(specs[i].env_id);
    report.successes.push_back(wins);
  }
  return report;
}

EvalReport evaluate_success_rate(const GeneralistPolicy& policy,
                                 std::span<const EnvSpec> specs,
                                 int rollouts_per_env, std::uint64_t seed,
                                 bool deterministic_actions,
                                 std::string policy_id) {
  GeneralistActor actor(policy, deterministic_actions ? ActionMode::kGreedy
                                                      : ActionMode::kSample);
  return evaluate_success_rate(actor, specs, rollouts_per_env, seed,
                               std::move(policy_id));
}

EvalReport evaluate_disturbance(Actor& policy, const EnvSpec& spec,
                                int rollouts, int disturbance_step,
                                std::uint64_t seed, std::string policy_id) {
  require(rollouts >= 1, "evaluate_disturbance: rollouts must be >= 1");
  require(disturbance_step >= 0 && disturbance_step < kEpisodeLength,
          "evaluate_disturbance: disturbance_step must be in [0, episode length)");
  EvalReport report;
  report.policy_id = std::move(policy_id);
  report.mode = EvalMode::kDisturbance;
  report.rollouts_per_env = rollouts;
  report.env_ids.push_back(spec.env_id);
  int wins = 0;
  for (int k = 0; k < rollouts; ++k) {
    const std::uint64_t es = evaluation_episode_seed(seed, 0, k);
    EpisodeOptions opts;
    opts.disturbance_step = disturbance_step;
    opts.disturbance_seed = derive_seed(es, {0xd157u});
    const EpisodeResult r = run_episode(policy, spec, es, mix64(es), opts);
    if (r.trajectory.successful()) ++wins;
    if (r.disturbance_applied) ++report.disturbances_applied;
    if (r.disturbance_skipped) {
      ++report.disturbances_skipped;
      log_debug("evaluate_disturbance: object carried at step " +
                std::to_string(disturbance_step) + ", push skipped");
    }
  }
  report.successes.push_back(wins);
  return report;
}

MultiObjectResult evaluate_multi_object(Actor& policy, const EnvSpec& spec,
                                        int n_objects, int episodes,
                                        std::uint64_t seed) {
  require(n_objects >= 1, "evaluate_multi_object: n_objects must be >= 1");
  require(episodes >= 1, "evaluate_multi_object: episodes must be >= 1");
  constexpr double kSeparation = 2 * kGraspRadius;
  constexpr int kAttempts = 1000;
  MultiObjectResult result;
  result.episodes_budget = episodes;
  for (int a = 0; a < kAttempts && static_cast<int>(result.starts.size()) < n_objects;
       ++a) {
    const Vec2 p = reset(spec, derive_seed(seed, {0x0b7u, static_cast<std::uint64_t>(a)})).object;
    const bool apart = std::all_of(
        result.starts.begin(), result.starts.end(),
        [&](Vec2 q) { return distance(p, q) >= kSeparation; });
    if (apart) result.starts.push_back(p);
  }
  require(static_cast<int>(result.starts.size()) == n_objects,
          "evaluate_multi_object: cannot place non-overlapping objects");

  std::vector<bool> placed(n_objects, false);
  std::vector<int> placed_at;  // episode number at which the k-th was placed
  for (int ep = 1; ep <= episodes && static_cast<int>(placed_at.size()) < n_objects;
       ++ep) {
    int target = -1;
    for (int i = 0; i < n_objects; ++i) {
      if (placed[i]) continue;
      if (target < 0 || distance(result.starts[i], kHomePosition) <
                            distance(result.starts[target], kHomePosition))
        target = i;
    }
    WorldState start;
    start.ee = kHomePosition;
    start.object = result.starts[target];
    EpisodeOptions opts;
    opts.initial_state = start;
    const std::uint64_t es =
        derive_seed(seed, {0x3e9u, static_cast<std::uint64_t>(ep)});
    if (run_episode(policy, spec, es, mix64(es), opts).trajectory.successful()) {
      placed[target] = true;
      placed_at.push_back(ep);
    }
  }
  for (int k = 1; k <= n_objects; ++k) {
    MultiObjectRow row;
    row.objects = k;
    row.placed = static_cast<int>(placed_at.size()) >= k;
    row.episodes_used = row.placed ? placed_at[k - 1] : episodes;
    result.rows.push_back(row);
  }
  return result;
}

std::vector<ScalingRow> scaling_report(
    std::span<const std::pair<int, GeneralistPolicy>> checkpoints,
    std::span<const EnvSpec> heldout, int rollouts, std::uint64_t seed) {
  require(checkpoints.size() >= 2, "scaling_report: need at least 2 checkpoints");
  require(!heldout.empty(), "scaling_report: no held-out environments");
  std::vector<ScalingRow> rows;
  for (const auto& [count, policy] : checkpoints) {
    const EvalReport r =
        evaluate_success_rate(policy, heldout, rollouts, seed, true);
    rows.push_back({count, r.mean(), r.standard_error()});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ScalingRow& a, const ScalingRow& b) {
                     return a.env_count < b.env_count;
                   });
  return rows;
}

namespace {
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

void write_eval_csv(std::ostream& out, const EvalReport& report,
                    bool header) {
  if (header) out << "policy_id,mode,env_id,successes,rollouts,rate,standard_error\n";
  const char* mode = eval_mode_name(report.mode);
  for (std::size_t i = 0; i < report.env_ids.size(); ++i)
    out << report.policy_id << ',' << mode << ',' << report.env_ids[i] << ','
        << report.successes[i] << ',' << report.rollouts_per_env << ','
        << num(report.rate(i)) << ",\n";
  out << report.policy_id << ',' << mode << ",ALL," << report.total_successes()
      << ',' << report.total_rollouts() << ',' << num(report.mean()) << ','
      << num(report.standard_error()) << '\n';
}

void write_scaling_csv(std::ostream& out, const std::vector<ScalingRow>& rows) {
  out << "env_count,mean_success,standard_error\n";
  for (const ScalingRow& r : rows)
    out << r.env_count << ',' << num(r.mean_success) << ','
        << num(r.standard_error) << '\n';
}

void write_multi_object_csv(std::ostream& out, const MultiObjectResult& result) {
  out << "objects,placed,episodes_used\n";
  for (const MultiObjectRow& r : result.rows)
    out << r.objects << ',' << (r.placed ? 1 : 0) << ',' << r.episodes_used
        << '\n';
}

}  // namespace casher
