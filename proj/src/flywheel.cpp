#include "casher/flywheel.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "casher/errors.hpp"
#include "casher/log.hpp"
#include "casher/rng.hpp"

namespace casher {

void FlywheelConfig::validate() const {
  require(batch_size_K >= 1, "flywheel: batch_size_K must be >= 1");
  require(success_threshold_r >= 0.0 && success_threshold_r <= 1.0,
          "flywheel: success_threshold_r must be in [0, 1]");
  require(model_demo_target >= 0, "flywheel: model_demo_target must be >= 0");
  require(model_demo_attempt_cap >= 0,
          "flywheel: model_demo_attempt_cap must be >= 0");
  require(demos_per_env_human >= 1, "flywheel: demos_per_env_human must be >= 1");
  require(rl_budget >= 1, "flywheel: rl_budget must be >= 1");
  require(eval_rollouts_per_env >= 1,
          "flywheel: eval_rollouts_per_env must be >= 1");
  require(scan_success_target >= 0, "flywheel: scan_success_target must be >= 0");
  require(scan_max_iterations >= 1, "flywheel: scan_max_iterations must be >= 1");
  ppo.validate();
  distill.validate();
  casher::validate(expert);
}

FlywheelState initial_flywheel_state(const FlywheelConfig& cfg,
                                     std::uint64_t seed) {
  FlywheelState state;
  state.policy = make_generalist(cfg.distill, derive_seed(seed, {0x9e1u}));
  return state;
}

std::vector<Trajectory> filter_successful_rollouts(
    std::span<const Trajectory> trajectories) {
  std::vector<Trajectory> out;
  for (const Trajectory& t : trajectories)
    if (t.successful()) out.push_back(t);
  return out;
}

std::vector<std::string> below_threshold(std::span<const EnvSpec> specs,
                                         std::span<const double> rates,
                                         double r) {
  require(specs.size() == rates.size(), "below_threshold: size mismatch");
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (rates[i] < r) ids.push_back(specs[i].env_id);
  return ids;
}

std::set<std::string> failed_environments(Actor& policy,
                                          std::span<const EnvSpec> specs,
                                          double r, int eval_rollouts,
                                          std::uint64_t seed) {
  require(eval_rollouts >= 1, "failed_environments: eval_rollouts must be >= 1");
  const auto rates = per_env_success(policy, specs, eval_rollouts, seed);
  const auto ids = below_threshold(specs, rates, r);
  return {ids.begin(), ids.end()};
}

std::set<std::string> failed_environments(const StatePolicy& policy,
                                          std::span<const EnvSpec> specs,
                                          double r, int eval_rollouts,
                                          std::uint64_t seed) {
  StatePolicyActor actor(policy, ActionMode::kSample);
  return failed_environments(actor, specs, r, eval_rollouts, seed);
}

namespace {

struct ModelCollection {
  std::vector<Trajectory> successes;
  int attempts = 0;
};

// Samples the generalist on one spec until `target` successes or `cap`
// attempts; `first_attempt` continues an attempt sequence across calls.
ModelCollection collect_model_rollouts(const GeneralistPolicy& policy,
                                       const EnvSpec& spec, int target,
                                       int cap, std::uint64_t seed,
                                       int first_attempt = 0) {
  ModelCollection out;
  GeneralistActor actor(policy, ActionMode::kSample);
  const std::uint64_t env_seed = derive_seed(seed, {hash_string(spec.env_id)});
  while (static_cast<int>(out.successes.size()) < target && out.attempts < cap) {
    const std::uint64_t es = derive_seed(
        env_seed, {static_cast<std::uint64_t>(first_attempt + out.attempts)});
    ++out.attempts;
    Trajectory t = run_episode(actor, spec, es, mix64(es)).trajectory;
    if (t.successful()) out.successes.push_back(std::move(t));
  }
  return out;
}

std::vector<EnvSpec> subset(std::span<const EnvSpec> specs,
                            const std::set<std::string>& ids, bool inside) {
  std::vector<EnvSpec> out;
  for (const EnvSpec& s : specs)
    if ((ids.count(s.env_id) != 0) == inside) out.push_back(s);
  return out;
}

std::string fmt_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ';';
    out += xs[i];
  }
  return out;
}

}  // namespace

BatchLedgerRow run_batch(FlywheelState& state, std::span<const EnvSpec> batch,
                         HumanDemonstrator& human, const FlywheelConfig& cfg,
                         std::uint64_t seed) {
  cfg.validate();
  require(static_cast<int>(batch.size()) == cfg.batch_size_K,
          "run_batch: batch must contain batch_size_K environments");
  const int batch_index = state.batches_done + 1;
  const std::uint64_t s =
      derive_seed(seed, {0xba7c4u, static_cast<std::uint64_t>(batch_index)});
  const bool bootstrap = state.dataset.empty();
  const long human_before = human.demos_provided();

  BatchLedgerRow row;
  row.batch = batch_index;
  for (const EnvSpec& spec : batch) {
    row.env_ids.push_back(spec.env_id);
    EnvLedgerRow e;
    e.batch = batch_index;
    e.env_id = spec.env_id;
    row.envs.push_back(e);
  }
  auto env_row = [&](const std::string& id) -> EnvLedgerRow& {
    for (EnvLedgerRow& e : row.envs)
      if (e.env_id == id) return e;
    throw ContractViolation("run_batch: unknown env " + id);
  };
  for (const EnvSpec& spec : batch)
    if (std::none_of(state.seen_specs.begin(), state.seen_specs.end(),
                     [&](const EnvSpec& x) { return x.env_id == spec.env_id; }))
      state.seen_specs.push_back(spec);

  std::set<std::string> failed;
  std::optional<StatePolicy> pi_s1;
  if (bootstrap) {
    // No generalist to collect with yet: every env starts on human demos.
    for (const EnvSpec& spec : batch) failed.insert(spec.env_id);
    log_info("batch " + std::to_string(batch_index) +
             ": empty dataset, bootstrapping all envs from human demos");
  } else {
    // (1) model-generated demonstrations
    std::vector<Trajectory> model_demos;
    for (const EnvSpec& spec : batch) {
      ModelCollection c = collect_model_rollouts(
          state.policy, spec, cfg.model_demo_target, cfg.model_demo_attempt_cap,
          derive_seed(s, {1}));
      EnvLedgerRow& e = env_row(spec.env_id);
      e.model_demos = static_cast<int>(c.successes.size());
      e.model_attempts = c.attempts;
      row.model_demo_count += e.model_demos;
      row.model_demo_attempts += c.attempts;
      for (Trajectory& t : c.successes) model_demos.push_back(std::move(t));
    }
    // (2) multi-task state policy bootstrapped with them
    StateTrainingResult r1 = train_state_policy(batch, model_demos, cfg.ppo,
                                                cfg.rl_budget, derive_seed(s, {2}));
    row.rl_env_steps += r1.env_steps;
    pi_s1 = std::move(r1.policy);
    // (3) failed environments
    StatePolicyActor actor(*pi_s1, ActionMode::kSample);
    const auto rates = per_env_success(actor, batch, cfg.eval_rollouts_per_env,
                                       derive_seed(s, {3}));
    for (std::size_t i = 0; i < batch.size(); ++i)
      env_row(batch[i].env_id).pi_s1_success = rates[i];
    for (const std::string& id :
         below_threshold(batch, rates, cfg.success_threshold_r))
      failed.insert(id);
  }

  // (5a) distillation data from pi_s1 where it passed
  TrajectoryDataset fresh;
  if (pi_s1) {
    for (const EnvSpec& spec : subset(batch, failed, false)) {
      try {
        fresh.merge(generate_distill_dataset(
            *pi_s1, std::span(&spec, 1), cfg.distill.per_env,
            derive_seed(s, {6}), cfg.distill.attempt_factor));
        env_row(spec.env_id).teacher = "pi_s1";
      } catch (const TeacherTooWeak& e) {
        log_info("batch " + std::to_string(batch_index) + ": " + e.what() +
                 "; falling back to human demos");
        failed.insert(spec.env_id);
        env_row(spec.env_id).moved_by_teacher = true;
      }
    }
  }

  // (4) human fallback and a second state policy on the failed set
  if (!failed.empty()) {
    const std::vector<EnvSpec> failed_specs = subset(batch, failed, true);
    std::vector<Trajectory> human_demos;
    for (const EnvSpec& spec : failed_specs) {
      auto demos = human.collect(spec, cfg.demos_per_env_human,
                                 derive_seed(s, {4, hash_string(spec.env_id)}));
      human_demos.insert(human_demos.end(), demos.begin(), demos.end());
    }
    StateTrainingResult r2 = train_state_policy(
        failed_specs, human_demos, cfg.ppo, cfg.rl_budget, derive_seed(s, {5}));
    row.rl_env_steps += r2.env_steps;
    if (bootstrap) {
      for (std::size_t i = 0; i < failed_specs.size(); ++i)
        env_row(failed_specs[i].env_id).pi_s1_success =
            r2.best_per_env_success[i];
    }
    // (5b) distillation data from pi_s2
    fresh.merge(generate_distill_dataset(r2.policy, failed_specs,
                                         cfg.distill.per_env,
                                         derive_seed(s, {6}),
                                         cfg.distill.attempt_factor));
    for (const EnvSpec& spec : failed_specs) env_row(spec.env_id).teacher = "pi_s2";
  }
  row.human_demo_count =
      static_cast<int>(human.demos_provided() - human_before);
  require(row.human_demo_count ==
              static_cast<int>(failed.size()) * cfg.demos_per_env_human,
          "run_batch: human demo accounting mismatch");

  for (EnvLedgerRow& e : row.envs) {
    e.failed = failed.count(e.env_id) != 0;
    e.distill_trajectories = fresh.counts(e.env_id).trajectories;
    row.pi_s1_success.push_back(e.pi_s1_success);
    if (e.failed) row.failed.push_back(e.env_id);
  }

  // (6) retain everything collected so far and re-distill
  state.dataset.merge(fresh);
  GeneralistPolicy start = state.policy;
  start.freeze_encoder = false;
  state.policy = train_generalist(start, state.dataset, state.seen_specs,
                                  cfg.distill, derive_seed(s, {7}))
                     .policy;
  row.dataset_envs = static_cast<int>(state.dataset.env_ids().size());
  row.dataset_trajectories = static_cast<long>(state.dataset.size());
  state.batches_done = batch_index;
  log_info("batch " + std::to_string(batch_index) + ": human demos " +
           std::to_string(row.human_demo_count) + ", model demos " +
           std::to_string(row.model_demo_count) + "/" +
           std::to_string(row.model_demo_attempts) + ", failed {" +
           join(row.failed) + "}");
  return row;
}

FlywheelResult run_flywheel(std::span<const EnvSpec> family,
                            const FlywheelConfig& cfg, std::uint64_t seed) {
  HumanDemonstrator human(cfg.expert);
  return run_flywheel(family, cfg, seed, human);
}

FlywheelResult run_flywheel(std::span<const EnvSpec> family,
                            const FlywheelConfig& cfg, std::uint64_t seed,
                            HumanDemonstrator& human) {
  cfg.validate();
  const std::size_t K = static_cast<std::size_t>(cfg.batch_size_K);
  require(family.size() >= K, "run_flywheel: family smaller than one batch");
  const std::size_t n_batches = family.size() / K;
  if (family.size() % K != 0)
    log_info("run_flywheel: ignoring " + std::to_string(family.size() % K) +
             " environments that do not fill a batch");
  const long human_before = human.demos_provided();
  FlywheelState state = initial_flywheel_state(cfg, seed);
  FlywheelResult result;
  for (std::size_t b = 0; b < n_batches; ++b) {
    result.ledger.push_back(
        run_batch(state, family.subspan(b * K, K), human, cfg, seed));
    if (b + 1 < n_batches) {
      GeneralistActor actor(state.policy, ActionMode::kGreedy);
      const auto rates =
          per_env_success(actor, family.subspan((b + 1) * K, K),
                          cfg.eval_rollouts_per_env,
                          derive_seed(seed, {0x4e1du, b}));
      double mean = 0.0;
      for (double v : rates) mean += v;
      result.ledger.back().heldout_success = mean / static_cast<double>(K);
    }
  }
  result.policy = state.policy;
  result.dataset = std::move(state.dataset);
  result.expert_demos_consumed = human.demos_provided() - human_before;
  return result;
}

void write_ledger_csv(std::ostream& out,
                      const std::vector<BatchLedgerRow>& ledger) {
  out << "# casher ledger v" << kLedgerSchemaVersion << '\n';
  out << "batch,env_ids,human_demo_count,model_demo_count,model_demo_attempts,"
         "rl_env_steps,pi_s1_success,failed_envs,heldout_success,dataset_envs,"
         "dataset_trajectories\n";
  for (const BatchLedgerRow& r : ledger) {
    std::vector<std::string> rates;
    for (double v : r.pi_s1_success) rates.push_back(fmt_rate(v));
    out << r.batch << ',' << join(r.env_ids) << ',' << r.human_demo_count << ','
        << r.model_demo_count << ',' << r.model_demo_attempts << ','
        << r.rl_env_steps << ',' << join(rates) << ',' << join(r.failed) << ','
        << (r.heldout_success ? fmt_rate(*r.heldout_success) : std::string())
        << ',' << r.dataset_envs << ',' << r.dataset_trajectories << '\n';
  }
}

void write_env_ledger_csv(std::ostream& out,
                          const std::vector<BatchLedgerRow>& ledger) {
  out << "# casher env-ledger v" << kLedgerSchemaVersion << '\n';
  out << "batch,env_id,model_demos,model_attempts,pi_s1_success,failed,"
         "moved_by_teacher,teacher,distill_trajectories\n";
  for (const BatchLedgerRow& r : ledger)
    for (const EnvLedgerRow& e : r.envs)
      out << e.batch << ',' << e.env_id << ',' << e.model_demos << ','
          << e.model_attempts << ',' << fmt_rate(e.pi_s1_success) << ','
          << (e.failed ? 1 : 0) << ',' << (e.moved_by_teacher ? 1 : 0) << ','
          << e.teacher << ',' << e.distill_trajectories << '\n';
}

ScanResult scanned_finetune(const GeneralistPolicy& policy,
                            const EnvSpec& test_spec,
                            const FlywheelConfig& cfg, std::uint64_t seed,
                            const HumanDemonstrator* audit) {
  cfg.validate();
  require(is_feasible(test_spec), "scanned_finetune: test spec is infeasible");
  const long audit_before = audit ? audit->demos_provided() : 0;
  ScanResult result;
  result.policy = policy;
  result.policy.freeze_encoder = true;
  std::vector<Trajectory> successes;
  std::optional<TeacherTooWeak> last_weak;
  const std::span<const EnvSpec> env(&test_spec, 1);
  while (static_cast<int>(successes.size()) <= cfg.scan_success_target) {
    if (result.iterations == cfg.scan_max_iterations) {
      log_info("scanned_finetune: stopping after " +
               std::to_string(result.iterations) + " rounds with " +
               std::to_string(successes.size()) + " successes");
      break;
    }
    const std::uint64_t s =
        derive_seed(seed, {0x5ca7u, static_cast<std::uint64_t>(result.iterations)});
    ModelCollection c = collect_model_rollouts(
        result.policy, test_spec, cfg.model_demo_target,
        cfg.model_demo_attempt_cap, derive_seed(seed, {0x5ca7u}),
        result.rollout_attempts);
    result.rollout_attempts += c.attempts;
    if (result.iterations == 0 && c.successes.empty())
      throw ZeroShotTooWeak("scanned_finetune: no success in " +
                            std::to_string(c.attempts) + " rollouts on " +
                            test_spec.env_id);
    for (Trajectory& t : c.successes) successes.push_back(std::move(t));
    ++result.iterations;

    StateTrainingResult rs = train_state_policy(env, successes, cfg.ppo,
                                                cfg.rl_budget, derive_seed(s, {1}));
    result.rl_env_steps += rs.env_steps;
    TrajectoryDataset data;
    try {
      data = generate_distill_dataset(rs.policy, env, cfg.distill.per_env,
                                      derive_seed(s, {2}),
                                      cfg.distill.attempt_factor);
    } catch (const TeacherTooWeak& e) {
      // Gather more successes and retrain the teacher next round.
      log_info(std::string("scanned_finetune: ") + e.what());
      last_weak = e;
      continue;
    }
    result.policy = train_generalist(result.policy, data, env, cfg.distill,
                                     derive_seed(s, {3}))
                        .policy;
    ++result.distill_rounds;
  }
  if (result.distill_rounds == 0 && last_weak) throw *last_weak;
  result.successes_collected = static_cast<int>(successes.size());
  if (audit && audit->demos_provided() != audit_before)
    throw ContractViolation("scanned_finetune: expert demonstrations consumed");
  return result;
}

}  // namespace casher
