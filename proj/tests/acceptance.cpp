// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: casher_acceptance [A1 A2 ...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "casher/distill.hpp"
#include "casher/evalharness.hpp"
#include "casher/expert.hpp"
#include "casher/flywheel.hpp"
#include "casher/log.hpp"
#include "casher/ppo_bc.hpp"

using namespace casher;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- A1

std::vector<double> oracle_gae(const std::vector<double>& r, const std::vector<double>& v,
                               const std::vector<std::uint8_t>& done, double bootstrap,
                               double gamma, double lambda) {
  const std::size_t T = r.size();
  std::vector<double> out(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double sum = 0.0, w = 1.0;
    for (std::size_t k = t; k < T; ++k) {
      const double next = done[k] ? 0.0 : (k + 1 < T ? v[k + 1] : bootstrap);
      sum += w * (r[k] + gamma * next - v[k]);
      if (done[k]) break;
      w *= gamma * lambda;
    }
    out[t] = sum;
  }
  return out;
}

double ppo_fd_error() {
  const EnvSpec spec = make_open_spec("open", {0.35, 0.5}, {0.7, 0.5});
  std::vector<WorldState> states{reset(spec, 1)};
  states.push_back(step(spec, states.back(), 1).state);
  states.push_back(step(spec, states.back(), 1).state);
  PpoBcConfig cfg;
  cfg.entropy_coef = 0.01;
  cfg.gamma_bc = 0.3;
  StatePolicy policy = StatePolicy::create({12, 12}, 9);
  policy.actor = init_params(policy.actor.spec(), 21);
  policy.critic = init_params(policy.critic.spec(), 22);

  PpoMinibatch mb;
  mb.features.resize(kStateFeatureDim, 3);
  for (int i = 0; i < 3; ++i) {
    const auto f = state_features(spec, states[i]);
    for (int k = 0; k < kStateFeatureDim; ++k) mb.features(k, i) = f[k];
  }
  mb.actions = {1, 3, 0};
  // ratios away from the clip kinks
  for (int i = 0; i < 3; ++i) {
    const auto p = policy.probabilities(spec, states[i]);
    mb.old_log_probs.push_back(std::log(p[mb.actions[i]]) + (i == 2 ? -1.0 : 0.02));
  }
  mb.advantages = {0.7, -0.4, 1.3};
  mb.value_targets = {0.2, 0.9, -0.1};
  const std::vector<EnvSpec> one{spec};
  const auto demo_traj = collect_demonstrations(spec, 1, 4);
  const DemoMinibatch demos = demo_pairs(one, demo_traj);

  const auto na = static_cast<Eigen::Index>(policy.actor.size());
  const FlatLoss loss = [&](const Eigen::VectorXd& t, Eigen::VectorXd* grad) {
    StatePolicy q = policy;
    q.actor.values() = t.head(na);
    q.critic.values() = t.tail(static_cast<Eigen::Index>(q.critic.size()));
    const PpoBcLoss l = ppo_bc_loss(q, mb, demos, cfg, GradientClipping::kNone);
    if (grad) {
      grad->resize(t.size());
      *grad << l.actor_grad.values(), l.critic_grad.values();
    }
    return l.total;
  };
  Eigen::VectorXd theta(na + static_cast<Eigen::Index>(policy.critic.size()));
  theta << policy.actor.values(), policy.critic.values();
  return finite_diff_check(loss, theta, 1e-5);
}

double distill_fd_error() {
  GeneralistPolicy g = GeneralistPolicy::create(8, {16}, {12}, 7);
  g.head = init_params(g.head.spec(), 11);
  Rng rng(2);
  Eigen::MatrixXd obs(kObsDim, 6);
  for (int c = 0; c < obs.cols(); ++c)
    for (int r = 0; r < obs.rows(); ++r) obs(r, c) = uniform(rng, 0.0, 1.0);
  const std::vector<int> actions{0, 5, 2, 2, 4, 1};
  const auto ne = static_cast<Eigen::Index>(g.encoder.size());
  const FlatLoss loss = [&](const Eigen::VectorXd& t, Eigen::VectorXd* grad) {
    GeneralistPolicy q = g;
    q.encoder.values() = t.head(ne);
    q.head.values() = t.tail(static_cast<Eigen::Index>(q.head.size()));
    GeneralistGradient gg{ParamVector(q.encoder.spec()), ParamVector(q.head.spec())};
    const double v = generalist_nll(q, obs, actions, grad ? &gg : nullptr);
    if (grad) {
      grad->resize(t.size());
      *grad << gg.encoder.values(), gg.head.values();
    }
    return v;
  };
  Eigen::VectorXd theta(ne + static_cast<Eigen::Index>(g.head.size()));
  theta << g.encoder.values(), g.head.values();
  FiniteDiffOptions opt;
  opt.stride = 7;
  return finite_diff_check(loss, theta, 1e-5, opt);
}

Outcome a1() {
  Rng rng(17);
  double gae_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int T = uniform_int(rng, 1, 20);
    std::vector<double> r(T), v(T);
    std::vector<std::uint8_t> d(T);
    for (int t = 0; t < T; ++t) {
      r[t] = uniform(rng, 0.0, 1.0) < 0.2 ? 1.0 : uniform(rng, -0.5, 0.5);
      v[t] = uniform(rng, -2.0, 2.0);
      d[t] = uniform(rng, 0.0, 1.0) < 0.15;
    }
    const double boot = uniform(rng, -2.0, 2.0);
    const double gamma = uniform(rng, 0.5, 1.0), lambda = uniform(rng, 0.0, 1.0);
    const auto got = gae_advantages(r, v, d, boot, gamma, lambda);
    const auto want = oracle_gae(r, v, d, boot, gamma, lambda);
    for (int t = 0; t < T; ++t) gae_err = std::max(gae_err, std::abs(got[t] - want[t]));
  }
  const double s1 = clipped_surrogate(1.5, 1.0, 0.2);
  const double s2 = clipped_surrogate(0.5, -1.0, 0.2);
  const bool surrogate_ok = std::abs(s1 - 1.2) <= 1e-15 && std::abs(s2 + 0.8) <= 1e-15;
  const double fd_ppo = ppo_fd_error();
  const double fd_distill = distill_fd_error();
  Outcome o;
  o.pass = gae_err <= 1e-9 && surrogate_ok && fd_ppo <= 1e-4 && fd_distill <= 1e-4;
  o.detail = fmt("gae max err %.2e, surrogate %.6g/%.6g, fd ppo_bc %.2e, fd distill %.2e",
                 gae_err, s1, s2, fd_ppo, fd_distill);
  return o;
}

// ---------------------------------------------------------------- A2

Outcome a2() {
  const EnvSpec spec = make_open_spec("open", {0.3, 0.35}, {0.7, 0.6});
  const auto demos = collect_demonstrations(spec, 10, 7);
  const std::vector<EnvSpec> specs{spec};
  PpoBcConfig cfg;
  const StateTrainingResult res = train_state_policy(specs, demos, cfg, 200000, 11);
  StatePolicyActor actor(res.policy, ActionMode::kSample);
  const EvalReport r = evaluate_success_rate(actor, specs, 100, 1234);
  Outcome o;
  o.pass = r.mean() >= 0.9;
  o.detail = fmt("success %.3f over 100 rollouts (%ld env steps)", r.mean(), res.env_steps);
  return o;
}

// ---------------------------------------------------------------- A3 and reuse

struct ScalingFixture {
  std::vector<EnvSpec> family;
  std::vector<EnvSpec> train;
  std::vector<EnvSpec> heldout;
  std::vector<double> mean_success;  // 4, 8, 16 envs
  GeneralistPolicy policy16;
};

const ScalingFixture& scaling_fixture() {
  static const ScalingFixture f = [] {
    ScalingFixture out;
    out.family = generate_env_family(36, 1);
    out.train.assign(out.family.begin(), out.family.begin() + 16);
    out.heldout.assign(out.family.begin() + 16, out.family.end());
    ExpertConfig ec;
    ec.multimodality = 2;
    ec.action_noise = 0.1;
    ExpertActor expert(ec);
    const TrajectoryDataset full = generate_distill_dataset(expert, out.train, 100, 5);
    const DistillConfig cfg;
    for (int n : {4, 8, 16}) {
      TrajectoryDataset ds;
      for (int i = 0; i < n; ++i)
        for (const Trajectory& t : full.trajectories(out.family[i].env_id)) ds.add(t);
      GeneralistPolicy p =
          train_generalist(make_generalist(cfg, 3), ds, out.train, cfg, 9).policy;
      out.mean_success.push_back(evaluate_success_rate(p, out.heldout, 20, 77, true).mean());
      if (n == 16) out.policy16 = std::move(p);
    }
    return out;
  }();
  return f;
}

Outcome a3() {
  const auto& m = scaling_fixture().mean_success;
  Outcome o;
  o.pass = m[0] <= m[1] && m[1] <= m[2] && m[2] - m[0] >= 0.15;
  o.detail = fmt("held-out success 4/8/16 envs: %.3f %.3f %.3f", m[0], m[1], m[2]);
  return o;
}

// First held-out env (in family order) where greedy zero-shot success <= 0.3.
struct LowEnv {
  const EnvSpec* spec = nullptr;
  double zero_shot = 0.0;
};

LowEnv low_heldout_env() {
  const ScalingFixture& f = scaling_fixture();
  for (const EnvSpec& s : f.heldout) {
    const double z = evaluate_success_rate(f.policy16, std::span(&s, 1), 20, 91, true).rate(0);
    if (z <= 0.3) return {&s, z};
  }
  return {};
}

// ---------------------------------------------------------------- A4, A8

Outcome a4() {
  const auto family = generate_env_family(20, 1);
  FlywheelConfig cfg;
  HumanDemonstrator human;
  const FlywheelResult res = run_flywheel(family, cfg, 42, human);
  std::string counts;
  bool non_increasing = true;
  long ledger_total = 0;
  for (std::size_t b = 0; b < res.ledger.size(); ++b) {
    const int c = res.ledger[b].human_demo_count;
    counts += (b ? "/" : "") + std::to_string(c);
    if (b > 0 && c > res.ledger[b - 1].human_demo_count) non_increasing = false;
    ledger_total += c;
  }
  const bool four = res.ledger.size() == 4;
  const bool halved =
      four && 2 * res.ledger.back().human_demo_count <= res.ledger.front().human_demo_count;
  const bool accounting = ledger_total == human.demos_provided() &&
                          ledger_total == res.expert_demos_consumed;
  Outcome o;
  o.pass = four && non_increasing && halved && accounting;
  o.detail = fmt("human demos per batch %s, ledger total %ld, expert counter %ld",
                 counts.c_str(), ledger_total, static_cast<long>(human.demos_provided()));
  return o;
}

Outcome a8() {
  const auto family = generate_env_family(10, 1);
  // A4's configuration on its first two batches.
  const FlywheelConfig cfg;
  auto run = [&] {
    const FlywheelResult r = run_flywheel(family, cfg, 42);
    std::ostringstream out;
    write_ledger_csv(out, r.ledger);
    write_env_ledger_csv(out, r.ledger);
    return std::make_pair(out.str(), r.policy);
  };
  const auto [ledger_a, policy_a] = run();
  const auto [ledger_b, policy_b] = run();
  Outcome o;
  o.pass = ledger_a == ledger_b && policy_a == policy_b;
  o.detail = fmt("2-batch ledger %zu bytes, ledgers %s, policies %s", ledger_a.size(),
                 ledger_a == ledger_b ? "identical" : "differ",
                 policy_a == policy_b ? "identical" : "differ");
  return o;
}

// ---------------------------------------------------------------- A5, A6

Outcome a5() {
  const LowEnv low = low_heldout_env();
  if (!low.spec) return {false, "no held-out env with zero-shot <= 0.3"};
  const GeneralistPolicy& base = scaling_fixture().policy16;
  const FlywheelConfig cfg;
  HumanDemonstrator audit;
  try {
    const ScanResult r = scanned_finetune(base, *low.spec, cfg, 4, &audit);
    const double after =
        evaluate_success_rate(r.policy, std::span(low.spec, 1), 20, 91, true).rate(0);
    const bool frozen = r.policy.encoder == base.encoder;
    Outcome o;
    o.pass = after - low.zero_shot >= 0.3 && frozen && audit.demos_provided() == 0;
    o.detail = fmt("%s zero-shot %.2f -> %.2f, %d own successes, %d distill rounds, "
                   "expert demos %ld, encoder %s",
                   low.spec->env_id.c_str(), low.zero_shot, after, r.successes_collected,
                   r.distill_rounds, static_cast<long>(audit.demos_provided()),
                   frozen ? "unchanged" : "changed");
    return o;
  } catch (const std::exception& e) {
    return {false, low.spec->env_id + ": " + e.what()};
  }
}

Outcome a6() {
  const LowEnv low = low_heldout_env();
  if (!low.spec) return {false, "no held-out env with zero-shot <= 0.3"};
  const GeneralistPolicy& base = scaling_fixture().policy16;
  const auto demos = collect_demonstrations(*low.spec, 10, 5);
  const GeneralistPolicy tuned = finetune_fewshot(base, *low.spec, demos, DistillConfig{}, 3);
  const double after = evaluate_success_rate(tuned, std::span(low.spec, 1), 20, 91, true).rate(0);
  const bool frozen = tuned.encoder == base.encoder;
  Outcome o;
  o.pass = after - low.zero_shot >= 0.3 && frozen;
  o.detail = fmt("%s zero-shot %.2f -> few-shot %.2f with 10 demos, encoder %s",
                 low.spec->env_id.c_str(), low.zero_shot, after, frozen ? "unchanged" : "changed");
  return o;
}

// ---------------------------------------------------------------- A7

// Expert on even episodes, a gripper that never moves on odd ones.
class AlternatingActor : public Actor {
 public:
  void begin_episode(const EnvSpec& spec, const WorldState& initial,
                     std::uint64_t episode_seed) override {
    use_expert_ = episodes_++ % 2 == 0;
    expert_.begin_episode(spec, initial, episode_seed);
  }
  int act(const EnvSpec& spec, const WorldState& state, Rng& rng) override {
    if (use_expert_) return expert_.act(spec, state, rng);
    return static_cast<int>(Action::kGrasp);
  }

 private:
  ExpertActor expert_;
  long episodes_ = 0;
  bool use_expert_ = false;
};

Outcome a7() {
  const auto specs = generate_env_family(4, 2);
  AlternatingActor half;
  const auto at_r = failed_environments(half, specs, 0.5, 20, 1);
  AlternatingActor again;
  const auto above_r = failed_environments(again, specs, 0.55, 20, 1);
  const std::vector<double> rates{0.5, 0.49, 0.51, 0.0};
  const auto ids = below_threshold(specs, rates, 0.5);
  const bool ids_ok =
      ids == std::vector<std::string>{specs[1].env_id, specs[3].env_id};
  Outcome o;
  o.pass = at_r.empty() && above_r.size() == specs.size() && ids_ok;
  o.detail = fmt("rate 0.5 at r=0.5: %zu failed; at r=0.55: %zu failed; "
                 "rates {0.5,0.49,0.51,0} -> %zu below",
                 at_r.size(), above_r.size(), ids.size());
  return o;
}

// ---------------------------------------------------------------- A9

Outcome a9() {
  const ScalingFixture& f = scaling_fixture();
  GeneralistActor actor(f.policy16, ActionMode::kGreedy);
  int standard = 0, disturbed = 0, applied = 0;
  for (const EnvSpec& s : f.heldout) {
    standard += evaluate_success_rate(actor, std::span(&s, 1), 20, 77).total_successes();
    const EvalReport d = evaluate_disturbance(actor, s, 20, 10, 77);
    disturbed += d.total_successes();
    applied += d.disturbances_applied;
  }
  int baseline = 0;
  for (int a = 0; a < kNumActions; ++a) {
    ConstantActor c(a);
    for (const EnvSpec& s : f.heldout)
      baseline += evaluate_disturbance(c, s, 20, 10, 77).total_successes();
  }
  const int n = 20 * static_cast<int>(f.heldout.size());
  Outcome o;
  o.pass = standard > 0 && 2 * disturbed >= standard && baseline == 0;
  o.detail = fmt("standard %d/%d, disturbed %d/%d (%d pushes), ratio %.2f, "
                 "constant-action baselines %d",
                 standard, n, disturbed, n, applied,
                 standard ? double(disturbed) / standard : 0.0, baseline);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5},
      {"A6", a6}, {"A7", a7}, {"A8", a8}, {"A9", a9}};
  std::set<std::string> wanted(argv + 1, argv + argc);
  set_log_level(LogLevel::kQuiet);
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!wanted.empty() && !wanted.count(name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s  %s  [%.0fs]\n", name.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
