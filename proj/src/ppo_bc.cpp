#include "casher/ppo_bc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

#include "casher/errors.hpp"

namespace casher {

void PpoBcConfig::validate() const {
  require(epsilon_clip > 0.0 && epsilon_clip < 1.0,
          "ppo.epsilon_clip must lie in (0, 1)");
  require(gamma_discount >= 0.0 && gamma_discount <= 1.0,
          "ppo.gamma_discount must lie in [0, 1]");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0,
          "ppo.gae_lambda must lie in [0, 1]");
  require(alpha >= 0.0 && beta >= 0.0 && gamma_bc >= 0.0 &&
              entropy_coef >= 0.0,
          "ppo loss weights must be >= 0");
  require(n_envs >= 1 && n_steps >= 1 && epochs >= 1 && bc_batch_size >= 1,
          "ppo sizes must be >= 1");
  require(ppo_batch_size >= 0, "ppo.ppo_batch_size must be >= 0");
  require(max_grad_norm > 0.0, "ppo.max_grad_norm must be > 0");
  require(learning_rate >= 0.0, "ppo.learning_rate must be >= 0");
  require(eval_every >= 1 && eval_rollouts >= 1,
          "ppo evaluation settings must be >= 1");
}

int PpoBcConfig::minibatch_size() const {
  if (ppo_batch_size > 0) return ppo_batch_size;
  return std::max(1, n_envs * n_steps / 4);
}

std::vector<int> assign_specs_round_robin(int n_envs, int n_specs) {
  require(n_specs >= 1, "assign_specs_round_robin: no specs");
  std::vector<int> out(static_cast<std::size_t>(n_envs));
  for (int e = 0; e < n_envs; ++e) out[static_cast<std::size_t>(e)] = e % n_specs;
  return out;
}

RolloutCollector::RolloutCollector(std::span<const EnvSpec> specs,
                                   const PpoBcConfig& cfg, std::uint64_t seed)
    : specs_(specs.begin(), specs.end()), cfg_(cfg), seed_(seed) {
  require(!specs_.empty(), "collect_rollouts: specs must be non-empty");
  cfg_.validate();
  assignment_ = assign_specs_round_robin(cfg_.n_envs,
                                         static_cast<int>(specs_.size()));
  states_.resize(static_cast<std::size_t>(cfg_.n_envs));
  episode_index_.assign(static_cast<std::size_t>(cfg_.n_envs), 0);
  for (int e = 0; e < cfg_.n_envs; ++e) {
    rngs_.emplace_back(derive_seed(seed_, {0xac7u, static_cast<std::uint64_t>(e)}));
    start_episode(e);
  }
}

void RolloutCollector::start_episode(int e) {
  const auto ue = static_cast<std::size_t>(e);
  const std::uint64_t es = derive_seed(
      seed_, {0xe915u, ue, static_cast<std::uint64_t>(episode_index_[ue]++)});
  states_[ue] = reset(specs_[static_cast<std::size_t>(assignment_[ue])], es);
}

RolloutBuffer RolloutCollector::collect(const StatePolicy& policy) {
  const int n_envs = cfg_.n_envs, n_steps = cfg_.n_steps;
  const std::size_t total = static_cast<std::size_t>(n_envs) * n_steps;
  RolloutBuffer buf;
  buf.n_envs = n_envs;
  buf.n_steps = n_steps;
  buf.env_assignment = assignment_;
  buf.snapshot = policy;
  buf.features.resize(kStateFeatureDim, static_cast<Eigen::Index>(total));
  buf.states.resize(total);
  buf.actions.resize(total);
  buf.rewards.resize(total);
  buf.dones.resize(total);
  buf.values.resize(total);
  buf.log_probs.resize(total);
  buf.finished_per_spec.assign(specs_.size(), 0);
  buf.successes_per_spec.assign(specs_.size(), 0);

  Eigen::MatrixXd step_features(kStateFeatureDim, n_envs);
  Eigen::MatrixXd probs, logp;
  for (int t = 0; t < n_steps; ++t) {
    for (int e = 0; e < n_envs; ++e) {
      const auto ue = static_cast<std::size_t>(e);
      const auto f = state_features(specs_[static_cast<std::size_t>(assignment_[ue])],
                                    states_[ue]);
      for (int k = 0; k < kStateFeatureDim; ++k) step_features(k, e) = f[static_cast<std::size_t>(k)];
    }
    const Eigen::MatrixXd logits = mlp_forward(policy.actor, step_features);
    const Eigen::MatrixXd values = mlp_forward(policy.critic, step_features);
    softmax_columns(logits, probs, logp);
    for (int e = 0; e < n_envs; ++e) {
      const auto ue = static_cast<std::size_t>(e);
      const std::size_t i = buf.index(t, e);
      const int spec_idx = assignment_[ue];
      const EnvSpec& spec = specs_[static_cast<std::size_t>(spec_idx)];
      const int a = select_action(
          std::span<const double>(probs.col(e).data(), kNumActions),
          ActionMode::kSample, rngs_[ue]);
      const StepResult next = step(spec, states_[ue], a);
      buf.features.col(static_cast<Eigen::Index>(i)) = step_features.col(e);
      buf.states[i] = states_[ue];
      buf.actions[i] = a;
      buf.rewards[i] = next.reward;
      buf.dones[i] = next.done ? 1 : 0;
      buf.values[i] = values(0, e);
      buf.log_probs[i] = logp(a, e);
      if (next.done) {
        ++buf.episodes_finished;
        ++buf.finished_per_spec[static_cast<std::size_t>(spec_idx)];
        if (next.reward > 0.0) {
          ++buf.episodes_succeeded;
          ++buf.successes_per_spec[static_cast<std::size_t>(spec_idx)];
        }
        start_episode(e);
      } else {
        states_[ue] = next.state;
      }
    }
  }
  for (int e = 0; e < n_envs; ++e) {
    const auto ue = static_cast<std::size_t>(e);
    const auto f = state_features(specs_[static_cast<std::size_t>(assignment_[ue])],
                                  states_[ue]);
    for (int k = 0; k < kStateFeatureDim; ++k) step_features(k, e) = f[static_cast<std::size_t>(k)];
  }
  const Eigen::MatrixXd boot = mlp_forward(policy.critic, step_features);
  buf.bootstrap_values.assign(boot.data(), boot.data() + n_envs);
  return buf;
}

RolloutBuffer collect_rollouts(const StatePolicy& policy,
                               std::span<const EnvSpec> specs,
                               const PpoBcConfig& cfg, std::uint64_t seed) {
  RolloutCollector collector(specs, cfg, seed);
  return collector.collect(policy);
}

std::vector<double> gae_advantages(std::span<const double> rewards,
                                   std::span<const double> values,
                                   std::span<const std::uint8_t> dones,
                                   double bootstrap_value, double gamma,
                                   double lambda) {
  const std::size_t n = rewards.size();
  require(values.size() == n && dones.size() == n,
          "gae_advantages: length mismatch");
  std::vector<double> adv(n);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_value = t + 1 == n ? bootstrap_value : values[t + 1];
    const double nonterminal = dones[t] ? 0.0 : 1.0;
    const double delta =
        rewards[t] + gamma * next_value * nonterminal - values[t];
    running = delta + gamma * lambda * nonterminal * running;
    adv[t] = running;
  }
  return adv;
}

AdvantageEstimate compute_gae(const RolloutBuffer& buffer,
                              const PpoBcConfig& cfg) {
  require(buffer.bootstrap_values.size() ==
              static_cast<std::size_t>(buffer.n_envs),
          "compute_gae: missing bootstrap values");
  AdvantageEstimate est;
  est.advantages.resize(buffer.size());
  est.value_targets.resize(buffer.size());
  std::vector<double> r(static_cast<std::size_t>(buffer.n_steps)),
      v(r.size());
  std::vector<std::uint8_t> d(r.size());
  for (int e = 0; e < buffer.n_envs; ++e) {
    for (int t = 0; t < buffer.n_steps; ++t) {
      const std::size_t i = buffer.index(t, e);
      r[static_cast<std::size_t>(t)] = buffer.rewards[i];
      v[static_cast<std::size_t>(t)] = buffer.values[i];
      d[static_cast<std::size_t>(t)] = buffer.dones[i];
    }
    const auto adv =
        gae_advantages(r, v, d, buffer.bootstrap_values[static_cast<std::size_t>(e)],
                       cfg.gamma_discount, cfg.gae_lambda);
    for (int t = 0; t < buffer.n_steps; ++t) {
      const std::size_t i = buffer.index(t, e);
      est.advantages[i] = adv[static_cast<std::size_t>(t)];
      est.value_targets[i] = adv[static_cast<std::size_t>(t)] + buffer.values[i];
    }
  }
  return est;
}

double clipped_surrogate(double ratio, double advantage, double epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

PpoBcLoss ppo_bc_loss(const StatePolicy& policy, const PpoMinibatch& mb,
                      const DemoMinibatch& demos, const PpoBcConfig& cfg,
                      GradientClipping clipping) {
  const Eigen::Index n = mb.features.cols();
  require(n >= 1, "ppo_bc_loss: empty minibatch");
  require(mb.actions.size() == static_cast<std::size_t>(n) &&
              mb.old_log_probs.size() == static_cast<std::size_t>(n) &&
              mb.advantages.size() == static_cast<std::size_t>(n) &&
              mb.value_targets.size() == static_cast<std::size_t>(n),
          "ppo_bc_loss: minibatch field lengths differ");

  PpoBcLoss out;
  out.actor_grad = ParamVector(policy.actor.spec());
  out.critic_grad = ParamVector(policy.critic.spec());

  std::vector<double> adv = mb.advantages;
  if (cfg.normalize_advantages && n > 1) {
    const double mean =
        std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(n - 1));
    for (double& a : adv) a = (a - mean) / (sd + 1e-8);
  }

  // Surrogate and entropy terms.
  MlpTape actor_tape;
  const Eigen::MatrixXd logits = mlp_forward(policy.actor, mb.features, &actor_tape);
  Eigen::MatrixXd probs, logp;
  softmax_columns(logits, probs, logp);
  Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(kNumActions, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  int clipped_count = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = mb.actions[static_cast<std::size_t>(i)];
    const double A = adv[static_cast<std::size_t>(i)];
    const double ratio = std::exp(logp(a, i) - mb.old_log_probs[static_cast<std::size_t>(i)]);
    const double clipped =
        std::clamp(ratio, 1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip);
    out.surrogate += std::min(ratio * A, clipped * A);
    if (clipped != ratio) ++clipped_count;
    // d(surrogate)/d(log pi(a)) is ratio * A when the unclipped branch is
    // selected, zero otherwise.
    if (ratio * A <= clipped * A) {
      const double g = -cfg.alpha * inv_n * A * ratio;
      for (int k = 0; k < kNumActions; ++k)
        d_logits(k, i) += g * ((k == a ? 1.0 : 0.0) - probs(k, i));
    }
    double h = 0.0;
    for (int k = 0; k < kNumActions; ++k) h -= probs(k, i) * logp(k, i);
    out.entropy += h;
    if (cfg.entropy_coef > 0.0) {
      for (int k = 0; k < kNumActions; ++k)
        d_logits(k, i) += cfg.entropy_coef * inv_n * probs(k, i) *
                          (logp(k, i) + h);
    }
  }
  out.surrogate *= inv_n;
  out.entropy *= inv_n;
  out.clip_fraction = clipped_count * inv_n;
  mlp_backward(policy.actor, actor_tape, d_logits, out.actor_grad);

  // Value regression.
  MlpTape critic_tape;
  const Eigen::MatrixXd v = mlp_forward(policy.critic, mb.features, &critic_tape);
  Eigen::MatrixXd d_v(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double err = v(0, i) - mb.value_targets[static_cast<std::size_t>(i)];
    out.value += err * err;
    d_v(0, i) = cfg.beta * 2.0 * err * inv_n;
  }
  out.value *= inv_n;
  mlp_backward(policy.critic, critic_tape, d_v, out.critic_grad);

  // Behaviour cloning on demonstration pairs.
  const Eigen::Index nd = demos.features.cols();
  if (nd > 0 && cfg.gamma_bc > 0.0) {
    require(demos.actions.size() == static_cast<std::size_t>(nd),
            "ppo_bc_loss: demo field lengths differ");
    MlpTape demo_tape;
    const Eigen::MatrixXd dz = mlp_forward(policy.actor, demos.features, &demo_tape);
    Eigen::MatrixXd dp, dlogp;
    softmax_columns(dz, dp, dlogp);
    Eigen::MatrixXd d_demo = Eigen::MatrixXd::Zero(kNumActions, nd);
    const double inv_d = 1.0 / static_cast<double>(nd);
    for (Eigen::Index i = 0; i < nd; ++i) {
      const int a = demos.actions[static_cast<std::size_t>(i)];
      out.bc += dlogp(a, i);
      for (int k = 0; k < kNumActions; ++k)
        d_demo(k, i) = -cfg.gamma_bc * inv_d * ((k == a ? 1.0 : 0.0) - dp(k, i));
    }
    out.bc *= inv_d;
    mlp_backward(policy.actor, demo_tape, d_demo, out.actor_grad);
  }

  out.total = -cfg.alpha * out.surrogate + cfg.beta * out.value -
              cfg.gamma_bc * out.bc - cfg.entropy_coef * out.entropy;
  if (!std::isfinite(out.total))
    throw NumericalError("ppo_bc_loss: non-finite loss");

  ParamVector* grads[2] = {&out.actor_grad, &out.critic_grad};
  if (clipping == GradientClipping::kClip)
    out.grad_norm = clip_gradients(grads, cfg.max_grad_norm);
  else
    out.grad_norm = global_norm(std::span<const ParamVector* const>(grads, 2));
  return out;
}

DemoMinibatch demo_pairs(std::span<const EnvSpec> specs,
                         std::span<const Trajectory> demos) {
  std::map<std::string, const EnvSpec*> by_id;
  for (const EnvSpec& s : specs) by_id[s.env_id] = &s;
  std::size_t total = 0;
  for (const Trajectory& t : demos) total += t.steps.size();
  DemoMinibatch out;
  out.features.resize(kStateFeatureDim, static_cast<Eigen::Index>(total));
  out.actions.reserve(total);
  Eigen::Index col = 0;
  for (const Trajectory& t : demos) {
    auto it = by_id.find(t.env_id);
    if (it == by_id.end())
      throw DemoFormatError("demonstration for unknown environment " + t.env_id);
    for (const Transition& tr : t.steps) {
      if (tr.action < 0 || tr.action >= kNumActions)
        throw DemoFormatError("demonstration action " +
                              std::to_string(tr.action) + " out of range in " +
                              t.env_id);
      const auto f = state_features(*it->second, tr.state);
      for (int k = 0; k < kStateFeatureDim; ++k) out.features(k, col) = f[static_cast<std::size_t>(k)];
      out.actions.push_back(tr.action);
      ++col;
    }
  }
  return out;
}

namespace {

PpoMinibatch gather(const RolloutBuffer& buf, const AdvantageEstimate& est,
                    std::span<const std::size_t> idx) {
  PpoMinibatch mb;
  const auto n = static_cast<Eigen::Index>(idx.size());
  mb.features.resize(kStateFeatureDim, n);
  mb.actions.resize(idx.size());
  mb.old_log_probs.resize(idx.size());
  mb.advantages.resize(idx.size());
  mb.value_targets.resize(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const std::size_t i = idx[j];
    mb.features.col(static_cast<Eigen::Index>(j)) =
        buf.features.col(static_cast<Eigen::Index>(i));
    mb.actions[j] = buf.actions[i];
    mb.old_log_probs[j] = buf.log_probs[i];
    mb.advantages[j] = est.advantages[i];
    mb.value_targets[j] = est.value_targets[i];
  }
  return mb;
}

DemoMinibatch sample_demos(const DemoMinibatch& pool, int count, Rng& rng) {
  DemoMinibatch out;
  if (pool.size() == 0) return out;
  out.features.resize(kStateFeatureDim, count);
  out.actions.resize(static_cast<std::size_t>(count));
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (int j = 0; j < count; ++j) {
    const std::size_t i = pick(rng);
    out.features.col(j) = pool.features.col(static_cast<Eigen::Index>(i));
    out.actions[static_cast<std::size_t>(j)] = pool.actions[i];
  }
  return out;
}

}  // namespace

StateTrainingResult train_state_policy(std::span<const EnvSpec> specs,
                                       std::span<const Trajectory> demos,
                                       const PpoBcConfig& cfg, long budget,
                                       std::uint64_t seed) {
  cfg.validate();
  require(!specs.empty(), "train_state_policy: specs must be non-empty");
  const DemoMinibatch demo_pool = demo_pairs(specs, demos);

  StateTrainingResult result;
  StatePolicy policy = StatePolicy::create(cfg.hidden, derive_seed(seed, {1}));
  AdamState actor_opt, critic_opt;
  RolloutCollector collector(specs, cfg, derive_seed(seed, {2}));
  Rng rng(derive_seed(seed, {3}));
  const std::uint64_t eval_seed = derive_seed(seed, {4});
  const int mb_size = cfg.minibatch_size();

  result.policy = policy;
  result.best_success = -1.0;
  std::vector<std::size_t> order;
  while (result.env_steps < budget) {
    const RolloutBuffer buf = collector.collect(policy);
    result.env_steps += static_cast<long>(buf.size());
    const AdvantageEstimate est = compute_gae(buf, cfg);

    IterationMetrics m;
    m.iteration = ++result.iterations;
    m.env_steps = result.env_steps;
    m.mean_episode_reward =
        buf.episodes_finished > 0
            ? static_cast<double>(buf.episodes_succeeded) / buf.episodes_finished
            : 0.0;
    for (std::size_t s = 0; s < specs.size(); ++s)
      m.per_spec_success.push_back(
          buf.finished_per_spec[s] > 0
              ? static_cast<double>(buf.successes_per_spec[s]) /
                    buf.finished_per_spec[s]
              : 0.0);

    order.resize(buf.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    int updates = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(mb_size)) {
        const std::size_t len =
            std::min(static_cast<std::size_t>(mb_size), order.size() - start);
        const PpoMinibatch mb =
            gather(buf, est, std::span<const std::size_t>(order).subspan(start, len));
        const DemoMinibatch demo_mb =
            sample_demos(demo_pool, cfg.bc_batch_size, rng);
        const PpoBcLoss loss = ppo_bc_loss(policy, mb, demo_mb, cfg);
        adam_step(policy.actor, loss.actor_grad, actor_opt, cfg.learning_rate);
        adam_step(policy.critic, loss.critic_grad, critic_opt, cfg.learning_rate);
        m.loss += loss.total;
        m.surrogate += loss.surrogate;
        m.value_loss += loss.value;
        m.bc += loss.bc;
        ++updates;
      }
    }
    if (updates > 0) {
      m.loss /= updates;
      m.surrogate /= updates;
      m.value_loss /= updates;
      m.bc /= updates;
    }

    const bool last = result.env_steps >= budget;
    if (result.iterations % cfg.eval_every == 0 || last) {
      StatePolicyActor actor(policy, ActionMode::kGreedy);
      const auto rates = per_env_success(actor, specs, cfg.eval_rollouts, eval_seed);
      const double mean =
          std::accumulate(rates.begin(), rates.end(), 0.0) / static_cast<double>(rates.size());
      m.eval_success = mean;
      if (mean > result.best_success) {
        result.best_success = mean;
        result.best_per_env_success = rates;
        result.policy = policy;
      }
    }
    result.metrics.push_back(std::move(m));
    if (result.best_success >= cfg.target_success) break;
  }
  if (result.best_success < 0.0) {
    // Zero budget: report the untrained policy.
    StatePolicyActor actor(policy, ActionMode::kGreedy);
    result.best_per_env_success =
        per_env_success(actor, specs, cfg.eval_rollouts, eval_seed);
    result.best_success =
        std::accumulate(result.best_per_env_success.begin(),
                        result.best_per_env_success.end(), 0.0) /
        static_cast<double>(specs.size());
  }
  return result;
}

void write_metrics_csv(std::ostream& out,
                       const std::vector<IterationMetrics>& metrics,
                       std::span<const EnvSpec> specs) {
  out << "iteration,env_steps,mean_episode_reward,loss,surrogate,value_loss,bc,"
         "eval_success";
  for (const EnvSpec& s : specs) out << ",success_" << s.env_id;
  out << '\n';
  out.precision(17);
  for (const IterationMetrics& m : metrics) {
    out << m.iteration << ',' << m.env_steps << ',' << m.mean_episode_reward
        << ',' << m.loss << ',' << m.surrogate << ',' << m.value_loss << ','
        << m.bc << ',';
    if (m.eval_success >= 0.0) out << m.eval_success;
    for (double v : m.per_spec_success) out << ',' << v;
    out << '\n';
  }
}

}  // namespace casher
