#include "casher/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "casher/errors.hpp"
#include "casher/rng.hpp"

namespace casher {

void DistillConfig::validate() const {
  require(per_env >= 1, "distill: per_env must be >= 1");
  require(attempt_factor >= 1, "distill: attempt_factor must be >= 1");
  require(chunk_trajs_per_env >= 1, "distill: chunk_trajs_per_env must be >= 1");
  require(minibatch_size >= 1, "distill: minibatch_size must be >= 1");
  require(accumulation_steps >= 1, "distill: accumulation_steps must be >= 1");
  require(learning_rate >= 0.0, "distill: learning_rate must be >= 0");
  require(max_grad_norm >= 0.0, "distill: max_grad_norm must be >= 0");
  require(max_epochs >= 1, "distill: max_epochs must be >= 1");
  require(patience >= 1, "distill: patience must be >= 1");
  require(validation_fraction >= 0.0 && validation_fraction < 1.0,
          "distill: validation_fraction must be in [0, 1)");
  require(embedding_dim >= 1, "distill: embedding_dim must be >= 1");
  require(fewshot_epochs >= 1, "distill: fewshot_epochs must be >= 1");
  require(fewshot_minibatch_size >= 1,
          "distill: fewshot_minibatch_size must be >= 1");
  require(fewshot_learning_rate >= 0.0,
          "distill: fewshot_learning_rate must be >= 0");
}

GeneralistPolicy make_generalist(const DistillConfig& cfg, std::uint64_t seed) {
  return GeneralistPolicy::create(cfg.embedding_dim, cfg.encoder_hidden,
                                  cfg.head_hidden, seed);
}

TrajectoryDataset generate_distill_dataset(Actor& teacher,
                                           std::span<const EnvSpec> specs,
                                           int per_env, std::uint64_t seed,
                                           int attempt_factor) {
  require(per_env >= 1, "generate_distill_dataset: per_env must be >= 1");
  require(attempt_factor >= 1,
          "generate_distill_dataset: attempt_factor must be >= 1");
  const int n_clean = per_env - per_env / 2;
  const long cap = static_cast<long>(attempt_factor) * per_env;
  TrajectoryDataset dataset;
  for (const EnvSpec& spec : specs) {
    const std::uint64_t env_seed = derive_seed(seed, {hash_string(spec.env_id)});
    int successes = 0;
    long attempts = 0;
    while (successes < per_env) {
      if (attempts == cap)
        throw TeacherTooWeak(spec.env_id,
                             static_cast<double>(successes) / attempts);
      const std::uint64_t episode_seed =
          derive_seed(env_seed, {static_cast<std::uint64_t>(attempts)});
      ++attempts;
      Trajectory t =
          run_episode(teacher, spec, episode_seed, mix64(episode_seed))
              .trajectory;
      if (!t.successful()) continue;
      if (successes >= n_clean) {
        t.obs_mode = ObsMode::kAugmented;
        t.noise_seed = derive_seed(episode_seed, {0x6e6f697365ULL});
      }
      dataset.add(std::move(t));
      ++successes;
    }
  }
  return dataset;
}

TrajectoryDataset generate_distill_dataset(const StatePolicy& teacher,
                                           std::span<const EnvSpec> specs,
                                           int per_env, std::uint64_t seed,
                                           int attempt_factor) {
  StatePolicyActor actor(teacher, ActionMode::kSample);
  return generate_distill_dataset(actor, specs, per_env, seed, attempt_factor);
}

TrajectorySelection select_all(const TrajectoryDataset& dataset) {
  TrajectorySelection sel;
  for (const auto& [id, trajs] : dataset.by_env()) {
    auto& idx = sel[id];
    for (std::uint32_t i = 0; i < trajs.size(); ++i) idx.push_back(i);
  }
  return sel;
}

std::vector<std::vector<SampleRef>> balanced_minibatches(
    const TrajectoryDataset& dataset, const TrajectorySelection& selection,
    int chunk_trajs_per_env, int minibatch_size, std::uint64_t epoch_seed) {
  require(chunk_trajs_per_env >= 1,
          "balanced_minibatches: chunk_trajs_per_env must be >= 1");
  require(minibatch_size >= 1, "balanced_minibatches: minibatch_size must be >= 1");
  Rng rng(epoch_seed);
  struct EnvQueue {
    const std::vector<Trajectory>* trajs;
    std::vector<std::uint32_t> order;
    std::size_t next = 0;
  };
  std::vector<EnvQueue> queues;
  for (const auto& [id, indices] : selection) {
    const auto& trajs = dataset.trajectories(id);
    EnvQueue q{&trajs, indices, 0};
    for (std::uint32_t i : indices)
      require(i < trajs.size(), "balanced_minibatches: selection out of range");
    std::shuffle(q.order.begin(), q.order.end(), rng);
    queues.push_back(std::move(q));
  }
  std::vector<std::vector<SampleRef>> batches;
  std::vector<SampleRef> chunk;
  while (true) {
    chunk.clear();
    for (EnvQueue& q : queues) {
      for (int k = 0; k < chunk_trajs_per_env && q.next < q.order.size(); ++k) {
        const Trajectory& t = (*q.trajs)[q.order[q.next++]];
        for (std::uint32_t s = 0; s < t.steps.size(); ++s)
          chunk.push_back({&t, s});
      }
    }
    if (chunk.empty()) break;
    std::shuffle(chunk.begin(), chunk.end(), rng);
    for (std::size_t b = 0; b < chunk.size(); b += minibatch_size) {
      const std::size_t e =
          std::min(chunk.size(), b + static_cast<std::size_t>(minibatch_size));
      batches.emplace_back(chunk.begin() + static_cast<std::ptrdiff_t>(b),
                           chunk.begin() + static_cast<std::ptrdiff_t>(e));
    }
  }
  return batches;
}

std::vector<std::vector<SampleRef>> balanced_minibatches(
    const TrajectoryDataset& dataset, int chunk_trajs_per_env,
    int minibatch_size, std::uint64_t epoch_seed) {
  return balanced_minibatches(dataset, select_all(dataset), chunk_trajs_per_env,
                              minibatch_size, epoch_seed);
}

ObservationSource::ObservationSource(const TrajectoryDataset& dataset,
                                     std::span<const EnvSpec> specs) {
  for (const std::string& id : dataset.env_ids()) {
    auto it = std::find_if(specs.begin(), specs.end(),
                           [&](const EnvSpec& s) { return s.env_id == id; });
    if (it == specs.end())
      throw ContractViolation("no environment spec for dataset env " + id);
    renderers_.emplace(id, ObservationRenderer(*it));
  }
}

void ObservationSource::gather(std::span<const SampleRef> refs,
                               Eigen::MatrixXd& observations,
                               std::vector<int>& actions) const {
  observations.resize(kObsDim, static_cast<Eigen::Index>(refs.size()));
  actions.resize(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Trajectory& t = *refs[i].trajectory;
    auto it = renderers_.find(t.env_id);
    if (it == renderers_.end())
      throw ContractViolation("no renderer for env " + t.env_id);
    const Transition& tr = t.steps[refs[i].step];
    it->second.render_into(tr.state, t.observation_noise(),
                           observations.col(static_cast<Eigen::Index>(i)).data());
    actions[i] = tr.action;
  }
}

namespace {

void apply_gradient(GeneralistPolicy& policy, DistillOptimizer& optimizer,
                    GeneralistGradient& grad, double lr,
                    double max_grad_norm) {
  if (max_grad_norm > 0.0) {
    if (policy.freeze_encoder) {
      ParamVector* gs[] = {&grad.head};
      clip_gradients(gs, max_grad_norm);
    } else {
      ParamVector* gs[] = {&grad.encoder, &grad.head};
      clip_gradients(gs, max_grad_norm);
    }
  }
  if (!grad.head.values().allFinite() ||
      (!policy.freeze_encoder && !grad.encoder.values().allFinite()))
    throw NumericalError("distill_update: non-finite gradient");
  adam_step(policy.head, grad.head, optimizer.head, lr);
  if (!policy.freeze_encoder)
    adam_step(policy.encoder, grad.encoder, optimizer.encoder, lr);
}

void reset_gradient(const GeneralistPolicy& policy, GeneralistGradient& grad) {
  grad.encoder = ParamVector(policy.encoder.spec());
  grad.head = ParamVector(policy.head.spec());
}

}  // namespace

double distill_update(GeneralistPolicy& policy, DistillOptimizer& optimizer,
                      const Eigen::Ref<const Eigen::MatrixXd>& observations,
                      std::span<const int> actions, double lr,
                      double max_grad_norm) {
  GeneralistGradient grad;
  reset_gradient(policy, grad);
  const double loss = generalist_nll(policy, observations, actions, &grad);
  apply_gradient(policy, optimizer, grad, lr, max_grad_norm);
  return loss;
}

std::pair<TrajectorySelection, TrajectorySelection> split_validation(
    const TrajectoryDataset& dataset, double validation_fraction,
    std::uint64_t seed) {
  TrajectorySelection train, validation;
  for (const auto& [id, trajs] : dataset.by_env()) {
    std::vector<std::uint32_t> order(trajs.size());
    for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, {hash_string(id)}));
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = 0;
    if (trajs.size() >= 2)
      n_val = static_cast<std::size_t>(
          std::floor(validation_fraction * static_cast<double>(trajs.size()) +
                     0.5));
    n_val = std::min(n_val, trajs.size() - 1);
    std::vector<std::uint32_t> v(order.begin(),
                                 order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::uint32_t> t(order.begin() + static_cast<std::ptrdiff_t>(n_val),
                                 order.end());
    std::sort(v.begin(), v.end());
    std::sort(t.begin(), t.end());
    if (!v.empty()) validation[id] = std::move(v);
    train[id] = std::move(t);
  }
  return {std::move(train), std::move(validation)};
}

double dataset_nll(const GeneralistPolicy& policy,
                   const ObservationSource& source,
                   const TrajectoryDataset& dataset,
                   const TrajectorySelection& selection) {
  constexpr std::size_t kBlock = 512;
  std::vector<SampleRef> refs;
  for (const auto& [id, indices] : selection) {
    const auto& trajs = dataset.trajectories(id);
    for (std::uint32_t i : indices)
      for (std::uint32_t s = 0; s < trajs[i].steps.size(); ++s)
        refs.push_back({&trajs[i], s});
  }
  if (refs.empty()) return 0.0;
  double total = 0.0;
  Eigen::MatrixXd obs;
  std::vector<int> actions;
  for (std::size_t b = 0; b < refs.size(); b += kBlock) {
    const std::size_t n = std::min(kBlock, refs.size() - b);
    source.gather(std::span(refs).subspan(b, n), obs, actions);
    total += generalist_nll(policy, obs, actions, nullptr) * static_cast<double>(n);
  }
  return total / static_cast<double>(refs.size());
}

GeneralistTrainingResult train_generalist(const GeneralistPolicy& initial,
                                          const TrajectoryDataset& dataset,
                                          std::span<const EnvSpec> specs,
                                          const DistillConfig& cfg,
                                          std::uint64_t seed) {
  cfg.validate();
  require(!dataset.empty(), "train_generalist: dataset is empty");
  const ObservationSource source(dataset, specs);
  const auto [train_sel, val_sel] =
      split_validation(dataset, cfg.validation_fraction, derive_seed(seed, {1}));
  // Without a validation split the training loss stands in for it.
  const bool has_validation = !val_sel.empty();
  const TrajectorySelection& monitor = has_validation ? val_sel : train_sel;

  GeneralistTrainingResult result;
  result.policy = initial;
  GeneralistPolicy policy = initial;
  DistillOptimizer optimizer;
  result.initial_validation_nll = dataset_nll(policy, source, dataset, monitor);
  result.best_validation_nll = result.initial_validation_nll;

  Eigen::MatrixXd obs;
  std::vector<int> actions;
  GeneralistGradient grad;
  int stale = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto batches =
        balanced_minibatches(dataset, train_sel, cfg.chunk_trajs_per_env,
                             cfg.minibatch_size,
                             derive_seed(seed, {2, static_cast<std::uint64_t>(epoch)}));
    double train_total = 0.0;
    std::size_t train_count = 0;
    int accumulated = 0;
    reset_gradient(policy, grad);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      source.gather(batches[b], obs, actions);
      GeneralistGradient part;
      reset_gradient(policy, part);
      const double loss = generalist_nll(policy, obs, actions, &part);
      train_total += loss * static_cast<double>(actions.size());
      train_count += actions.size();
      grad.head.values() += part.head.values();
      if (!policy.freeze_encoder) grad.encoder.values() += part.encoder.values();
      ++accumulated;
      if (accumulated == cfg.accumulation_steps || b + 1 == batches.size()) {
        const double scale = 1.0 / accumulated;
        grad.head.values() *= scale;
        grad.encoder.values() *= scale;
        apply_gradient(policy, optimizer, grad, cfg.learning_rate,
                       cfg.max_grad_norm);
        reset_gradient(policy, grad);
        accumulated = 0;
      }
    }
    DistillEpoch record;
    record.epoch = epoch;
    record.train_nll = train_count ? train_total / static_cast<double>(train_count) : 0.0;
    record.validation_nll = dataset_nll(policy, source, dataset, monitor);
    result.history.push_back(record);
    result.epochs_run = epoch;
    if (record.validation_nll < result.best_validation_nll) {
      result.best_validation_nll = record.validation_nll;
      result.policy = policy;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return result;
}

GeneralistPolicy finetune_fewshot(const GeneralistPolicy& policy,
                                  const EnvSpec& spec,
                                  std::span<const Trajectory> demos,
                                  const DistillConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  require(!demos.empty(), "finetune_fewshot: no demonstrations");
  const ObservationRenderer renderer(spec);
  std::vector<std::pair<const Trajectory*, std::uint32_t>> pairs;
  for (const Trajectory& t : demos) {
    require(t.env_id == spec.env_id,
            "finetune_fewshot: demonstration from " + t.env_id +
                " does not match " + spec.env_id);
    for (std::uint32_t s = 0; s < t.steps.size(); ++s) pairs.push_back({&t, s});
  }
  require(!pairs.empty(), "finetune_fewshot: demonstrations have no steps");

  GeneralistPolicy tuned = policy;
  tuned.freeze_encoder = true;
  DistillOptimizer optimizer;
  Rng rng(seed);
  Eigen::MatrixXd obs;
  std::vector<int> actions;
  for (int epoch = 0; epoch < cfg.fewshot_epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    for (std::size_t b = 0; b < pairs.size(); b += cfg.fewshot_minibatch_size) {
      const std::size_t n = std::min(
          pairs.size() - b, static_cast<std::size_t>(cfg.fewshot_minibatch_size));
      obs.resize(kObsDim, static_cast<Eigen::Index>(n));
      actions.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& [t, s] = pairs[b + i];
        renderer.render_into(t->steps[s].state, t->observation_noise(),
                             obs.col(static_cast<Eigen::Index>(i)).data());
        actions[i] = t->steps[s].action;
      }
      distill_update(tuned, optimizer, obs, actions, cfg.fewshot_learning_rate,
                     cfg.max_grad_norm);
    }
  }
  return tuned;
}

}  // namespace casher
