#pragma once

// Teacher -> student distillation into the observation-based generalist,
// plus head-only few-shot fine-tuning.

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "casher/dataset.hpp"
#include "casher/envworld.hpp"
#include "casher/nnet.hpp"
#include "casher/policies.hpp"

namespace casher {

struct DistillConfig {
  int per_env = 100;
  // Rollout attempts per env are capped at attempt_factor * per_env.
  int attempt_factor = 20;
  int chunk_trajs_per_env = 5;
  int minibatch_size = 128;
  int accumulation_steps = 1;
  double learning_rate = 1e-3;
  double max_grad_norm = 5.0;
  int max_epochs = 30;
  // Stop after this many epochs without a validation improvement.
  int patience = 3;
  double validation_fraction = 0.1;

  int embedding_dim = 64;
  std::vector<int> encoder_hidden{128};
  std::vector<int> head_hidden{64, 64};

  int fewshot_epochs = 50;
  int fewshot_minibatch_size = 64;
  double fewshot_learning_rate = 1e-3;

  void validate() const;
};

GeneralistPolicy make_generalist(const DistillConfig& cfg, std::uint64_t seed);

// Rolls out the stochastic teacher on each spec until per_env successes are
// collected; the first half is labelled clean, the rest noise-augmented.
// Throws TeacherTooWeak when attempt_factor * per_env attempts are not enough.
TrajectoryDataset generate_distill_dataset(Actor& teacher,
                                           std::span<const EnvSpec> specs,
                                           int per_env, std::uint64_t seed,
                                           int attempt_factor = 20);
TrajectoryDataset generate_distill_dataset(const StatePolicy& teacher,
                                           std::span<const EnvSpec> specs,
                                           int per_env, std::uint64_t seed,
                                           int attempt_factor = 20);

struct SampleRef {
  const Trajectory* trajectory = nullptr;
  std::uint32_t step = 0;
  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

// Which trajectories of each env take part (indices into the env's list).
using TrajectorySelection = std::map<std::string, std::vector<std::uint32_t>>;

TrajectorySelection select_all(const TrajectoryDataset& dataset);

// One epoch: chunks of chunk_trajs_per_env trajectories from every env with
// trajectories left, each chunk's (observation, action) pairs shuffled and
// cut into minibatches. Every selected step appears exactly once.
std::vector<std::vector<SampleRef>> balanced_minibatches(
    const TrajectoryDataset& dataset, const TrajectorySelection& selection,
    int chunk_trajs_per_env, int minibatch_size, std::uint64_t epoch_seed);
std::vector<std::vector<SampleRef>> balanced_minibatches(
    const TrajectoryDataset& dataset, int chunk_trajs_per_env,
    int minibatch_size, std::uint64_t epoch_seed);

// Renders observations for sample references, caching per-spec renderers.
class ObservationSource {
 public:
  // Throws ContractViolation when a dataset env has no matching spec.
  ObservationSource(const TrajectoryDataset& dataset,
                    std::span<const EnvSpec> specs);
  // Fills (kObsDim x n) observations and the demonstrated actions.
  void gather(std::span<const SampleRef> refs, Eigen::MatrixXd& observations,
              std::vector<int>& actions) const;

 private:
  std::map<std::string, ObservationRenderer, std::less<>> renderers_;
};

struct DistillOptimizer {
  AdamState encoder;
  AdamState head;
};

// One Adam step on the mean negative log-likelihood. The encoder is not
// touched when policy.freeze_encoder is set. Returns the pre-step loss.
double distill_update(GeneralistPolicy& policy, DistillOptimizer& optimizer,
                      const Eigen::Ref<const Eigen::MatrixXd>& observations,
                      std::span<const int> actions, double lr,
                      double max_grad_norm = 0.0);

struct DistillEpoch {
  int epoch = 0;
  double train_nll = 0.0;
  double validation_nll = 0.0;
};

struct GeneralistTrainingResult {
  GeneralistPolicy policy;  // best validation snapshot
  double initial_validation_nll = 0.0;
  double best_validation_nll = 0.0;
  int epochs_run = 0;
  std::vector<DistillEpoch> history;
};

// Splits whole trajectories: about validation_fraction of each env's
// trajectories go to the validation side (none when an env has fewer than 2).
std::pair<TrajectorySelection, TrajectorySelection> split_validation(
    const TrajectoryDataset& dataset, double validation_fraction,
    std::uint64_t seed);

double dataset_nll(const GeneralistPolicy& policy,
                   const ObservationSource& source,
                   const TrajectoryDataset& dataset,
                   const TrajectorySelection& selection);

GeneralistTrainingResult train_generalist(const GeneralistPolicy& initial,
                                          const TrajectoryDataset& dataset,
                                          std::span<const EnvSpec> specs,
                                          const DistillConfig& cfg,
                                          std::uint64_t seed);

// Head-only training on demonstrations from one spec. Throws
// ContractViolation on an empty demo set or demos from another spec.
GeneralistPolicy finetune_fewshot(const GeneralistPolicy& policy,
                                  const EnvSpec& spec,
                                  std::span<const Trajectory> demos,
                                  const DistillConfig& cfg, std::uint64_t seed);

}  // namespace casher
