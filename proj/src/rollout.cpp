#include "casher/rollout.hpp"

#include <algorithm>

#include "casher/errors.hpp"

namespace casher {

int select_action(std::span<const double> probabilities, ActionMode mode,
                  Rng& rng) {
  if (mode == ActionMode::kGreedy) {
    return static_cast<int>(
        std::max_element(probabilities.begin(), probabilities.end()) -
        probabilities.begin());
  }
  const double u = uniform(rng, 0.0, 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    acc += probabilities[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left u above the cumulative sum; take the last supported action.
  for (std::size_t i = probabilities.size(); i-- > 0;)
    if (probabilities[i] > 0.0) return static_cast<int>(i);
  throw NumericalError("select_action: empty distribution");
}

EpisodeResult run_episode(Actor& actor, const EnvSpec& spec,
                          std::uint64_t episode_seed,
                          std::uint64_t action_seed,
                          const EpisodeOptions& options) {
  EpisodeResult result;
  result.trajectory.env_id = spec.env_id;
  result.trajectory.episode_seed = episode_seed;
  Rng rng(action_seed);
  WorldState state =
      options.initial_state ? *options.initial_state : reset(spec, episode_seed);
  actor.begin_episode(spec, state, episode_seed);
  while (true) {
    if (options.disturbance_step && state.step_count == *options.disturbance_step) {
      if (state.carried) {
        result.disturbance_skipped = true;
      } else {
        state = inject_disturbance(spec, state, options.disturbance_seed);
        result.disturbance_applied = true;
      }
    }
    const int action = actor.act(spec, state, rng);
    const StepResult next = step(spec, state, action);
    result.trajectory.steps.push_back({state, action, next.reward, next.done});
    state = next.state;
    if (next.done) break;
  }
  return result;
}

std::uint64_t evaluation_episode_seed(std::uint64_t seed, std::size_t env_index,
                                      int rollout) {
  return derive_seed(seed, {0xe7a1u, env_index,
                            static_cast<std::uint64_t>(rollout)});
}

std::vector<double> per_env_success(Actor& actor,
                                    std::span<const EnvSpec> specs,
                                    int rollouts, std::uint64_t seed) {
  require(rollouts >= 1, "per_env_success: rollouts must be >= 1");
  std::vector<double> rates;
  rates.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    int successes = 0;
    for (int k = 0; k < rollouts; ++k) {
      const std::uint64_t es = evaluation_episode_seed(seed, i, k);
      if (run_episode(actor, specs[i], es, mix64(es)).trajectory.successful())
        ++successes;
    }
    rates.push_back(static_cast<double>(successes) / rollouts);
  }
  return rates;
}

}  // namespace casher
