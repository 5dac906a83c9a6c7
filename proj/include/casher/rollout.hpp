#pragma once

// Single-episode rollouts against any decision maker.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "casher/envworld.hpp"
#include "casher/rng.hpp"
#include "casher/trajectory.hpp"

namespace casher {

enum class ActionMode { kGreedy, kSample };

class Actor {
 public:
  virtual ~Actor() = default;
  virtual void begin_episode(const EnvSpec& spec, const WorldState& initial,
                             std::uint64_t episode_seed) {
    (void)spec;
    (void)initial;
    (void)episode_seed;
  }
  virtual int act(const EnvSpec& spec, const WorldState& state, Rng& rng) = 0;
};

// Picks argmax (lowest index on ties) or samples from a distribution.
int select_action(std::span<const double> probabilities, ActionMode mode,
                  Rng& rng);

struct EpisodeOptions {
  // Replaces reset(spec, episode_seed) as the starting state.
  std::optional<WorldState> initial_state;
  std::optional<int> disturbance_step;
  std::uint64_t disturbance_seed = 0;
};

struct EpisodeResult {
  Trajectory trajectory;
  bool disturbance_applied = false;
  bool disturbance_skipped = false;
};

// Runs one episode from reset(spec, episode_seed) until done. `action_seed`
// drives any sampling the actor does.
EpisodeResult run_episode(Actor& actor, const EnvSpec& spec,
                          std::uint64_t episode_seed,
                          std::uint64_t action_seed,
                          const EpisodeOptions& options = {});

// Always emits the same action; ignores observations.
class ConstantActor : public Actor {
 public:
  explicit ConstantActor(int action) : action_(action) {}
  int act(const EnvSpec&, const WorldState&, Rng&) override { return action_; }

 private:
  int action_;
};

class UniformRandomActor : public Actor {
 public:
  int act(const EnvSpec&, const WorldState&, Rng& rng) override {
    return uniform_int(rng, 0, kNumActions - 1);
  }
};

// Episode seeds for evaluation: fixed per (seed, env index, rollout).
std::uint64_t evaluation_episode_seed(std::uint64_t seed, std::size_t env_index,
                                      int rollout);

// Mean success over `rollouts` episodes per spec.
std::vector<double> per_env_success(Actor& actor,
                                    std::span<const EnvSpec> specs,
                                    int rollouts, std::uint64_t seed);

}  // namespace casher
