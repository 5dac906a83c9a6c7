#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "casher/envworld.hpp"

namespace casher {

// One environment step. `state` is the pre-action state s_t; reward and
// done describe the outcome of applying `action` to it.
struct Transition {
  WorldState state;
  int action = 0;
  double reward = 0.0;
  bool done = false;
  friend bool operator==(const Transition&, const Transition&) = default;
};

enum class ObsMode { kClean, kAugmented };

struct Trajectory {
  std::string env_id;
  std::uint64_t episode_seed = 0;
  ObsMode obs_mode = ObsMode::kClean;
  std::uint64_t noise_seed = 0;
  std::vector<Transition> steps;

  bool successful() const {
    return !steps.empty() && steps.back().done && steps.back().reward == 1.0;
  }
  std::optional<std::uint64_t> observation_noise() const {
    if (obs_mode == ObsMode::kAugmented) return noise_seed;
    return std::nullopt;
  }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

}  // namespace casher
