#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "casher/envworld.hpp"
#include "casher/nnet.hpp"
#include "casher/rollout.hpp"

namespace casher {

// Actor-critic over privileged state features. Actor and critic have
// separate parameter vectors.
struct StatePolicy {
  ParamVector actor;   // features -> action logits
  ParamVector critic;  // features -> scalar value

  static StatePolicy create(const std::vector<int>& hidden, std::uint64_t seed);

  std::array<double, kNumActions> probabilities(const EnvSpec& spec,
                                                const WorldState& s) const;
  double value(const EnvSpec& spec, const WorldState& s) const;
  friend bool operator==(const StatePolicy&, const StatePolicy&) = default;
};

// Encoder (flattened observation grid -> embedding) followed by a head over
// embedding ⊕ robot state.
struct GeneralistPolicy {
  ParamVector encoder;
  ParamVector head;
  bool freeze_encoder = false;

  static GeneralistPolicy create(int embedding_dim,
                                 const std::vector<int>& encoder_hidden,
                                 const std::vector<int>& head_hidden,
                                 std::uint64_t seed);

  int embedding_dim() const { return encoder.spec().output_dim; }

  // observations: (kObsDim x batch). Returns logits (kNumActions x batch).
  Eigen::MatrixXd logits(const Eigen::Ref<const Eigen::MatrixXd>& observations)
      const;
  std::array<double, kNumActions> probabilities(
      std::span<const double> observation) const;
  friend bool operator==(const GeneralistPolicy&,
                         const GeneralistPolicy&) = default;
};

struct GeneralistGradient {
  ParamVector encoder;
  ParamVector head;
};

// Mean negative log-likelihood of `actions` and its gradient. The encoder
// gradient is left at zero when the policy's encoder is frozen.
double generalist_nll(const GeneralistPolicy& policy,
                      const Eigen::Ref<const Eigen::MatrixXd>& observations,
                      std::span<const int> actions,
                      GeneralistGradient* grad);

class StatePolicyActor : public Actor {
 public:
  StatePolicyActor(const StatePolicy& policy, ActionMode mode)
      : policy_(&policy), mode_(mode) {}
  int act(const EnvSpec& spec, const WorldState& state, Rng& rng) override;

 private:
  const StatePolicy* policy_;
  ActionMode mode_;
};

class GeneralistActor : public Actor {
 public:
  GeneralistActor(const GeneralistPolicy& policy, ActionMode mode)
      : policy_(&policy), mode_(mode) {}
  void begin_episode(const EnvSpec& spec, const WorldState& initial,
                     std::uint64_t episode_seed) override;
  int act(const EnvSpec& spec, const WorldState& state, Rng& rng) override;

 private:
  const GeneralistPolicy* policy_;
  ActionMode mode_;
  struct CachedRenderer {
    EnvSpec spec;
    std::shared_ptr<const ObservationRenderer> renderer;
  };
  std::map<std::string, CachedRenderer> renderers_;
  const ObservationRenderer* current_ = nullptr;
};

// Parameter checkpoints: "CASHERNN" magic, format version, policy kind, then
// each network as (input_dim, hidden..., output_dim, params as float64 LE).
enum class CheckpointKind : std::uint32_t { kState = 1, kGeneralist = 2 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path,
                      const StatePolicy& policy);
void write_checkpoint(const std::filesystem::path& path,
                      const GeneralistPolicy& policy);
CheckpointKind checkpoint_kind(const std::filesystem::path& path);
StatePolicy read_state_policy(const std::filesystem::path& path);
GeneralistPolicy read_generalist_policy(const std::filesystem::path& path);

}  // namespace casher
