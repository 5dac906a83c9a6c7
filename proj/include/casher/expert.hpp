#pragma once

// Scripted waypoint demonstrator. Plans on the occupancy grid, follows the
// route in 0.03 increments, grasps within reach and releases inside the goal.

#include <cstdint>
#include <optional>
#include <vector>

#include "casher/envworld.hpp"
#include "casher/rollout.hpp"
#include "casher/trajectory.hpp"

namespace casher {

struct ExpertConfig {
  // Number of distinct route classes sampled among when several exist.
  int multimodality = 1;
  // Probability of replacing the planned action by a random motion.
  double action_noise = 0.0;
};

void validate(const ExpertConfig& cfg);

// Homotopy signature of a polyline: for every obstacle, the signed number of
// crossings with the upward vertical ray from the obstacle centre.
using RouteSignature = std::vector<int>;
RouteSignature route_signature(const EnvSpec& spec,
                               const std::vector<Vec2>& polyline);

// Grid route as a list of cell centres from the cell of `from` to the cell of
// `to`, inclusive. Throws Infeasible when no route exists.
std::vector<Cell> shortest_cell_route(const EnvSpec& spec, Vec2 from, Vec2 to);

// Up to `max_classes` routes with pairwise distinct signatures, shortest
// first.
std::vector<std::vector<Cell>> route_classes(const EnvSpec& spec, Vec2 from,
                                             Vec2 to, int max_classes);

// Collision-free waypoints from `from` to `to`: intermediate cell centres
// followed by `to` itself. With multimodality > 1 one of the distinct route
// classes is drawn with `rng`; otherwise the shortest route is returned.
std::vector<Vec2> plan_path(const EnvSpec& spec, Vec2 from, Vec2 to,
                            int multimodality = 1, Rng* rng = nullptr);

// Mutable follow state for one episode. Re-plans whenever the target changes
// (leg switch or the object was moved).
struct ExpertPlan {
  std::vector<Vec2> waypoints;
  std::size_t cursor = 0;
  Vec2 target;
  bool carrying_leg = false;
  bool valid = false;
  int multimodality = 1;
  Rng rng;

  ExpertPlan() = default;
  ExpertPlan(int multimodality_, std::uint64_t seed)
      : multimodality(multimodality_), rng(seed) {}
};

inline constexpr double kWaypointTolerance = 0.015 + 1e-9;

int expert_action(const EnvSpec& spec, const WorldState& state,
                  ExpertPlan& plan);

class ExpertActor : public Actor {
 public:
  explicit ExpertActor(ExpertConfig cfg = {}) : cfg_(cfg) {}
  void begin_episode(const EnvSpec& spec, const WorldState& initial,
                     std::uint64_t episode_seed) override;
  int act(const EnvSpec& spec, const WorldState& state, Rng& rng) override;

 private:
  ExpertConfig cfg_;
  ExpertPlan plan_;
};

std::vector<Trajectory> collect_demonstrations(const EnvSpec& spec, int n,
                                               std::uint64_t seed,
                                               const ExpertConfig& cfg = {});

// Stand-in for the human demonstrator; counts every demonstration it hands
// out so callers can audit human effort.
class HumanDemonstrator {
 public:
  explicit HumanDemonstrator(ExpertConfig cfg = {}) : cfg_(cfg) {}
  std::vector<Trajectory> collect(const EnvSpec& spec, int n,
                                  std::uint64_t seed);
  long demos_provided() const { return demos_provided_; }
  const ExpertConfig& config() const { return cfg_; }

 private:
  ExpertConfig cfg_;
  long demos_provided_ = 0;
};

}  // namespace casher
