#pragma once

// Planar sparse-reward pick-and-place environment family.
//
// The workspace is the unit square. An end effector moves in fixed 0.03
// increments along either axis, can grasp an object within reach, and must
// release it inside a circular goal site. Obstacles are axis-aligned
// rectangles the effector can slide along but never enter.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "casher/rng.hpp"

namespace casher {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

double distance(Vec2 a, Vec2 b);

struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  // Open interior; the boundary is not part of the obstacle.
  bool contains_interior(Vec2 p) const {
    return p.x > x0 && p.x < x1 && p.y > y0 && p.y < y1;
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct GoalSite {
  Vec2 center;
  double radius = 0.08;
  friend bool operator==(const GoalSite&, const GoalSite&) = default;
};

struct EnvSpec {
  std::string env_id;
  std::uint64_t layout_seed = 0;
  std::vector<Rect> obstacles;
  GoalSite goal;
  Vec2 object_nominal;
  double object_jitter = 0.1;
  std::uint64_t texture_seed = 0;

  friend bool operator==(const EnvSpec&, const EnvSpec&) = default;
};

struct WorldState {
  Vec2 ee;
  Vec2 object;
  bool carried = false;
  bool gripper_open = true;
  int step_count = 0;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

enum class Action : int {
  kMoveXPos = 0,
  kMoveXNeg = 1,
  kMoveYPos = 2,
  kMoveYNeg = 3,
  kGrasp = 4,
  kRelease = 5,
};

inline constexpr int kNumActions = 6;
inline constexpr int kEpisodeLength = 60;
inline constexpr double kMoveDelta = 0.03;
inline constexpr double kGraspRadius = 0.04;
inline constexpr double kGoalRadius = 0.08;
inline constexpr double kObjectJitter = 0.1;
inline constexpr Vec2 kHomePosition{0.5, 0.5};

inline constexpr int kGridSize = 16;
inline constexpr int kObsChannels = 3;
inline constexpr int kObsCells = kObsChannels * kGridSize * kGridSize;
inline constexpr int kRobotStateDim = 3;
inline constexpr int kObsDim = kObsCells + kRobotStateDim;
inline constexpr int kStateFeatureDim = 14;
inline constexpr int kWorldStateDim = 7;

// Generator bounds.
inline constexpr int kMaxGenerationAttempts = 1000;
inline constexpr int kMaxRouteCells = 18;
inline constexpr double kMinObjectGoalDistance = 0.3;

struct StepResult {
  WorldState state;
  double reward = 0.0;
  bool done = false;
};

// Cell index on the kGridSize x kGridSize occupancy grid; row is y.
struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

class OccupancyGrid {
 public:
  explicit OccupancyGrid(const EnvSpec& spec);

  bool blocked(Cell c) const { return blocked_[index(c)]; }
  bool in_bounds(Cell c) const {
    return c.row >= 0 && c.row < kGridSize && c.col >= 0 && c.col < kGridSize;
  }
  static int index(Cell c) { return c.row * kGridSize + c.col; }
  static Cell cell_of(Vec2 p);
  static Vec2 center_of(Cell c);

  // Breadth-first distances (in 4-connected moves) from `from` to every
  // cell; -1 marks unreachable or blocked cells.
  std::array<int, kGridSize * kGridSize> distances_from(Cell from) const;

 private:
  std::array<bool, kGridSize * kGridSize> blocked_{};
};

// Returns true when p lies inside the unit square, outside every obstacle
// interior and in a grid cell free of obstacles.
bool is_free_placement(const EnvSpec& spec, const OccupancyGrid& grid, Vec2 p);

// Builds one spec from a layout seed, or nullopt if the sampled layout is
// rejected by the feasibility checks.
std::optional<EnvSpec> try_generate_env(std::uint64_t layout_seed,
                                        std::string env_id);

// Route-length feasibility: the spec's home → object → goal grid route
// exists and fits within kMaxRouteCells.
bool is_feasible(const EnvSpec& spec);

std::vector<EnvSpec> generate_env_family(int count, std::uint64_t family_seed);

// A spec with no obstacles, used for the demo-bootstrapped RL fixture.
EnvSpec make_open_spec(std::string env_id, Vec2 object_nominal, Vec2 goal);

WorldState reset(const EnvSpec& spec, std::uint64_t episode_seed);
StepResult step(const EnvSpec& spec, const WorldState& state, int action);
bool is_success(const EnvSpec& spec, const WorldState& state);
WorldState inject_disturbance(const EnvSpec& spec, const WorldState& state,
                              std::uint64_t seed);

std::array<double, kWorldStateDim> flatten(const WorldState& s);
WorldState unflatten(const std::array<double, kWorldStateDim>& v);

// Privileged features consumed by state-based policies.
std::array<double, kStateFeatureDim> state_features(const EnvSpec& spec,
                                                    const WorldState& s);

// Observation grid centred on the end effector, covering a kObsWindow-wide
// square (so the whole workspace stays in view). Channels: obstacle coverage
// times a per-scene texture (space outside the workspace counts as wall),
// then object and goal as radial fields exp(-d^2 / 2w^2), d measured from the
// object centre or the goal disc edge.
struct ObsGrid {
  // channel-major: [channel][row][col]; channels are obstacles, object, goal.
  std::array<double, kObsCells> cells{};
  std::array<double, kRobotStateDim> robot{};

  double at(int channel, int row, int col) const {
    return cells[(channel * kGridSize + row) * kGridSize + col];
  }
  friend bool operator==(const ObsGrid&, const ObsGrid&) = default;
};

// Caches the texture of one spec. render() is bit-identical to
// render_observation().
class ObservationRenderer {
 public:
  explicit ObservationRenderer(const EnvSpec& spec);
  ObsGrid render(const WorldState& state,
                 std::optional<std::uint64_t> noise_seed = std::nullopt) const;
  // Writes the flattened observation (cells then robot state) to out.
  void render_into(const WorldState& state,
                   std::optional<std::uint64_t> noise_seed,
                   double* out) const;

 private:
  EnvSpec spec_;
  std::array<double, kGridSize * kGridSize> texture_{};
};

ObsGrid render_observation(const EnvSpec& spec, const WorldState& state,
                           std::optional<std::uint64_t> noise_seed =
                               std::nullopt);

inline constexpr double kObsDropout = 0.05;
inline constexpr double kObsJitter = 0.05;
inline constexpr double kObsWindow = 2.0;
inline constexpr double kObsFieldWidth = 0.1;

}  // namespace casher
