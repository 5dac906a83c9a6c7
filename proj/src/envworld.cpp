#include "casher/envworld.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "casher/errors.hpp"

namespace casher {

namespace {

constexpr double kCellSize = 1.0 / kGridSize;
constexpr double kOverlapEps = 1e-12;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double radial_field(double d) {
  return std::exp(-d * d / (2 * kObsFieldWidth * kObsFieldWidth));
}

double overlap_1d(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}


// Moves `p` by `delta` along one axis, stopping at the workspace edge or the
// first obstacle face in the way.
Vec2 move_clamped(const EnvSpec& spec, Vec2 p, int axis, double delta) {
  if (axis == 0) {
    double target = clamp01(p.x + delta);
    for (const Rect& r : spec.obstacles) {
      if (!(p.y > r.y0 && p.y < r.y1)) continue;
      if (delta > 0 && p.x <= r.x0 && target > r.x0) target = r.x0;
      if (delta < 0 && p.x >= r.x1 && target < r.x1) target = r.x1;
    }
    return {target, p.y};
  }
  double target = clamp01(p.y + delta);
  for (const Rect& r : spec.obstacles) {
    if (!(p.x > r.x0 && p.x < r.x1)) continue;
    if (delta > 0 && p.y <= r.y0 && target > r.y0) target = r.y0;
    if (delta < 0 && p.y >= r.y1 && target < r.y1) target = r.y1;
  }
  return {p.x, target};
}

double cell_hash_unit(std::uint64_t seed, int a, int b) {
  std::uint64_t h = derive_seed(seed, {static_cast<std::uint64_t>(a),
                                       static_cast<std::uint64_t>(b)});
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

OccupancyGrid::OccupancyGrid(const EnvSpec& spec) {
  for (int row = 0; row < kGridSize; ++row) {
    for (int col = 0; col < kGridSize; ++col) {
      const double cx0 = col * kCellSize, cy0 = row * kCellSize;
      bool hit = false;
      for (const Rect& r : spec.obstacles) {
        if (overlap_1d(cx0, cx0 + kCellSize, r.x0, r.x1) > kOverlapEps &&
            overlap_1d(cy0, cy0 + kCellSize, r.y0, r.y1) > kOverlapEps) {
          hit = true;
          break;
        }
      }
      blocked_[index({row, col})] = hit;
    }
  }
}

Cell OccupancyGrid::cell_of(Vec2 p) {
  auto idx = [](double v) {
    return std::clamp(static_cast<int>(std::floor(v * kGridSize)), 0,
                      kGridSize - 1);
  };
  return {idx(p.y), idx(p.x)};
}

Vec2 OccupancyGrid::center_of(Cell c) {
  return {(c.col + 0.5) * kCellSize, (c.row + 0.5) * kCellSize};
}

std::array<int, kGridSize * kGridSize> OccupancyGrid::distances_from(
    Cell from) const {
  std::array<int, kGridSize * kGridSize> dist;
  dist.fill(-1);
  if (!in_bounds(from) || blocked(from)) return dist;
  std::deque<Cell> queue{from};
  dist[index(from)] = 0;
  constexpr int kDr[4] = {0, 0, 1, -1};
  constexpr int kDc[4] = {1, -1, 0, 0};
  while (!queue.empty()) {
    Cell c = queue.front();
    queue.pop_front();
    for (int k = 0; k < 4; ++k) {
      Cell n{c.row + kDr[k], c.col + kDc[k]};
      if (!in_bounds(n) || blocked(n) || dist[index(n)] >= 0) continue;
      dist[index(n)] = dist[index(c)] + 1;
      queue.push_back(n);
    }
  }
  return dist;
}

bool is_free_placement(const EnvSpec& spec, const OccupancyGrid& grid,
                       Vec2 p) {
  if (p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0) return false;
  for (const Rect& r : spec.obstacles)
    if (r.contains_interior(p)) return false;
  return !grid.blocked(OccupancyGrid::cell_of(p));
}

bool is_feasible(const EnvSpec& spec) {
  OccupancyGrid grid(spec);
  if (!is_free_placement(spec, grid, kHomePosition) ||
      !is_free_placement(spec, grid, spec.object_nominal) ||
      !is_free_placement(spec, grid, spec.goal.center))
    return false;
  const Cell object_cell = OccupancyGrid::cell_of(spec.object_nominal);
  const auto from_object = grid.distances_from(object_cell);
  const int to_home =
      from_object[OccupancyGrid::index(OccupancyGrid::cell_of(kHomePosition))];
  const int to_goal =
      from_object[OccupancyGrid::index(OccupancyGrid::cell_of(spec.goal.center))];
  if (to_home < 0 || to_goal < 0) return false;
  return to_home + to_goal <= kMaxRouteCells;
}

std::optional<EnvSpec> try_generate_env(std::uint64_t layout_seed,
                                        std::string env_id) {
  Rng rng(layout_seed);
  EnvSpec spec;
  spec.env_id = std::move(env_id);
  spec.layout_seed = layout_seed;
  spec.texture_seed = mix64(layout_seed ^ 0x7e7u);
  spec.object_jitter = kObjectJitter;

  const int n_obstacles = uniform_int(rng, 1, 4);
  for (int i = 0; i < n_obstacles; ++i) {
    const double w = uniform(rng, 0.05, 0.3);
    const double h = uniform(rng, 0.05, 0.3);
    const double x0 = uniform(rng, 0.0, 1.0 - w);
    const double y0 = uniform(rng, 0.0, 1.0 - h);
    spec.obstacles.push_back({x0, y0, x0 + w, y0 + h});
  }
  spec.object_nominal = {uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85)};
  spec.goal.center = {uniform(rng, 0.12, 0.88), uniform(rng, 0.12, 0.88)};
  spec.goal.radius = kGoalRadius;

  if (distance(spec.object_nominal, spec.goal.center) < kMinObjectGoalDistance)
    return std::nullopt;
  if (distance(spec.object_nominal, kHomePosition) < 2 * kGraspRadius)
    return std::nullopt;
  if (!is_feasible(spec)) return std::nullopt;
  return spec;
}

std::vector<EnvSpec> generate_env_family(int count,
                                         std::uint64_t family_seed) {
  require(count >= 0, "generate_env_family: count must be >= 0");
  std::vector<EnvSpec> family;
  family.reserve(count);
  for (int i = 0; i < count; ++i) {
    char id[48];
    std::snprintf(id, sizeof(id), "env-%llu-%04d",
                  static_cast<unsigned long long>(family_seed), i);
    std::optional<EnvSpec> spec;
    for (int attempt = 0; attempt < kMaxGenerationAttempts && !spec;
         ++attempt) {
      spec = try_generate_env(
          derive_seed(family_seed, {static_cast<std::uint64_t>(i),
                                    static_cast<std::uint64_t>(attempt)}),
          id);
    }
    if (!spec)
      throw GenerationExhausted("no feasible layout for " + std::string(id));
    family.push_back(std::move(*spec));
  }
  return family;
}

EnvSpec make_open_spec(std::string env_id, Vec2 object_nominal, Vec2 goal) {
  EnvSpec spec;
  spec.env_id = std::move(env_id);
  spec.object_nominal = object_nominal;
  spec.goal.center = goal;
  spec.goal.radius = kGoalRadius;
  spec.object_jitter = kObjectJitter;
  spec.texture_seed = 1;
  require(is_feasible(spec), "make_open_spec: infeasible placement");
  return spec;
}

WorldState reset(const EnvSpec& spec, std::uint64_t episode_seed) {
  Rng rng(derive_seed(episode_seed, {spec.layout_seed, 0x5e7u}));
  OccupancyGrid grid(spec);
  WorldState s;
  s.ee = kHomePosition;
  s.object = spec.object_nominal;
  const double j = spec.object_jitter;
  for (int attempt = 0; attempt < kMaxGenerationAttempts; ++attempt) {
    const double dx = uniform(rng, -j, j);
    const double dy = uniform(rng, -j, j);
    const Vec2 candidate{spec.object_nominal.x + dx,
                         spec.object_nominal.y + dy};
    if (is_free_placement(spec, grid, candidate)) {
      s.object = candidate;
      break;
    }
  }
  return s;
}

bool is_success(const EnvSpec& spec, const WorldState& state) {
  return state.gripper_open && !state.carried &&
         distance(state.object, spec.goal.center) < spec.goal.radius;
}

StepResult step(const EnvSpec& spec, const WorldState& state, int action) {
  if (action < 0 || action >= kNumActions)
    throw ContractViolation("step: invalid action " + std::to_string(action));
  if (state.step_count >= kEpisodeLength)
    throw ContractViolation("step: episode already at its length limit");

  WorldState next = state;
  switch (static_cast<Action>(action)) {
    case Action::kMoveXPos:
      next.ee = move_clamped(spec, state.ee, 0, +kMoveDelta);
      break;
    case Action::kMoveXNeg:
      next.ee = move_clamped(spec, state.ee, 0, -kMoveDelta);
      break;
    case Action::kMoveYPos:
      next.ee = move_clamped(spec, state.ee, 1, +kMoveDelta);
      break;
    case Action::kMoveYNeg:
      next.ee = move_clamped(spec, state.ee, 1, -kMoveDelta);
      break;
    case Action::kGrasp:
      next.gripper_open = false;
      if (!state.carried && distance(state.ee, state.object) < kGraspRadius)
        next.carried = true;
      break;
    case Action::kRelease:
      next.carried = false;
      next.gripper_open = true;
      break;
  }
  if (next.carried) next.object = next.ee;
  next.step_count = state.step_count + 1;

  StepResult out;
  out.state = next;
  const bool success = is_success(spec, next);
  out.reward = success ? 1.0 : 0.0;
  out.done = success || next.step_count >= kEpisodeLength;
  return out;
}

WorldState inject_disturbance(const EnvSpec& spec, const WorldState& state,
                              std::uint64_t seed) {
  if (state.carried)
    throw ContractViolation("inject_disturbance: object is being carried");
  Rng rng(derive_seed(seed, {spec.layout_seed, 0xd157u}));
  OccupancyGrid grid(spec);
  WorldState out = state;
  for (int attempt = 0; attempt < kMaxGenerationAttempts; ++attempt) {
    const double dx = uniform(rng, -kObjectJitter, kObjectJitter);
    const double dy = uniform(rng, -kObjectJitter, kObjectJitter);
    const Vec2 candidate = state.object + Vec2{dx, dy};
    if (!is_free_placement(spec, grid, candidate)) continue;
    // A push never delivers the object.
    if (distance(candidate, spec.goal.center) < spec.goal.radius) continue;
    out.object = candidate;
    break;
  }
  return out;
}

std::array<double, kWorldStateDim> flatten(const WorldState& s) {
  return {s.ee.x,
          s.ee.y,
          s.object.x,
          s.object.y,
          s.carried ? 1.0 : 0.0,
          s.gripper_open ? 1.0 : 0.0,
          static_cast<double>(s.step_count)};
}

WorldState unflatten(const std::array<double, kWorldStateDim>& v) {
  WorldState s;
  s.ee = {v[0], v[1]};
  s.object = {v[2], v[3]};
  s.carried = v[4] != 0.0;
  s.gripper_open = v[5] != 0.0;
  s.step_count = static_cast<int>(v[6]);
  return s;
}

std::array<double, kStateFeatureDim> state_features(const EnvSpec& spec,
                                                    const WorldState& s) {
  const Vec2 g = spec.goal.center;
  const Vec2 to_object = s.object - s.ee;
  const Vec2 object_to_goal = g - s.object;
  const Vec2 to_goal = g - s.ee;
  return {2 * s.ee.x - 1,       2 * s.ee.y - 1,
          2 * s.object.x - 1,   2 * s.object.y - 1,
          2 * g.x - 1,          2 * g.y - 1,
          4 * to_object.x,      4 * to_object.y,
          2 * object_to_goal.x, 2 * object_to_goal.y,
          2 * to_goal.x,        2 * to_goal.y,
          s.carried ? 1.0 : 0.0, s.gripper_open ? 1.0 : 0.0};
}

ObservationRenderer::ObservationRenderer(const EnvSpec& spec) : spec_(spec) {
  for (int row = 0; row < kGridSize; ++row)
    for (int col = 0; col < kGridSize; ++col)
      texture_[row * kGridSize + col] =
          0.7 + 0.3 * cell_hash_unit(spec.texture_seed, row, col);
}

void ObservationRenderer::render_into(const WorldState& state,
                                      std::optional<std::uint64_t> noise_seed,
                                      double* out) const {
  constexpr int kPlane = kGridSize * kGridSize;
  constexpr double c = kObsWindow / kGridSize;
  const double left = state.ee.x - 0.5 * kObsWindow;
  const double bottom = state.ee.y - 0.5 * kObsWindow;
  for (int row = 0; row < kGridSize; ++row) {
    const double y0 = bottom + row * c;
    for (int col = 0; col < kGridSize; ++col) {
      const double x0 = left + col * c;
      const Vec2 centre{x0 + 0.5 * c, y0 + 0.5 * c};
      // Area outside the workspace reads as wall.
      double covered = c * c - overlap_1d(x0, x0 + c, 0.0, 1.0) *
                                   overlap_1d(y0, y0 + c, 0.0, 1.0);
      for (const Rect& r : spec_.obstacles)
        covered += overlap_1d(x0, x0 + c, r.x0, r.x1) *
                   overlap_1d(y0, y0 + c, r.y0, r.y1);
      const double coverage = std::min(1.0, covered / (c * c));
      const int wx = std::clamp(static_cast<int>(std::floor(centre.x * kGridSize)),
                                0, kGridSize - 1);
      const int wy = std::clamp(static_cast<int>(std::floor(centre.y * kGridSize)),
                                0, kGridSize - 1);
      const int i = row * kGridSize + col;
      out[i] = coverage * texture_[wy * kGridSize + wx];
      out[kPlane + i] = radial_field(distance(centre, state.object));
      out[2 * kPlane + i] = radial_field(std::max(
          0.0, distance(centre, spec_.goal.center) - spec_.goal.radius));
    }
  }

  if (noise_seed) {
    Rng rng(derive_seed(*noise_seed,
                        {static_cast<std::uint64_t>(state.step_count)}));
    for (int i = 0; i < kObsCells; ++i) {
      const double drop = uniform(rng, 0.0, 1.0);
      const double jitter = uniform(rng, -kObsJitter, kObsJitter);
      out[i] = drop < kObsDropout ? 0.0 : clamp01(out[i] + jitter);
    }
  }
  out[kObsCells + 0] = state.ee.x;
  out[kObsCells + 1] = state.ee.y;
  out[kObsCells + 2] = state.carried ? 1.0 : 0.0;
}

ObsGrid ObservationRenderer::render(
    const WorldState& state, std::optional<std::uint64_t> noise_seed) const {
  std::array<double, kObsDim> flat;
  render_into(state, noise_seed, flat.data());
  ObsGrid grid;
  std::copy_n(flat.begin(), kObsCells, grid.cells.begin());
  std::copy_n(flat.begin() + kObsCells, kRobotStateDim, grid.robot.begin());
  return grid;
}

ObsGrid render_observation(const EnvSpec& spec, const WorldState& state,
                           std::optional<std::uint64_t> noise_seed) {
  return ObservationRenderer(spec).render(state, noise_seed);
}

}  // namespace casher
