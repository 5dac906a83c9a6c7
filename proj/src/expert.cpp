#include "casher/expert.hpp"

#include <algorithm>
#include <cmath>

#include "casher/errors.hpp"

namespace casher {

namespace {

constexpr int kDr[4] = {0, 0, 1, -1};
constexpr int kDc[4] = {1, -1, 0, 0};
constexpr int kDetourSlackCells = 6;

// Nearest free cell to p (p's own cell when it is free).
std::optional<Cell> entry_cell(const OccupancyGrid& grid, Vec2 p,
                               const std::array<int, kGridSize * kGridSize>&
                                   dist_to_target) {
  const Cell c = OccupancyGrid::cell_of(p);
  if (!grid.blocked(c)) return c;
  std::optional<Cell> best;
  int best_dist = 0;
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      const Cell n{c.row + dr, c.col + dc};
      if (!grid.in_bounds(n) || grid.blocked(n)) continue;
      const int d = dist_to_target[OccupancyGrid::index(n)];
      if (d < 0) continue;
      if (!best || d < best_dist) {
        best = n;
        best_dist = d;
      }
    }
  }
  return best;
}

std::vector<Cell> cell_route(const OccupancyGrid& grid, Cell start,
                             Cell goal) {
  const auto dist = grid.distances_from(goal);
  if (dist[OccupancyGrid::index(start)] < 0) return {};
  std::vector<Cell> route{start};
  Cell c = start;
  while (!(c == goal)) {
    const int here = dist[OccupancyGrid::index(c)];
    for (int k = 0; k < 4; ++k) {
      const Cell n{c.row + kDr[k], c.col + kDc[k]};
      if (grid.in_bounds(n) && dist[OccupancyGrid::index(n)] == here - 1) {
        c = n;
        break;
      }
    }
    route.push_back(c);
  }
  return route;
}

std::vector<Vec2> centres(const std::vector<Cell>& route) {
  std::vector<Vec2> pts;
  pts.reserve(route.size());
  for (const Cell& c : route) pts.push_back(OccupancyGrid::center_of(c));
  return pts;
}

}  // namespace

void validate(const ExpertConfig& cfg) {
  require(cfg.multimodality >= 1, "expert.multimodality must be >= 1");
  require(cfg.action_noise >= 0.0 && cfg.action_noise < 1.0,
          "expert.action_noise must lie in [0, 1)");
}

RouteSignature route_signature(const EnvSpec& spec,
                               const std::vector<Vec2>& polyline) {
  RouteSignature sig(spec.obstacles.size(), 0);
  for (std::size_t i = 0; i < spec.obstacles.size(); ++i) {
    const Rect& r = spec.obstacles[i];
    const double cx = 0.5 * (r.x0 + r.x1);
    const double cy = 0.5 * (r.y0 + r.y1);
    for (std::size_t k = 1; k < polyline.size(); ++k) {
      const Vec2 p = polyline[k - 1], q = polyline[k];
      if ((p.x < cx) == (q.x < cx)) continue;
      const double t = (cx - p.x) / (q.x - p.x);
      const double y = p.y + t * (q.y - p.y);
      if (y > cy) sig[i] += q.x > p.x ? 1 : -1;
    }
  }
  return sig;
}

std::vector<Cell> shortest_cell_route(const EnvSpec& spec, Vec2 from,
                                      Vec2 to) {
  OccupancyGrid grid(spec);
  const Cell goal = OccupancyGrid::cell_of(to);
  if (grid.blocked(goal)) throw Infeasible("plan_path: target cell blocked");
  const auto dist = grid.distances_from(goal);
  const std::optional<Cell> start = entry_cell(grid, from, dist);
  if (!start) throw Infeasible("plan_path: no route from start");
  std::vector<Cell> route = cell_route(grid, *start, goal);
  if (route.empty()) throw Infeasible("plan_path: no route");
  return route;
}

std::vector<std::vector<Cell>> route_classes(const EnvSpec& spec, Vec2 from,
                                             Vec2 to, int max_classes) {
  require(max_classes >= 1, "route_classes: max_classes must be >= 1");
  const std::vector<Cell> shortest = shortest_cell_route(spec, from, to);
  std::vector<std::vector<Cell>> classes{shortest};
  if (max_classes == 1) return classes;

  OccupancyGrid grid(spec);
  const Cell start = shortest.front();
  const Cell goal = shortest.back();
  const std::size_t limit = shortest.size() + kDetourSlackCells;
  std::vector<std::vector<Cell>> candidates;
  constexpr double kHalfCell = 0.5 / kGridSize;
  for (const Rect& r : spec.obstacles) {
    const double cx = 0.5 * (r.x0 + r.x1), cy = 0.5 * (r.y0 + r.y1);
    const Vec2 vias[4] = {{r.x0 - kHalfCell, cy},
                          {r.x1 + kHalfCell, cy},
                          {cx, r.y0 - kHalfCell},
                          {cx, r.y1 + kHalfCell}};
    for (const Vec2& v : vias) {
      if (v.x < 0 || v.x > 1 || v.y < 0 || v.y > 1) continue;
      const Cell via = OccupancyGrid::cell_of(v);
      if (grid.blocked(via)) continue;
      std::vector<Cell> first = cell_route(grid, start, via);
      std::vector<Cell> second = cell_route(grid, via, goal);
      if (first.empty() || second.empty()) continue;
      first.insert(first.end(), second.begin() + 1, second.end());
      if (first.size() <= limit) candidates.push_back(std::move(first));
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& a, const auto& b) {
                     return a.size() < b.size();
                   });
  std::vector<RouteSignature> seen{route_signature(spec, centres(shortest))};
  for (auto& route : candidates) {
    if (static_cast<int>(classes.size()) >= max_classes) break;
    RouteSignature sig = route_signature(spec, centres(route));
    if (std::find(seen.begin(), seen.end(), sig) != seen.end()) continue;
    seen.push_back(std::move(sig));
    classes.push_back(std::move(route));
  }
  return classes;
}

std::vector<Vec2> plan_path(const EnvSpec& spec, Vec2 from, Vec2 to,
                            int multimodality, Rng* rng) {
  std::vector<Cell> route;
  if (multimodality > 1 && rng != nullptr) {
    auto classes = route_classes(spec, from, to, multimodality);
    const int pick = uniform_int(*rng, 0, static_cast<int>(classes.size()) - 1);
    route = std::move(classes[pick]);
  } else {
    route = shortest_cell_route(spec, from, to);
  }
  std::vector<Vec2> waypoints;
  // The first cell is skipped when `from` already lies in it.
  const bool starts_inside = OccupancyGrid::cell_of(from) == route.front();
  for (std::size_t i = starts_inside ? 1 : 0; i + 1 < route.size(); ++i)
    waypoints.push_back(OccupancyGrid::center_of(route[i]));
  waypoints.push_back(to);
  return waypoints;
}

int expert_action(const EnvSpec& spec, const WorldState& state,
                  ExpertPlan& plan) {
  if (!state.carried && distance(state.ee, state.object) < kGraspRadius)
    return static_cast<int>(Action::kGrasp);
  if (state.carried && distance(state.ee, spec.goal.center) < spec.goal.radius)
    return static_cast<int>(Action::kRelease);

  const Vec2 target = state.carried ? spec.goal.center : state.object;
  if (!plan.valid || plan.carrying_leg != state.carried ||
      !(plan.target == target)) {
    plan.waypoints =
        plan_path(spec, state.ee, target, plan.multimodality, &plan.rng);
    plan.cursor = 0;
    plan.target = target;
    plan.carrying_leg = state.carried;
    plan.valid = true;
  }
  auto reached = [&](Vec2 w) {
    return std::abs(w.x - state.ee.x) <= kWaypointTolerance &&
           std::abs(w.y - state.ee.y) <= kWaypointTolerance;
  };
  while (plan.cursor + 1 < plan.waypoints.size() &&
         reached(plan.waypoints[plan.cursor]))
    ++plan.cursor;
  const Vec2 w = plan.waypoints[plan.cursor];
  const double dx = w.x - state.ee.x;
  const double dy = w.y - state.ee.y;
  if (std::abs(dx) < 1e-15 && std::abs(dy) < 1e-15)
    return static_cast<int>(state.carried ? Action::kRelease : Action::kGrasp);
  if (std::abs(dx) >= std::abs(dy))
    return static_cast<int>(dx > 0 ? Action::kMoveXPos : Action::kMoveXNeg);
  return static_cast<int>(dy > 0 ? Action::kMoveYPos : Action::kMoveYNeg);
}

void ExpertActor::begin_episode(const EnvSpec&, const WorldState&,
                                std::uint64_t episode_seed) {
  plan_ = ExpertPlan(cfg_.multimodality, derive_seed(episode_seed, {0x91a4u}));
}

int ExpertActor::act(const EnvSpec& spec, const WorldState& state, Rng& rng) {
  if (cfg_.action_noise > 0.0 && uniform(rng, 0.0, 1.0) < cfg_.action_noise)
    return uniform_int(rng, 0, 3);
  return expert_action(spec, state, plan_);
}

std::vector<Trajectory> collect_demonstrations(const EnvSpec& spec, int n,
                                               std::uint64_t seed,
                                               const ExpertConfig& cfg) {
  validate(cfg);
  require(n >= 0, "collect_demonstrations: n must be >= 0");
  std::vector<Trajectory> demos;
  demos.reserve(n);
  const int budget = 10 * n + 10;
  for (int attempt = 0; attempt < budget && static_cast<int>(demos.size()) < n;
       ++attempt) {
    const std::uint64_t es =
        derive_seed(seed, {0xde30u, static_cast<std::uint64_t>(attempt)});
    ExpertActor actor(cfg);
    EpisodeResult r = run_episode(actor, spec, es, mix64(es));
    if (r.trajectory.successful()) demos.push_back(std::move(r.trajectory));
  }
  if (static_cast<int>(demos.size()) < n)
    throw DemoCollectionFailed("collected " + std::to_string(demos.size()) +
                               " of " + std::to_string(n) +
                               " demonstrations on " + spec.env_id);
  return demos;
}

std::vector<Trajectory> HumanDemonstrator::collect(const EnvSpec& spec, int n,
                                                   std::uint64_t seed) {
  std::vector<Trajectory> demos = collect_demonstrations(spec, n, seed, cfg_);
  demos_provided_ += static_cast<long>(demos.size());
  return demos;
}

}  // namespace casher
