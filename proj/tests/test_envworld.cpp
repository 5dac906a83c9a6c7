#include <cmath>
#include <deque>
#include <sstream>

#include "casher/envio.hpp"
#include "casher/envworld.hpp"
#include "casher/errors.hpp"
#include "doctest.h"

using namespace casher;

namespace {

// Independent occupancy grid: a cell is blocked when a rectangle covers part
// of it with positive area.
std::vector<bool> oracle_grid(const EnvSpec& spec) {
  const double c = 1.0 / kGridSize;
  std::vector<bool> blocked(kGridSize * kGridSize, false);
  for (int row = 0; row < kGridSize; ++row)
    for (int col = 0; col < kGridSize; ++col)
      for (const Rect& r : spec.obstacles) {
        const double ox = std::min(r.x1, (col + 1) * c) - std::max(r.x0, col * c);
        const double oy = std::min(r.y1, (row + 1) * c) - std::max(r.y0, row * c);
        if (ox > 1e-12 && oy > 1e-12) blocked[row * kGridSize + col] = true;
      }
  return blocked;
}

int oracle_cell(Vec2 p) {
  auto idx = [](double v) {
    return std::min(kGridSize - 1, std::max(0, static_cast<int>(v * kGridSize)));
  };
  return idx(p.y) * kGridSize + idx(p.x);
}

bool oracle_path_exists(const std::vector<bool>& blocked, int from, int to) {
  if (blocked[from] || blocked[to]) return false;
  std::vector<bool> seen(blocked.size(), false);
  std::deque<int> queue{from};
  seen[from] = true;
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    if (cur == to) return true;
    const int row = cur / kGridSize, col = cur % kGridSize;
    const int dr[] = {1, -1, 0, 0}, dc[] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const int r = row + dr[k], cc = col + dc[k];
      if (r < 0 || r >= kGridSize || cc < 0 || cc >= kGridSize) continue;
      const int n = r * kGridSize + cc;
      if (blocked[n] || seen[n]) continue;
      seen[n] = true;
      queue.push_back(n);
    }
  }
  return false;
}

bool inside_any(const EnvSpec& spec, Vec2 p) {
  for (const Rect& r : spec.obstacles)
    if (r.contains_interior(p)) return true;
  return false;
}

// Specs for direct step() checks; step does not need a feasible layout.
EnvSpec bare_spec(Vec2 object, Vec2 goal) {
  EnvSpec s;
  s.env_id = "bare";
  s.object_nominal = object;
  s.goal.center = goal;
  return s;
}

EnvSpec wall_spec() {
  EnvSpec s = bare_spec({0.2, 0.2}, {0.8, 0.8});
  s.obstacles.push_back({0.55, 0.3, 0.7, 0.7});
  return s;
}

}  // namespace

TEST_CASE("generate_env_family: empty and deterministic") {
  CHECK(generate_env_family(0, 3).empty());
  const auto a = generate_env_family(5, 7);
  const auto b = generate_env_family(5, 7);
  CHECK(a == b);
  CHECK(a.size() == 5);
  CHECK(generate_env_family(5, 8) != a);
}

TEST_CASE("generate_env_family: every spec has a grid route") {
  const auto family = generate_env_family(50, 1);
  REQUIRE(family.size() == 50);
  for (const EnvSpec& s : family) {
    const auto grid = oracle_grid(s);
    const int obj = oracle_cell(s.object_nominal);
    CHECK_MESSAGE(oracle_path_exists(grid, obj, oracle_cell(kHomePosition)), s.env_id);
    CHECK_MESSAGE(oracle_path_exists(grid, obj, oracle_cell(s.goal.center)), s.env_id);
    CHECK(s.obstacles.size() >= 1);
    CHECK(s.obstacles.size() <= 4);
    for (const Rect& r : s.obstacles) {
      CHECK(r.x1 - r.x0 >= 0.05 - 1e-12);
      CHECK(r.x1 - r.x0 <= 0.3 + 1e-12);
      CHECK(r.y1 - r.y0 >= 0.05 - 1e-12);
      CHECK(r.y1 - r.y0 <= 0.3 + 1e-12);
    }
    CHECK(is_feasible(s));
  }
}

TEST_CASE("occupancy grid agrees with the oracle rasterisation") {
  for (const EnvSpec& s : generate_env_family(30, 4)) {
    const OccupancyGrid grid(s);
    const auto oracle = oracle_grid(s);
    for (int row = 0; row < kGridSize; ++row)
      for (int col = 0; col < kGridSize; ++col)
        CHECK(grid.blocked({row, col}) == oracle[row * kGridSize + col]);
  }
}

TEST_CASE("reset") {
  const auto family = generate_env_family(10, 2);
  for (const EnvSpec& s : family) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const WorldState a = reset(s, seed);
      CHECK(a == reset(s, seed));
      CHECK(std::abs(a.object.x - s.object_nominal.x) <= 0.1 + 1e-12);
      CHECK(std::abs(a.object.y - s.object_nominal.y) <= 0.1 + 1e-12);
      CHECK_FALSE(a.carried);
      CHECK(a.gripper_open);
      CHECK(a.step_count == 0);
      CHECK(a.ee == kHomePosition);
      CHECK_FALSE(inside_any(s, a.object));
    }
  }
}

TEST_CASE("step: motion") {
  const EnvSpec open = bare_spec({0.2, 0.2}, {0.8, 0.8});
  WorldState s;
  s.ee = {0.5, 0.5};
  s.object = {0.2, 0.2};
  const WorldState n = step(open, s, static_cast<int>(Action::kMoveXPos)).state;
  CHECK(n.ee.x == doctest::Approx(0.53).epsilon(1e-12));
  CHECK(n.ee.y == 0.5);
  CHECK(n.step_count == 1);

  WorldState edge = s;
  edge.ee = {0.99, 0.01};
  CHECK(step(open, edge, 0).state.ee.x == 1.0);
  CHECK(step(open, edge, 3).state.ee.y == 0.0);

  // Sliding into the face of the wall stops exactly on it.
  const EnvSpec w = wall_spec();
  WorldState near = s;
  near.ee = {0.54, 0.5};
  const WorldState hit = step(w, near, 0).state;
  CHECK(hit.ee.x == 0.55);
  CHECK_FALSE(inside_any(w, hit.ee));
  CHECK(step(w, hit, 0).state.ee.x == 0.55);

  CHECK_THROWS_AS(step(open, s, 6), ContractViolation);
  CHECK_THROWS_AS(step(open, s, -1), ContractViolation);
  WorldState late = s;
  late.step_count = kEpisodeLength;
  CHECK_THROWS_AS(step(open, late, 0), ContractViolation);
}

TEST_CASE("step: grasp, carry and release") {
  const EnvSpec open = bare_spec({0.2, 0.2}, {0.8, 0.8});
  WorldState s;
  s.ee = {0.5, 0.5};
  s.object = {0.52, 0.5};
  WorldState g = step(open, s, 4).state;
  CHECK(g.carried);
  CHECK_FALSE(g.gripper_open);
  CHECK(g.object == g.ee);

  WorldState far = s;
  far.object = {0.55, 0.5};
  WorldState miss = step(open, far, 4).state;
  CHECK_FALSE(miss.carried);
  CHECK(miss.object == far.object);

  g = step(open, g, 2).state;
  CHECK(g.object == g.ee);

  WorldState at_goal;
  at_goal.ee = {0.8, 0.75};
  at_goal.object = at_goal.ee;
  at_goal.carried = true;
  at_goal.gripper_open = false;
  const StepResult r = step(open, at_goal, 5);
  // Success predicate evaluated from scratch on the post-state.
  const double d = std::hypot(r.state.object.x - 0.8, r.state.object.y - 0.8);
  const bool expected = d < 0.08 && r.state.gripper_open && !r.state.carried;
  CHECK(expected);
  CHECK(r.reward == 1.0);
  CHECK(r.done);
  CHECK(r.state.object == at_goal.ee);
}

TEST_CASE("is_success boundary") {
  const EnvSpec open = bare_spec({0.2, 0.2}, {0.5, 0.5});
  WorldState s;
  s.object = {0.5, 0.5};
  CHECK(is_success(open, s));
  s.object = {0.5 + 0.079, 0.5};
  CHECK(is_success(open, s));
  s.object = {0.5 + 0.081, 0.5};
  CHECK_FALSE(is_success(open, s));
  s.object = {0.5, 0.5};
  s.carried = true;
  s.gripper_open = false;
  CHECK_FALSE(is_success(open, s));
  s.carried = false;
  CHECK_FALSE(is_success(open, s));
}

TEST_CASE("random action sequences respect the invariants") {
  const auto family = generate_env_family(10, 3);
  Rng rng(11);
  long transitions = 0;
  for (int episode = 0; transitions < 100000; ++episode) {
    const EnvSpec& s = family[episode % family.size()];
    WorldState st = reset(s, episode);
    double total = 0.0;
    bool done = false;
    while (!done) {
      const StepResult r = step(s, st, uniform_int(rng, 0, kNumActions - 1));
      ++transitions;
      REQUIRE_FALSE(inside_any(s, r.state.ee));
      if (r.state.carried) REQUIRE(r.state.object == r.state.ee);
      REQUIRE((r.reward == 1.0) == is_success(s, r.state));
      total += r.reward;
      st = r.state;
      done = r.done;
    }
    CHECK((total == 0.0 || total == 1.0));
    if (total == 0.0) CHECK(st.step_count == kEpisodeLength);
  }
}

TEST_CASE("render_observation") {
  const auto family = generate_env_family(8, 5);
  for (const EnvSpec& s : family) {
    WorldState st = reset(s, 3);
    const ObsGrid a = render_observation(s, st);
    CHECK(a == render_observation(s, st));
    CHECK(ObservationRenderer(s).render(st) == a);
    CHECK(ObservationRenderer(s).render(st, 9) == render_observation(s, st, 9));
    for (std::uint64_t noise : {1ull, 2ull, 3ull}) {
      const ObsGrid n = render_observation(s, st, noise);
      for (double v : n.cells) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
    for (double v : a.cells) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    // Obstacle channel: cells whose area overlaps an obstacle are lit. The
    // window is centred on the effector and kObsWindow wide.
    const double cell = kObsWindow / kGridSize;
    for (int row = 0; row < kGridSize; ++row)
      for (int col = 0; col < kGridSize; ++col) {
        const double x0 = st.ee.x - kObsWindow / 2 + col * cell;
        const double y0 = st.ee.y - kObsWindow / 2 + row * cell;
        for (const Rect& r : s.obstacles) {
          const double ox = std::min(r.x1, x0 + cell) - std::max(r.x0, x0);
          const double oy = std::min(r.y1, y0 + cell) - std::max(r.y0, y0);
          if (ox > 1e-9 && oy > 1e-9) CHECK(a.at(0, row, col) > 0.0);
        }
      }
    CHECK(a.robot[0] == st.ee.x);
    CHECK(a.robot[1] == st.ee.y);
    CHECK(a.robot[2] == 0.0);
  }
}

TEST_CASE("texture seed perturbs only the obstacle channel") {
  EnvSpec s = generate_env_family(1, 6).front();
  const WorldState st = reset(s, 1);
  const ObsGrid a = render_observation(s, st);
  s.texture_seed ^= 0x1234;
  const ObsGrid b = render_observation(s, st);
  bool differs = false;
  for (int i = 0; i < kGridSize * kGridSize; ++i) {
    if (a.cells[i] != b.cells[i]) differs = true;
    CHECK((a.cells[i] > 0) == (b.cells[i] > 0));
  }
  CHECK(differs);
  for (int i = kGridSize * kGridSize; i < kObsCells; ++i) CHECK(a.cells[i] == b.cells[i]);
}

TEST_CASE("inject_disturbance") {
  const auto family = generate_env_family(6, 9);
  for (const EnvSpec& s : family) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const WorldState st = reset(s, seed);
      const WorldState d = inject_disturbance(s, st, seed + 100);
      CHECK(d == inject_disturbance(s, st, seed + 100));
      CHECK(std::abs(d.object.x - st.object.x) <= 0.1 + 1e-12);
      CHECK(std::abs(d.object.y - st.object.y) <= 0.1 + 1e-12);
      CHECK(d.ee == st.ee);
      CHECK(d.gripper_open == st.gripper_open);
      CHECK(d.carried == st.carried);
      CHECK(d.step_count == st.step_count);
      CHECK_FALSE(inside_any(s, d.object));
    }
    WorldState carried = reset(s, 0);
    carried.carried = true;
    CHECK_THROWS_AS(inject_disturbance(s, carried, 1), ContractViolation);
  }
}

TEST_CASE("env spec file round trip is lossless") {
  const auto family = generate_env_family(12, 21);
  const std::string text = to_jsonl(family);
  CHECK(parse_env_jsonl(text) == family);
  CHECK(std::count(text.begin(), text.end(), '\n') == 12);
  CHECK_THROWS(parse_env_jsonl("{\"env_id\": 3}\n"));
}

TEST_CASE("make_open_spec rejects long routes") {
  const EnvSpec s = make_open_spec("open", {0.35, 0.5}, {0.7, 0.5});
  CHECK(s.obstacles.empty());
  CHECK(is_feasible(s));
  CHECK_THROWS_AS(make_open_spec("far", {0.05, 0.05}, {0.95, 0.95}),
                  ContractViolation);
}

TEST_CASE("flatten round trip") {
  const EnvSpec s = generate_env_family(1, 2).front();
  WorldState st = reset(s, 4);
  st.step_count = 17;
  CHECK(unflatten(flatten(st)) == st);
}
