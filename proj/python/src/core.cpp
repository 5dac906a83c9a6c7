// casher._core: Python bindings for environments, the expert, the RL math
// and policy evaluation.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "casher/distill.hpp"
#include "casher/envio.hpp"
#include "casher/errors.hpp"
#include "casher/evalharness.hpp"
#include "casher/expert.hpp"
#include "casher/ppo_bc.hpp"

namespace py = pybind11;
using namespace casher;

namespace {

py::tuple vec(Vec2 v) { return py::make_tuple(v.x, v.y); }

std::vector<double> rates_of(const EvalReport& r) {
  std::vector<double> out;
  for (std::size_t i = 0; i < r.successes.size(); ++i) out.push_back(r.rate(i));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Amortized data collection for generalist policies (desk scale).";

  auto error = py::register_exception<Error>(m, "CasherError", PyExc_RuntimeError);
  py::register_exception<ContractViolation>(m, "ContractViolation", error);
  py::register_exception<ConfigError>(m, "ConfigError", error);
  py::register_exception<FormatError>(m, "FormatError", error);
  py::register_exception<Infeasible>(m, "Infeasible", error);
  py::register_exception<TeacherTooWeak>(m, "TeacherTooWeak", error);

  m.attr("NUM_ACTIONS") = kNumActions;
  m.attr("EPISODE_LENGTH") = kEpisodeLength;
  m.attr("GRID_SIZE") = kGridSize;
  m.attr("OBS_DIM") = kObsDim;

  py::class_<EnvSpec>(m, "EnvSpec")
      .def_readonly("env_id", &EnvSpec::env_id)
      .def_property_readonly("num_obstacles",
                             [](const EnvSpec& s) { return s.obstacles.size(); })
      .def("to_json", [](const EnvSpec& s) { return to_json(s).dump(); })
      .def_static("from_json",
                  [](const std::string& text) {
                    return env_spec_from_json(nlohmann::json::parse(text));
                  })
      .def("__eq__", [](const EnvSpec& a, const EnvSpec& b) { return a == b; })
      .def("__repr__", [](const EnvSpec& s) { return "<EnvSpec " + s.env_id + ">"; });

  py::class_<WorldState>(m, "WorldState")
      .def_property_readonly("ee", [](const WorldState& s) { return vec(s.ee); })
      .def_property_readonly("object", [](const WorldState& s) { return vec(s.object); })
      .def_readonly("carried", &WorldState::carried)
      .def_readonly("gripper_open", &WorldState::gripper_open)
      .def_readonly("step_count", &WorldState::step_count)
      .def("flatten", [](const WorldState& s) { return flatten(s); })
      .def("__eq__", [](const WorldState& a, const WorldState& b) { return a == b; });

  m.def("generate_env_family", &generate_env_family, py::arg("count"),
        py::arg("family_seed"));
  m.def("make_open_spec",
        [](std::string id, std::pair<double, double> object, std::pair<double, double> goal) {
          return make_open_spec(std::move(id), {object.first, object.second},
                                {goal.first, goal.second});
        },
        py::arg("env_id"), py::arg("object"), py::arg("goal"));
  m.def("read_env_file", &read_env_file, py::arg("path"));
  m.def("write_env_file", &write_env_file, py::arg("path"), py::arg("specs"));

  m.def("reset", &reset, py::arg("spec"), py::arg("episode_seed"));
  m.def("step",
        [](const EnvSpec& spec, const WorldState& s, int action) {
          const StepResult r = step(spec, s, action);
          return py::make_tuple(r.state, r.reward, r.done);
        },
        py::arg("spec"), py::arg("state"), py::arg("action"));
  m.def("is_success", &is_success, py::arg("spec"), py::arg("state"));
  m.def("state_features", &state_features, py::arg("spec"), py::arg("state"));
  m.def("render_observation",
        [](const EnvSpec& spec, const WorldState& s, std::optional<std::uint64_t> noise) {
          const ObsGrid g = render_observation(spec, s, noise);
          py::array_t<double> grid({kObsChannels, kGridSize, kGridSize});
          std::copy(g.cells.begin(), g.cells.end(), grid.mutable_data());
          py::array_t<double> robot(kRobotStateDim);
          std::copy(g.robot.begin(), g.robot.end(), robot.mutable_data());
          return py::make_tuple(grid, robot);
        },
        py::arg("spec"), py::arg("state"), py::arg("noise_seed") = std::nullopt,
        "Returns (grid[3,16,16], robot[3]).");

  m.def("expert_actions",
        [](const EnvSpec& spec, int count, std::uint64_t seed) {
          std::vector<std::vector<int>> out;
          for (const Trajectory& t : collect_demonstrations(spec, count, seed)) {
            std::vector<int> a;
            for (const Transition& tr : t.steps) a.push_back(tr.action);
            out.push_back(std::move(a));
          }
          return out;
        },
        py::arg("spec"), py::arg("count"), py::arg("seed"),
        "Action sequences of successful expert demonstrations.");

  m.def("gae_advantages",
        [](std::vector<double> r, std::vector<double> v, std::vector<std::uint8_t> d,
           double bootstrap, double gamma, double lambda) {
          return gae_advantages(r, v, d, bootstrap, gamma, lambda);
        },
        py::arg("rewards"), py::arg("values"), py::arg("dones"), py::arg("bootstrap_value"),
        py::arg("gamma") = 0.99, py::arg("lam") = 0.95);
  m.def("clipped_surrogate", &clipped_surrogate, py::arg("ratio"), py::arg("advantage"),
        py::arg("epsilon") = 0.2);

  m.def("evaluate_expert",
        [](const std::vector<EnvSpec>& specs, int rollouts, std::uint64_t seed) {
          ExpertActor expert;
          return rates_of(evaluate_success_rate(expert, specs, rollouts, seed, "expert"));
        },
        py::arg("specs"), py::arg("rollouts_per_env"), py::arg("seed"));
  m.def("evaluate_constant",
        [](const std::vector<EnvSpec>& specs, int action, int rollouts, std::uint64_t seed) {
          ConstantActor a(action);
          return rates_of(evaluate_success_rate(a, specs, rollouts, seed, "constant"));
        },
        py::arg("specs"), py::arg("action"), py::arg("rollouts_per_env"), py::arg("seed"));
  m.def("evaluate_checkpoint",
        [](const std::filesystem::path& path, const std::vector<EnvSpec>& specs, int rollouts,
           std::uint64_t seed, bool greedy) {
          if (checkpoint_kind(path) == CheckpointKind::kGeneralist)
            return rates_of(evaluate_success_rate(read_generalist_policy(path), specs,
                                                  rollouts, seed, greedy));
          const StatePolicy p = read_state_policy(path);
          StatePolicyActor a(p, greedy ? ActionMode::kGreedy : ActionMode::kSample);
          return rates_of(evaluate_success_rate(a, specs, rollouts, seed));
        },
        py::arg("path"), py::arg("specs"), py::arg("rollouts_per_env"), py::arg("seed"),
        py::arg("greedy") = true, "Per-env success rates of a saved policy.");
}
