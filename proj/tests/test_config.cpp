#include <filesystem>
#include <fstream>

#include "casher/config.hpp"
#include "casher/errors.hpp"
#include "doctest.h"

using namespace casher;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults") {
  const ExperimentConfig c = parse_config(std::nullopt, {}, {});
  CHECK(c.seed == 1);
  CHECK(c.parallelism == 1);
  CHECK(c.ppo.learning_rate == 1e-3);
  CHECK(c.ppo.gamma_discount == 0.99);
  CHECK(c.ppo.gae_lambda == 0.95);
  CHECK(c.distill.chunk_trajs_per_env == 5);
  CHECK(c.flywheel.batch_size_K == 5);
  CHECK(c.flywheel.demos_per_env_human == 10);
  CHECK(c.eval.disturbance_step == 10);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("precedence: file, then environment, then command line") {
  const fs::path file = write_temp("casher_cfg_prec.json",
                                   R"({"seed": 5, "ppo": {"learning_rate": 0.01, "epochs": 3}})");
  ExperimentConfig c = parse_config(file, {}, {});
  CHECK(c.seed == 5);
  CHECK(c.ppo.learning_rate == 0.01);
  CHECK(c.ppo.epochs == 3);
  CHECK(c.ppo.beta == 0.5);

  const std::map<std::string, std::string> env{
      {"CASHER_SEED", "9"}, {"CASHER_OVERRIDES", "ppo.epochs=4;run_name=from-env"}};
  c = parse_config(file, {}, env);
  CHECK(c.seed == 9);
  CHECK(c.ppo.epochs == 4);
  CHECK(c.run_name == "from-env");

  c = parse_config(file, {"seed=11", "ppo.epochs=6", "distill.encoder_hidden=[32,16]"}, env);
  CHECK(c.seed == 11);
  CHECK(c.ppo.epochs == 6);
  CHECK(c.distill.encoder_hidden == std::vector<int>{32, 16});
  CHECK(c.flywheel.distill.encoder_hidden == std::vector<int>{32, 16});
  CHECK(c.run_name == "from-env");
  CHECK(c.run_dir() == fs::path("runs") / "from-env");
  fs::remove(file);
}

TEST_CASE("unknown keys and bad values are rejected with the key path") {
  CHECK(error_of([] { parse_config(std::nullopt, {"ppo.gama=0.5"}, {}); }) ==
        "unknown config key 'ppo.gama'");
  CHECK(error_of([] { parse_config(std::nullopt, {"ppo"}, {}); }).find("key=value") !=
        std::string::npos);
  CHECK(error_of([] { parse_config(std::nullopt, {"ppo=3"}, {}); }).find("section") !=
        std::string::npos);
  CHECK(error_of([] { parse_config(std::nullopt, {"ppo.epochs=\"ten\""}, {}); })
            .find("ppo.epochs") != std::string::npos);

  const fs::path file = write_temp("casher_cfg_bad.json", R"({"distill": {"per_envv": 3}})");
  CHECK(error_of([&] { parse_config(file, {}, {}); }).find("distill.per_envv") !=
        std::string::npos);
  fs::remove(file);
  const fs::path broken = write_temp("casher_cfg_broken.json", "{ not json");
  CHECK_THROWS_AS(parse_config(broken, {}, {}), ConfigError);
  fs::remove(broken);
  CHECK_THROWS_AS(parse_config(fs::path("/nonexistent/casher.json"), {}, {}), ConfigError);
}

TEST_CASE("to_json round trip") {
  ExperimentConfig c = parse_config(std::nullopt, {"seed=123", "flywheel.rl_budget=5000",
                                                   "expert.multimodality=2"},
                                    {});
  const ExperimentConfig back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.flywheel.rl_budget == 5000);
  CHECK(back.flywheel.expert.multimodality == 2);

  const fs::path p = fs::temp_directory_path() / "casher_cfg_written.json";
  write_config(p, c);
  CHECK(to_json(parse_config(p, {}, {})) == to_json(c));
  fs::remove(p);
}

TEST_CASE("validation") {
  CHECK_THROWS_AS(parse_config(std::nullopt, {"parallelism=2"}, {}), ConfigError);
  CHECK_THROWS_AS(parse_config(std::nullopt, {"eval.disturbance_step=60"}, {}), ConfigError);
  ExperimentConfig c;
  c.parallelism = 2;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
}
