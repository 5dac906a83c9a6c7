#include <sstream>

#include "casher/errors.hpp"
#include "casher/flywheel.hpp"
#include "doctest.h"

using namespace casher;

namespace {

// Succeeds on every other episode it is handed: the expert on even episodes,
// a gripper that never moves on odd ones.
class AlternatingActor : public Actor {
 public:
  void begin_episode(const EnvSpec& spec, const WorldState& initial,
                     std::uint64_t episode_seed) override {
    use_expert_ = episodes_++ % 2 == 0;
    expert_.begin_episode(spec, initial, episode_seed);
  }
  int act(const EnvSpec& spec, const WorldState& state, Rng& rng) override {
    if (use_expert_) return expert_.act(spec, state, rng);
    return static_cast<int>(Action::kGrasp);
  }

 private:
  ExpertActor expert_;
  long episodes_ = 0;
  bool use_expert_ = false;
};

// Succeeds on a fixed number of the first episodes of each block.
class QuotaActor : public Actor {
 public:
  QuotaActor(int quota, int block) : quota_(quota), block_(block) {}
  void begin_episode(const EnvSpec& spec, const WorldState& initial,
                     std::uint64_t episode_seed) override {
    use_expert_ = episodes_++ % block_ < quota_;
    expert_.begin_episode(spec, initial, episode_seed);
  }
  int act(const EnvSpec& spec, const WorldState& state, Rng& rng) override {
    if (use_expert_) return expert_.act(spec, state, rng);
    return static_cast<int>(Action::kGrasp);
  }

 private:
  ExpertActor expert_;
  int quota_;
  int block_;
  long episodes_ = 0;
  bool use_expert_ = false;
};

}  // namespace

TEST_CASE("below_threshold is strict") {
  const auto specs = generate_env_family(4, 2);
  const std::vector<double> rates{0.5, 0.49, 0.51, 0.0};
  const auto ids = below_threshold(specs, rates, 0.5);
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == specs[1].env_id);
  CHECK(ids[1] == specs[3].env_id);
  CHECK(below_threshold(specs, rates, 0.0).empty());
  CHECK(below_threshold(specs, std::vector<double>{1, 1, 1, 1}, 1.0).empty());
  CHECK_THROWS_AS(below_threshold(specs, std::vector<double>{1.0}, 0.5), ContractViolation);
}

TEST_CASE("failed_environments excludes envs exactly at r") {
  const auto specs = generate_env_family(3, 2);
  AlternatingActor half;
  CHECK(failed_environments(half, specs, 0.5, 20, 1).empty());

  AlternatingActor again;
  const auto strict = failed_environments(again, specs, 0.51, 20, 1);
  CHECK(strict.size() == 3);

  // 9 of 20 is below 0.5, 10 of 20 is not.
  QuotaActor nine(9, 20);
  CHECK(failed_environments(nine, specs, 0.5, 20, 1).size() == 3);
  QuotaActor ten(10, 20);
  CHECK(failed_environments(ten, specs, 0.5, 20, 1).empty());
}

TEST_CASE("ledger csv layout") {
  BatchLedgerRow a;
  a.batch = 1;
  a.env_ids = {"e0", "e1"};
  a.human_demo_count = 20;
  a.pi_s1_success = {1.0, 0.25};
  a.failed = {"e0", "e1"};
  a.heldout_success = 0.125;
  a.dataset_envs = 2;
  a.dataset_trajectories = 200;
  a.envs = {EnvLedgerRow{1, "e0", 0, 0, 1.0, true, false, "pi_s2", 100},
            EnvLedgerRow{1, "e1", 0, 0, 0.25, true, false, "pi_s2", 100}};
  BatchLedgerRow b = a;
  b.batch = 2;
  b.human_demo_count = 0;
  b.failed.clear();
  b.heldout_success.reset();
  std::ostringstream out;
  write_ledger_csv(out, {a, b});
  const std::string text = out.str();
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  CHECK(line == "# casher ledger v1");
  std::getline(in, line);
  CHECK(line ==
        "batch,env_ids,human_demo_count,model_demo_count,model_demo_attempts,"
        "rl_env_steps,pi_s1_success,failed_envs,heldout_success,dataset_envs,"
        "dataset_trajectories");
  std::getline(in, line);
  CHECK(line == "1,e0;e1,20,0,0,0,1.0000;0.2500,e0;e1,0.1250,2,200");
  std::getline(in, line);
  CHECK(line == "2,e0;e1,0,0,0,0,1.0000;0.2500,,,2,200");

  std::ostringstream env_out;
  write_env_ledger_csv(env_out, {a});
  CHECK(env_out.str().rfind("# casher env-ledger v1\n", 0) == 0);
  CHECK(env_out.str().find("1,e1,0,0,0.2500,1,0,pi_s2,100") != std::string::npos);
}

TEST_CASE("flywheel config validation") {
  FlywheelConfig cfg;
  CHECK(cfg.batch_size_K == 5);
  CHECK(cfg.success_threshold_r == 0.5);
  CHECK(cfg.demos_per_env_human == 10);
  CHECK_NOTHROW(cfg.validate());
  cfg.success_threshold_r = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = FlywheelConfig{};
  cfg.batch_size_K = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = FlywheelConfig{};
  cfg.expert.multimodality = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
}

TEST_CASE("run_flywheel rejects a family smaller than one batch") {
  const auto family = generate_env_family(3, 2);
  FlywheelConfig cfg;
  CHECK_THROWS_AS(run_flywheel(family, cfg, 1), ContractViolation);
}

TEST_CASE("scanned_finetune refuses a policy with no zero-shot success") {
  FlywheelConfig cfg;
  cfg.distill.embedding_dim = 8;
  cfg.distill.encoder_hidden = {8};
  cfg.distill.head_hidden = {8};
  GeneralistPolicy stuck = make_generalist(cfg.distill, 1);
  stuck.head.set_zero();
  stuck.head.bias(stuck.head.spec().num_layers() - 1)(static_cast<int>(Action::kGrasp)) = 50.0;
  const EnvSpec spec = generate_env_family(1, 3).front();
  HumanDemonstrator human;
  CHECK_THROWS_AS(scanned_finetune(stuck, spec, cfg, 1, &human), ZeroShotTooWeak);
  CHECK(human.demos_provided() == 0);
}
