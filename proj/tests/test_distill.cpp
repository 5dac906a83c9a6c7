#include <cmath>
#include <set>

#include "casher/distill.hpp"
#include "casher/errors.hpp"
#include "casher/expert.hpp"
#include "doctest.h"

using namespace casher;

namespace {

struct Fixture {
  std::vector<EnvSpec> specs;
  TrajectoryDataset dataset;
};

// Expert data with an uneven number of trajectories per env.
const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture out;
    out.specs = generate_env_family(4, 12);
    const int counts[] = {7, 12, 3, 10};
    for (std::size_t i = 0; i < out.specs.size(); ++i)
      for (Trajectory& t : collect_demonstrations(out.specs[i], counts[i], i))
        out.dataset.add(std::move(t));
    return out;
  }();
  return f;
}

DistillConfig small_config() {
  DistillConfig cfg;
  cfg.embedding_dim = 8;
  cfg.encoder_hidden = {16};
  cfg.head_hidden = {16};
  cfg.minibatch_size = 32;
  cfg.max_epochs = 4;
  cfg.fewshot_epochs = 3;
  return cfg;
}

Eigen::MatrixXd observations(const EnvSpec& spec, const std::vector<Trajectory>& trajs,
                             std::vector<int>& actions) {
  std::vector<const Transition*> steps;
  for (const Trajectory& t : trajs)
    for (const Transition& tr : t.steps) steps.push_back(&tr);
  Eigen::MatrixXd obs(kObsDim, static_cast<Eigen::Index>(steps.size()));
  const ObservationRenderer r(spec);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    r.render_into(steps[i]->state, std::nullopt, obs.col(static_cast<Eigen::Index>(i)).data());
    actions.push_back(steps[i]->action);
  }
  return obs;
}

}  // namespace

TEST_CASE("generate_distill_dataset") {
  const auto specs = generate_env_family(2, 4);
  ExpertActor expert;
  const TrajectoryDataset ds = generate_distill_dataset(expert, specs, 10, 3);
  for (const EnvSpec& s : specs) {
    const EnvCounts c = ds.counts(s.env_id);
    CHECK(c.trajectories == 10);
    CHECK(c.clean == 5);
    CHECK(c.augmented == 5);
    for (const Trajectory& t : ds.trajectories(s.env_id)) CHECK(t.successful());
  }
  ExpertActor again;
  CHECK(generate_distill_dataset(again, specs, 10, 3) == ds);

  ConstantActor idle(static_cast<int>(Action::kGrasp));
  try {
    generate_distill_dataset(idle, specs, 2, 1, 3);
    FAIL("expected TeacherTooWeak");
  } catch (const TeacherTooWeak& e) {
    CHECK(e.env_id() == specs[0].env_id);
    CHECK(e.success_rate() == 0.0);
  }
}

TEST_CASE("observations are re-rendered exactly") {
  const auto specs = generate_env_family(1, 4);
  ExpertActor expert;
  const TrajectoryDataset ds = generate_distill_dataset(expert, specs, 4, 3);
  const ObservationSource source(ds, specs);
  std::vector<SampleRef> refs;
  for (const Trajectory& t : ds.trajectories(specs[0].env_id))
    for (std::uint32_t k = 0; k < t.steps.size(); ++k) refs.push_back({&t, k});
  Eigen::MatrixXd obs;
  std::vector<int> actions;
  source.gather(refs, obs, actions);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Trajectory& t = *refs[i].trajectory;
    const ObsGrid g = render_observation(specs[0], t.steps[refs[i].step].state, t.observation_noise());
    for (int k = 0; k < kObsCells; ++k) REQUIRE(obs(k, static_cast<Eigen::Index>(i)) == g.cells[k]);
    for (int k = 0; k < kRobotStateDim; ++k)
      REQUIRE(obs(kObsCells + k, static_cast<Eigen::Index>(i)) == g.robot[k]);
    CHECK(actions[i] == t.steps[refs[i].step].action);
  }
  const std::vector<EnvSpec> none;
  CHECK_THROWS_AS(ObservationSource(ds, none), ContractViolation);
}

TEST_CASE("balanced minibatches cover every pair exactly once") {
  const Fixture& f = fixture();
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    for (int mb_size : {1, 17, 128}) {
      const auto batches = balanced_minibatches(f.dataset, 5, mb_size, seed);
      std::set<std::pair<const Trajectory*, std::uint32_t>> seen;
      std::size_t total = 0;
      for (const auto& b : batches) {
        CHECK(static_cast<int>(b.size()) <= mb_size);
        for (const SampleRef& r : b) {
          seen.insert({r.trajectory, r.step});
          ++total;
        }
      }
      CHECK(total == static_cast<std::size_t>(f.dataset.transitions()));
      CHECK(seen.size() == total);
    }
  }
}

TEST_CASE("balanced minibatches: each chunk draws from every env with data left") {
  const Fixture& f = fixture();
  // With a minibatch larger than any chunk every minibatch is one chunk.
  const auto batches = balanced_minibatches(f.dataset, 5, 1 << 20, 9);
  std::map<std::string, int> used;
  for (const auto& b : batches) {
    std::map<std::string, std::set<const Trajectory*>> per_env;
    for (const SampleRef& r : b) per_env[r.trajectory->env_id].insert(r.trajectory);
    for (const auto& [id, trajs] : f.dataset.by_env()) {
      const int remaining = static_cast<int>(trajs.size()) - used[id];
      if (remaining <= 0) {
        CHECK(per_env.count(id) == 0);
        continue;
      }
      CHECK(static_cast<int>(per_env[id].size()) == std::min(5, remaining));
      used[id] += static_cast<int>(per_env[id].size());
    }
  }
  CHECK(batches.size() == 3);  // ceil(12 / 5) chunks
}

TEST_CASE("distill_update: closed-form losses") {
  const Fixture& f = fixture();
  std::vector<int> actions;
  const Eigen::MatrixXd obs =
      observations(f.specs[0], f.dataset.trajectories(f.specs[0].env_id), actions);

  DistillConfig cfg = small_config();
  GeneralistPolicy uniform = make_generalist(cfg, 1);
  uniform.head.set_zero();
  CHECK(std::abs(generalist_nll(uniform, obs, actions, nullptr) - std::log(6.0)) <= 1e-12);

  GeneralistPolicy sure = make_generalist(cfg, 1);
  sure.head.set_zero();
  const int last = sure.head.spec().num_layers() - 1;
  sure.head.bias(last)(3) = 1000.0;
  const std::vector<int> threes(actions.size(), 3);
  GeneralistGradient g{ParamVector(sure.encoder.spec()), ParamVector(sure.head.spec())};
  CHECK(generalist_nll(sure, obs, threes, &g) == 0.0);
  // exp(-1000) leaves denormal residue only.
  CHECK(g.encoder.values().cwiseAbs().maxCoeff() <= 1e-300);
  CHECK(g.head.values().cwiseAbs().maxCoeff() <= 1e-300);
}

TEST_CASE("distill_update: lr 0 and frozen encoder") {
  const Fixture& f = fixture();
  std::vector<int> actions;
  const Eigen::MatrixXd obs =
      observations(f.specs[1], f.dataset.trajectories(f.specs[1].env_id), actions);
  const DistillConfig cfg = small_config();
  GeneralistPolicy p = make_generalist(cfg, 2);
  const GeneralistPolicy before = p;
  DistillOptimizer opt;
  const double loss = distill_update(p, opt, obs, actions, 0.0);
  CHECK(p == before);
  CHECK(loss > 0.0);

  p.freeze_encoder = true;
  DistillOptimizer opt2;
  for (int k = 0; k < 5; ++k) distill_update(p, opt2, obs, actions, 1e-2, 5.0);
  CHECK(p.encoder == before.encoder);
  CHECK_FALSE(p.head == before.head);

  GeneralistPolicy q = before;
  DistillOptimizer opt3;
  double first = distill_update(q, opt3, obs, actions, 1e-3);
  double last = first;
  for (int k = 0; k < 20; ++k) last = distill_update(q, opt3, obs, actions, 1e-3);
  CHECK(last < first);
  CHECK_FALSE(q.encoder == before.encoder);
}

TEST_CASE("split_validation holds out whole trajectories") {
  const Fixture& f = fixture();
  const auto [train, val] = split_validation(f.dataset, 0.1, 4);
  for (const auto& [id, trajs] : f.dataset.by_env()) {
    std::set<std::uint32_t> all;
    const auto t_it = train.find(id);
    const auto v_it = val.find(id);
    std::size_t nt = t_it == train.end() ? 0 : t_it->second.size();
    std::size_t nv = v_it == val.end() ? 0 : v_it->second.size();
    if (t_it != train.end()) all.insert(t_it->second.begin(), t_it->second.end());
    if (v_it != val.end()) all.insert(v_it->second.begin(), v_it->second.end());
    CHECK(all.size() == trajs.size());
    CHECK(nt + nv == trajs.size());
    // Rounded share of trajectories, keeping at least one for training.
    const std::size_t want = std::min<std::size_t>(
        static_cast<std::size_t>(std::lround(0.1 * trajs.size())), trajs.size() - 1);
    CHECK(nv == want);
  }
  const auto [t2, v2] = split_validation(f.dataset, 0.1, 4);
  CHECK(t2 == train);
  CHECK(v2 == val);
}

TEST_CASE("train_generalist is deterministic and improves validation likelihood") {
  const Fixture& f = fixture();
  const DistillConfig cfg = small_config();
  const GeneralistPolicy init = make_generalist(cfg, 5);
  const auto a = train_generalist(init, f.dataset, f.specs, cfg, 7);
  const auto b = train_generalist(init, f.dataset, f.specs, cfg, 7);
  CHECK(a.policy == b.policy);
  CHECK(a.best_validation_nll <= a.initial_validation_nll);
  CHECK(a.epochs_run >= 1);
  CHECK(a.epochs_run <= cfg.max_epochs);
  CHECK(a.history.size() == static_cast<std::size_t>(a.epochs_run));
}

TEST_CASE("finetune_fewshot trains only the head") {
  const Fixture& f = fixture();
  const DistillConfig cfg = small_config();
  const GeneralistPolicy base = make_generalist(cfg, 6);
  const auto& demos = f.dataset.trajectories(f.specs[2].env_id);
  const GeneralistPolicy tuned = finetune_fewshot(base, f.specs[2], demos, cfg, 1);
  CHECK(tuned.encoder == base.encoder);
  CHECK(tuned.freeze_encoder);
  CHECK_FALSE(tuned.head == base.head);
  CHECK(finetune_fewshot(base, f.specs[2], demos, cfg, 1) == tuned);

  CHECK_THROWS_AS(finetune_fewshot(base, f.specs[2], {}, cfg, 1), ContractViolation);
  const auto& other = f.dataset.trajectories(f.specs[0].env_id);
  CHECK_THROWS_AS(finetune_fewshot(base, f.specs[2], other, cfg, 1), ContractViolation);
}

TEST_CASE("config validation") {
  DistillConfig cfg;
  CHECK(cfg.chunk_trajs_per_env == 5);
  CHECK(cfg.per_env == 100);
  CHECK_NOTHROW(cfg.validate());
  cfg.validation_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = DistillConfig{};
  cfg.minibatch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
}
