// casher: command-line front end for the collection pipeline.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "casher/config.hpp"
#include "casher/dataset.hpp"
#include "casher/distill.hpp"
#include "casher/envio.hpp"
#include "casher/errors.hpp"
#include "casher/evalharness.hpp"
#include "casher/expert.hpp"
#include "casher/flywheel.hpp"
#include "casher/log.hpp"
#include "casher/ppo_bc.hpp"
#include "casher/svg.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace casher;
using nlohmann::json;

namespace {

constexpr int kExitLibraryError = 3;
constexpr int kExitInternalError = 1;

// Collects the files a command produced for the run manifest.
class RunOutputs {
 public:
  RunOutputs(std::string command, const ExperimentConfig& cfg)
      : command_(std::move(command)), cfg_(cfg) {}

  const ExperimentConfig& config() const { return cfg_; }
  fs::path dir() const { return cfg_.run_dir(); }

  // Resolves `explicit_path` or a default file name inside the run dir.
  fs::path path(const std::string& explicit_path, const std::string& name) const {
    return explicit_path.empty() ? dir() / name : fs::path(explicit_path);
  }
  void produced(const fs::path& p) { files_.push_back(p); }

  void finish() {
    fs::create_directories(dir());
    const fs::path config_path = dir() / "config.json";
    write_config(config_path, cfg_);
    json files = json::array();
    for (const fs::path& p : files_) {
      json entry{{"path", p.generic_string()}};
      if (fs::is_regular_file(p)) entry["bytes"] = fs::file_size(p);
      files.push_back(entry);
    }
    const json manifest{
        {"command", command_},
        {"config", config_path.generic_string()},
        {"schema_versions",
         {{"dataset", kDatasetSchemaVersion},
          {"ledger", kLedgerSchemaVersion},
          {"checkpoint", kCheckpointVersion}}},
        {"files", files}};
    std::ofstream out(dir() / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << '\n';
  }

 private:
  std::string command_;
  ExperimentConfig cfg_;
  std::vector<fs::path> files_;
};

void prepare_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::ofstream open_out(const fs::path& p) {
  prepare_parent(p);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw FormatError("cannot write " + p.string());
  return out;
}

std::vector<EnvSpec> load_envs(const std::string& file,
                               const ExperimentConfig& cfg) {
  if (!file.empty()) return read_env_file(file);
  return generate_env_family(cfg.env.count, cfg.env.family_seed);
}

const EnvSpec& find_env(const std::vector<EnvSpec>& specs, const std::string& id) {
  for (const EnvSpec& s : specs)
    if (s.env_id == id) return s;
  throw ContractViolation("no environment '" + id + "' in the env file");
}

std::vector<EnvSpec> select_envs(const std::vector<EnvSpec>& specs,
                                 const std::string& id) {
  if (id.empty()) return specs;
  return {find_env(specs, id)};
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"casher: amortized data collection for generalist policies"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::vector<std::string> overrides;
  std::string run_name, output_dir;
  bool verbose = false;
  app.add_option("--config", config_file, "JSON experiment config");
  app.add_option("--set", overrides, "Override a config key (key=value)")
      ->allow_extra_args(false)
      ->take_all();
  app.add_option("--output-dir", output_dir, "Root directory for run outputs");
  app.add_option("--run-name", run_name, "Run directory name");
  app.add_flag("-v,--verbose", verbose, "Progress messages on stderr");

  // gen-envs
  auto* gen = app.add_subcommand("gen-envs", "Generate an environment family");
  int gen_count = -1;
  long long gen_seed = -1;
  std::string gen_out;
  gen->add_option("--count", gen_count, "Number of environments");
  gen->add_option("--seed", gen_seed, "Family seed");
  gen->add_option("-o,--output", gen_out, "Env file (default <run>/envs.jsonl)");

  // collect-demos
  auto* demos = app.add_subcommand("collect-demos", "Expert demonstrations");
  std::string demos_envs, demos_out, demos_env_id;
  int demos_per_env = 10;
  demos->add_option("--envs", demos_envs, "Env file")->required();
  demos->add_option("--env-id", demos_env_id, "Only this environment");
  demos->add_option("--per-env", demos_per_env, "Demonstrations per env");
  demos->add_option("-o,--output", demos_out, "Dataset dir (default <run>/demos)");

  // train-rl
  auto* rl = app.add_subcommand("train-rl", "Demo-bootstrapped PPO");
  std::string rl_envs, rl_demos, rl_out, rl_env_id;
  long rl_budget = 200000;
  rl->add_option("--envs", rl_envs, "Env file")->required();
  rl->add_option("--env-id", rl_env_id, "Only this environment");
  rl->add_option("--demos", rl_demos, "Demonstration dataset dir");
  rl->add_option("--budget", rl_budget, "Environment steps");
  rl->add_option("-o,--output", rl_out, "Checkpoint (default <run>/state_policy.ckpt)");

  // distill
  auto* dist = app.add_subcommand("distill", "Teacher-student distillation");
  std::string dist_envs, dist_teacher, dist_dataset, dist_out, dist_init;
  dist->add_option("--envs", dist_envs, "Env file")->required();
  dist->add_option("--teacher", dist_teacher,
                   "State-policy checkpoint, or 'expert'");
  dist->add_option("--dataset", dist_dataset,
                   "Existing dataset dir (skips generation)");
  dist->add_option("--init", dist_init, "Generalist checkpoint to continue from");
  dist->add_option("-o,--output", dist_out, "Checkpoint (default <run>/generalist.ckpt)");

  // flywheel
  auto* fly = app.add_subcommand("flywheel", "Batched amortized collection");
  std::string fly_envs;
  fly->add_option("--envs", fly_envs, "Env file (default: generate from config)");

  // finetune-scan
  auto* scan = app.add_subcommand("finetune-scan", "Scanned-deployment fine-tuning");
  std::string scan_policy, scan_envs, scan_env_id, scan_out;
  scan->add_option("--policy", scan_policy, "Generalist checkpoint")->required();
  scan->add_option("--envs", scan_envs, "Env file")->required();
  scan->add_option("--env-id", scan_env_id, "Target environment")->required();
  scan->add_option("-o,--output", scan_out, "Checkpoint (default <run>/scanned.ckpt)");

  // finetune-fewshot
  auto* few = app.add_subcommand("finetune-fewshot", "Head-only few-shot fine-tuning");
  std::string few_policy, few_envs, few_env_id, few_out;
  int few_demos = 10;
  few->add_option("--policy", few_policy, "Generalist checkpoint")->required();
  few->add_option("--envs", few_envs, "Env file")->required();
  few->add_option("--env-id", few_env_id, "Target environment")->required();
  few->add_option("--demos", few_demos, "Expert demonstrations to use");
  few->add_option("-o,--output", few_out, "Checkpoint (default <run>/fewshot.ckpt)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a policy");
  std::string ev_policy, ev_envs, ev_env_id, ev_mode = "standard", ev_out;
  ev->add_option("--policy", ev_policy,
                 "Checkpoint (state or generalist), or 'expert'")->required();
  ev->add_option("--envs", ev_envs, "Env file")->required();
  ev->add_option("--env-id", ev_env_id, "Only this environment");
  ev->add_option("--mode", ev_mode, "standard | disturbance | multi_object | all")
      ->check(CLI::IsMember({"standard", "disturbance", "multi_object", "all"}));
  ev->add_option("-o,--output", ev_out, "Output dir (default <run>)");

  // report
  auto* rep = app.add_subcommand("report", "Scaling report and plots");
  std::string rep_envs, rep_ledger, rep_out;
  std::vector<std::string> rep_checkpoints;
  rep->add_option("--envs", rep_envs, "Held-out env file");
  rep->add_option("--checkpoint", rep_checkpoints,
                  "COUNT=PATH generalist trained on COUNT envs")
      ->allow_extra_args(false)
      ->take_all();
  rep->add_option("--ledger", rep_ledger, "Flywheel ledger CSV to plot");
  rep->add_option("-o,--output", rep_out, "Output dir (default <run>)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (verbose) set_log_level(LogLevel::kInfo);
    std::vector<std::string> all_overrides = overrides;
    if (!output_dir.empty()) all_overrides.push_back("output_dir=" + output_dir);
    if (!run_name.empty()) all_overrides.push_back("run_name=" + run_name);
    if (gen->parsed()) {
      if (gen_count >= 0) all_overrides.push_back("env.count=" + std::to_string(gen_count));
      if (gen_seed >= 0) all_overrides.push_back("env.family_seed=" + std::to_string(gen_seed));
    }
    const std::optional<fs::path> file =
        config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file);
    const ExperimentConfig cfg = parse_config(file, all_overrides, read_environment());
    CLI::App* sub = app.get_subcommands().front();
    RunOutputs run(sub->get_name(), cfg);
    fs::create_directories(run.dir());

    if (gen->parsed()) {
      const fs::path out = run.path(gen_out, "envs.jsonl");
      prepare_parent(out);
      write_env_file(out, generate_env_family(cfg.env.count, cfg.env.family_seed));
      run.produced(out);
    } else if (demos->parsed()) {
      const auto specs = select_envs(read_env_file(demos_envs), demos_env_id);
      HumanDemonstrator human(cfg.expert);
      TrajectoryDataset ds;
      for (const EnvSpec& s : specs)
        for (Trajectory& t : human.collect(
                 s, demos_per_env, derive_seed(cfg.seed, {hash_string(s.env_id)})))
          ds.add(std::move(t));
      const fs::path out = run.path(demos_out, "demos");
      ds.save(out);
      run.produced(out / "manifest.json");
    } else if (rl->parsed()) {
      const auto specs = select_envs(read_env_file(rl_envs), rl_env_id);
      std::vector<Trajectory> demo_list;
      if (!rl_demos.empty()) {
        const TrajectoryDataset ds = TrajectoryDataset::load(rl_demos);
        for (const EnvSpec& s : specs)
          if (ds.contains(s.env_id))
            for (const Trajectory& t : ds.trajectories(s.env_id)) demo_list.push_back(t);
      }
      const StateTrainingResult r =
          train_state_policy(specs, demo_list, cfg.ppo, rl_budget, cfg.seed);
      const fs::path out = run.path(rl_out, "state_policy.ckpt");
      prepare_parent(out);
      write_checkpoint(out, r.policy);
      const fs::path metrics = run.dir() / "rl_metrics.csv";
      auto m = open_out(metrics);
      write_metrics_csv(m, r.metrics, specs);
      run.produced(out);
      run.produced(metrics);
      std::cout << json{{"best_success", r.best_success},
                        {"env_steps", r.env_steps},
                        {"iterations", r.iterations}}.dump()
                << '\n';
    } else if (dist->parsed()) {
      const auto specs = read_env_file(dist_envs);
      TrajectoryDataset ds;
      if (!dist_dataset.empty()) {
        ds = TrajectoryDataset::load(dist_dataset);
      } else {
        if (dist_teacher.empty())
          throw ContractViolation("distill needs --teacher or --dataset");
        if (dist_teacher == "expert") {
          ExpertActor expert(cfg.expert);
          ds = generate_distill_dataset(expert, specs, cfg.distill.per_env,
                                        cfg.seed, cfg.distill.attempt_factor);
        } else {
          ds = generate_distill_dataset(read_state_policy(dist_teacher), specs,
                                        cfg.distill.per_env, cfg.seed,
                                        cfg.distill.attempt_factor);
        }
        ds.save(run.dir() / "distill_data");
        run.produced(run.dir() / "distill_data" / "manifest.json");
      }
      const GeneralistPolicy init =
          dist_init.empty() ? make_generalist(cfg.distill, cfg.seed)
                            : read_generalist_policy(dist_init);
      const GeneralistTrainingResult r =
          train_generalist(init, ds, specs, cfg.distill, cfg.seed);
      const fs::path out = run.path(dist_out, "generalist.ckpt");
      prepare_parent(out);
      write_checkpoint(out, r.policy);
      run.produced(out);
      const fs::path hist = run.dir() / "distill_history.csv";
      auto h = open_out(hist);
      h << "epoch,train_nll,validation_nll\n";
      for (const DistillEpoch& e : r.history)
        h << e.epoch << ',' << e.train_nll << ',' << e.validation_nll << '\n';
      run.produced(hist);
    } else if (fly->parsed()) {
      const auto specs = load_envs(fly_envs, cfg);
      const FlywheelResult r = run_flywheel(specs, cfg.flywheel, cfg.seed);
      const fs::path ledger = run.dir() / "ledger.csv";
      const fs::path env_ledger = run.dir() / "env_ledger.csv";
      {
        auto o = open_out(ledger);
        write_ledger_csv(o, r.ledger);
        auto e = open_out(env_ledger);
        write_env_ledger_csv(e, r.ledger);
      }
      const fs::path ckpt = run.dir() / "generalist.ckpt";
      write_checkpoint(ckpt, r.policy);
      r.dataset.save(run.dir() / "dataset");
      for (const fs::path& p : {ledger, env_ledger, ckpt,
                                run.dir() / "dataset" / "manifest.json"})
        run.produced(p);
      std::cout << json{{"batches", r.ledger.size()},
                        {"expert_demos", r.expert_demos_consumed}}.dump()
                << '\n';
    } else if (scan->parsed()) {
      const auto specs = read_env_file(scan_envs);
      HumanDemonstrator audit(cfg.expert);
      const ScanResult r = scanned_finetune(read_generalist_policy(scan_policy),
                                            find_env(specs, scan_env_id),
                                            cfg.flywheel, cfg.seed, &audit);
      const fs::path out = run.path(scan_out, "scanned.ckpt");
      prepare_parent(out);
      write_checkpoint(out, r.policy);
      run.produced(out);
      std::cout << json{{"successes", r.successes_collected},
                        {"iterations", r.iterations},
                        {"rl_env_steps", r.rl_env_steps},
                        {"expert_demos", audit.demos_provided()}}.dump()
                << '\n';
    } else if (few->parsed()) {
      const auto specs = read_env_file(few_envs);
      const EnvSpec& spec = find_env(specs, few_env_id);
      HumanDemonstrator human(cfg.expert);
      const auto demo_list =
          human.collect(spec, few_demos, derive_seed(cfg.seed, {0xfe3u}));
      const GeneralistPolicy tuned = finetune_fewshot(
          read_generalist_policy(few_policy), spec, demo_list, cfg.distill, cfg.seed);
      const fs::path out = run.path(few_out, "fewshot.ckpt");
      prepare_parent(out);
      write_checkpoint(out, tuned);
      run.produced(out);
    } else if (ev->parsed()) {
      const auto specs = select_envs(read_env_file(ev_envs), ev_env_id);
      const fs::path out_dir = ev_out.empty() ? run.dir() : fs::path(ev_out);
      fs::create_directories(out_dir);
      std::unique_ptr<Actor> actor;
      std::optional<StatePolicy> state_policy;
      std::optional<GeneralistPolicy> generalist;
      const ActionMode mode = cfg.eval.deterministic_actions ? ActionMode::kGreedy
                                                            : ActionMode::kSample;
      if (ev_policy == "expert") {
        actor = std::make_unique<ExpertActor>(cfg.expert);
      } else if (checkpoint_kind(ev_policy) == CheckpointKind::kState) {
        state_policy = read_state_policy(ev_policy);
        actor = std::make_unique<StatePolicyActor>(*state_policy, mode);
      } else {
        generalist = read_generalist_policy(ev_policy);
        actor = std::make_unique<GeneralistActor>(*generalist, mode);
      }
      const std::string id = fs::path(ev_policy).stem().string();
      json summary = json::object();
      if (ev_mode == "standard" || ev_mode == "all") {
        const EvalReport r = evaluate_success_rate(*actor, specs,
                                                   cfg.eval.rollouts_per_env,
                                                   cfg.seed, id);
        const fs::path p = out_dir / "eval_standard.csv";
        auto o = open_out(p);
        write_eval_csv(o, r);
        run.produced(p);
        summary["standard"] = {{"mean", r.mean()}, {"stderr", r.standard_error()}};
      }
      if (ev_mode == "disturbance" || ev_mode == "all") {
        const fs::path p = out_dir / "eval_disturbance.csv";
        auto o = open_out(p);
        double total = 0.0;
        bool header = true;
        for (const EnvSpec& s : specs) {
          const EvalReport r = evaluate_disturbance(
              *actor, s, cfg.eval.rollouts_per_env, cfg.eval.disturbance_step,
              cfg.seed, id);
          write_eval_csv(o, r, header);
          header = false;
          total += r.mean();
        }
        run.produced(p);
        summary["disturbance"] = {{"mean", total / specs.size()}};
      }
      if (ev_mode == "multi_object" || ev_mode == "all") {
        const fs::path p = out_dir / "eval_multi_object.csv";
        auto o = open_out(p);
        o << "env_id,objects,placed,episodes_used\n";
        for (const EnvSpec& s : specs) {
          const MultiObjectResult r = evaluate_multi_object(
              *actor, s, cfg.eval.multi_object_count,
              cfg.eval.multi_object_episodes, cfg.seed);
          for (const MultiObjectRow& row : r.rows)
            o << s.env_id << ',' << row.objects << ',' << (row.placed ? 1 : 0)
              << ',' << row.episodes_used << '\n';
        }
        run.produced(p);
      }
      std::cout << summary.dump() << '\n';
    } else if (rep->parsed()) {
      const fs::path out_dir = rep_out.empty() ? run.dir() : fs::path(rep_out);
      fs::create_directories(out_dir);
      if (!rep_checkpoints.empty()) {
        if (rep_envs.empty())
          throw ContractViolation("report: --checkpoint needs --envs");
        std::vector<std::pair<int, GeneralistPolicy>> cps;
        for (const std::string& c : rep_checkpoints) {
          const auto eq = c.find('=');
          if (eq == std::string::npos)
            throw ContractViolation("report: expected COUNT=PATH, got '" + c + "'");
          cps.emplace_back(std::stoi(c.substr(0, eq)),
                           read_generalist_policy(c.substr(eq + 1)));
        }
        const auto rows = scaling_report(cps, read_env_file(rep_envs),
                                         cfg.eval.rollouts_per_env, cfg.seed);
        const fs::path csv = out_dir / "scaling.csv";
        {
          auto o = open_out(csv);
          write_scaling_csv(o, rows);
        }
        std::vector<std::pair<double, double>> pts;
        for (const ScalingRow& r : rows) pts.emplace_back(r.env_count, r.mean_success);
        const fs::path svg = out_dir / "scaling.svg";
        auto s = open_out(svg);
        s << line_plot_svg("Zero-shot success vs training environments",
                           "training environments", "held-out success", pts);
        run.produced(csv);
        run.produced(svg);
      }
      if (!rep_ledger.empty()) {
        const auto pts = ledger_human_demos(rep_ledger);
        const fs::path svg = out_dir / "ledger_human_demos.svg";
        auto s = open_out(svg);
        s << line_plot_svg("Human demonstrations per batch", "batch",
                           "human demos", pts);
        run.produced(svg);
      }
      if (rep_checkpoints.empty() && rep_ledger.empty())
        throw ContractViolation("report: nothing to do (--checkpoint or --ledger)");
    }
    run.finish();
    return 0;
  } catch (const TeacherTooWeak& e) {
    print_error(e.kind(), e.what());
    return kExitLibraryError;
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
    return kExitLibraryError;
  } catch (const std::exception& e) {
    print_error("InternalError", e.what());
    return kExitInternalError;
  }
}
