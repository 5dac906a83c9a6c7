#include "casher/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "casher/errors.hpp"

namespace casher {

using nlohmann::json;

namespace {

json ppo_json(const PpoBcConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"gamma_bc", c.gamma_bc},
          {"epsilon_clip", c.epsilon_clip},
          {"gamma_discount", c.gamma_discount},
          {"gae_lambda", c.gae_lambda},
          {"entropy_coef", c.entropy_coef},
          {"learning_rate", c.learning_rate},
          {"max_grad_norm", c.max_grad_norm},
          {"normalize_advantages", c.normalize_advantages},
          {"n_envs", c.n_envs},
          {"n_steps", c.n_steps},
          {"ppo_batch_size", c.ppo_batch_size},
          {"bc_batch_size", c.bc_batch_size},
          {"epochs", c.epochs},
          {"hidden", c.hidden},
          {"eval_every", c.eval_every},
          {"eval_rollouts", c.eval_rollouts},
          {"target_success", c.target_success}};
}

json distill_json(const DistillConfig& c) {
  return {{"per_env", c.per_env},
          {"attempt_factor", c.attempt_factor},
          {"chunk_trajs_per_env", c.chunk_trajs_per_env},
          {"minibatch_size", c.minibatch_size},
          {"accumulation_steps", c.accumulation_steps},
          {"learning_rate", c.learning_rate},
          {"max_grad_norm", c.max_grad_norm},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"validation_fraction", c.validation_fraction},
          {"embedding_dim", c.embedding_dim},
          {"encoder_hidden", c.encoder_hidden},
          {"head_hidden", c.head_hidden},
          {"fewshot_epochs", c.fewshot_epochs},
          {"fewshot_minibatch_size", c.fewshot_minibatch_size},
          {"fewshot_learning_rate", c.fewshot_learning_rate}};
}

json flywheel_json(const FlywheelConfig& c) {
  return {{"batch_size_K", c.batch_size_K},
          {"success_threshold_r", c.success_threshold_r},
          {"model_demo_target", c.model_demo_target},
          {"model_demo_attempt_cap", c.model_demo_attempt_cap},
          {"demos_per_env_human", c.demos_per_env_human},
          {"rl_budget", c.rl_budget},
          {"eval_rollouts_per_env", c.eval_rollouts_per_env},
          {"scan_success_target", c.scan_success_target},
          {"scan_max_iterations", c.scan_max_iterations}};
}

// Reads typed values out of one config section, reporting key paths.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  template <typename T>
  void get(const char* key, T& out) const {
    const std::string where = path_.empty() ? key : path_ + "." + key;
    try {
      const json& v = j_.at(key);
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("expected true/false");
      } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("expected a string");
      }
      out = v.get<T>();
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + where + "': " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + where + "': " + e.what());
    }
  }
  Section sub(const char* key) const {
    return Section(j_.at(key), path_.empty() ? key : path_ + "." + key);
  }

 private:
  const json& j_;
  std::string path_;
};

void merge_into(json& base, const json& overlay, const std::string& path) {
  if (!overlay.is_object())
    throw ConfigError("config section '" + (path.empty() ? "<root>" : path) +
                      "' must be an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    auto it = base.find(key);
    if (it == base.end()) throw ConfigError("unknown config key '" + where + "'");
    if (it->is_object())
      merge_into(*it, value, where);
    else
      *it = value;
  }
}

void apply_override(json& base, const std::string& assignment,
                    const std::string& origin) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError(origin + ": expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json* node = &base;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    auto it = node->find(part);
    if (!node->is_object() || it == node->end())
      throw ConfigError("unknown config key '" + key + "'");
    node = &*it;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object())
    throw ConfigError("config key '" + key + "' is a section, not a value");
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;  // bare words are strings
  }
  if (node->is_string() && !value.is_string()) value = text;
  *node = value;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep))
    if (item.find_first_not_of(" \t") != std::string::npos) out.push_back(item);
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  require(parallelism == 1, "config: only parallelism = 1 is supported");
  require(env.count >= 1, "config: env.count must be >= 1");
  require(eval.rollouts_per_env >= 1, "config: eval.rollouts_per_env must be >= 1");
  require(eval.multi_object_count >= 1, "config: eval.multi_object_count must be >= 1");
  require(eval.multi_object_episodes >= 1,
          "config: eval.multi_object_episodes must be >= 1");
  require(eval.disturbance_step >= 0 && eval.disturbance_step < kEpisodeLength,
          "config: eval.disturbance_step must be in [0, episode length)");
  flywheel.validate();
}

json to_json(const ExperimentConfig& cfg) {
  return {{"seed", cfg.seed},
          {"output_dir", cfg.output_dir},
          {"run_name", cfg.run_name},
          {"parallelism", cfg.parallelism},
          {"env", {{"count", cfg.env.count}, {"family_seed", cfg.env.family_seed}}},
          {"expert",
           {{"multimodality", cfg.expert.multimodality},
            {"action_noise", cfg.expert.action_noise}}},
          {"ppo", ppo_json(cfg.ppo)},
          {"distill", distill_json(cfg.distill)},
          {"flywheel", flywheel_json(cfg.flywheel)},
          {"eval",
           {{"rollouts_per_env", cfg.eval.rollouts_per_env},
            {"deterministic_actions", cfg.eval.deterministic_actions},
            {"disturbance_step", cfg.eval.disturbance_step},
            {"multi_object_count", cfg.eval.multi_object_count},
            {"multi_object_episodes", cfg.eval.multi_object_episodes}}}};
}

ExperimentConfig config_from_json(const json& input) {
  // Start from defaults so partial documents are accepted.
  json j = to_json(ExperimentConfig{});
  merge_into(j, input, "");
  ExperimentConfig c;
  const Section root(j, "");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  root.get("run_name", c.run_name);
  root.get("parallelism", c.parallelism);
  const Section env = root.sub("env");
  env.get("count", c.env.count);
  env.get("family_seed", c.env.family_seed);
  const Section ex = root.sub("expert");
  ex.get("multimodality", c.expert.multimodality);
  ex.get("action_noise", c.expert.action_noise);
  const Section p = root.sub("ppo");
  p.get("alpha", c.ppo.alpha);
  p.get("beta", c.ppo.beta);
  p.get("gamma_bc", c.ppo.gamma_bc);
  p.get("epsilon_clip", c.ppo.epsilon_clip);
  p.get("gamma_discount", c.ppo.gamma_discount);
  p.get("gae_lambda", c.ppo.gae_lambda);
  p.get("entropy_coef", c.ppo.entropy_coef);
  p.get("learning_rate", c.ppo.learning_rate);
  p.get("max_grad_norm", c.ppo.max_grad_norm);
  p.get("normalize_advantages", c.ppo.normalize_advantages);
  p.get("n_envs", c.ppo.n_envs);
  p.get("n_steps", c.ppo.n_steps);
  p.get("ppo_batch_size", c.ppo.ppo_batch_size);
  p.get("bc_batch_size", c.ppo.bc_batch_size);
  p.get("epochs", c.ppo.epochs);
  p.get("hidden", c.ppo.hidden);
  p.get("eval_every", c.ppo.eval_every);
  p.get("eval_rollouts", c.ppo.eval_rollouts);
  p.get("target_success", c.ppo.target_success);
  const Section d = root.sub("distill");
  d.get("per_env", c.distill.per_env);
  d.get("attempt_factor", c.distill.attempt_factor);
  d.get("chunk_trajs_per_env", c.distill.chunk_trajs_per_env);
  d.get("minibatch_size", c.distill.minibatch_size);
  d.get("accumulation_steps", c.distill.accumulation_steps);
  d.get("learning_rate", c.distill.learning_rate);
  d.get("max_grad_norm", c.distill.max_grad_norm);
  d.get("max_epochs", c.distill.max_epochs);
  d.get("patience", c.distill.patience);
  d.get("validation_fraction", c.distill.validation_fraction);
  d.get("embedding_dim", c.distill.embedding_dim);
  d.get("encoder_hidden", c.distill.encoder_hidden);
  d.get("head_hidden", c.distill.head_hidden);
  d.get("fewshot_epochs", c.distill.fewshot_epochs);
  d.get("fewshot_minibatch_size", c.distill.fewshot_minibatch_size);
  d.get("fewshot_learning_rate", c.distill.fewshot_learning_rate);
  const Section f = root.sub("flywheel");
  f.get("batch_size_K", c.flywheel.batch_size_K);
  f.get("success_threshold_r", c.flywheel.success_threshold_r);
  f.get("model_demo_target", c.flywheel.model_demo_target);
  f.get("model_demo_attempt_cap", c.flywheel.model_demo_attempt_cap);
  f.get("demos_per_env_human", c.flywheel.demos_per_env_human);
  f.get("rl_budget", c.flywheel.rl_budget);
  f.get("eval_rollouts_per_env", c.flywheel.eval_rollouts_per_env);
  f.get("scan_success_target", c.flywheel.scan_success_target);
  f.get("scan_max_iterations", c.flywheel.scan_max_iterations);
  const Section e = root.sub("eval");
  e.get("rollouts_per_env", c.eval.rollouts_per_env);
  e.get("deterministic_actions", c.eval.deterministic_actions);
  e.get("disturbance_step", c.eval.disturbance_step);
  e.get("multi_object_count", c.eval.multi_object_count);
  e.get("multi_object_episodes", c.eval.multi_object_episodes);
  c.flywheel.ppo = c.ppo;
  c.flywheel.distill = c.distill;
  c.flywheel.expert = c.expert;
  try {
    c.validate();
  } catch (const ContractViolation& err) {
    throw ConfigError(err.what());
  }
  return c;
}

ExperimentConfig parse_config(
    const std::optional<std::filesystem::path>& file,
    const std::vector<std::string>& cli_overrides,
    const std::map<std::string, std::string>& environment) {
  json j = to_json(ExperimentConfig{});
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();
    if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
      json loaded;
      try {
        loaded = json::parse(text);
      } catch (const json::exception& e) {
        throw ConfigError(file->string() + ": " + e.what());
      }
      merge_into(j, loaded, "");
    }
  }
  if (auto it = environment.find("CASHER_SEED"); it != environment.end())
    apply_override(j, "seed=" + it->second, "CASHER_SEED");
  if (auto it = environment.find("CASHER_OVERRIDES"); it != environment.end())
    for (const std::string& a : split(it->second, ';'))
      apply_override(j, a, "CASHER_OVERRIDES");
  for (const std::string& a : cli_overrides) apply_override(j, a, "--set");
  return config_from_json(j);
}

std::map<std::string, std::string> read_environment() {
  std::map<std::string, std::string> env;
  for (const char* name : {"CASHER_SEED", "CASHER_OVERRIDES"})
    if (const char* v = std::getenv(name)) env[name] = v;
  return env;
}

void write_config(const std::filesystem::path& path,
                  const ExperimentConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace casher
