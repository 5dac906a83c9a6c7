#include "casher/dataset.hpp"

#include <fstream>
#include <sstream>

#include "casher/errors.hpp"

namespace casher {

using nlohmann::json;

namespace {

constexpr std::size_t kStepFields = 10;

const char* mode_name(ObsMode m) {
  return m == ObsMode::kClean ? "clean" : "augmented";
}

ObsMode parse_mode(const std::string& s) {
  if (s == "clean") return ObsMode::kClean;
  if (s == "augmented") return ObsMode::kAugmented;
  throw FormatError("unknown obs_mode '" + s + "'");
}

bool parse_flag(double v, const char* field) {
  if (v == 0.0) return false;
  if (v == 1.0) return true;
  throw FormatError(std::string(field) + " must be 0 or 1");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

json to_json(const Trajectory& t) {
  json steps = json::array();
  for (const Transition& tr : t.steps) {
    const WorldState& s = tr.state;
    steps.push_back(json::array({s.ee.x, s.ee.y, s.object.x, s.object.y,
                                 s.carried ? 1 : 0, s.gripper_open ? 1 : 0,
                                 s.step_count, tr.action, tr.reward,
                                 tr.done ? 1 : 0}));
  }
  return json{{"env_id", t.env_id},
              {"episode_seed", t.episode_seed},
              {"obs_mode", mode_name(t.obs_mode)},
              {"noise_seed", t.noise_seed},
              {"steps", std::move(steps)}};
}

Trajectory trajectory_from_json(const json& j) {
  try {
    Trajectory t;
    t.env_id = j.at("env_id").get<std::string>();
    t.episode_seed = j.at("episode_seed").get<std::uint64_t>();
    t.obs_mode = parse_mode(j.at("obs_mode").get<std::string>());
    t.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    for (const json& row : j.at("steps")) {
      if (row.size() != kStepFields)
        throw FormatError("step must have 10 fields");
      Transition tr;
      tr.state.ee = {row[0].get<double>(), row[1].get<double>()};
      tr.state.object = {row[2].get<double>(), row[3].get<double>()};
      tr.state.carried = parse_flag(row[4].get<double>(), "carried");
      tr.state.gripper_open = parse_flag(row[5].get<double>(), "gripper_open");
      tr.state.step_count = row[6].get<int>();
      tr.action = row[7].get<int>();
      if (tr.action < 0 || tr.action >= kNumActions)
        throw FormatError("action out of range");
      tr.reward = row[8].get<double>();
      tr.done = parse_flag(row[9].get<double>(), "done");
      t.steps.push_back(tr);
    }
    return t;
  } catch (const json::exception& e) {
    throw FormatError(std::string("trajectory: ") + e.what());
  }
}

void check_env_id_filename(const std::string& env_id) {
  bool ok = !env_id.empty() && env_id != "." && env_id != ".." &&
            env_id != "manifest";
  for (char c : env_id) {
    const bool allowed = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                         (c >= '0' && c <= '9') || c == '-' || c == '_' ||
                         c == '.';
    ok = ok && allowed;
  }
  if (!ok) throw FormatError("env id '" + env_id + "' is not a valid shard name");
}

void TrajectoryDataset::add(Trajectory trajectory) {
  if (!trajectory.successful())
    throw ContractViolation("dataset accepts successful trajectories only (" +
                            trajectory.env_id + ")");
  by_env_[trajectory.env_id].push_back(std::move(trajectory));
}

void TrajectoryDataset::merge(const TrajectoryDataset& other) {
  for (const auto& [id, trajs] : other.by_env_) {
    auto& dst = by_env_[id];
    dst.insert(dst.end(), trajs.begin(), trajs.end());
  }
}

std::vector<std::string> TrajectoryDataset::env_ids() const {
  std::vector<std::string> ids;
  for (const auto& kv : by_env_) ids.push_back(kv.first);
  return ids;
}

const std::vector<Trajectory>& TrajectoryDataset::trajectories(
    const std::string& env_id) const {
  auto it = by_env_.find(env_id);
  if (it == by_env_.end())
    throw ContractViolation("dataset has no environment " + env_id);
  return it->second;
}

EnvCounts TrajectoryDataset::counts(const std::string& env_id) const {
  EnvCounts c;
  auto it = by_env_.find(env_id);
  if (it == by_env_.end()) return c;
  for (const Trajectory& t : it->second) {
    ++c.trajectories;
    (t.obs_mode == ObsMode::kClean ? c.clean : c.augmented) += 1;
    c.transitions += static_cast<long>(t.steps.size());
  }
  return c;
}

std::map<std::string, EnvCounts> TrajectoryDataset::manifest() const {
  std::map<std::string, EnvCounts> m;
  for (const auto& kv : by_env_) m[kv.first] = counts(kv.first);
  return m;
}

std::size_t TrajectoryDataset::size() const {
  std::size_t n = 0;
  for (const auto& kv : by_env_) n += kv.second.size();
  return n;
}

long TrajectoryDataset::transitions() const {
  long n = 0;
  for (const auto& kv : by_env_)
    for (const Trajectory& t : kv.second) n += static_cast<long>(t.steps.size());
  return n;
}

void TrajectoryDataset::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json envs = json::object();
  for (const auto& [id, trajs] : by_env_) {
    check_env_id_filename(id);
    const auto shard = dir / (id + ".jsonl");
    std::ofstream out(shard, std::ios::binary);
    if (!out) throw FormatError("cannot open " + shard.string());
    for (const Trajectory& t : trajs) out << to_json(t).dump() << '\n';
    if (!out) throw FormatError("write failed: " + shard.string());
    const EnvCounts c = counts(id);
    envs[id] = {{"shard", id + ".jsonl"},
                {"trajectories", c.trajectories},
                {"clean", c.clean},
                {"augmented", c.augmented},
                {"transitions", c.transitions}};
  }
  const json manifest{{"schema_version", kDatasetSchemaVersion},
                      {"total_trajectories", size()},
                      {"envs", std::move(envs)}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw FormatError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

TrajectoryDataset TrajectoryDataset::load(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  TrajectoryDataset ds;
  try {
    const int version = manifest.at("schema_version").get<int>();
    if (version != kDatasetSchemaVersion)
      throw FormatError("unsupported dataset schema version " +
                        std::to_string(version));
    for (const auto& [id, entry] : manifest.at("envs").items()) {
      check_env_id_filename(id);
      const auto shard = dir / entry.at("shard").get<std::string>();
      std::istringstream in(read_file(shard));
      std::string line;
      int line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Trajectory t;
        try {
          t = trajectory_from_json(json::parse(line));
        } catch (const json::exception& e) {
          throw FormatError(shard.string() + ":" + std::to_string(line_no) +
                            ": " + e.what());
        } catch (const FormatError& e) {
          throw FormatError(shard.string() + ":" + std::to_string(line_no) +
                            ": " + e.what());
        }
        if (t.env_id != id)
          throw FormatError(shard.string() + ":" + std::to_string(line_no) +
                            ": trajectory belongs to " + t.env_id);
        if (!t.successful())
          throw FormatError(shard.string() + ":" + std::to_string(line_no) +
                            ": unsuccessful trajectory in dataset");
        ds.by_env_[id].push_back(std::move(t));
      }
      const EnvCounts c = ds.counts(id);
      if (c.trajectories != entry.at("trajectories").get<int>() ||
          c.clean != entry.at("clean").get<int>() ||
          c.augmented != entry.at("augmented").get<int>() ||
          c.transitions != entry.at("transitions").get<long>())
        throw FormatError(shard.string() + ": counts disagree with manifest");
    }
    if (ds.size() != manifest.at("total_trajectories").get<std::size_t>())
      throw FormatError(manifest_path.string() +
                        ": total_trajectories disagrees with the shards");
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace casher
