#pragma once

// Success-only trajectory store, grouped by environment.
//
// On disk a dataset is a directory holding manifest.json plus one
// line-delimited shard per environment (<env_id>.jsonl). Each shard line is
//
//   {"env_id":"env-1-0000","episode_seed":17,"obs_mode":"clean",
//    "noise_seed":0,"steps":[[ee_x,ee_y,obj_x,obj_y,carried,gripper_open,
//                             step_count,action,reward,done],...]}
//
// Observations are not stored; they are re-rendered from (spec, state,
// noise_seed) on load.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "casher/trajectory.hpp"
#include "json.hpp"

namespace casher {

inline constexpr int kDatasetSchemaVersion = 1;

struct EnvCounts {
  int trajectories = 0;
  int clean = 0;
  int augmented = 0;
  long transitions = 0;
  friend bool operator==(const EnvCounts&, const EnvCounts&) = default;
};

class TrajectoryDataset {
 public:
  // Throws ContractViolation for unsuccessful trajectories.
  void add(Trajectory trajectory);
  void merge(const TrajectoryDataset& other);

  // Sorted by env id.
  const std::map<std::string, std::vector<Trajectory>>& by_env() const {
    return by_env_;
  }
  std::vector<std::string> env_ids() const;
  bool contains(const std::string& env_id) const {
    return by_env_.count(env_id) != 0;
  }
  const std::vector<Trajectory>& trajectories(const std::string& env_id) const;
  EnvCounts counts(const std::string& env_id) const;
  std::map<std::string, EnvCounts> manifest() const;

  std::size_t size() const;
  long transitions() const;
  bool empty() const { return by_env_.empty(); }

  void save(const std::filesystem::path& dir) const;
  static TrajectoryDataset load(const std::filesystem::path& dir);

  friend bool operator==(const TrajectoryDataset&,
                         const TrajectoryDataset&) = default;

 private:
  std::map<std::string, std::vector<Trajectory>> by_env_;
};

nlohmann::json to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);

// Throws FormatError unless the id is safe to use as a file name.
void check_env_id_filename(const std::string& env_id);

}  // namespace casher
