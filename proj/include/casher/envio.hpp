#pragma once

// Line-delimited JSON storage for environment specs. One spec per line:
//
//   {"env_id":"env-1-0000","layout_seed":123,"obstacles":[[x0,y0,x1,y1],...],
//    "goal":{"x":0.7,"y":0.2,"radius":0.08},"object_nominal":[0.3,0.4],
//    "object_jitter":0.1,"texture_seed":456}
//
// Doubles are written with round-trip precision, so write → read is lossless.

#include <filesystem>
#include <string>
#include <vector>

#include "casher/envworld.hpp"
#include "json.hpp"

namespace casher {

nlohmann::json to_json(const EnvSpec& spec);
EnvSpec env_spec_from_json(const nlohmann::json& j);

std::string to_jsonl(const std::vector<EnvSpec>& specs);
std::vector<EnvSpec> parse_env_jsonl(const std::string& text);

void write_env_file(const std::filesystem::path& path,
                    const std::vector<EnvSpec>& specs);
std::vector<EnvSpec> read_env_file(const std::filesystem::path& path);

}  // namespace casher
