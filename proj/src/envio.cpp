#include "casher/envio.hpp"

#include <fstream>
#include <sstream>

#include "casher/errors.hpp"

namespace casher {

using nlohmann::json;

json to_json(const EnvSpec& spec) {
  json obstacles = json::array();
  for (const Rect& r : spec.obstacles)
    obstacles.push_back({r.x0, r.y0, r.x1, r.y1});
  return json{
      {"env_id", spec.env_id},
      {"layout_seed", spec.layout_seed},
      {"obstacles", obstacles},
      {"goal",
       {{"x", spec.goal.center.x},
        {"y", spec.goal.center.y},
        {"radius", spec.goal.radius}}},
      {"object_nominal", {spec.object_nominal.x, spec.object_nominal.y}},
      {"object_jitter", spec.object_jitter},
      {"texture_seed", spec.texture_seed},
  };
}

EnvSpec env_spec_from_json(const json& j) {
  try {
    EnvSpec spec;
    spec.env_id = j.at("env_id").get<std::string>();
    spec.layout_seed = j.at("layout_seed").get<std::uint64_t>();
    for (const json& r : j.at("obstacles")) {
      if (r.size() != 4) throw FormatError("obstacle must have 4 coordinates");
      spec.obstacles.push_back({r[0].get<double>(), r[1].get<double>(),
                                r[2].get<double>(), r[3].get<double>()});
    }
    const json& g = j.at("goal");
    spec.goal.center = {g.at("x").get<double>(), g.at("y").get<double>()};
    spec.goal.radius = g.at("radius").get<double>();
    const json& o = j.at("object_nominal");
    spec.object_nominal = {o.at(0).get<double>(), o.at(1).get<double>()};
    spec.object_jitter = j.at("object_jitter").get<double>();
    spec.texture_seed = j.at("texture_seed").get<std::uint64_t>();
    return spec;
  } catch (const json::exception& e) {
    throw FormatError(std::string("env spec: ") + e.what());
  }
}

std::string to_jsonl(const std::vector<EnvSpec>& specs) {
  std::string out;
  for (const EnvSpec& s : specs) {
    out += to_json(s).dump();
    out += '\n';
  }
  return out;
}

std::vector<EnvSpec> parse_env_jsonl(const std::string& text) {
  std::vector<EnvSpec> specs;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      specs.push_back(env_spec_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return specs;
}

void write_env_file(const std::filesystem::path& path,
                    const std::vector<EnvSpec>& specs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << to_jsonl(specs);
}

std::vector<EnvSpec> read_env_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_env_jsonl(buffer.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace casher
