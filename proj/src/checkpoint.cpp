#include <bit>
#include <cstring>
#include <fstream>

#include "casher/errors.hpp"
#include "casher/policies.hpp"

namespace casher {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'S', 'H', 'E', 'R', 'N', 'N'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path)
      : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw FormatError("cannot open " + path.string());
  }
  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void mlp(const ParamVector& p) {
    const MlpSpec& s = p.spec();
    put<std::uint32_t>(static_cast<std::uint32_t>(s.input_dim));
    put<std::uint32_t>(static_cast<std::uint32_t>(s.hidden.size()));
    for (int h : s.hidden) put<std::uint32_t>(static_cast<std::uint32_t>(h));
    put<std::uint32_t>(static_cast<std::uint32_t>(s.output_dim));
    put<std::uint64_t>(p.size());
    bytes(reinterpret_cast<const char*>(p.values().data()),
          p.size() * sizeof(double));
  }
  void finish() {
    out_.flush();
    if (!out_) throw FormatError("write failed: " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path)
      : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw FormatError("cannot open " + path.string());
  }
  template <typename T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw FormatError(path_.string() + ": truncated checkpoint");
    return v;
  }
  CheckpointKind header() {
    char magic[8];
    in_.read(magic, 8);
    if (!in_ || std::memcmp(magic, kMagic, 8) != 0)
      throw FormatError(path_.string() + ": not a casher checkpoint");
    const auto version = get<std::uint32_t>();
    if (version != kCheckpointVersion)
      throw FormatError(path_.string() + ": unsupported checkpoint version " +
                        std::to_string(version));
    const auto kind = get<std::uint32_t>();
    if (kind != static_cast<std::uint32_t>(CheckpointKind::kState) &&
        kind != static_cast<std::uint32_t>(CheckpointKind::kGeneralist))
      throw FormatError(path_.string() + ": unknown policy kind");
    return static_cast<CheckpointKind>(kind);
  }
  ParamVector mlp() {
    MlpSpec s;
    s.input_dim = static_cast<int>(get<std::uint32_t>());
    const auto n_hidden = get<std::uint32_t>();
    if (n_hidden > 64) throw FormatError(path_.string() + ": corrupt header");
    for (std::uint32_t i = 0; i < n_hidden; ++i)
      s.hidden.push_back(static_cast<int>(get<std::uint32_t>()));
    s.output_dim = static_cast<int>(get<std::uint32_t>());
    const auto n = get<std::uint64_t>();
    ParamVector p(s);
    if (n != p.size())
      throw FormatError(path_.string() + ": parameter count mismatch");
    in_.read(reinterpret_cast<char*>(p.values().data()),
             static_cast<std::streamsize>(n * sizeof(double)));
    if (!in_) throw FormatError(path_.string() + ": truncated parameters");
    return p;
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

void write_header(Writer& w, CheckpointKind kind) {
  w.bytes(kMagic, 8);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kind));
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path,
                      const StatePolicy& policy) {
  Writer w(path);
  write_header(w, CheckpointKind::kState);
  w.mlp(policy.actor);
  w.mlp(policy.critic);
  w.finish();
}

void write_checkpoint(const std::filesystem::path& path,
                      const GeneralistPolicy& policy) {
  Writer w(path);
  write_header(w, CheckpointKind::kGeneralist);
  w.mlp(policy.encoder);
  w.mlp(policy.head);
  w.put<std::uint8_t>(policy.freeze_encoder ? 1 : 0);
  w.finish();
}

CheckpointKind checkpoint_kind(const std::filesystem::path& path) {
  Reader r(path);
  return r.header();
}

StatePolicy read_state_policy(const std::filesystem::path& path) {
  Reader r(path);
  if (r.header() != CheckpointKind::kState)
    throw FormatError(path.string() + ": not a state-policy checkpoint");
  StatePolicy p;
  p.actor = r.mlp();
  p.critic = r.mlp();
  if (p.actor.spec().input_dim != kStateFeatureDim ||
      p.actor.spec().output_dim != kNumActions ||
      p.critic.spec().output_dim != 1)
    throw FormatError(path.string() + ": state policy has wrong shape");
  return p;
}

GeneralistPolicy read_generalist_policy(const std::filesystem::path& path) {
  Reader r(path);
  if (r.header() != CheckpointKind::kGeneralist)
    throw FormatError(path.string() + ": not a generalist checkpoint");
  GeneralistPolicy p;
  p.encoder = r.mlp();
  p.head = r.mlp();
  p.freeze_encoder = r.get<std::uint8_t>() != 0;
  if (p.encoder.spec().input_dim != kObsCells ||
      p.head.spec().input_dim != p.encoder.spec().output_dim + kRobotStateDim ||
      p.head.spec().output_dim != kNumActions)
    throw FormatError(path.string() + ": generalist has wrong shape");
  return p;
}

}  // namespace casher
