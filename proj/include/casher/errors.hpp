#pragma once

#include <stdexcept>
#include <string>

namespace casher {

// Base of every error the library raises. `kind()` is the stable, machine
// readable name used by the CLI error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CASHER_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  }

CASHER_DEFINE_ERROR(ContractViolation);
CASHER_DEFINE_ERROR(GenerationExhausted);
CASHER_DEFINE_ERROR(Infeasible);
CASHER_DEFINE_ERROR(DemoCollectionFailed);
CASHER_DEFINE_ERROR(NumericalError);
CASHER_DEFINE_ERROR(DemoFormatError);
CASHER_DEFINE_ERROR(ZeroShotTooWeak);
CASHER_DEFINE_ERROR(ConfigError);
CASHER_DEFINE_ERROR(FormatError);

#undef CASHER_DEFINE_ERROR

// Raised when a teacher cannot produce enough successful rollouts on one
// environment. Carries the environment and the success rate it achieved.
class TeacherTooWeak : public Error {
 public:
  TeacherTooWeak(std::string env_id, double success_rate)
      : Error("TeacherTooWeak", "teacher too weak on " + env_id +
                                    " (success rate " +
                                    std::to_string(success_rate) + ")"),
        env_id_(std::move(env_id)),
        success_rate_(success_rate) {}
  const std::string& env_id() const noexcept { return env_id_; }
  double success_rate() const noexcept { return success_rate_; }

 private:
  std::string env_id_;
  double success_rate_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace casher
