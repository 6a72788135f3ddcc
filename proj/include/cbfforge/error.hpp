#pragma once

#include <stdexcept>
#include <string>

namespace cbfforge {

// Numeric values are shared with the C API status codes in cbfforge.h.
enum class ErrorCode : int {
  invalid_argument = 1,
  config = 2,
  hypothesis_violated = 3,
  io = 4,
  missing_artifact = 5,
  runtime = 6,
  divergence = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& w) : Error(ErrorCode::invalid_argument, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCode::config, w) {}
};
struct HypothesisViolated : Error {
  explicit HypothesisViolated(const std::string& w) : Error(ErrorCode::hypothesis_violated, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCode::io, w) {}
};
struct MissingArtifact : Error {
  explicit MissingArtifact(const std::string& w) : Error(ErrorCode::missing_artifact, w) {}
};
struct RuntimeFailure : Error {
  explicit RuntimeFailure(const std::string& w) : Error(ErrorCode::runtime, w) {}
};
struct Divergence : Error {
  explicit Divergence(const std::string& w) : Error(ErrorCode::divergence, w) {}
};

}  // namespace cbfforge
