#pragma once

#include <stdexcept>
#include <string>

namespace echoslice {

/// Broad failure class. Drives CLI exit codes and HTTP status mapping.
enum class ErrorKind {
  input,     ///< malformed data, bad parameters, violated preconditions
  adapter,   ///< external landmark provider or view scorer failed
  internal,  ///< anything else
};

/// Library-wide exception. The message carries the human-readable reason;
/// `stage()` is set by the extraction pipeline to say where it failed.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string stage = {})
      : std::runtime_error(message), kind_(kind), stage_(std::move(stage)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& stage() const noexcept { return stage_; }

 private:
  ErrorKind kind_;
  std::string stage_;
};

inline Error input_error(const std::string& message) {
  return Error(ErrorKind::input, message);
}

inline Error adapter_error(const std::string& message) {
  return Error(ErrorKind::adapter, message);
}

}  // namespace echoslice
