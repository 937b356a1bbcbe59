#pragma once

// JSON request/response transport for external model adapters: either a
// child process (request on stdin, response on stdout) or an HTTP POST.

#include <chrono>
#include <memory>
#include <stdexcept>
#include <string>

namespace echoslice {

/// Thrown by transports; `timed_out()` distinguishes deadline expiry from
/// other failures (spawn error, non-zero exit, HTTP status, connection).
class TransportError : public std::runtime_error {
 public:
  TransportError(bool timed_out, const std::string& what)
      : std::runtime_error(what), timed_out_(timed_out) {}
  bool timed_out() const noexcept { return timed_out_; }

 private:
  bool timed_out_;
};

class Transport {
 public:
  virtual ~Transport() = default;
  /// Sends one JSON document and returns the raw response body.
  virtual std::string exchange(const std::string& request) = 0;
};

/// Runs `/bin/sh -c command` once per exchange.
std::unique_ptr<Transport> subprocess_transport(std::string command,
                                                std::chrono::milliseconds timeout);
/// POSTs application/json to an http:// URL.
std::unique_ptr<Transport> http_transport(const std::string& url,
                                          std::chrono::milliseconds timeout);
/// http:// endpoints go over HTTP, anything else is a shell command.
std::unique_ptr<Transport> make_transport(const std::string& command_or_url,
                                          std::chrono::milliseconds timeout);

}  // namespace echoslice
