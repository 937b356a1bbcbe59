#include "echoslice/transport.hpp"

#include <csignal>
#include <cstring>
#include <mutex>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

namespace echoslice {
namespace {

using Clock = std::chrono::steady_clock;

void ignore_sigpipe_once() {
  static std::once_flag flag;
  std::call_once(flag, [] { std::signal(SIGPIPE, SIG_IGN); });
}

class FileDescriptor {
 public:
  explicit FileDescriptor(int fd = -1) : fd_(fd) {}
  FileDescriptor(const FileDescriptor&) = delete;
  FileDescriptor& operator=(const FileDescriptor&) = delete;
  ~FileDescriptor() { reset(); }

  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_;
};

class SubprocessTransport final : public Transport {
 public:
  SubprocessTransport(std::string command, std::chrono::milliseconds timeout)
      : command_(std::move(command)), timeout_(timeout) {
    ignore_sigpipe_once();
  }

  std::string exchange(const std::string& request) override {
    int in_pipe[2];
    int out_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw TransportError(false, "pipe failed");
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      throw TransportError(false, "pipe failed");
    }
    const pid_t pid = ::fork();
    if (pid < 0) throw TransportError(false, std::string("fork failed: ") + std::strerror(errno));
    if (pid == 0) {
      ::dup2(in_pipe[0], STDIN_FILENO);
      ::dup2(out_pipe[1], STDOUT_FILENO);
      ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    FileDescriptor to_child(in_pipe[1]);
    FileDescriptor from_child(out_pipe[0]);
    ::fcntl(to_child.get(), F_SETFL, O_NONBLOCK);

    const auto deadline = Clock::now() + timeout_;
    std::string response;
    std::size_t written = 0;
    if (request.empty()) to_child.reset();
    char buf[65536];
    bool timed_out = false;
    while (from_child.get() >= 0) {
      const auto left =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
      if (left <= 0) {
        timed_out = true;
        break;
      }
      pollfd fds[2];
      nfds_t n = 0;
      fds[n++] = {from_child.get(), POLLIN, 0};
      if (to_child.get() >= 0) fds[n++] = {to_child.get(), POLLOUT, 0};
      const int rc = ::poll(fds, n, static_cast<int>(left));
      if (rc < 0) {
        if (errno == EINTR) continue;
        break;
      }
      if (rc == 0) continue;
      if (n == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
        const ssize_t w = ::write(to_child.get(), request.data() + written, request.size() - written);
        if (w > 0) written += static_cast<std::size_t>(w);
        if (w < 0 && errno != EAGAIN) written = request.size();  // child stopped reading
        if (written >= request.size()) to_child.reset();
      }
      if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
        const ssize_t r = ::read(from_child.get(), buf, sizeof buf);
        if (r > 0) {
          response.append(buf, static_cast<std::size_t>(r));
        } else if (r == 0 || errno != EAGAIN) {
          from_child.reset();
        }
      }
    }

    int status = 0;
    if (timed_out) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      throw TransportError(true, "timeout");
    }
    // The child closed stdout; give it the remaining budget to exit.
    while (::waitpid(pid, &status, WNOHANG) == 0) {
      if (Clock::now() >= deadline) {
        ::kill(pid, SIGKILL);
        ::waitpid(pid, &status, 0);
        throw TransportError(true, "timeout");
      }
      ::usleep(1000);
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      throw TransportError(false, "command exited with status " +
                                      std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
    }
    return response;
  }

 private:
  std::string command_;
  std::chrono::milliseconds timeout_;
};

class HttpTransport final : public Transport {
 public:
  HttpTransport(const std::string& url, std::chrono::milliseconds timeout) : timeout_(timeout) {
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    origin_ = path_start == std::string::npos ? url : url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  }

  std::string exchange(const std::string& request) override {
    httplib::Client client(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    const auto start = Clock::now();
    auto res = client.Post(path_, request, "application/json");
    if (!res) {
      const bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                             Clock::now() - start >= timeout_;
      throw TransportError(timed_out, timed_out ? "timeout" : httplib::to_string(res.error()));
    }
    if (res->status < 200 || res->status >= 300) {
      throw TransportError(false, "HTTP status " + std::to_string(res->status));
    }
    return res->body;
  }

 private:
  std::string origin_;
  std::string path_;
  std::chrono::milliseconds timeout_;
};

}  // namespace

std::unique_ptr<Transport> subprocess_transport(std::string command,
                                                std::chrono::milliseconds timeout) {
  return std::make_unique<SubprocessTransport>(std::move(command), timeout);
}

std::unique_ptr<Transport> http_transport(const std::string& url,
                                          std::chrono::milliseconds timeout) {
  return std::make_unique<HttpTransport>(url, timeout);
}

std::unique_ptr<Transport> make_transport(const std::string& command_or_url,
                                          std::chrono::milliseconds timeout) {
  if (command_or_url.rfind("http://", 0) == 0) return http_transport(command_or_url, timeout);
  return subprocess_transport(command_or_url, timeout);
}

}  // namespace echoslice
