// SPDX-License-Identifier: Apache-2.0
#include "evsd/external_backend.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <mutex>

namespace evsd {

namespace wire {

std::string encode_request(std::span<const float> samples) {
  std::string out(kRequestMagic, 4);
  const auto n = static_cast<std::uint32_t>(samples.size());
  out.append(reinterpret_cast<const char*>(&n), 4);
  out.append(reinterpret_cast<const char*>(samples.data()), samples.size() * sizeof(float));
  return out;
}

std::string encode_response(float probability) {
  std::string out(kResponseMagic, 4);
  out.append(reinterpret_cast<const char*>(&probability), 4);
  return out;
}

}  // namespace wire

namespace {

static_assert(sizeof(float) == 4);

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

int remaining_ms(std::chrono::steady_clock::time_point deadline) {
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
  return static_cast<int>(std::max<long long>(0, left.count()));
}

}  // namespace

ExternalBackend::ExternalBackend(std::string name, int read_fd, int write_fd, pid_t child,
                                 std::chrono::milliseconds timeout)
    : name_(std::move(name)), read_fd_(read_fd), write_fd_(write_fd), child_(child), timeout_(timeout) {}

ExternalBackend::~ExternalBackend() { shutdown(); }

std::unique_ptr<ExternalBackend> ExternalBackend::spawn(const std::string& command,
                                                        std::chrono::milliseconds timeout) {
  ignore_sigpipe();
  int to_child[2], from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw Error(std::string("pipe: ") + std::strerror(errno));
  }
  pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
    throw Error(std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  return std::unique_ptr<ExternalBackend>(
      new ExternalBackend("exec:" + command, from_child[0], to_child[1], pid, timeout));
}

std::unique_ptr<ExternalBackend> ExternalBackend::connect(const std::string& host_port,
                                                          std::chrono::milliseconds timeout) {
  ignore_sigpipe();
  auto colon = host_port.rfind(':');
  if (colon == std::string::npos) throw ContractViolation("tcp backend needs host:port, got '" + host_port + "'");
  const std::string host = host_port.substr(0, colon);
  const std::string port = host_port.substr(colon + 1);

  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
    throw Error("cannot resolve " + host_port + ": " + ::gai_strerror(rc));
  int fd = -1;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw Error("cannot connect to " + host_port);
  int dup = ::fcntl(fd, F_DUPFD_CLOEXEC, 0);
  return std::unique_ptr<ExternalBackend>(new ExternalBackend("tcp:" + host_port, fd, dup, -1, timeout));
}

void ExternalBackend::shutdown() {
  if (write_fd_ >= 0) ::close(write_fd_);
  if (read_fd_ >= 0) ::close(read_fd_);
  write_fd_ = read_fd_ = -1;
  if (child_ > 0) {
    ::kill(child_, SIGTERM);
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(child_, nullptr, WNOHANG) != 0) {
        child_ = -1;
        return;
      }
      ::usleep(4000);
    }
    ::kill(child_, SIGKILL);
    ::waitpid(child_, nullptr, 0);
    child_ = -1;
  }
}

void ExternalBackend::send_all(const std::string& bytes, std::chrono::steady_clock::time_point deadline) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    pollfd p{write_fd_, POLLOUT, 0};
    int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) throw BackendTimeout(name_ + ": timed out sending request");
    if (rc < 0) throw PeerExit(name_ + ": poll failed");
    ssize_t n = ::write(write_fd_, bytes.data() + sent, bytes.size() - sent);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw PeerExit(name_ + ": peer closed the connection (" + std::strerror(errno) + ")");
    }
    sent += static_cast<std::size_t>(n);
  }
}

void ExternalBackend::recv_exact(char* dst, std::size_t n, std::chrono::steady_clock::time_point deadline) {
  std::size_t got = 0;
  while (got < n) {
    pollfd p{read_fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) throw BackendTimeout(name_ + ": no response within " + std::to_string(timeout_.count()) + " ms");
    if (rc < 0) throw PeerExit(name_ + ": poll failed");
    ssize_t r = ::read(read_fd_, dst + got, n - got);
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw PeerExit(name_ + ": read failed (" + std::strerror(errno) + ")");
    }
    if (r == 0) throw PeerExit(name_ + ": peer closed the connection");
    got += static_cast<std::size_t>(r);
  }
}

double ExternalBackend::infer(std::span<const float> frame, const FrameContext&) {
  if (!usable()) throw PeerExit(name_ + ": backend is no longer connected");
  if (frame.size() < min_input_) throw FrameTooShort(frame.size(), min_input_);
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  char reply[8];
  try {
    send_all(wire::encode_request(frame), deadline);
    recv_exact(reply, sizeof reply, deadline);
  } catch (const Error&) {
    shutdown();
    throw;
  }
  if (std::memcmp(reply, wire::kResponseMagic, 4) != 0) {
    shutdown();
    throw BackendProtocolError(name_ + ": bad response magic");
  }
  float p;
  std::memcpy(&p, reply + 4, 4);
  if (std::isnan(p) || p < 0.0f) throw FrameTooShort(name_ + ": peer rejected a " + std::to_string(frame.size()) + "-sample frame");
  if (p > 1.0f) {
    shutdown();
    throw BackendProtocolError(name_ + ": probability " + std::to_string(p) + " out of range");
  }
  return p;
}

}  // namespace evsd
