// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sys/types.h>

#include <chrono>
#include <memory>
#include <span>
#include <string>

#include "evsd/backend.hpp"

namespace evsd {

// Wire format (little-endian, one request outstanding at a time):
//   request  = "EVSD" | u32 sample_count | sample_count x f32
//   response = "EVSP" | f32 probability
// A response probability that is NaN or negative means the peer rejected the
// frame as too short.
namespace wire {
inline constexpr char kRequestMagic[4] = {'E', 'V', 'S', 'D'};
inline constexpr char kResponseMagic[4] = {'E', 'V', 'S', 'P'};

std::string encode_request(std::span<const float> samples);
std::string encode_response(float probability);
}  // namespace wire

// Runs inference in another process, over the stdio of a child or a TCP
// connection. Any transport failure leaves the instance unusable; later
// calls throw PeerExit.
class ExternalBackend final : public DetectorBackend {
 public:
  static constexpr std::chrono::milliseconds kDefaultTimeout{5000};

  // `command` runs under /bin/sh -c with its stdin/stdout as the transport.
  static std::unique_ptr<ExternalBackend> spawn(const std::string& command,
                                                std::chrono::milliseconds timeout = kDefaultTimeout);
  // `host_port` is "host:port".
  static std::unique_ptr<ExternalBackend> connect(const std::string& host_port,
                                                  std::chrono::milliseconds timeout = kDefaultTimeout);

  ~ExternalBackend() override;
  ExternalBackend(const ExternalBackend&) = delete;
  ExternalBackend& operator=(const ExternalBackend&) = delete;

  std::string name() const override { return name_; }
  std::size_t min_input_samples() const override { return min_input_; }
  void set_min_input_samples(std::size_t n) { min_input_ = n; }
  double infer(std::span<const float> frame, const FrameContext& ctx) override;

  bool usable() const { return read_fd_ >= 0; }

 private:
  ExternalBackend(std::string name, int read_fd, int write_fd, pid_t child,
                  std::chrono::milliseconds timeout);

  void send_all(const std::string& bytes, std::chrono::steady_clock::time_point deadline);
  void recv_exact(char* dst, std::size_t n, std::chrono::steady_clock::time_point deadline);
  void shutdown();

  std::string name_;
  int read_fd_;
  int write_fd_;
  pid_t child_;
  std::chrono::milliseconds timeout_;
  std::size_t min_input_ = 1;
};

}  // namespace evsd
