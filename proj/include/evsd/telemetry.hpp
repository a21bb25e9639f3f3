// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "evsd/engine.hpp"

namespace evsd {

// Wire messages. `seq` is stamped by the server at broadcast time.
nlohmann::json frame_message(const FrameResult& fr, Phase phase);
nlohmann::json detection_message(const DetectionEvent& ev, bool opened);
nlohmann::json stats_message(const LiveStats& s);
nlohmann::json config_message(const EngineConfig& cfg);
nlohmann::json ack_message(bool ok, const std::string& reason);

// Parses a `set_config` control message. Unknown fields, missing or wrong
// `type`, and wrongly typed values are errors.
struct ControlParse {
  std::optional<ConfigPatch> patch;
  std::string error;
};
ControlParse parse_control(const std::string& text);

struct TelemetryOptions {
  // host:port; port 0 picks a free port.
  std::string bind = "127.0.0.1:8080";
  // Plain HTTP GETs are served from here when set.
  std::optional<std::filesystem::path> static_dir;
  // A client whose send queue reaches this length is disconnected.
  std::size_t queue_limit = 256;
};

// WebSocket fan-out of engine status plus operator control. Runs its own I/O
// thread; observer callbacks only serialize and hand off, never block.
class TelemetryServer final : public EngineObserver {
 public:
  // Binds immediately; throws Error when the address cannot be bound.
  TelemetryServer(Engine& engine, TelemetryOptions opts);
  ~TelemetryServer() override;

  TelemetryServer(const TelemetryServer&) = delete;
  TelemetryServer& operator=(const TelemetryServer&) = delete;

  unsigned short port() const;
  void stop();

  std::size_t clients() const;
  // Clients disconnected for a full send queue.
  std::uint64_t dropped_clients() const;

  void on_frame(const FrameResult& fr, Phase phase) override;
  void on_detection(const DetectionEvent& ev, bool opened) override;
  void on_config(const EngineConfig& cfg) override;
  void on_stats(const LiveStats& s) override;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

// Headless protocol client for tests and scripting.
class TelemetryClient {
 public:
  // With read_messages false the client never reads, simulating a stalled
  // peer.
  TelemetryClient(const std::string& host, unsigned short port, bool read_messages = true);
  ~TelemetryClient();

  TelemetryClient(const TelemetryClient&) = delete;
  TelemetryClient& operator=(const TelemetryClient&) = delete;

  // Next received message, or nullopt on timeout or after the connection
  // closed and the inbox is empty.
  std::optional<nlohmann::json> next(std::chrono::milliseconds timeout);
  // Skips messages until one of the given type arrives.
  std::optional<nlohmann::json> next_of(const std::string& type, std::chrono::milliseconds timeout);
  void send(const nlohmann::json& msg);
  void send_text(const std::string& text);
  bool closed() const;
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace evsd
