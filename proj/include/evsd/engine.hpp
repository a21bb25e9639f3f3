// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>

#include "evsd/audio_source.hpp"
#include "evsd/backend.hpp"
#include "evsd/decision.hpp"
#include "evsd/types.hpp"

namespace evsd {

enum class RunMode {
  kSimulatedRealTime,  // producer paces the clip at real time
  kOfflineFast,        // producer writes as fast as the consumer drains
  kLive                // producer reads a capture device
};

// Subset of EngineConfig adjustable while running.
struct ConfigPatch {
  std::optional<double> threshold;
  std::optional<int> smoothing_window;
  std::optional<int> consecutive_k;
  std::optional<int> release_m;
  std::optional<double> increment_rate;
  std::optional<double> max_frame_s;

  EngineConfig apply_to(EngineConfig cfg) const;
  bool empty() const;
};

struct ControlResult {
  bool accepted = false;
  std::string reason;
};

struct LiveStats {
  double cpu_pct = 0.0;
  double mem_pct = 0.0;
  double rt_factor = 0.0;  // over frames completed so far
  double fps = 0.0;
  std::int64_t frames = 0;
};

// Callbacks run on engine threads (frames/detections/config on the consumer,
// stats on the monitor) and must not block.
class EngineObserver {
 public:
  virtual ~EngineObserver() = default;
  virtual void on_frame(const FrameResult&, Phase) {}
  virtual void on_detection(const DetectionEvent&, bool /*opened*/) {}
  virtual void on_config(const EngineConfig&) {}
  virtual void on_stats(const LiveStats&) {}
};

struct RunOptions {
  RunMode mode = RunMode::kSimulatedRealTime;
  std::string clip_id = "live";
  // Stop after this much wall time (live sessions).
  std::optional<double> duration_s;
  std::chrono::milliseconds monitor_period{100};
  // A stall is no frame for (expected frame duration + this).
  double stall_slack_s = 2.0;
};

// Producer / consumer / monitor pipeline around a ring buffer. The consumer
// (the thread calling run) alone touches the backend, frame sizer, smoother
// and decision state.
class Engine {
 public:
  Engine(EngineConfig cfg, DetectorBackend& backend);

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  InferenceLog run(AudioSource& source, const RunOptions& opts);

  // Thread-safe. Validated immediately; applied at the next frame boundary.
  ControlResult apply_control(const ConfigPatch& patch);
  // Thread-safe; the config after all accepted patches.
  EngineConfig config() const;
  void request_stop();
  bool running() const { return running_; }

  void set_observer(EngineObserver* observer) { observer_ = observer; }

 private:
  DetectorBackend& backend_;
  EngineObserver* observer_ = nullptr;

  mutable std::mutex control_mu_;
  EngineConfig target_;
  std::uint64_t target_version_ = 0;
  int sample_rate_ = kDefaultSampleRate;

  std::atomic<bool> stop_{false};
  std::atomic<bool> running_{false};
  std::mutex source_mu_;
  AudioSource* source_ = nullptr;
  class RingBuffer* ring_ = nullptr;
};

// Convenience wrapper: one clip through a fresh engine.
InferenceLog run_clip(const AudioClip& clip, const EngineConfig& cfg, DetectorBackend& backend,
                      RunMode mode);

}  // namespace evsd
