// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace evsd {

inline constexpr int kDefaultSampleRate = 32000;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unreadable input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A caller or peer broke an interface precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

struct AudioClip {
  std::string clip_id;
  int sample_rate = kDefaultSampleRate;
  std::vector<float> samples;
  // Set when the file rate differs from the rate the caller expected.
  bool rate_mismatch = false;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct Annotation {
  std::string clip_id;
  double onset_s = 0.0;
  double offset_s = 0.0;
  std::string label;

  bool operator==(const Annotation&) const = default;
};

struct EngineConfig {
  double threshold = 0.5;
  // Frame growth threshold; unset means "same as threshold".
  std::optional<double> growth_threshold;
  std::int64_t min_frame_samples = 9919;
  double max_frame_s = 2.0;
  double increment_rate = 0.0;
  int smoothing_window = 5;
  int consecutive_k = 3;
  int release_m = 3;
  double grid_resolution_s = 0.1;
  int fp_run_n = 3;
  double buffer_capacity_s = 10.0;
  std::int64_t chunk_samples = 1024;

  double effective_growth_threshold() const {
    return growth_threshold.value_or(threshold);
  }
  double min_frame_s(int sample_rate) const {
    return static_cast<double>(min_frame_samples) / sample_rate;
  }

  // Returns a human-readable reason when the config is unusable at the given
  // sample rate, or nullopt when it is valid.
  std::optional<std::string> validate(int sample_rate = kDefaultSampleRate) const;

  bool operator==(const EngineConfig&) const = default;
};

struct FrameResult {
  std::int64_t index = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  std::int64_t frame_samples = 0;
  // Duration the frame sizer asked for; frame_samples is its rounding.
  double requested_s = 0.0;
  double probability = 0.0;
  double smoothed_probability = 0.0;
  double processing_ms = 0.0;
  double wall_timestamp = 0.0;

  double duration_s() const { return end_s - start_s; }
  bool operator==(const FrameResult&) const = default;
};

struct DetectionEvent {
  double onset_s = 0.0;
  double offset_s = 0.0;
  double peak_probability = 0.0;
  std::int64_t frame_count = 1;

  bool operator==(const DetectionEvent&) const = default;
};

struct ResourceSample {
  double timestamp = 0.0;
  double cpu_pct = 0.0;
  double mem_pct = 0.0;

  bool operator==(const ResourceSample&) const = default;
};

// A live reconfiguration, applied before frame `frame_index` was read.
struct ConfigChange {
  double timestamp = 0.0;
  std::int64_t frame_index = 0;
  EngineConfig config;

  bool operator==(const ConfigChange&) const = default;
};

struct Interruption {
  double timestamp = 0.0;
  std::string reason;

  bool operator==(const Interruption&) const = default;
};

struct InferenceLog {
  std::string clip_id = "live";
  int sample_rate = kDefaultSampleRate;
  // Length of the source audio; 0 for live sessions.
  double duration_s = 0.0;
  double started_at = 0.0;
  // Samples skipped because the producer overran the consumer.
  std::uint64_t dropped_samples = 0;
  EngineConfig config;
  std::vector<FrameResult> frames;
  std::vector<ResourceSample> resources;
  std::vector<DetectionEvent> detections;
  std::vector<ConfigChange> config_changes;
  std::vector<Interruption> interruptions;

  bool operator==(const InferenceLog&) const = default;
};

double wall_clock_now();

}  // namespace evsd
