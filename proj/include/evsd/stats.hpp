// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "evsd/types.hpp"

namespace evsd {

// Session summary. "Normal" frames are those at the minimum frame size,
// "adaptive" frames are grown ones; fields over an empty group are unset.
struct RunStats {
  std::int64_t total_inferences = 0;
  std::optional<double> normal_avg_frame_ms;
  std::optional<double> adaptive_avg_frame_ms;
  double avg_processing_ms = 0.0;
  double p95_processing_ms = 0.0;
  double p99_processing_ms = 0.0;
  double max_processing_ms = 0.0;
  double overall_rt_factor = 0.0;
  std::optional<double> normal_avg_rt_factor;
  std::optional<double> adaptive_avg_rt_factor;
  double session_duration_h = 0.0;
  std::int64_t interruptions = 0;
  double interruption_rate_per_h = 0.0;
  double avg_fps = 0.0;
  double avg_cpu_pct = 0.0;
  double peak_cpu_pct = 0.0;
  double avg_mem_pct = 0.0;
  double peak_mem_pct = 0.0;
  std::int64_t detection_events = 0;
  double detection_rate_per_h = 0.0;
};

// Nearest-rank percentile: the smallest value with at least q% of samples at
// or below it. q in (0, 100].
double percentile_nearest_rank(std::vector<double> values, double q);

// Frame duration over processing time.
inline double rt_factor(double frame_ms, double processing_ms) { return frame_ms / processing_ms; }

// Throws ContractViolation on a log without frames.
RunStats compute_stats(const InferenceLog& log);

nlohmann::json stats_to_json(const RunStats& s);

// Process CPU% (normalized to all cores) and resident memory as a share of
// system memory, read from /proc. Each sample() reports CPU use since the
// previous call.
class ResourceProbe {
 public:
  ResourceProbe();
  ResourceSample sample();
  // Resident set size in bytes.
  static std::uint64_t rss_bytes();

 private:
  double last_cpu_s_ = 0.0;
  double last_wall_ = 0.0;
  unsigned cores_ = 1;
  double mem_total_bytes_ = 0.0;
};

}  // namespace evsd
