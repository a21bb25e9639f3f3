// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "evsd/types.hpp"

namespace evsd {

// Chooses the length of each inference frame. Every over-threshold result
// grows the frame by increment_rate * (duration just classified), capped at
// max_frame_s; any sub-threshold result resets to the minimum frame.
class FrameSizer {
 public:
  FrameSizer(const EngineConfig& cfg, int sample_rate);

  std::int64_t next_frame_samples() const;
  double current_frame_s() const { return current_s_; }
  double min_frame_s() const { return min_s_; }
  double max_frame_s() const { return max_s_; }

  void report(double probability, double frame_duration_s);

  // Applies new rate/threshold/max settings, keeping the current size clamped
  // into the new bounds.
  void reconfigure(const EngineConfig& cfg);

 private:
  int sample_rate_;
  std::int64_t min_samples_;
  double min_s_;
  double max_s_;
  double rate_;
  double threshold_;
  double current_s_;
};

}  // namespace evsd
