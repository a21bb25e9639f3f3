// SPDX-License-Identifier: Apache-2.0
#include "evsd/frame_sizer.hpp"

#include <algorithm>
#include <cmath>

namespace evsd {

FrameSizer::FrameSizer(const EngineConfig& cfg, int sample_rate)
    : sample_rate_(sample_rate),
      min_samples_(cfg.min_frame_samples),
      min_s_(cfg.min_frame_s(sample_rate)),
      max_s_(cfg.max_frame_s),
      rate_(cfg.increment_rate),
      threshold_(cfg.effective_growth_threshold()),
      current_s_(min_s_) {
  if (auto err = cfg.validate(sample_rate)) throw ContractViolation("invalid config: " + *err);
}

std::int64_t FrameSizer::next_frame_samples() const {
  return std::max(min_samples_, static_cast<std::int64_t>(std::llround(current_s_ * sample_rate_)));
}

void FrameSizer::report(double probability, double frame_duration_s) {
  if (probability >= threshold_) {
    current_s_ = std::min(max_s_, current_s_ + rate_ * frame_duration_s);
  } else {
    current_s_ = min_s_;
  }
}

void FrameSizer::reconfigure(const EngineConfig& cfg) {
  if (auto err = cfg.validate(sample_rate_)) throw ContractViolation("invalid config: " + *err);
  min_samples_ = cfg.min_frame_samples;
  min_s_ = cfg.min_frame_s(sample_rate_);
  max_s_ = cfg.max_frame_s;
  rate_ = cfg.increment_rate;
  threshold_ = cfg.effective_growth_threshold();
  current_s_ = std::clamp(current_s_, min_s_, max_s_);
}

}  // namespace evsd
