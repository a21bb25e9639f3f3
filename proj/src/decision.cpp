// SPDX-License-Identifier: Apache-2.0
#include "evsd/decision.hpp"

#include <algorithm>
#include <numeric>

namespace evsd {

MovingAverage::MovingAverage(int window) : window_(window) {
  if (window < 1) throw ContractViolation("smoothing window must be >= 1");
}

double MovingAverage::push(double p) {
  recent_.push_back(p);
  while (recent_.size() > static_cast<std::size_t>(window_)) recent_.pop_front();
  return std::accumulate(recent_.begin(), recent_.end(), 0.0) / static_cast<double>(recent_.size());
}

void MovingAverage::set_window(int window) {
  if (window < 1) throw ContractViolation("smoothing window must be >= 1");
  window_ = window;
  while (recent_.size() > static_cast<std::size_t>(window_)) recent_.pop_front();
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kIdle: return "IDLE";
    case Phase::kPending: return "PENDING";
    case Phase::kActive: return "ACTIVE";
  }
  return "?";
}

DecisionEngine::DecisionEngine(DecisionParams params) : params_(params) {
  if (params.consecutive_k < 1 || params.release_m < 1)
    throw ContractViolation("consecutive_k and release_m must be >= 1");
}

StepOutcome DecisionEngine::step(double smoothed_p, const FrameResult& frame) {
  StepOutcome out;
  const bool positive = smoothed_p >= params_.threshold;

  switch (phase_) {
    case Phase::kIdle:
    case Phase::kPending:
      if (!positive) {
        phase_ = Phase::kIdle;
        positive_run_ = 0;
        pending_onset_.reset();
        pending_peak_ = 0.0;
        break;
      }
      if (phase_ == Phase::kIdle) {
        pending_onset_ = frame.start_s;
        pending_peak_ = 0.0;
      }
      phase_ = Phase::kPending;
      ++positive_run_;
      pending_peak_ = std::max(pending_peak_, smoothed_p);
      if (positive_run_ >= params_.consecutive_k) {
        active_ = DetectionEvent{*pending_onset_, frame.end_s, pending_peak_, positive_run_};
        out.opened = active_;
        phase_ = Phase::kActive;
        positive_run_ = 0;
        negative_run_ = 0;
        pending_onset_.reset();
      }
      break;

    case Phase::kActive:
      if (positive) {
        negative_run_ = 0;
        active_->offset_s = frame.end_s;
        active_->peak_probability = std::max(active_->peak_probability, smoothed_p);
        ++active_->frame_count;
      } else if (++negative_run_ >= params_.release_m) {
        out.closed = active_;
        active_.reset();
        phase_ = Phase::kIdle;
        negative_run_ = 0;
      }
      break;
  }
  return out;
}

std::optional<DetectionEvent> DecisionEngine::finish() {
  std::optional<DetectionEvent> closed;
  if (phase_ == Phase::kActive) closed = active_;
  active_.reset();
  phase_ = Phase::kIdle;
  positive_run_ = 0;
  negative_run_ = 0;
  pending_onset_.reset();
  return closed;
}

}  // namespace evsd
