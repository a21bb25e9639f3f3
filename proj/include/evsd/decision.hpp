// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string_view>

#include "evsd/types.hpp"

namespace evsd {

// Moving average over the last `window` raw probabilities. During warm-up
// the mean is taken over however many values exist.
class MovingAverage {
 public:
  explicit MovingAverage(int window);

  double push(double p);
  void set_window(int window);
  int window() const { return window_; }
  std::size_t size() const { return recent_.size(); }

 private:
  int window_;
  std::deque<double> recent_;
};

enum class Phase { kIdle, kPending, kActive };

std::string_view phase_name(Phase p);

struct DecisionParams {
  double threshold = 0.5;
  int consecutive_k = 3;
  int release_m = 3;

  static DecisionParams from(const EngineConfig& c) {
    return {c.threshold, c.consecutive_k, c.release_m};
  }
};

struct StepOutcome {
  std::optional<DetectionEvent> opened;
  std::optional<DetectionEvent> closed;
};

// IDLE -> PENDING on the first positive frame; PENDING -> ACTIVE once
// consecutive_k positives have been seen in a row (onset backdated to the
// first of them); any negative in PENDING returns to IDLE. ACTIVE closes
// after release_m consecutive negatives, with the offset at the end of the
// last positive frame.
class DecisionEngine {
 public:
  explicit DecisionEngine(DecisionParams params);

  StepOutcome step(double smoothed_p, const FrameResult& frame);
  // Closes an ACTIVE event at end of stream.
  std::optional<DetectionEvent> finish();

  void set_params(DecisionParams params) { params_ = params; }
  const DecisionParams& params() const { return params_; }

  Phase phase() const { return phase_; }
  int positive_run() const { return positive_run_; }
  int negative_run() const { return negative_run_; }
  std::optional<double> pending_onset() const { return pending_onset_; }
  const std::optional<DetectionEvent>& active_event() const { return active_; }

 private:
  DecisionParams params_;
  Phase phase_ = Phase::kIdle;
  int positive_run_ = 0;
  int negative_run_ = 0;
  std::optional<double> pending_onset_;
  double pending_peak_ = 0.0;
  std::optional<DetectionEvent> active_;
};

}  // namespace evsd
