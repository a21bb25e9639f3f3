// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "evsd/types.hpp"

namespace evsd {

struct GridCell {
  double prob = 0.0;
  bool pred = false;
  bool ref = false;
};

struct BinaryGrid {
  double resolution_s = 0.1;
  double threshold = 0.5;
  std::vector<GridCell> cells;
};

// Samples the log onto a uniform grid: each cell takes the probability of the
// frame covering its centre (0 past the last frame), and ref = 1 when the
// centre lies inside an annotation. Cell count is ceil(duration / resolution).
// Throws ContractViolation on overlapping or unordered frames.
BinaryGrid discretize(const InferenceLog& log, std::span<const Annotation> annotations,
                      double resolution_s, double threshold, double clip_duration_s);

enum class FramewiseErrorRate {
  kOneMinusAccuracy,  // 1 - accuracy
  kSegmentBased       // (S + D + I) / N over active reference cells
};

struct FramewiseReport {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  double specificity = 0.0;
  double balanced_accuracy = 0.0;
  double error_rate = 0.0;

  std::int64_t total() const { return tp + fp + tn + fn; }
};

FramewiseReport framewise_metrics(const BinaryGrid& grid,
                                  FramewiseErrorRate mode = FramewiseErrorRate::kOneMinusAccuracy);
// Derives the rates from confusion counts (used for pooling across clips).
FramewiseReport framewise_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t tn, std::int64_t fn,
                                      FramewiseErrorRate mode = FramewiseErrorRate::kOneMinusAccuracy);

// A timed score: a grid cell or an inference frame.
struct TimedScore {
  double start_s;
  double end_s;
  double prob;
};

std::vector<TimedScore> grid_scores(const BinaryGrid& grid);
std::vector<TimedScore> frame_scores(const InferenceLog& log);

// Maximal runs of consecutive items with prob >= threshold, keeping runs of
// at least min_run items.
std::vector<DetectionEvent> extract_events(std::span<const TimedScore> items, double threshold,
                                           int min_run = 1);
std::vector<DetectionEvent> extract_events(const BinaryGrid& grid, int min_run = 1);

struct EventCounts {
  std::int64_t n_ref = 0;
  std::int64_t n_pred = 0;
  std::int64_t n_correct = 0;
};

struct EventReport {
  EventCounts counts;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  // Unset when there are no reference events.
  std::optional<double> error_rate;
  std::optional<double> deletion_rate;
  std::optional<double> insertion_rate;
};

struct EventMatchOptions {
  double onset_collar_s = 0.2;
  // Offset tolerance is max(onset_collar_s, offset_ratio * ref duration).
  double offset_ratio = 0.5;
  bool evaluate_offset = true;
};

// Greedy one-to-one matching in onset order.
EventCounts match_events(std::span<const DetectionEvent> pred, std::span<const DetectionEvent> ref,
                         const EventMatchOptions& opts = {});
EventReport event_report_from_counts(const EventCounts& c);
EventReport event_metrics(std::span<const DetectionEvent> pred, std::span<const DetectionEvent> ref,
                          const EventMatchOptions& opts = {});

std::vector<DetectionEvent> annotations_as_events(std::span<const Annotation> annotations);

struct FpBucket {
  std::int64_t count = 0;
  double avg_confidence = 0.0;
};

struct FPReport {
  std::int64_t clips = 0;
  std::int64_t total_frames = 0;
  std::int64_t fp_frames = 0;
  double fp_fw_afps = 0.0;   // FP frames per clip
  double fp_fw_afpsp = 0.0;  // FP frames / all frames
  double fp_fw_ac = 0.0;     // mean probability over all frames
  std::int64_t fp_eb_t = 0;  // FP events (runs >= N)
  double fp_eb_ac = 0.0;     // mean probability over frames inside FP events
  std::int64_t fp_eb_mrl = 0;
  double fp_eb_arl = 0.0;
  std::map<std::int64_t, FpBucket> duration_histogram;  // run length -> bucket
};

struct ClipLog {
  const InferenceLog* log;
  std::span<const Annotation> annotations;
};

// FP frame: prob >= threshold and no temporal overlap with any annotation.
// FP event: maximal run of >= fp_run_n consecutive FP frames.
FPReport fp_analysis(std::span<const ClipLog> clips, double threshold, int fp_run_n);

struct ConfidentFrameHistogram {
  std::map<std::string, std::int64_t> per_clip;       // clip -> frames >= threshold
  std::map<std::int64_t, std::int64_t> distribution;  // count -> number of clips
  std::vector<std::string> zero_clips;
};

ConfidentFrameHistogram confident_frame_histogram(std::span<const InferenceLog* const> logs, double threshold);

nlohmann::json to_json(const FramewiseReport& r);
nlohmann::json to_json(const EventReport& r);
nlohmann::json to_json(const FPReport& r);

}  // namespace evsd
