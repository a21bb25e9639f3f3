// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "evsd/io.hpp"
#include "evsd/sed_eval.hpp"

namespace evsd {

struct EvaluationOptions {
  double resolution_s = 0.1;
  double threshold = 0.5;
  EventMatchOptions match;
  FramewiseErrorRate error_rate_mode = FramewiseErrorRate::kOneMinusAccuracy;
};

struct ClipEvaluation {
  std::string clip_id;
  FramewiseReport framewise;
  EventReport events;
};

// Per-clip results plus pooled (micro) and per-clip-mean (macro) aggregates.
struct EvaluationSummary {
  std::vector<ClipEvaluation> clips;
  FramewiseReport framewise_micro;
  FramewiseReport framewise_macro;
  EventReport events_micro;
  EventReport events_macro;
};

// Logs whose clip is excluded from the annotation index are skipped; clips
// without annotations are scored as negatives.
EvaluationSummary evaluate_logs(const std::vector<InferenceLog>& logs, const AnnotationIndex& annotations,
                                const EvaluationOptions& opts);

// Every `*.log.jsonl` in `dir`, in file-name order. Throws if there are none.
std::vector<InferenceLog> load_log_dir(const std::filesystem::path& dir);

std::string framewise_csv(const EvaluationSummary& s);
std::string events_csv(const EvaluationSummary& s);
nlohmann::json to_json(const EvaluationSummary& s);

std::string fp_histogram_csv(const FPReport& r);
std::string confident_frames_csv(const ConfidentFrameHistogram& h);

}  // namespace evsd
