// SPDX-License-Identifier: Apache-2.0
#include "evsd/sed_eval.hpp"

#include <algorithm>
#include <cmath>

namespace evsd {

namespace {
// Slack for comparing times that went through decimal text or sums.
constexpr double kTimeEps = 1e-9;

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }
}  // namespace

BinaryGrid discretize(const InferenceLog& log, std::span<const Annotation> annotations, double resolution_s,
                      double threshold, double clip_duration_s) {
  if (!(resolution_s > 0.0)) throw ContractViolation("grid resolution must be positive");
  const auto& frames = log.frames;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!(frames[i].end_s > frames[i].start_s))
      throw ContractViolation("frame " + std::to_string(i) + " has non-positive duration");
    if (i > 0 && frames[i].start_s < frames[i - 1].end_s - kTimeEps)
      throw ContractViolation("frames " + std::to_string(i - 1) + " and " + std::to_string(i) + " overlap");
  }

  BinaryGrid grid;
  grid.resolution_s = resolution_s;
  grid.threshold = threshold;
  const auto n = static_cast<std::size_t>(std::max(0.0, std::ceil(clip_duration_s / resolution_s - kTimeEps)));
  grid.cells.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double centre = (static_cast<double>(i) + 0.5) * resolution_s;
    GridCell& cell = grid.cells[i];
    auto it = std::upper_bound(frames.begin(), frames.end(), centre,
                               [](double t, const FrameResult& f) { return t < f.start_s; });
    if (it != frames.begin() && centre < std::prev(it)->end_s) cell.prob = std::prev(it)->probability;
    cell.pred = cell.prob >= threshold;
    cell.ref = std::any_of(annotations.begin(), annotations.end(),
                           [centre](const Annotation& a) { return a.onset_s <= centre && centre < a.offset_s; });
  }
  return grid;
}

FramewiseReport framewise_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t tn, std::int64_t fn,
                                      FramewiseErrorRate mode) {
  FramewiseReport r;
  r.tp = tp;
  r.fp = fp;
  r.tn = tn;
  r.fn = fn;
  const auto d = [](std::int64_t x) { return static_cast<double>(x); };
  r.precision = ratio(d(tp), d(tp + fp));
  r.recall = ratio(d(tp), d(tp + fn));
  r.specificity = ratio(d(tn), d(tn + fp));
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  r.accuracy = ratio(d(tp + tn), d(r.total()));
  r.balanced_accuracy = (r.recall + r.specificity) / 2.0;
  if (mode == FramewiseErrorRate::kOneMinusAccuracy) {
    r.error_rate = r.total() > 0 ? 1.0 - r.accuracy : 0.0;
  } else {
    // Single class: a cell is never both a deletion and an insertion, so no
    // substitutions; N is the number of active reference cells.
    const std::int64_t n_ref = tp + fn;
    r.error_rate = n_ref > 0 ? d(fn + fp) / d(n_ref) : (fp > 0 ? 1.0 : 0.0);
  }
  return r;
}

FramewiseReport framewise_metrics(const BinaryGrid& grid, FramewiseErrorRate mode) {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (const auto& c : grid.cells) {
    if (c.pred && c.ref) ++tp;
    else if (c.pred) ++fp;
    else if (c.ref) ++fn;
    else ++tn;
  }
  return framewise_from_counts(tp, fp, tn, fn, mode);
}

std::vector<TimedScore> grid_scores(const BinaryGrid& grid) {
  std::vector<TimedScore> out;
  out.reserve(grid.cells.size());
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    out.push_back({static_cast<double>(i) * grid.resolution_s, static_cast<double>(i + 1) * grid.resolution_s,
                   grid.cells[i].prob});
  }
  return out;
}

std::vector<TimedScore> frame_scores(const InferenceLog& log) {
  std::vector<TimedScore> out;
  out.reserve(log.frames.size());
  for (const auto& f : log.frames) out.push_back({f.start_s, f.end_s, f.probability});
  return out;
}

std::vector<DetectionEvent> extract_events(std::span<const TimedScore> items, double threshold, int min_run) {
  std::vector<DetectionEvent> events;
  std::size_t i = 0;
  while (i < items.size()) {
    if (items[i].prob < threshold) {
      ++i;
      continue;
    }
    std::size_t j = i;
    double peak = 0.0;
    while (j < items.size() && items[j].prob >= threshold) peak = std::max(peak, items[j++].prob);
    if (static_cast<int>(j - i) >= min_run)
      events.push_back({items[i].start_s, items[j - 1].end_s, peak, static_cast<std::int64_t>(j - i)});
    i = j;
  }
  return events;
}

std::vector<DetectionEvent> extract_events(const BinaryGrid& grid, int min_run) {
  const auto scores = grid_scores(grid);
  return extract_events(scores, grid.threshold, min_run);
}

EventCounts match_events(std::span<const DetectionEvent> pred, std::span<const DetectionEvent> ref,
                         const EventMatchOptions& opts) {
  auto by_onset = [](const DetectionEvent& a, const DetectionEvent& b) { return a.onset_s < b.onset_s; };
  std::vector<DetectionEvent> p(pred.begin(), pred.end()), r(ref.begin(), ref.end());
  std::stable_sort(p.begin(), p.end(), by_onset);
  std::stable_sort(r.begin(), r.end(), by_onset);

  EventCounts c;
  c.n_pred = static_cast<std::int64_t>(p.size());
  c.n_ref = static_cast<std::int64_t>(r.size());
  std::vector<bool> used(p.size(), false);
  for (const auto& ref_ev : r) {
    const double offset_tol =
        std::max(opts.onset_collar_s, opts.offset_ratio * (ref_ev.offset_s - ref_ev.onset_s));
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (used[k]) continue;
      if (std::abs(p[k].onset_s - ref_ev.onset_s) > opts.onset_collar_s + kTimeEps) continue;
      if (opts.evaluate_offset && std::abs(p[k].offset_s - ref_ev.offset_s) > offset_tol + kTimeEps) continue;
      used[k] = true;
      ++c.n_correct;
      break;
    }
  }
  return c;
}

EventReport event_report_from_counts(const EventCounts& c) {
  EventReport r;
  r.counts = c;
  const auto d = [](std::int64_t x) { return static_cast<double>(x); };
  r.precision = ratio(d(c.n_correct), d(c.n_pred));
  r.recall = ratio(d(c.n_correct), d(c.n_ref));
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  if (c.n_ref > 0) {
    r.deletion_rate = d(c.n_ref - c.n_correct) / d(c.n_ref);
    r.insertion_rate = d(c.n_pred - c.n_correct) / d(c.n_ref);
    r.error_rate = *r.deletion_rate + *r.insertion_rate;
  }
  return r;
}

EventReport event_metrics(std::span<const DetectionEvent> pred, std::span<const DetectionEvent> ref,
                          const EventMatchOptions& opts) {
  return event_report_from_counts(match_events(pred, ref, opts));
}

std::vector<DetectionEvent> annotations_as_events(std::span<const Annotation> annotations) {
  std::vector<DetectionEvent> out;
  out.reserve(annotations.size());
  for (const auto& a : annotations) out.push_back({a.onset_s, a.offset_s, 1.0, 1});
  return out;
}

FPReport fp_analysis(std::span<const ClipLog> clips, double threshold, int fp_run_n) {
  if (fp_run_n < 1) throw ContractViolation("fp_run_n must be >= 1");
  FPReport r;
  double prob_sum = 0.0, event_prob_sum = 0.0, run_len_sum = 0.0;
  std::int64_t event_frames = 0;
  std::map<std::int64_t, double> bucket_prob_sum;

  for (const auto& clip : clips) {
    ++r.clips;
    const auto& frames = clip.log->frames;
    r.total_frames += static_cast<std::int64_t>(frames.size());
    for (const auto& f : frames) prob_sum += f.probability;

    auto is_fp = [&](const FrameResult& f) {
      if (f.probability < threshold) return false;
      return std::none_of(clip.annotations.begin(), clip.annotations.end(), [&f](const Annotation& a) {
        return f.start_s < a.offset_s && a.onset_s < f.end_s;
      });
    };

    std::size_t i = 0;
    while (i < frames.size()) {
      if (!is_fp(frames[i])) {
        ++i;
        continue;
      }
      std::size_t j = i;
      double run_prob = 0.0;
      while (j < frames.size() && is_fp(frames[j])) {
        run_prob += frames[j++].probability;
      }
      const auto len = static_cast<std::int64_t>(j - i);
      r.fp_frames += len;
      if (len >= fp_run_n) {
        ++r.fp_eb_t;
        event_prob_sum += run_prob;
        event_frames += len;
        run_len_sum += static_cast<double>(len);
        r.fp_eb_mrl = std::max(r.fp_eb_mrl, len);
        ++r.duration_histogram[len].count;
        bucket_prob_sum[len] += run_prob;
      }
      i = j;
    }
  }

  r.fp_fw_afps = ratio(static_cast<double>(r.fp_frames), static_cast<double>(r.clips));
  r.fp_fw_afpsp = ratio(static_cast<double>(r.fp_frames), static_cast<double>(r.total_frames));
  r.fp_fw_ac = ratio(prob_sum, static_cast<double>(r.total_frames));
  r.fp_eb_ac = ratio(event_prob_sum, static_cast<double>(event_frames));
  r.fp_eb_arl = ratio(run_len_sum, static_cast<double>(r.fp_eb_t));
  for (auto& [len, bucket] : r.duration_histogram)
    bucket.avg_confidence = bucket_prob_sum[len] / static_cast<double>(bucket.count * len);
  return r;
}

ConfidentFrameHistogram confident_frame_histogram(std::span<const InferenceLog* const> logs, double threshold) {
  ConfidentFrameHistogram h;
  for (const InferenceLog* log : logs) {
    const auto count = static_cast<std::int64_t>(std::count_if(
        log->frames.begin(), log->frames.end(), [threshold](const FrameResult& f) { return f.probability >= threshold; }));
    h.per_clip[log->clip_id] += count;
  }
  for (const auto& [clip, count] : h.per_clip) {
    ++h.distribution[count];
    if (count == 0) h.zero_clips.push_back(clip);
  }
  return h;
}

nlohmann::json to_json(const FramewiseReport& r) {
  return {{"tp", r.tp},
          {"fp", r.fp},
          {"tn", r.tn},
          {"fn", r.fn},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"accuracy", r.accuracy},
          {"specificity", r.specificity},
          {"balanced_accuracy", r.balanced_accuracy},
          {"error_rate", r.error_rate}};
}

nlohmann::json to_json(const EventReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"f_measure", {{"f1", r.f1}, {"precision", r.precision}, {"recall", r.recall}}},
          {"error_rate",
           {{"error_rate", opt(r.error_rate)},
            {"deletion_rate", opt(r.deletion_rate)},
            {"insertion_rate", opt(r.insertion_rate)}}},
          {"counts", {{"n_ref", r.counts.n_ref}, {"n_pred", r.counts.n_pred}, {"n_correct", r.counts.n_correct}}}};
}

nlohmann::json to_json(const FPReport& r) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& [len, b] : r.duration_histogram)
    hist.push_back({{"run_length", len}, {"count", b.count}, {"avg_confidence", b.avg_confidence}});
  return {{"clips", r.clips},
          {"total_frames", r.total_frames},
          {"fp_frames", r.fp_frames},
          {"FP_FW_AFPS", r.fp_fw_afps},
          {"FP_FW_AFPSP", r.fp_fw_afpsp},
          {"FP_FW_AC", r.fp_fw_ac},
          {"FP_EB_T", r.fp_eb_t},
          {"FP_EB_AC", r.fp_eb_ac},
          {"FP_EB_MRL", r.fp_eb_mrl},
          {"FP_EB_ARL", r.fp_eb_arl},
          {"duration_histogram", hist}};
}

}  // namespace evsd
