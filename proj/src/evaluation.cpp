// SPDX-License-Identifier: Apache-2.0
#include "evsd/evaluation.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace evsd {
namespace fs = std::filesystem;

namespace {

double clip_duration(const InferenceLog& log) {
  if (log.duration_s > 0.0) return log.duration_s;
  return log.frames.empty() ? 0.0 : log.frames.back().end_s;
}

FramewiseReport macro_framewise(const std::vector<ClipEvaluation>& clips) {
  FramewiseReport m;
  if (clips.empty()) return m;
  for (const auto& c : clips) {
    const auto& r = c.framewise;
    m.tp += r.tp;
    m.fp += r.fp;
    m.tn += r.tn;
    m.fn += r.fn;
    m.precision += r.precision;
    m.recall += r.recall;
    m.f1 += r.f1;
    m.accuracy += r.accuracy;
    m.specificity += r.specificity;
    m.balanced_accuracy += r.balanced_accuracy;
    m.error_rate += r.error_rate;
  }
  const double n = static_cast<double>(clips.size());
  for (double* v : {&m.precision, &m.recall, &m.f1, &m.accuracy, &m.specificity, &m.balanced_accuracy, &m.error_rate})
    *v /= n;
  return m;
}

EventReport macro_events(const std::vector<ClipEvaluation>& clips) {
  EventReport m;
  if (clips.empty()) return m;
  double er = 0.0, dr = 0.0, ir = 0.0;
  int with_ref = 0;
  for (const auto& c : clips) {
    const auto& r = c.events;
    m.counts.n_ref += r.counts.n_ref;
    m.counts.n_pred += r.counts.n_pred;
    m.counts.n_correct += r.counts.n_correct;
    m.f1 += r.f1;
    m.precision += r.precision;
    m.recall += r.recall;
    if (r.error_rate) {
      ++with_ref;
      er += *r.error_rate;
      dr += *r.deletion_rate;
      ir += *r.insertion_rate;
    }
  }
  const double n = static_cast<double>(clips.size());
  m.f1 /= n;
  m.precision /= n;
  m.recall /= n;
  if (with_ref > 0) {
    m.error_rate = er / with_ref;
    m.deletion_rate = dr / with_ref;
    m.insertion_rate = ir / with_ref;
  }
  return m;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

EvaluationSummary evaluate_logs(const std::vector<InferenceLog>& logs, const AnnotationIndex& annotations,
                                const EvaluationOptions& opts) {
  EvaluationSummary s;
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  EventCounts pooled;
  for (const auto& log : logs) {
    if (!annotations.evaluated(log.clip_id)) continue;
    const auto& refs = annotations.for_clip(log.clip_id);
    ClipEvaluation c;
    c.clip_id = log.clip_id;
    const BinaryGrid grid = discretize(log, refs, opts.resolution_s, opts.threshold, clip_duration(log));
    c.framewise = framewise_metrics(grid, opts.error_rate_mode);
    const auto pred = extract_events(grid);
    const auto ref = annotations_as_events(refs);
    const EventCounts counts = match_events(pred, ref, opts.match);
    c.events = event_report_from_counts(counts);

    tp += c.framewise.tp;
    fp += c.framewise.fp;
    tn += c.framewise.tn;
    fn += c.framewise.fn;
    pooled.n_ref += counts.n_ref;
    pooled.n_pred += counts.n_pred;
    pooled.n_correct += counts.n_correct;
    s.clips.push_back(std::move(c));
  }
  s.framewise_micro = framewise_from_counts(tp, fp, tn, fn, opts.error_rate_mode);
  s.framewise_macro = macro_framewise(s.clips);
  s.events_micro = event_report_from_counts(pooled);
  s.events_macro = macro_events(s.clips);
  return s;
}

std::vector<InferenceLog> load_log_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("log directory " + dir.string() + " does not exist");
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > 10 && name.ends_with(".log.jsonl")) paths.push_back(entry.path());
  }
  if (paths.empty()) throw FormatError("no *.log.jsonl files in " + dir.string());
  std::sort(paths.begin(), paths.end());
  std::vector<InferenceLog> logs;
  logs.reserve(paths.size());
  for (const auto& p : paths) logs.push_back(read_log(p));
  return logs;
}

std::string framewise_csv(const EvaluationSummary& s) {
  std::ostringstream os;
  os << "clip_id,tp,fp,tn,fn,precision,recall,f1,accuracy,specificity,balanced_accuracy,error_rate\n";
  auto row = [&os](const std::string& id, const FramewiseReport& r) {
    os << id << ',' << r.tp << ',' << r.fp << ',' << r.tn << ',' << r.fn << ',' << fmt(r.precision) << ','
       << fmt(r.recall) << ',' << fmt(r.f1) << ',' << fmt(r.accuracy) << ',' << fmt(r.specificity) << ','
       << fmt(r.balanced_accuracy) << ',' << fmt(r.error_rate) << '\n';
  };
  for (const auto& c : s.clips) row(c.clip_id, c.framewise);
  row("micro", s.framewise_micro);
  row("macro", s.framewise_macro);
  return os.str();
}

std::string events_csv(const EvaluationSummary& s) {
  std::ostringstream os;
  os << "clip_id,n_ref,n_pred,n_correct,f1,precision,recall,error_rate,deletion_rate,insertion_rate\n";
  auto row = [&os](const std::string& id, const EventReport& r) {
    os << id << ',' << r.counts.n_ref << ',' << r.counts.n_pred << ',' << r.counts.n_correct << ',' << fmt(r.f1)
       << ',' << fmt(r.precision) << ',' << fmt(r.recall) << ',' << fmt(r.error_rate) << ','
       << fmt(r.deletion_rate) << ',' << fmt(r.insertion_rate) << '\n';
  };
  for (const auto& c : s.clips) row(c.clip_id, c.events);
  row("micro", s.events_micro);
  row("macro", s.events_macro);
  return os.str();
}

nlohmann::json to_json(const EvaluationSummary& s) {
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : s.clips)
    clips.push_back({{"clip_id", c.clip_id}, {"framewise", to_json(c.framewise)}, {"event_based", to_json(c.events)}});
  return {{"framewise", {{"micro", to_json(s.framewise_micro)}, {"macro", to_json(s.framewise_macro)}}},
          {"event_based", {{"micro", to_json(s.events_micro)}, {"macro", to_json(s.events_macro)}}},
          {"clips", clips}};
}

std::string fp_histogram_csv(const FPReport& r) {
  std::ostringstream os;
  os << "run_length,count,avg_confidence\n";
  for (const auto& [len, b] : r.duration_histogram) os << len << ',' << b.count << ',' << fmt(b.avg_confidence) << '\n';
  return os.str();
}

std::string confident_frames_csv(const ConfidentFrameHistogram& h) {
  std::ostringstream os;
  os << "clip_id,confident_frames\n";
  for (const auto& [clip, count] : h.per_clip) os << clip << ',' << count << '\n';
  return os.str();
}

}  // namespace evsd
