// SPDX-License-Identifier: Apache-2.0
#include "evsd/stats.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

namespace evsd {

double percentile_nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) throw ContractViolation("percentile of an empty sample");
  if (!(q > 0.0 && q <= 100.0)) throw ContractViolation("percentile rank must be in (0, 100]");
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(values.size()) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::optional<double> mean_or_none(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return mean(v);
}

}  // namespace

RunStats compute_stats(const InferenceLog& log) {
  if (log.frames.empty()) throw ContractViolation("cannot compute run statistics of an empty log");

  RunStats s;
  s.total_inferences = static_cast<std::int64_t>(log.frames.size());

  std::vector<double> processing, rt_all, normal_ms, adaptive_ms, normal_rt, adaptive_rt;
  processing.reserve(log.frames.size());
  for (const auto& f : log.frames) {
    const double frame_ms = 1000.0 * static_cast<double>(f.frame_samples) / log.sample_rate;
    const double rt = rt_factor(frame_ms, f.processing_ms);
    processing.push_back(f.processing_ms);
    rt_all.push_back(rt);
    if (f.frame_samples <= log.config.min_frame_samples) {
      normal_ms.push_back(frame_ms);
      normal_rt.push_back(rt);
    } else {
      adaptive_ms.push_back(frame_ms);
      adaptive_rt.push_back(rt);
    }
  }
  s.normal_avg_frame_ms = mean_or_none(normal_ms);
  s.adaptive_avg_frame_ms = mean_or_none(adaptive_ms);
  s.normal_avg_rt_factor = mean_or_none(normal_rt);
  s.adaptive_avg_rt_factor = mean_or_none(adaptive_rt);
  s.overall_rt_factor = mean(rt_all);
  s.avg_processing_ms = mean(processing);
  s.p95_processing_ms = percentile_nearest_rank(processing, 95.0);
  s.p99_processing_ms = percentile_nearest_rank(processing, 99.0);
  s.max_processing_ms = *std::max_element(processing.begin(), processing.end());

  // Session span on the wall clock.
  const auto& first = log.frames.front();
  double begin = log.started_at;
  if (begin <= 0.0)
    begin = first.wall_timestamp - first.processing_ms / 1000.0 -
            static_cast<double>(first.frame_samples) / log.sample_rate;
  double end = log.frames.back().wall_timestamp;
  if (!log.resources.empty()) end = std::max(end, log.resources.back().timestamp);
  double session_s = end - begin;
  if (!(session_s > 0.0)) {
    session_s = 0.0;
    for (const auto& f : log.frames) session_s += static_cast<double>(f.frame_samples) / log.sample_rate;
  }
  s.session_duration_h = session_s / 3600.0;
  s.avg_fps = static_cast<double>(s.total_inferences) / session_s;

  s.interruptions = static_cast<std::int64_t>(log.interruptions.size());
  s.interruption_rate_per_h = static_cast<double>(s.interruptions) / s.session_duration_h;
  s.detection_events = static_cast<std::int64_t>(log.detections.size());
  s.detection_rate_per_h = static_cast<double>(s.detection_events) / s.session_duration_h;

  if (!log.resources.empty()) {
    double cpu = 0.0, mem = 0.0;
    for (const auto& r : log.resources) {
      cpu += r.cpu_pct;
      mem += r.mem_pct;
      s.peak_cpu_pct = std::max(s.peak_cpu_pct, r.cpu_pct);
      s.peak_mem_pct = std::max(s.peak_mem_pct, r.mem_pct);
    }
    s.avg_cpu_pct = cpu / static_cast<double>(log.resources.size());
    s.avg_mem_pct = mem / static_cast<double>(log.resources.size());
  }
  return s;
}

nlohmann::json stats_to_json(const RunStats& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"total_inferences", s.total_inferences},
          {"normal_avg_frame_ms", opt(s.normal_avg_frame_ms)},
          {"adaptive_avg_frame_ms", opt(s.adaptive_avg_frame_ms)},
          {"avg_processing_ms", s.avg_processing_ms},
          {"p95_processing_ms", s.p95_processing_ms},
          {"p99_processing_ms", s.p99_processing_ms},
          {"max_processing_ms", s.max_processing_ms},
          {"overall_rt_factor", s.overall_rt_factor},
          {"normal_avg_rt_factor", opt(s.normal_avg_rt_factor)},
          {"adaptive_avg_rt_factor", opt(s.adaptive_avg_rt_factor)},
          {"session_duration_h", s.session_duration_h},
          {"interruptions", s.interruptions},
          {"interruption_rate_per_h", s.interruption_rate_per_h},
          {"avg_fps", s.avg_fps},
          {"avg_cpu_pct", s.avg_cpu_pct},
          {"peak_cpu_pct", s.peak_cpu_pct},
          {"avg_mem_pct", s.avg_mem_pct},
          {"peak_mem_pct", s.peak_mem_pct},
          {"detection_events", s.detection_events},
          {"detection_rate_per_h", s.detection_rate_per_h}};
}

namespace {

double process_cpu_seconds() {
  std::ifstream in("/proc/self/stat");
  std::string content((std::istreambuf_iterator<char>(in)), {});
  // Fields after the parenthesised command name; utime and stime are the
  // 14th and 15th fields overall.
  auto close = content.rfind(')');
  if (close == std::string::npos) return 0.0;
  std::istringstream is(content.substr(close + 2));
  std::string field;
  unsigned long long utime = 0, stime = 0;
  for (int i = 3; i <= 15 && is >> field; ++i) {
    if (i == 14) utime = std::stoull(field);
    if (i == 15) stime = std::stoull(field);
  }
  return static_cast<double>(utime + stime) / static_cast<double>(::sysconf(_SC_CLK_TCK));
}

double system_memory_bytes() {
  std::ifstream in("/proc/meminfo");
  std::string key;
  unsigned long long kb = 0;
  std::string unit;
  while (in >> key >> kb >> unit) {
    if (key == "MemTotal:") return static_cast<double>(kb) * 1024.0;
  }
  return 0.0;
}

}  // namespace

ResourceProbe::ResourceProbe()
    : last_cpu_s_(process_cpu_seconds()),
      last_wall_(wall_clock_now()),
      cores_(std::max(1u, std::thread::hardware_concurrency())),
      mem_total_bytes_(system_memory_bytes()) {}

std::uint64_t ResourceProbe::rss_bytes() {
  std::ifstream in("/proc/self/statm");
  unsigned long long size = 0, resident = 0;
  in >> size >> resident;
  return resident * static_cast<std::uint64_t>(::sysconf(_SC_PAGESIZE));
}

ResourceSample ResourceProbe::sample() {
  const double now = wall_clock_now();
  const double cpu = process_cpu_seconds();
  ResourceSample r;
  r.timestamp = now;
  const double wall = now - last_wall_;
  if (wall > 0.0) r.cpu_pct = std::clamp(100.0 * (cpu - last_cpu_s_) / (wall * cores_), 0.0, 100.0);
  if (mem_total_bytes_ > 0.0)
    r.mem_pct = std::clamp(100.0 * static_cast<double>(rss_bytes()) / mem_total_bytes_, 0.0, 100.0);
  last_cpu_s_ = cpu;
  last_wall_ = now;
  return r;
}

}  // namespace evsd
