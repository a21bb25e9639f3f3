// SPDX-License-Identifier: Apache-2.0
#include "evsd/engine.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <thread>
#include <vector>

#include "evsd/frame_sizer.hpp"
#include "evsd/ring_buffer.hpp"
#include "evsd/stats.hpp"

namespace evsd {

EngineConfig ConfigPatch::apply_to(EngineConfig cfg) const {
  if (threshold) cfg.threshold = *threshold;
  if (smoothing_window) cfg.smoothing_window = *smoothing_window;
  if (consecutive_k) cfg.consecutive_k = *consecutive_k;
  if (release_m) cfg.release_m = *release_m;
  if (increment_rate) cfg.increment_rate = *increment_rate;
  if (max_frame_s) cfg.max_frame_s = *max_frame_s;
  return cfg;
}

bool ConfigPatch::empty() const {
  return !threshold && !smoothing_window && !consecutive_k && !release_m && !increment_rate && !max_frame_s;
}

Engine::Engine(EngineConfig cfg, DetectorBackend& backend)
    : backend_(backend), target_(cfg) {}

ControlResult Engine::apply_control(const ConfigPatch& patch) {
  if (patch.empty()) return {false, "no configurable fields given"};
  std::lock_guard lock(control_mu_);
  EngineConfig candidate = patch.apply_to(target_);
  if (auto err = candidate.validate(sample_rate_)) return {false, *err};
  target_ = candidate;
  ++target_version_;
  return {true, {}};
}

EngineConfig Engine::config() const {
  std::lock_guard lock(control_mu_);
  return target_;
}

void Engine::request_stop() {
  stop_ = true;
  std::lock_guard lock(source_mu_);
  if (source_ != nullptr) source_->interrupt();
  if (ring_ != nullptr) ring_->close();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

// Shared between the consumer and the monitor thread.
struct Progress {
  std::mutex mu;
  std::int64_t frames = 0;
  double rt_sum = 0.0;
  Clock::time_point last_frame = Clock::now();
  double expected_frame_s = 0.0;
  bool done = false;
  std::condition_variable done_cv;
};

}  // namespace

InferenceLog Engine::run(AudioSource& source, const RunOptions& opts) {
  const int sr = source.sample_rate();
  EngineConfig active;
  std::uint64_t active_version;
  {
    std::lock_guard lock(control_mu_);
    sample_rate_ = sr;
    active = target_;
    active_version = target_version_;
  }
  if (auto err = active.validate(sr)) throw ContractViolation("invalid config: " + *err);
  if (backend_.min_input_samples() > static_cast<std::size_t>(active.min_frame_samples)) {
    throw ContractViolation("backend needs " + std::to_string(backend_.min_input_samples()) +
                            " samples but min_frame_samples is " + std::to_string(active.min_frame_samples));
  }

  InferenceLog log;
  log.clip_id = opts.clip_id;
  log.sample_rate = sr;
  log.duration_s = source.duration_s();
  log.started_at = wall_clock_now();
  log.config = active;

  RingBuffer ring(static_cast<std::size_t>(std::llround(active.buffer_capacity_s * sr)));
  stop_ = false;
  running_ = true;
  {
    std::lock_guard lock(source_mu_);
    source_ = &source;
    ring_ = &ring;
  }

  const auto run_start = Clock::now();
  Progress progress;
  std::mutex log_mu;  // guards log.resources / log.interruptions

  std::thread producer([&, chunk_samples = static_cast<std::size_t>(active.chunk_samples)] {
    std::vector<float> chunk(chunk_samples);
    std::uint64_t written = 0;
    const auto t0 = Clock::now();
    try {
      while (!stop_) {
        const std::size_t n = source.read(chunk);
        if (n == 0) break;
        if (!source.self_paced()) {
          if (opts.mode == RunMode::kOfflineFast) {
            if (!ring.wait_writable(n)) break;
          } else {
            const auto due = t0 + std::chrono::duration_cast<Clock::duration>(
                                      std::chrono::duration<double>(static_cast<double>(written + n) / sr));
            while (!stop_ && Clock::now() < due)
              std::this_thread::sleep_for(std::min<Clock::duration>(due - Clock::now(), std::chrono::milliseconds(50)));
          }
        }
        ring.write(std::span<const float>(chunk.data(), n));
        written += n;
      }
    } catch (const std::exception& e) {
      std::lock_guard lock(log_mu);
      log.interruptions.push_back({wall_clock_now(), std::string("producer failed: ") + e.what()});
    }
    ring.close();
  });

  std::thread monitor([&] {
    ResourceProbe probe;
    bool stall_flagged = false;
    std::unique_lock lock(progress.mu);
    while (!progress.done) {
      progress.done_cv.wait_for(lock, opts.monitor_period);
      if (progress.done) break;
      LiveStats live;
      live.frames = progress.frames;
      live.rt_factor = progress.frames > 0 ? progress.rt_sum / static_cast<double>(progress.frames) : 0.0;
      const double elapsed = seconds_since(run_start);
      live.fps = elapsed > 0.0 ? static_cast<double>(progress.frames) / elapsed : 0.0;
      const double since_frame = seconds_since(progress.last_frame);
      const double allowed = progress.expected_frame_s + opts.stall_slack_s;
      lock.unlock();

      const ResourceSample r = probe.sample();
      live.cpu_pct = r.cpu_pct;
      live.mem_pct = r.mem_pct;
      {
        std::lock_guard g(log_mu);
        log.resources.push_back(r);
        if (since_frame > allowed && !stop_) {
          if (!stall_flagged)
            log.interruptions.push_back({r.timestamp, "stall: no frame completed for " + std::to_string(since_frame) + " s"});
          stall_flagged = true;
        } else {
          stall_flagged = false;
        }
      }
      if (observer_ != nullptr) observer_->on_stats(live);
      if (opts.duration_s && elapsed >= *opts.duration_s) request_stop();
      lock.lock();
    }
  });

  FrameSizer sizer(active, sr);
  MovingAverage smoother(active.smoothing_window);
  DecisionEngine decision(DecisionParams::from(active));
  std::int64_t index = 0;

  while (!stop_) {
    {
      std::unique_lock lock(control_mu_);
      if (target_version_ != active_version) {
        active = target_;
        active_version = target_version_;
        lock.unlock();
        sizer.reconfigure(active);
        smoother.set_window(active.smoothing_window);
        decision.set_params(DecisionParams::from(active));
        log.config_changes.push_back({wall_clock_now(), index, active});
        if (observer_ != nullptr) observer_->on_config(active);
      }
    }

    const std::int64_t n = sizer.next_frame_samples();
    const double requested_s = sizer.current_frame_s();
    {
      std::lock_guard lock(progress.mu);
      progress.expected_frame_s = static_cast<double>(n) / sr;
    }
    auto frame = ring.read_frame(static_cast<std::size_t>(n));
    if (!frame || stop_) break;

    const FrameContext ctx{static_cast<double>(frame->start_sample) / sr, sr};
    double p = 0.0;
    const auto t0 = Clock::now();
    try {
      p = backend_.infer(frame->samples, ctx);
    } catch (const std::exception& e) {
      std::lock_guard lock(log_mu);
      log.interruptions.push_back({wall_clock_now(), std::string("backend failure: ") + e.what()});
      break;
    }
    const double processing_ms =
        std::max(1e-6, std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    p = std::clamp(p, 0.0, 1.0);

    FrameResult fr;
    fr.index = index++;
    fr.start_s = ctx.start_s;
    fr.end_s = static_cast<double>(frame->start_sample + static_cast<std::uint64_t>(n)) / sr;
    fr.frame_samples = n;
    fr.requested_s = requested_s;
    fr.probability = p;
    fr.smoothed_probability = smoother.push(p);
    fr.processing_ms = processing_ms;
    fr.wall_timestamp = wall_clock_now();

    const StepOutcome outcome = decision.step(fr.smoothed_probability, fr);
    sizer.report(p, requested_s);
    log.frames.push_back(fr);

    if (observer_ != nullptr) observer_->on_frame(fr, decision.phase());
    if (outcome.opened && observer_ != nullptr) observer_->on_detection(*outcome.opened, true);
    if (outcome.closed) {
      log.detections.push_back(*outcome.closed);
      if (observer_ != nullptr) observer_->on_detection(*outcome.closed, false);
    }
    {
      std::lock_guard lock(progress.mu);
      ++progress.frames;
      progress.rt_sum += rt_factor(1000.0 * static_cast<double>(n) / sr, processing_ms);
      progress.last_frame = Clock::now();
    }
  }
  if (auto ev = decision.finish()) {
    log.detections.push_back(*ev);
    if (observer_ != nullptr) observer_->on_detection(*ev, false);
  }

  stop_ = true;
  source.interrupt();
  ring.close();
  {
    std::lock_guard lock(progress.mu);
    progress.done = true;
  }
  progress.done_cv.notify_all();
  producer.join();
  monitor.join();
  {
    std::lock_guard lock(source_mu_);
    source_ = nullptr;
    ring_ = nullptr;
  }
  log.dropped_samples = ring.dropped_samples();
  running_ = false;
  return log;
}

InferenceLog run_clip(const AudioClip& clip, const EngineConfig& cfg, DetectorBackend& backend, RunMode mode) {
  Engine engine(cfg, backend);
  ClipSource source(clip);
  RunOptions opts;
  opts.mode = mode;
  opts.clip_id = clip.clip_id;
  return engine.run(source, opts);
}

}  // namespace evsd
