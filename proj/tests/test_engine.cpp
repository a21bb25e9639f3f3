// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cmath>
#include <functional>
#include <thread>

#include "doctest.h"
#include "oracles.hpp"

#include "evsd/engine.hpp"
#include "evsd/external_backend.hpp"

using namespace evsd;

namespace {

AudioClip ten_second_clip() {
  AudioClip c;
  c.clip_id = "ten";
  c.samples.resize(320000);
  for (std::size_t i = 0; i < c.samples.size(); ++i) c.samples[i] = static_cast<float>(0.1 * std::sin(0.05 * i));
  return c;
}

// Runs a hook before each inference.
class HookBackend final : public DetectorBackend {
 public:
  explicit HookBackend(std::function<double(std::size_t)> hook) : hook_(std::move(hook)) {}
  std::string name() const override { return "hook"; }
  std::size_t min_input_samples() const override { return 1; }
  double infer(std::span<const float>, const FrameContext&) override { return hook_(calls_++); }

 private:
  std::function<double(std::size_t)> hook_;
  std::size_t calls_ = 0;
};

}  // namespace

TEST_CASE("rate 0 on a 10 s clip gives 32 frames of 9919 samples") {
  auto b = ScriptedBackend::constant(0.9);
  EngineConfig cfg;
  const InferenceLog log = run_clip(ten_second_clip(), cfg, b, RunMode::kOfflineFast);
  REQUIRE(log.frames.size() == 32);
  for (std::size_t i = 0; i < log.frames.size(); ++i) {
    REQUIRE(log.frames[i].frame_samples == 9919);
    REQUIRE(log.frames[i].index == static_cast<std::int64_t>(i));
    REQUIRE(log.frames[i].start_s == static_cast<double>(9919 * i) / 32000);
  }
  CHECK(log.interruptions.empty());
  CHECK(log.dropped_samples == 0);
  CHECK(log.duration_s == 10.0);
}

TEST_CASE("always-positive backend at rate 0.4 grows geometrically") {
  auto b = ScriptedBackend::constant(0.9);
  EngineConfig cfg;
  cfg.increment_rate = 0.4;
  const InferenceLog log = run_clip(ten_second_clip(), cfg, b, RunMode::kOfflineFast);
  REQUIRE(log.frames.size() < 32);
  REQUIRE(log.frames.size() >= 3);
  const double d0 = 9919.0 / 32000;
  for (std::size_t k = 0; k < log.frames.size(); ++k) {
    const double want = oracle::geometric_duration(d0, 0.4, 2.0, static_cast<int>(k));
    REQUIRE(log.frames[k].frame_samples == std::max<std::int64_t>(9919, std::llround(want * 32000)));
    REQUIRE(std::abs(log.frames[k].requested_s - want) <= 1e-9 * want);
  }
  for (std::size_t k = 1; k < log.frames.size(); ++k) REQUIRE(log.frames[k].start_s == log.frames[k - 1].end_s);
}

TEST_CASE("offline runs are deterministic") {
  EngineConfig cfg;
  cfg.increment_rate = 0.2;
  auto run = [&] {
    ScriptedBackend b({{3.0, 0.1}, {6.0, 0.8}, {INFINITY, 0.2}});
    return run_clip(ten_second_clip(), cfg, b, RunMode::kOfflineFast);
  };
  const InferenceLog a = run(), b = run();
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    REQUIRE(a.frames[i].frame_samples == b.frames[i].frame_samples);
    REQUIRE(a.frames[i].start_s == b.frames[i].start_s);
    REQUIRE(a.frames[i].probability == b.frames[i].probability);
    REQUIRE(a.frames[i].smoothed_probability == b.frames[i].smoothed_probability);
  }
  CHECK(a.detections == b.detections);
  CHECK_FALSE(a.detections.empty());
}

TEST_CASE("offline mode runs far faster than real time") {
  auto b = ScriptedBackend::constant(0.1);
  const auto t0 = std::chrono::steady_clock::now();
  run_clip(ten_second_clip(), EngineConfig{}, b, RunMode::kOfflineFast);
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(2));
}

TEST_CASE("simulated real time paces the clip") {
  AudioClip c = ten_second_clip();
  c.samples.resize(32000);  // 1 s
  auto b = ScriptedBackend::constant(0.1);
  const auto t0 = std::chrono::steady_clock::now();
  const InferenceLog log = run_clip(c, EngineConfig{}, b, RunMode::kSimulatedRealTime);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(log.frames.size() == 3);
  CHECK(elapsed >= 0.9);
  CHECK(elapsed < 3.0);
}

TEST_CASE("a peer exiting mid-run is recorded as an interruption") {
  auto b = ExternalBackend::spawn(std::string(EVSD_FAKE_PEER) + " close 5");
  const InferenceLog log = run_clip(ten_second_clip(), EngineConfig{}, *b, RunMode::kOfflineFast);
  CHECK(log.frames.size() == 5);
  REQUIRE(log.interruptions.size() == 1);
  CHECK(log.interruptions[0].reason.find("backend failure") == 0);
}

TEST_CASE("config patches take effect at the next frame boundary") {
  Engine* engine = nullptr;
  HookBackend b([&](std::size_t call) {
    if (call == 4) {
      ConfigPatch p;
      p.threshold = 0.7;
      p.increment_rate = 0.2;
      REQUIRE(engine->apply_control(p).accepted);
    }
    return 0.9;
  });
  Engine e(EngineConfig{}, b);
  engine = &e;
  const AudioClip clip = ten_second_clip();
  ClipSource src(clip);
  RunOptions opts;
  opts.mode = RunMode::kOfflineFast;
  const InferenceLog log = e.run(src, opts);
  REQUIRE(log.config_changes.size() == 1);
  CHECK(log.config_changes[0].frame_index == 5);
  CHECK(log.config_changes[0].config.threshold == 0.7);
  CHECK(log.config_changes[0].config.increment_rate == 0.2);
  CHECK(log.config.threshold == 0.5);
  for (std::size_t i = 0; i <= 5; ++i) REQUIRE(log.frames[i].frame_samples == 9919);
  CHECK(log.frames[6].frame_samples == std::llround(9919.0 / 32000 * 1.2 * 32000));
  CHECK(e.config().threshold == 0.7);
}

TEST_CASE("invalid patches are rejected without changing the config") {
  auto b = ScriptedBackend::constant(0.1);
  Engine e(EngineConfig{}, b);
  ConfigPatch bad;
  bad.threshold = 1.5;
  const ControlResult r = e.apply_control(bad);
  CHECK_FALSE(r.accepted);
  CHECK(r.reason == "threshold out of (0,1)");
  CHECK(e.config().threshold == 0.5);
  ConfigPatch one;
  one.smoothing_window = 1;
  CHECK(e.apply_control(one).accepted);
  CHECK(e.config().smoothing_window == 1);
  CHECK_FALSE(e.apply_control(ConfigPatch{}).accepted);
}

TEST_CASE("a backend needing more than the minimum frame is refused") {
  MockBackend m(20000);
  CHECK_THROWS_AS(run_clip(ten_second_clip(), EngineConfig{}, m, RunMode::kOfflineFast), ContractViolation);
}

TEST_CASE("request_stop ends a looping device session") {
  auto b = ScriptedBackend::constant(0.1);
  Engine e(EngineConfig{}, b);
  LoopingFileDevice dev(ten_second_clip());
  std::thread stopper([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(1200));
    e.request_stop();
  });
  RunOptions opts;
  opts.mode = RunMode::kLive;
  const auto t0 = std::chrono::steady_clock::now();
  const InferenceLog log = e.run(dev, opts);
  stopper.join();
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(4));
  CHECK(log.frames.size() >= 2);
  CHECK_FALSE(e.running());
}

TEST_CASE("a looping device honours the session duration and samples resources") {
  auto b = ScriptedBackend::constant(0.1);
  Engine e(EngineConfig{}, b);
  LoopingFileDevice dev(ten_second_clip());
  RunOptions opts;
  opts.mode = RunMode::kLive;
  opts.duration_s = 1.5;
  const InferenceLog log = e.run(dev, opts);
  CHECK(log.frames.size() >= 3);
  CHECK(log.resources.size() >= 10);
  CHECK(log.interruptions.empty());
}
