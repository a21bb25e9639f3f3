// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"

#include "evsd/io.hpp"

using namespace evsd;
using evsd::test::TempDir;
using evsd::test::write_text;

TEST_CASE("load_clip reads a 10 s mono clip") {
  TempDir dir;
  std::vector<float> samples(320000, 0.25f);
  write_wav(dir / "a.wav", samples, 32000);
  const AudioClip clip = load_clip(dir / "a.wav");
  CHECK(clip.samples.size() == 320000);
  CHECK(clip.sample_rate == 32000);
  CHECK(clip.duration_s() == 10.0);
  CHECK_FALSE(clip.rate_mismatch);
  CHECK(clip.samples[1234] == doctest::Approx(0.25).epsilon(1e-4));
}

TEST_CASE("load_clip averages stereo to mono") {
  TempDir dir;
  std::vector<std::int16_t> lr;
  for (int i = 0; i < 1000; ++i) {
    lr.push_back(16384);
    lr.push_back(-16384);
  }
  evsd::test::write_pcm16(dir / "s.wav", lr, 2, 32000);
  const AudioClip clip = load_clip(dir / "s.wav");
  REQUIRE(clip.samples.size() == 1000);
  for (float s : clip.samples) CHECK(s == 0.0f);
}

TEST_CASE("9919 samples at 32 kHz last about 0.31 s") {
  TempDir dir;
  write_wav(dir / "m.wav", std::vector<float>(9919, 0.0f), 32000);
  CHECK(load_clip(dir / "m.wav").duration_s() == doctest::Approx(0.30997).epsilon(1e-5));
}

TEST_CASE("load_clip flags a rate mismatch and rejects bad files") {
  TempDir dir;
  write_wav(dir / "r.wav", std::vector<float>(100, 0.0f), 16000);
  CHECK(load_clip(dir / "r.wav").rate_mismatch);
  write_text(dir / "junk.wav", "definitely not audio");
  CHECK_THROWS_AS(load_clip(dir / "junk.wav"), FormatError);
  evsd::test::write_pcm16(dir / "empty.wav", {}, 1, 32000);
  CHECK_THROWS_AS(load_clip(dir / "empty.wav"), FormatError);
}

TEST_CASE("annotation rows parse directly") {
  TempDir dir;
  write_text(dir / "a.tsv", "Y123\t0.0\t4.2\tsiren\n");
  const AnnotationIndex idx = load_annotations(dir / "a.tsv");
  REQUIRE(idx.clips.count("Y123") == 1);
  const Annotation& a = idx.clips.at("Y123").front();
  CHECK(a.onset_s == 0.0);
  CHECK(a.offset_s == 4.2);
  CHECK(a.label == "siren");
}

TEST_CASE("exclusion list removes clips or relabels them negative") {
  TempDir dir;
  write_text(dir / "a.tsv",
             "# comment\nclip_id\tonset\toffset\tlabel\n"
             "A\t0\t1\tsiren\nB\t2\t3\tsiren\nC\t0.5\t1.5\tsiren\nA\t0.2\t0.4\tsiren\n");
  write_text(dir / "ex.txt", "B\n");
  const AnnotationIndex dropped = load_annotations(dir / "a.tsv", dir / "ex.txt");
  CHECK(dropped.clips.size() == 2);
  CHECK_FALSE(dropped.evaluated("B"));
  CHECK(dropped.evaluated("unannotated"));
  CHECK(dropped.for_clip("A").size() == 2);
  CHECK(dropped.for_clip("A")[0].onset_s == 0.0);  // sorted by onset
  CHECK(dropped.for_clip("A")[1].onset_s == 0.2);

  const AnnotationIndex relabeled =
      load_annotations(dir / "a.tsv", dir / "ex.txt", ExclusionPolicy::kRelabelNegative);
  CHECK(relabeled.evaluated("B"));
  CHECK(relabeled.for_clip("B").empty());
}

TEST_CASE("annotation errors carry line numbers") {
  TempDir dir;
  write_text(dir / "bad.tsv", "A\t0\t1\tsiren\nB\t3\t2\tsiren\n");
  try {
    load_annotations(dir / "bad.tsv");
    FAIL("expected a FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  write_text(dir / "neg.tsv", "A\t-1\t1\tsiren\n");
  CHECK_THROWS_AS(load_annotations(dir / "neg.tsv"), FormatError);
  write_text(dir / "short.tsv", "A\t1\n");
  CHECK_THROWS_AS(load_annotations(dir / "short.tsv"), FormatError);
}

TEST_CASE("annotations load from JSONL") {
  TempDir dir;
  write_text(dir / "a.jsonl", R"({"clip_id":"X","onset_s":1.0,"offset_s":2.5,"label":"siren"})" "\n");
  const auto idx = load_annotations(dir / "a.jsonl");
  REQUIRE(idx.for_clip("X").size() == 1);
  CHECK(idx.for_clip("X")[0].offset_s == 2.5);
}

TEST_CASE("config json rejects unknown keys and wrong types") {
  EngineConfig c;
  c.threshold = 0.7;
  c.growth_threshold = 0.6;
  CHECK(config_from_json(config_to_json(c)) == c);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"treshold", 0.5}}), FormatError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"threshold", "high"}}), FormatError);
  CHECK(config_from_json(nlohmann::json{{"release_m", 7}}).release_m == 7);
}

namespace {

InferenceLog random_log(std::mt19937& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  InferenceLog log;
  log.clip_id = "clip" + std::to_string(rng() % 1000);
  log.duration_s = 10.0 * u(rng);
  log.started_at = 1.7e9 + u(rng);
  log.dropped_samples = rng() % 50;
  log.config.increment_rate = u(rng);
  if (rng() % 2) log.config.growth_threshold = 0.1 + 0.8 * u(rng);
  double t = 0.0;
  const int frames = static_cast<int>(rng() % 40);
  for (int i = 0; i < frames; ++i) {
    FrameResult f;
    f.index = i;
    f.frame_samples = 9919 + static_cast<std::int64_t>(rng() % 5000);
    f.requested_s = static_cast<double>(f.frame_samples) / 32000 + 1e-7 * static_cast<double>(rng() % 100);
    f.start_s = t;
    f.end_s = t + static_cast<double>(f.frame_samples) / 32000;
    t = f.end_s;
    f.probability = u(rng);
    f.smoothed_probability = u(rng);
    f.processing_ms = 100.0 * u(rng);
    f.wall_timestamp = 1.7e9 + u(rng);
    log.frames.push_back(f);
  }
  for (int i = 0; i < static_cast<int>(rng() % 10); ++i) log.resources.push_back({1.7e9 + i, 100 * u(rng), 100 * u(rng)});
  for (int i = 0; i < static_cast<int>(rng() % 4); ++i)
    log.detections.push_back({u(rng), 1.0 + u(rng), u(rng), static_cast<std::int64_t>(rng() % 9 + 1)});
  if (rng() % 2) {
    EngineConfig c;
    c.threshold = u(rng) * 0.9 + 0.05;
    log.config_changes.push_back({1.7e9, static_cast<std::int64_t>(rng() % 10), c});
  }
  if (rng() % 3 == 0) log.interruptions.push_back({1.7e9, "stall \"quoted\"\nline"});
  return log;
}

}  // namespace

TEST_CASE("empty log round-trips as a header-only file") {
  InferenceLog log;
  std::ostringstream os;
  write_log(os, log);
  const std::string text = os.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 1);
  std::istringstream is(text);
  CHECK(read_log(is) == log);
}

TEST_CASE("a 32-frame log has one header, 32 frame and the resource records") {
  std::mt19937 rng(3);
  InferenceLog log = random_log(rng);
  log.frames.clear();
  for (int i = 0; i < 32; ++i) log.frames.push_back({i, 0.31 * i, 0.31 * (i + 1), 9919, 0.5, 0.5, 1.0, 0.0});
  log.resources = {{1.0, 2.0, 3.0}, {2.0, 3.0, 4.0}};
  log.detections.clear();
  log.config_changes.clear();
  log.interruptions.clear();
  std::ostringstream os;
  write_log(os, log);
  const std::string text = os.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 32 + 2);
}

TEST_CASE("random logs round-trip exactly") {
  std::mt19937 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const InferenceLog log = random_log(rng);
    std::ostringstream os;
    write_log(os, log);
    std::istringstream is(os.str());
    REQUIRE(read_log(is) == log);
  }
}

TEST_CASE("corrupt logs are rejected") {
  InferenceLog log;
  log.frames.push_back({0, 0.0, 0.31, 9919, 0.5, 0.5, 1.0, 0.0});
  std::ostringstream os;
  write_log(os, log);
  const std::string good = os.str();

  std::istringstream truncated(good.substr(0, good.size() - 5));
  CHECK_THROWS_AS(read_log(truncated), FormatError);

  std::string bad_version = good;
  bad_version.replace(bad_version.find("\"version\":1"), 11, "\"version\":9");
  std::istringstream v(bad_version);
  CHECK_THROWS_AS(read_log(v), FormatError);

  std::istringstream unknown(good + "{\"type\":\"mystery\"}\n");
  CHECK_THROWS_AS(read_log(unknown), FormatError);

  std::istringstream headless("{\"type\":\"frame\"}\n");
  CHECK_THROWS_AS(read_log(headless), FormatError);
}

TEST_CASE("write_file_atomic leaves no partial file") {
  TempDir dir;
  write_file_atomic(dir / "x.txt", "hello\n");
  CHECK(evsd::test::read_text(dir / "x.txt") == "hello\n");
  CHECK_FALSE(std::filesystem::exists(dir / "x.txt.partial"));
}
