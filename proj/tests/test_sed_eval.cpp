// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

#include "evsd/evaluation.hpp"
#include "evsd/sed_eval.hpp"

using namespace evsd;

namespace {

InferenceLog tiled_log(const std::vector<double>& probs, double frame_s = 0.31, const std::string& id = "c") {
  InferenceLog log;
  log.clip_id = id;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    FrameResult f;
    f.index = static_cast<std::int64_t>(i);
    f.start_s = frame_s * static_cast<double>(i);
    f.end_s = frame_s * static_cast<double>(i + 1);
    f.frame_samples = std::llround(frame_s * 32000);
    f.probability = probs[i];
    f.smoothed_probability = probs[i];
    log.frames.push_back(f);
  }
  log.duration_s = frame_s * static_cast<double>(probs.size());
  return log;
}

BinaryGrid grid_from(const std::vector<int>& pred, const std::vector<int>& ref, double res = 0.1) {
  BinaryGrid g;
  g.resolution_s = res;
  g.threshold = 0.5;
  for (std::size_t i = 0; i < pred.size(); ++i) g.cells.push_back({pred[i] ? 1.0 : 0.0, pred[i] != 0, ref[i] != 0});
  return g;
}

}  // namespace

TEST_CASE("one 0.31 s frame on a 0.1 s grid gives four cells") {
  const InferenceLog log = tiled_log({0.8});
  const BinaryGrid g = discretize(log, {}, 0.1, 0.5, 0.31);
  REQUIRE(g.cells.size() == 4);
  CHECK(g.cells[0].pred);
  CHECK(g.cells[1].pred);
  CHECK(g.cells[2].pred);
  CHECK_FALSE(g.cells[3].pred);
  CHECK(g.cells[3].prob == 0.0);
}

TEST_CASE("an annotation covering the clip marks every cell") {
  const InferenceLog log = tiled_log(std::vector<double>(32, 0.1));
  const std::vector<Annotation> ann{{"c", 0.0, 10.0, "siren"}};
  for (double res : {0.05, 0.1, 0.25}) {
    const BinaryGrid g = discretize(log, ann, res, 0.5, 10.0);
    for (const auto& c : g.cells) REQUIRE(c.ref);
  }
}

TEST_CASE("overlapping frames are a contract violation") {
  InferenceLog log = tiled_log({0.5, 0.5});
  log.frames[1].start_s = 0.2;
  CHECK_THROWS_AS(discretize(log, {}, 0.1, 0.5, 1.0), ContractViolation);
}

TEST_CASE("discretize matches a point-sampling oracle on random tilings") {
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    InferenceLog log;
    std::int64_t pos = 0;
    const int frames = static_cast<int>(rng() % 30);
    for (int i = 0; i < frames; ++i) {
      FrameResult f;
      f.frame_samples = 9919 + static_cast<std::int64_t>(rng() % 50000);
      f.start_s = static_cast<double>(pos) / 32000;
      pos += f.frame_samples;
      f.end_s = static_cast<double>(pos) / 32000;
      f.probability = u(rng);
      log.frames.push_back(f);
    }
    const double duration = static_cast<double>(pos) / 32000 + 2.0 * u(rng) + 0.01;
    std::vector<Annotation> anns;
    for (int a = 0; a < static_cast<int>(rng() % 4); ++a) {
      const double on = duration * u(rng);
      anns.push_back({"c", on, on + 0.01 + 3.0 * u(rng), "siren"});
    }
    const double res = 0.02 + 0.28 * u(rng);
    const double thr = u(rng);
    const BinaryGrid g = discretize(log, anns, res, thr, duration);
    REQUIRE(g.cells.size() == static_cast<std::size_t>(std::ceil(duration / res - 1e-9)));
    for (std::size_t i = 0; i < g.cells.size(); ++i) {
      const double t = (static_cast<double>(i) + 0.5) * res;
      const double p = oracle::point_sample(log, t);
      REQUIRE(g.cells[i].prob == p);
      REQUIRE(g.cells[i].pred == (p >= thr));
      REQUIRE(g.cells[i].ref == oracle::inside_any(anns, t));
    }
  }
}

TEST_CASE("perfect predictions score one everywhere") {
  const auto r = framewise_metrics(grid_from({1, 0, 1, 1, 0}, {1, 0, 1, 1, 0}));
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == 1.0);
  CHECK(r.accuracy == 1.0);
  CHECK(r.error_rate == 0.0);
}

TEST_CASE("all-positive predictions against a half-positive reference") {
  const auto r = framewise_metrics(grid_from({1, 1, 1, 1, 1, 1}, {1, 1, 1, 0, 0, 0}));
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 1.0);
  CHECK(r.specificity == 0.0);
  CHECK(r.balanced_accuracy == 0.5);
  CHECK(r.error_rate == 0.5);
}

TEST_CASE("undefined ratios are zero") {
  const auto r = framewise_metrics(grid_from({0, 0}, {0, 0}));
  CHECK(r.precision == 0.0);
  CHECK(r.recall == 0.0);
  CHECK(r.f1 == 0.0);
  CHECK(r.specificity == 1.0);
}

TEST_CASE("framewise metrics equal brute-force confusion counts on random grids") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<bool> pred(n), ref(n);
    std::vector<int> pi(n), ri(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = rng() % 2;
      ref[i] = rng() % 2;
      pi[i] = pred[i];
      ri[i] = ref[i];
    }
    const auto want = oracle::confusion(pred, ref);
    const auto r = framewise_metrics(grid_from(pi, ri));
    REQUIRE(r.tp == want.tp);
    REQUIRE(r.fp == want.fp);
    REQUIRE(r.tn == want.tn);
    REQUIRE(r.fn == want.fn);
    REQUIRE(r.total() == static_cast<std::int64_t>(n));
    REQUIRE(r.balanced_accuracy == doctest::Approx((r.recall + r.specificity) / 2));
    REQUIRE(r.error_rate == doctest::Approx(1.0 - r.accuracy));
    if (r.precision + r.recall > 0)
      REQUIRE(r.f1 == doctest::Approx(2 * r.precision * r.recall / (r.precision + r.recall)));
  }
}

TEST_CASE("segment-based framewise error rate") {
  const auto r = framewise_metrics(grid_from({1, 0, 1, 0}, {1, 1, 0, 0}), FramewiseErrorRate::kSegmentBased);
  CHECK(r.error_rate == 1.0);  // (D=1 + I=1) / N=2
}

TEST_CASE("raising the threshold never raises recall or lowers specificity") {
  std::mt19937 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> probs(30);
    for (auto& p : probs) p = u(rng);
    const InferenceLog log = tiled_log(probs);
    const std::vector<Annotation> ann{{"c", 2.0 * u(rng), 4.0 + 4.0 * u(rng), "siren"}};
    double last_recall = 2.0, last_spec = -1.0;
    for (double thr = 0.05; thr < 1.0; thr += 0.05) {
      const auto r = framewise_metrics(discretize(log, ann, 0.1, thr, log.duration_s));
      REQUIRE(r.recall <= last_recall);
      REQUIRE(r.specificity >= last_spec);
      last_recall = r.recall;
      last_spec = r.specificity;
    }
  }
}

TEST_CASE("event extraction on cells 0,1,1,0,1") {
  const BinaryGrid g = grid_from({0, 1, 1, 0, 1}, {0, 0, 0, 0, 0});
  const auto ev = extract_events(g, 1);
  REQUIRE(ev.size() == 2);
  CHECK(ev[0].onset_s == doctest::Approx(0.1));
  CHECK(ev[0].offset_s == doctest::Approx(0.3));
  CHECK(ev[1].onset_s == doctest::Approx(0.4));
  CHECK(ev[1].offset_s == doctest::Approx(0.5));
  CHECK(extract_events(g, 3).empty());
}

TEST_CASE("event extraction matches a regex run scan") {
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 3000; ++trial) {
    const std::size_t n = rng() % 80;
    std::vector<TimedScore> items;
    std::string bits;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = u(rng);
      items.push_back({0.1 * static_cast<double>(i), 0.1 * static_cast<double>(i + 1), p});
      bits += p >= 0.6 ? '1' : '0';
    }
    const int min_run = 1 + static_cast<int>(rng() % 4);
    const auto got = extract_events(items, 0.6, min_run);
    const auto want = oracle::regex_runs(bits, static_cast<std::size_t>(min_run));
    REQUIRE(got.size() == want.size());
    for (std::size_t k = 0; k < want.size(); ++k) {
      REQUIRE(got[k].onset_s == items[want[k].first].start_s);
      REQUIRE(got[k].offset_s == items[want[k].second - 1].end_s);
      REQUIRE(got[k].frame_count == static_cast<std::int64_t>(want[k].second - want[k].first));
    }
  }
}

TEST_CASE("identical event lists score perfectly") {
  const std::vector<DetectionEvent> ev{{1.0, 3.0, 1.0, 1}, {5.0, 6.0, 1.0, 1}};
  const auto r = event_metrics(ev, ev);
  CHECK(r.f1 == 1.0);
  CHECK(r.error_rate == 0.0);
}

TEST_CASE("one match and two spurious predictions give ER 1.5 and f1 0.4") {
  const std::vector<DetectionEvent> ref{{1.0, 3.0, 1.0, 1}, {6.0, 8.0, 1.0, 1}};
  const std::vector<DetectionEvent> pred{{1.1, 3.05, 1.0, 1}, {4.0, 4.5, 1.0, 1}, {9.0, 9.5, 1.0, 1}};
  const auto r = event_metrics(pred, ref);
  CHECK(r.counts.n_correct == 1);
  CHECK(r.deletion_rate == 0.5);
  CHECK(r.insertion_rate == 1.0);
  CHECK(r.error_rate == 1.5);
  CHECK(r.precision == doctest::Approx(1.0 / 3.0));
  CHECK(r.recall == 0.5);
  CHECK(r.f1 == doctest::Approx(0.4));
}

TEST_CASE("onset collar boundary") {
  const std::vector<DetectionEvent> ref{{1.0, 3.0, 1.0, 1}};
  CHECK(event_metrics(std::vector<DetectionEvent>{{1.19, 3.0, 1.0, 1}}, ref).counts.n_correct == 1);
  CHECK(event_metrics(std::vector<DetectionEvent>{{1.21, 3.0, 1.0, 1}}, ref).counts.n_correct == 0);
  CHECK(event_metrics(std::vector<DetectionEvent>{{0.8, 3.0, 1.0, 1}}, ref).counts.n_correct == 1);
}

TEST_CASE("offset tolerance is the larger of the collar and half the reference") {
  const std::vector<DetectionEvent> ref{{1.0, 5.0, 1.0, 1}};  // half length 2.0
  CHECK(event_metrics(std::vector<DetectionEvent>{{1.0, 6.9, 1.0, 1}}, ref).counts.n_correct == 1);
  CHECK(event_metrics(std::vector<DetectionEvent>{{1.0, 7.1, 1.0, 1}}, ref).counts.n_correct == 0);
  const std::vector<DetectionEvent> short_ref{{1.0, 1.2, 1.0, 1}};  // half length 0.1 < collar
  CHECK(event_metrics(std::vector<DetectionEvent>{{1.0, 1.39, 1.0, 1}}, short_ref).counts.n_correct == 1);
  EventMatchOptions onset_only;
  onset_only.evaluate_offset = false;
  CHECK(event_metrics(std::vector<DetectionEvent>{{1.0, 9.0, 1.0, 1}}, ref, onset_only).counts.n_correct == 1);
}

TEST_CASE("no reference events leaves error rates unset") {
  const auto r = event_metrics(std::vector<DetectionEvent>{{1.0, 2.0, 1.0, 1}}, {});
  CHECK_FALSE(r.error_rate);
  CHECK(r.counts.n_pred == 1);
}

TEST_CASE("error rate decomposes into deletions plus insertions") {
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 5000; ++trial) {
    std::vector<DetectionEvent> ref, pred;
    double t = 0.0;
    for (int i = 0; i < static_cast<int>(rng() % 6); ++i) {
      t += 0.5 + 2.0 * u(rng);
      const double len = 0.2 + 2.0 * u(rng);
      ref.push_back({t, t + len, 1.0, 1});
      t += len;
    }
    t = 0.0;
    for (int i = 0; i < static_cast<int>(rng() % 6); ++i) {
      t += 0.5 + 2.0 * u(rng);
      const double len = 0.2 + 2.0 * u(rng);
      pred.push_back({t, t + len, 1.0, 1});
      t += len;
    }
    const auto r = event_metrics(pred, ref);
    REQUIRE(r.counts.n_correct <= std::min(r.counts.n_ref, r.counts.n_pred));
    if (r.error_rate) REQUIRE(*r.error_rate == doctest::Approx(*r.deletion_rate + *r.insertion_rate));
  }
}

TEST_CASE("FP run of three frames outside any annotation") {
  const InferenceLog log = tiled_log({0.6, 0.7, 0.8, 0.2});
  const std::vector<ClipLog> clips{{&log, {}}};
  const FPReport r = fp_analysis(clips, 0.5, 3);
  CHECK(r.fp_frames == 3);
  CHECK(r.fp_eb_t == 1);
  CHECK(r.fp_eb_mrl == 3);
  CHECK(r.fp_eb_arl == 3.0);
  CHECK(r.fp_eb_ac == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(r.fp_fw_ac == doctest::Approx((0.6 + 0.7 + 0.8 + 0.2) / 4).epsilon(1e-12));
  REQUIRE(r.duration_histogram.count(3) == 1);
  CHECK(r.duration_histogram.at(3).count == 1);
  CHECK(r.duration_histogram.at(3).avg_confidence == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(fp_analysis(clips, 0.5, 4).fp_eb_t == 0);
}

TEST_CASE("a frame partly overlapping an annotation is not a false positive") {
  const InferenceLog log = tiled_log({0.9, 0.9});
  const std::vector<Annotation> ann{{"c", 0.45, 1.0, "siren"}};  // overlaps half of frame 2
  const std::vector<ClipLog> clips{{&log, ann}};
  CHECK(fp_analysis(clips, 0.5, 1).fp_frames == 1);
}

TEST_CASE("FP frame shares across two clips") {
  std::vector<double> a(32, 0.1), b(32, 0.1);
  for (int i : {3, 10}) a[i] = 0.9;
  for (int i : {1, 5, 20, 30}) b[i] = 0.9;
  const InferenceLog la = tiled_log(a, 0.31, "a"), lb = tiled_log(b, 0.31, "b");
  const std::vector<ClipLog> clips{{&la, {}}, {&lb, {}}};
  const FPReport r = fp_analysis(clips, 0.5, 3);
  CHECK(r.fp_fw_afps == 3.0);
  CHECK(r.fp_fw_afpsp == doctest::Approx(3.0 / 32.0).epsilon(1e-12));
  CHECK(r.fp_eb_t == 0);
}

TEST_CASE("mixed FP runs populate the histogram") {
  // runs of 3, 5 and 3; one run of 2 below N
  const std::vector<double> p{0.9, 0.9, 0.9, 0.1, 0.6, 0.6, 0.6, 0.6, 0.6, 0.1, 0.8, 0.8, 0.1, 0.7, 0.7, 0.7};
  const InferenceLog log = tiled_log(p);
  const std::vector<ClipLog> clips{{&log, {}}};
  const FPReport r = fp_analysis(clips, 0.5, 3);
  CHECK(r.fp_eb_t == 3);
  CHECK(r.fp_eb_mrl == 5);
  CHECK(r.fp_eb_arl == doctest::Approx(11.0 / 3.0));
  CHECK(r.fp_eb_ac == doctest::Approx((2.7 + 3.0 + 2.1) / 11.0));
  CHECK(r.duration_histogram.at(3).count == 2);
  CHECK(r.duration_histogram.at(3).avg_confidence == doctest::Approx((2.7 + 2.1) / 6.0));
  CHECK(r.duration_histogram.at(5).avg_confidence == doctest::Approx(0.6));
  CHECK(r.fp_eb_mrl >= r.fp_eb_arl);
}

TEST_CASE("full-coverage annotations leave no false positives") {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(40);
    for (auto& x : p) x = u(rng);
    const InferenceLog log = tiled_log(p);
    const std::vector<Annotation> ann{{"c", 0.0, log.duration_s, "siren"}};
    const std::vector<ClipLog> clips{{&log, ann}};
    REQUIRE(fp_analysis(clips, 0.5, 3).fp_frames == 0);
  }
}

TEST_CASE("FP runs match a regex scan over FP flags") {
  std::mt19937 rng(15);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> p(1 + rng() % 60);
    for (auto& x : p) x = u(rng);
    const InferenceLog log = tiled_log(p);
    std::vector<Annotation> ann;
    if (rng() % 2) ann.push_back({"c", log.duration_s * u(rng), log.duration_s * u(rng) + log.duration_s, "siren"});
    std::string bits;
    for (const auto& f : log.frames) {
      bool overlap = false;
      for (const auto& a : ann) overlap = overlap || (f.start_s < a.offset_s && a.onset_s < f.end_s);
      bits += (f.probability >= 0.5 && !overlap) ? '1' : '0';
    }
    const int n = 1 + static_cast<int>(rng() % 4);
    const auto runs = oracle::regex_runs(bits, static_cast<std::size_t>(n));
    const std::vector<ClipLog> clips{{&log, ann}};
    const FPReport r = fp_analysis(clips, 0.5, n);
    REQUIRE(r.fp_eb_t == static_cast<std::int64_t>(runs.size()));
    REQUIRE(r.fp_frames == static_cast<std::int64_t>(std::count(bits.begin(), bits.end(), '1')));
    for (const auto& [len, bucket] : r.duration_histogram) REQUIRE(len >= n);
  }
}

TEST_CASE("confident-frame histogram") {
  const InferenceLog a = tiled_log({0.5, 0.49, 0.7}, 0.31, "a");
  const InferenceLog z = tiled_log({0.0, 0.0}, 0.31, "z");
  const std::vector<const InferenceLog*> logs{&a, &z};
  const auto h = confident_frame_histogram(logs, 0.5);
  CHECK(h.per_clip.at("a") == 2);
  CHECK(h.per_clip.at("z") == 0);
  CHECK(h.zero_clips == std::vector<std::string>{"z"});
  CHECK(h.distribution.at(2) == 1);
  CHECK(h.distribution.at(0) == 1);
}

TEST_CASE("confident-frame counts match a counting oracle") {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<InferenceLog> logs;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> p(rng() % 40);
    for (auto& x : p) x = u(rng) < 0.3 ? u(rng) : 0.0;
    logs.push_back(tiled_log(p, 0.31, "clip" + std::to_string(i)));
  }
  std::vector<const InferenceLog*> ptrs;
  for (const auto& l : logs) ptrs.push_back(&l);
  const auto h = confident_frame_histogram(ptrs, 0.5);
  std::int64_t zero = 0;
  for (const auto& l : logs) {
    std::int64_t c = 0;
    for (const auto& f : l.frames) c += f.probability >= 0.5;
    REQUIRE(h.per_clip.at(l.clip_id) == c);
    zero += c == 0;
  }
  CHECK(static_cast<std::int64_t>(h.zero_clips.size()) == zero);
}

TEST_CASE("evaluate_logs pools counts for micro and averages clips for macro") {
  const InferenceLog a = tiled_log(std::vector<double>(10, 0.9), 0.3, "a");   // 3 s, all positive
  const InferenceLog b = tiled_log(std::vector<double>(10, 0.1), 0.3, "b");   // 3 s, all negative
  AnnotationIndex idx;
  idx.clips["a"] = {{"a", 0.0, 3.0, "siren"}};
  const auto s = evaluate_logs({a, b}, idx, {});
  REQUIRE(s.clips.size() == 2);
  CHECK(s.framewise_micro.tp == 30);
  CHECK(s.framewise_micro.tn == 30);
  CHECK(s.framewise_micro.accuracy == 1.0);
  CHECK(s.framewise_macro.recall == 0.5);  // clip b has no positives: recall 0 by convention
  CHECK(s.events_micro.counts.n_correct == 1);
  CHECK(s.events_micro.f1 == 1.0);
  const std::string csv = framewise_csv(s);
  CHECK(csv.find("micro,30,0,30,0") != std::string::npos);
  CHECK(events_csv(s).find("clip_id,n_ref") == 0);

  idx.excluded.insert("b");
  CHECK(evaluate_logs({a, b}, idx, {}).clips.size() == 1);
}

TEST_CASE("loading an empty log directory is an error") {
  evsd::test::TempDir dir;
  CHECK_THROWS_AS(load_log_dir(dir.path()), FormatError);
  CHECK_THROWS_AS(load_log_dir(dir / "missing"), FormatError);
}
