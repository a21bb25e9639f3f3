// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cmath>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "evsd/audio_source.hpp"
#include "evsd/backend.hpp"
#include "evsd/engine.hpp"
#include "evsd/evaluation.hpp"
#include "evsd/io.hpp"
#include "evsd/min_input.hpp"
#include "evsd/sed_eval.hpp"
#include "evsd/stats.hpp"
#include "evsd/telemetry.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace evsd;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

struct ConfigFlags {
  std::string config_path;
  std::optional<double> threshold;
  std::optional<int> smoothing_window;
  std::optional<int> consecutive_k;
  std::optional<int> release_m;
  std::optional<double> max_frame_s;
  std::optional<double> rate;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "JSON file with EngineConfig fields")->check(CLI::ExistingFile);
    app->add_option("--threshold", threshold, "Decision threshold");
    app->add_option("--smoothing-window", smoothing_window, "Moving-average window (frames)");
    app->add_option("--consecutive-k", consecutive_k, "Frames above threshold to open an event");
    app->add_option("--release-m", release_m, "Frames below threshold to close an event");
    app->add_option("--max-frame", max_frame_s, "Maximum frame duration (s)");
    app->add_option("--rate", rate, "Frame growth rate (s per s); 0 keeps frames constant");
  }

  EngineConfig resolve() const {
    EngineConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      json j = json::parse(in, nullptr, false);
      if (j.is_discarded() || !j.is_object()) throw FormatError(config_path + ": not a JSON object");
      cfg = config_from_json(j, cfg);
    }
    if (threshold) cfg.threshold = *threshold;
    if (smoothing_window) cfg.smoothing_window = *smoothing_window;
    if (consecutive_k) cfg.consecutive_k = *consecutive_k;
    if (release_m) cfg.release_m = *release_m;
    if (max_frame_s) cfg.max_frame_s = *max_frame_s;
    if (rate) cfg.increment_rate = *rate;
    if (auto err = cfg.validate()) throw ContractViolation("invalid config: " + *err);
    std::cerr << "effective config: " << config_to_json(cfg).dump() << '\n';
    return cfg;
  }
};

struct AnnotationFlags {
  std::string annotations;
  std::string exclusions;
  bool relabel = false;

  void add_to(CLI::App* app, bool required) {
    auto* opt = app->add_option("--annotations", annotations, "Annotation TSV or JSONL")->check(CLI::ExistingFile);
    if (required) opt->required();
    app->add_option("--exclusions", exclusions, "Clip ids to exclude, one per line")->check(CLI::ExistingFile);
    app->add_flag("--relabel-excluded", relabel, "Keep excluded clips as negatives instead of dropping them");
  }

  AnnotationIndex load() const {
    std::optional<fs::path> ex;
    if (!exclusions.empty()) ex = exclusions;
    return load_annotations(annotations, ex, relabel ? ExclusionPolicy::kRelabelNegative : ExclusionPolicy::kDrop);
  }
};

double parse_duration(const std::string& text) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw CLI::ValidationError("--duration", "not a duration: " + text);
  }
  const std::string unit = text.substr(pos);
  double scale = 1.0;
  if (unit.empty() || unit == "s") scale = 1.0;
  else if (unit == "m" || unit == "min") scale = 60.0;
  else if (unit == "h") scale = 3600.0;
  else throw CLI::ValidationError("--duration", "unknown unit '" + unit + "'");
  if (!(v > 0.0)) throw CLI::ValidationError("--duration", "must be positive");
  return v * scale;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
}

int cmd_min_input(const std::string& spec, std::size_t lo, std::size_t hi, bool verify) {
  auto backend = make_backend(spec);
  MinInputOptions opts;
  opts.verify = verify;
  const MinInputResult r = find_min_input_size(*backend, lo, hi, opts);
  std::cout << r.min_samples << '\n';
  std::cerr << "probes: " << r.probes << '\n';
  return 0;
}

int cmd_simulate(const std::string& clips_dir, const AnnotationFlags& ann, const std::string& spec,
                 const EngineConfig& cfg, const fs::path& out, const std::string& mode) {
  std::vector<fs::path> wavs;
  if (!fs::is_directory(clips_dir)) throw FormatError("clip directory " + clips_dir + " does not exist");
  for (const auto& e : fs::directory_iterator(clips_dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") wavs.push_back(e.path());
  std::sort(wavs.begin(), wavs.end());
  if (wavs.empty()) throw FormatError("no .wav files in " + clips_dir);

  std::optional<AnnotationIndex> index;
  if (!ann.annotations.empty()) index = ann.load();

  ensure_dir(out);
  auto backend = make_backend(spec);
  const RunMode run_mode = mode == "offline" ? RunMode::kOfflineFast : RunMode::kSimulatedRealTime;
  std::vector<fs::path> written;
  try {
    for (const auto& wav : wavs) {
      if (g_interrupted) throw Error("interrupted");
      const std::string id = wav.stem().string();
      if (index && !index->evaluated(id)) {
        std::cerr << id << ": excluded\n";
        continue;
      }
      AudioClip clip = load_clip(wav);
      clip.clip_id = id;
      if (clip.rate_mismatch)
        std::cerr << id << ": warning: sample rate " << clip.sample_rate << " differs from " << kDefaultSampleRate << '\n';
      const InferenceLog log = run_clip(clip, cfg, *backend, run_mode);
      if (!log.interruptions.empty()) throw Error(id + ": " + log.interruptions.front().reason);
      const fs::path path = out / (id + ".log.jsonl");
      write_log(path, log);
      written.push_back(path);
      std::cerr << id << ": " << log.frames.size() << " frames, " << log.detections.size() << " detections\n";
    }
  } catch (...) {
    for (const auto& p : written) fs::remove(p);
    throw;
  }
  return 0;
}

int cmd_evaluate(const fs::path& logs_dir, const AnnotationFlags& ann, double resolution, double threshold,
                 bool segment_er, const fs::path& out) {
  const auto logs = load_log_dir(logs_dir);
  const AnnotationIndex index = ann.load();
  EvaluationOptions opts;
  opts.resolution_s = resolution;
  opts.threshold = threshold;
  if (segment_er) opts.error_rate_mode = FramewiseErrorRate::kSegmentBased;
  const EvaluationSummary s = evaluate_logs(logs, index, opts);
  if (s.clips.empty()) throw Error("no evaluable clips (all excluded?)");
  ensure_dir(out);
  const json j = to_json(s);
  write_file_atomic(out / "framewise.csv", framewise_csv(s));
  write_file_atomic(out / "events.csv", events_csv(s));
  write_file_atomic(out / "evaluation.json", j.dump(2) + "\n");
  std::cout << json{{"framewise", j["framewise"]}, {"event_based", j["event_based"]}}.dump(2) << '\n';
  return 0;
}

int cmd_fp_report(const fs::path& logs_dir, const AnnotationFlags& ann, double threshold, int run_n,
                  const fs::path& out) {
  const auto logs = load_log_dir(logs_dir);
  const AnnotationIndex index = ann.load();
  std::vector<ClipLog> clips;
  for (const auto& log : logs)
    if (index.evaluated(log.clip_id)) clips.push_back({&log, index.for_clip(log.clip_id)});
  if (clips.empty()) throw Error("no evaluable clips (all excluded?)");
  const FPReport r = fp_analysis(clips, threshold, run_n);
  ensure_dir(out);
  write_file_atomic(out / "fp_report.json", to_json(r).dump(2) + "\n");
  write_file_atomic(out / "fp_hist.csv", fp_histogram_csv(r));
  std::cout << to_json(r).dump(2) << '\n';
  return 0;
}

int cmd_audit(const fs::path& logs_dir, double threshold, const fs::path& out) {
  const auto logs = load_log_dir(logs_dir);
  std::vector<const InferenceLog*> ptrs;
  for (const auto& l : logs) ptrs.push_back(&l);
  const ConfidentFrameHistogram h = confident_frame_histogram(ptrs, threshold);
  json dist = json::object();
  for (const auto& [count, clips] : h.distribution) dist[std::to_string(count)] = clips;
  const json j{{"threshold", threshold}, {"distribution", dist}, {"zero_clips", h.zero_clips}};
  ensure_dir(out);
  write_file_atomic(out / "confident_frames.csv", confident_frames_csv(h));
  write_file_atomic(out / "confident_frames.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_live(const std::string& device, const std::string& spec, const std::string& serve,
             const std::string& static_dir, const std::optional<double>& duration, const EngineConfig& cfg,
             const fs::path& out) {
  ensure_dir(out);
  auto source = open_device(device);
  auto backend = make_backend(spec);
  Engine engine(cfg, *backend);

  std::unique_ptr<TelemetryServer> server;
  if (!serve.empty()) {
    TelemetryOptions topts;
    topts.bind = serve;
    if (!static_dir.empty()) topts.static_dir = static_dir;
    server = std::make_unique<TelemetryServer>(engine, topts);
    engine.set_observer(server.get());
    std::cerr << "telemetry on port " << server->port() << '\n';
  }

  std::atomic<bool> finished{false};
  std::thread watcher([&] {
    while (!finished) {
      if (g_interrupted) {
        engine.request_stop();
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
  });

  RunOptions opts;
  opts.mode = RunMode::kLive;
  opts.clip_id = "live";
  opts.duration_s = duration;
  InferenceLog log;
  try {
    log = engine.run(*source, opts);
  } catch (...) {
    finished = true;
    watcher.join();
    throw;
  }
  finished = true;
  watcher.join();
  if (server) server->stop();

  write_log(out / "live.log.jsonl", log);
  const RunStats stats = compute_stats(log);
  write_file_atomic(out / "runstats.json", stats_to_json(stats).dump(2) + "\n");
  std::cout << stats_to_json(stats).dump(2) << '\n';
  return 0;
}

int cmd_synth(const fs::path& out, double duration, const std::string& kind, std::uint32_t seed, int rate) {
  const std::size_t n = static_cast<std::size_t>(std::llround(duration * rate));
  std::vector<float> samples(n);
  std::mt19937 rng(seed);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    float s = 0.0f;
    if (kind == "siren") {
      const double f = 1100.0 + 400.0 * std::sin(2.0 * std::numbers::pi * 0.5 * t);
      phase += 2.0 * std::numbers::pi * f / rate;
      s = static_cast<float>(0.5 * std::sin(phase)) + 0.02f * noise(rng);
    } else if (kind == "noise") {
      s = 0.2f * noise(rng);
    } else if (kind != "silence") {
      throw CLI::ValidationError("--kind", "expected siren, noise or silence");
    }
    samples[i] = std::clamp(s, -1.0f, 1.0f);
  }
  write_wav(out, samples, rate);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Real-time emergency-siren sound event detection engine"};
  app.require_subcommand(1);

  // min-input
  auto* min_input = app.add_subcommand("min-input", "Find the smallest frame a backend accepts");
  std::string mi_backend;
  std::size_t mi_lo = 1, mi_hi = 320000;
  bool mi_verify = false;
  min_input->add_option("--backend", mi_backend, "Backend spec")->required();
  min_input->add_option("--lo", mi_lo, "Smallest length to consider")->check(CLI::PositiveNumber);
  min_input->add_option("--hi", mi_hi, "Largest length to consider")->check(CLI::PositiveNumber);
  min_input->add_flag("--verify", mi_verify, "Re-probe to detect non-monotone backends");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Run every clip through the engine and write one log per clip");
  std::string sim_clips, sim_backend, sim_out, sim_mode = "rt";
  AnnotationFlags sim_ann;
  ConfigFlags sim_cfg;
  simulate->add_option("--clips", sim_clips, "Directory of .wav clips")->required();
  sim_ann.add_to(simulate, false);
  simulate->add_option("--backend", sim_backend, "Backend spec")->required();
  simulate->add_option("--out", sim_out, "Output directory")->required();
  simulate->add_option("--mode", sim_mode, "rt (paced at real time) or offline (as fast as possible)")
      ->check(CLI::IsMember({"rt", "offline"}));
  sim_cfg.add_to(simulate);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Framewise and event-based metrics over a log directory");
  std::string ev_logs, ev_out;
  AnnotationFlags ev_ann;
  double ev_res = 0.1, ev_thr = 0.5;
  bool ev_segment = false;
  evaluate->add_option("--logs", ev_logs, "Directory of *.log.jsonl")->required();
  ev_ann.add_to(evaluate, true);
  evaluate->add_option("--resolution", ev_res, "Grid resolution (s)")->check(CLI::PositiveNumber);
  evaluate->add_option("--threshold", ev_thr, "Decision threshold")->check(CLI::Range(0.0, 1.0));
  evaluate->add_flag("--segment-error-rate", ev_segment, "Framewise error rate as (S+D+I)/N instead of 1-accuracy");
  evaluate->add_option("--out", ev_out, "Output directory (default: the log directory)");

  // fp-report
  auto* fp = app.add_subcommand("fp-report", "False-positive frame and run analysis");
  std::string fp_logs, fp_out;
  AnnotationFlags fp_ann;
  double fp_thr = 0.5;
  int fp_n = 3;
  fp->add_option("--logs", fp_logs, "Directory of *.log.jsonl")->required();
  fp_ann.add_to(fp, true);
  fp->add_option("--threshold", fp_thr, "Decision threshold")->check(CLI::Range(0.0, 1.0));
  fp->add_option("--run-n", fp_n, "Minimum run of FP frames forming an FP event")->check(CLI::PositiveNumber);
  fp->add_option("--out", fp_out, "Output directory (default: the log directory)");

  // audit
  auto* audit = app.add_subcommand("audit", "Histogram of confident frames per clip");
  std::string au_logs, au_out;
  double au_thr = 0.5;
  audit->add_option("--logs", au_logs, "Directory of *.log.jsonl")->required();
  audit->add_option("--threshold", au_thr, "Confidence threshold")->check(CLI::Range(0.0, 1.0));
  audit->add_option("--out", au_out, "Output directory (default: the log directory)");

  // live
  auto* live = app.add_subcommand("live", "Run on a capture device with optional WebSocket telemetry");
  std::string lv_device, lv_backend, lv_serve, lv_static, lv_duration, lv_out = ".";
  ConfigFlags lv_cfg;
  live->add_option("--device", lv_device, "file:<wav> or stdin[:<rate>]")->required();
  live->add_option("--backend", lv_backend, "Backend spec")->required();
  live->add_option("--serve", lv_serve, "Telemetry bind address host:port");
  live->add_option("--static", lv_static, "Directory served over HTTP alongside telemetry")->check(CLI::ExistingDirectory);
  live->add_option("--duration", lv_duration, "Stop after this long (e.g. 300, 5m, 1h)");
  live->add_option("--out", lv_out, "Output directory");
  lv_cfg.add_to(live);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic test clip");
  std::string sy_out, sy_kind = "siren";
  double sy_duration = 10.0;
  std::uint32_t sy_seed = 1;
  int sy_rate = kDefaultSampleRate;
  synth->add_option("--out", sy_out, "Output .wav")->required();
  synth->add_option("--duration", sy_duration, "Seconds")->check(CLI::PositiveNumber);
  synth->add_option("--kind", sy_kind, "siren, noise or silence")->check(CLI::IsMember({"siren", "noise", "silence"}));
  synth->add_option("--seed", sy_seed, "Noise seed");
  synth->add_option("--sample-rate", sy_rate, "Sample rate")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try {
    if (*min_input) {
      if (mi_lo > mi_hi) throw CLI::ValidationError("--lo", "must not exceed --hi");
      return cmd_min_input(mi_backend, mi_lo, mi_hi, mi_verify);
    }
    if (*simulate) return cmd_simulate(sim_clips, sim_ann, sim_backend, sim_cfg.resolve(), sim_out, sim_mode);
    if (*evaluate) return cmd_evaluate(ev_logs, ev_ann, ev_res, ev_thr, ev_segment, ev_out.empty() ? ev_logs : ev_out);
    if (*fp) return cmd_fp_report(fp_logs, fp_ann, fp_thr, fp_n, fp_out.empty() ? fp_logs : fp_out);
    if (*audit) return cmd_audit(au_logs, au_thr, au_out.empty() ? au_logs : au_out);
    if (*live) {
      std::optional<double> duration;
      if (!lv_duration.empty()) duration = parse_duration(lv_duration);
      return cmd_live(lv_device, lv_backend, lv_serve, lv_static, duration, lv_cfg.resolve(), lv_out);
    }
    if (*synth) return cmd_synth(sy_out, sy_duration, sy_kind, sy_seed, sy_rate);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
