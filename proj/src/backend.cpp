// SPDX-License-Identifier: Apache-2.0
#include "evsd/backend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <sstream>

#include "evsd/external_backend.hpp"

namespace evsd {

ScriptedBackend::ScriptedBackend(std::vector<Entry> schedule, std::size_t min_input_samples)
    : schedule_(std::move(schedule)), min_input_(min_input_samples) {
  if (schedule_.empty()) throw ContractViolation("scripted schedule is empty");
  for (std::size_t i = 0; i < schedule_.size(); ++i) {
    const auto& e = schedule_[i];
    if (!(e.probability >= 0.0 && e.probability <= 1.0))
      throw ContractViolation("scripted probability out of [0,1]");
    if (i > 0 && !(e.until_s > schedule_[i - 1].until_s))
      throw ContractViolation("scripted schedule times must be strictly increasing");
  }
}

ScriptedBackend ScriptedBackend::constant(double probability) {
  return ScriptedBackend({{std::numeric_limits<double>::infinity(), probability}});
}

ScriptedBackend ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open schedule " + path.string());
  std::vector<Entry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream is(line);
    std::string until, prob;
    if (!(is >> until)) continue;
    if (!(is >> prob)) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected '<until_s> <probability>'");
    try {
      double u = (until == "inf" || until == "Inf") ? std::numeric_limits<double>::infinity() : std::stod(until);
      entries.push_back({u, std::stod(prob)});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": not a number");
    }
  }
  return ScriptedBackend(std::move(entries));
}

double ScriptedBackend::infer(std::span<const float> frame, const FrameContext& ctx) {
  if (frame.size() < min_input_) throw FrameTooShort(frame.size(), min_input_);
  const double t = ctx.end_s(frame.size());
  for (const auto& e : schedule_)
    if (t < e.until_s) return e.probability;
  return schedule_.back().probability;
}

double MockBackend::infer(std::span<const float> frame, const FrameContext&) {
  ++probes_;
  if (frame.size() < min_) throw FrameTooShort(frame.size(), min_);
  return probability_;
}

namespace {
// FFTW planning is not thread-safe.
std::mutex& fftw_planner_mutex() {
  static std::mutex mu;
  return mu;
}
}  // namespace

struct HeuristicSirenBackend::Fft {
  float* in = nullptr;
  fftwf_complex* out = nullptr;
  fftwf_plan plan = nullptr;
  std::vector<float> hann;

  Fft() : hann(kWindow) {
    std::lock_guard lock(fftw_planner_mutex());
    in = fftwf_alloc_real(kWindow);
    out = fftwf_alloc_complex(kWindow / 2 + 1);
    plan = fftwf_plan_dft_r2c_1d(static_cast<int>(kWindow), in, out, FFTW_ESTIMATE);
    for (std::size_t i = 0; i < kWindow; ++i)
      hann[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / kWindow));
  }
  ~Fft() {
    std::lock_guard lock(fftw_planner_mutex());
    fftwf_destroy_plan(plan);
    fftwf_free(in);
    fftwf_free(out);
  }
  Fft(const Fft&) = delete;
  Fft& operator=(const Fft&) = delete;
};

HeuristicSirenBackend::HeuristicSirenBackend() : fft_(std::make_unique<Fft>()) {}
HeuristicSirenBackend::~HeuristicSirenBackend() = default;

double HeuristicSirenBackend::infer(std::span<const float> frame, const FrameContext& ctx) {
  if (frame.size() < kWindow) throw FrameTooShort(frame.size(), kWindow);

  const double bin_hz = static_cast<double>(ctx.sample_rate) / kWindow;
  const auto lo_bin = static_cast<std::size_t>(std::ceil(kBandLowHz / bin_hz));
  const auto hi_bin = std::min(kWindow / 2, static_cast<std::size_t>(std::floor(kBandHighHz / bin_hz)));

  double share_sum = 0.0, prominence_sum = 0.0;
  std::vector<double> peak_hz;
  std::size_t windows = 0;
  for (std::size_t start = 0; start + kWindow <= frame.size(); start += kHop) {
    ++windows;
    for (std::size_t i = 0; i < kWindow; ++i) fft_->in[i] = frame[start + i] * fft_->hann[i];
    fftwf_execute(fft_->plan);

    double total = 0.0, band = 0.0, peak = 0.0;
    std::size_t peak_bin = lo_bin;
    for (std::size_t k = 1; k <= kWindow / 2; ++k) {
      const double re = fft_->out[k][0], im = fft_->out[k][1];
      const double power = re * re + im * im;
      total += power;
      if (k >= lo_bin && k <= hi_bin) {
        band += power;
        if (power > peak) {
          peak = power;
          peak_bin = k;
        }
      }
    }
    if (total < 1e-12 || band <= 0.0 || hi_bin < lo_bin) continue;  // silent window
    const double band_mean = band / static_cast<double>(hi_bin - lo_bin + 1);
    share_sum += band / total;
    prominence_sum += peak / band_mean;
    peak_hz.push_back(peak_bin * bin_hz);
  }

  double x = 0.0;
  if (!peak_hz.empty()) {
    const double n = static_cast<double>(windows);
    const double share = share_sum / n;
    const double prominence = prominence_sum / n;
    double mean = 0.0;
    for (double f : peak_hz) mean += f;
    mean /= static_cast<double>(peak_hz.size());
    double var = 0.0;
    for (double f : peak_hz) var += (f - mean) * (f - mean);
    const double spread = std::sqrt(var / static_cast<double>(peak_hz.size()));
    x = share * std::min(1.0, prominence / 50.0) * (0.5 + 0.5 * std::min(1.0, spread / 100.0));
  }
  return 1.0 / (1.0 + std::exp(-12.0 * (x - 0.3)));
}

std::unique_ptr<DetectorBackend> make_backend(const std::string& spec) {
  auto rest = [&](std::size_t prefix) { return spec.substr(prefix); };
  if (spec == "heuristic") return std::make_unique<HeuristicSirenBackend>();
  if (spec.rfind("scripted:const:", 0) == 0) {
    return std::make_unique<ScriptedBackend>(ScriptedBackend::constant(std::stod(rest(15))));
  }
  if (spec.rfind("scripted:", 0) == 0)
    return std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(rest(9)));
  if (spec.rfind("exec:", 0) == 0) return ExternalBackend::spawn(rest(5));
  if (spec.rfind("tcp:", 0) == 0) return ExternalBackend::connect(rest(4));
  if (spec.rfind("mock:", 0) == 0) {
    std::string args = rest(5);
    auto colon = args.find(':');
    try {
      std::size_t m = std::stoull(args.substr(0, colon));
      double p = colon == std::string::npos ? 0.5 : std::stod(args.substr(colon + 1));
      return std::make_unique<MockBackend>(m, p);
    } catch (const std::exception&) {
      throw ContractViolation("bad mock backend spec '" + spec + "'");
    }
  }
  throw ContractViolation("unknown backend spec '" + spec +
                          "' (expected scripted:<path>, heuristic, exec:<cmd>, tcp:<host:port>, mock:<n>)");
}

}  // namespace evsd
