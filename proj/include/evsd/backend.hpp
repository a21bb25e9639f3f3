// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "evsd/types.hpp"

namespace evsd {

// Thrown by infer() when the frame is below the backend's minimum input.
class FrameTooShort : public Error {
 public:
  FrameTooShort(std::size_t got, std::size_t need)
      : Error("frame of " + std::to_string(got) + " samples is shorter than the minimum " +
              std::to_string(need)),
        got_(got) {}
  explicit FrameTooShort(const std::string& what) : Error(what) {}
  std::size_t got() const { return got_; }

 private:
  std::size_t got_ = 0;
};

class BackendTimeout : public Error {
 public:
  using Error::Error;
};

class BackendProtocolError : public Error {
 public:
  using Error::Error;
};

class PeerExit : public Error {
 public:
  using Error::Error;
};

// Where a frame sits in the stream. Content-only backends ignore it.
struct FrameContext {
  double start_s = 0.0;
  int sample_rate = kDefaultSampleRate;

  double end_s(std::size_t n) const { return start_s + static_cast<double>(n) / sample_rate; }
};

class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;

  virtual std::string name() const = 0;
  virtual std::size_t min_input_samples() const = 0;
  virtual int declared_sample_rate() const { return kDefaultSampleRate; }

  // Probability of the emergency-vehicle class for this frame, in [0,1].
  // Throws FrameTooShort below min_input_samples(). Must not keep a
  // reference to `frame` after returning.
  virtual double infer(std::span<const float> frame, const FrameContext& ctx) = 0;
};

// Replays a fixed probability schedule keyed on the frame END time. Each
// entry holds while end time < until_s; the last entry is open-ended.
class ScriptedBackend final : public DetectorBackend {
 public:
  struct Entry {
    double until_s;
    double probability;
  };

  explicit ScriptedBackend(std::vector<Entry> schedule, std::size_t min_input_samples = 1);
  static ScriptedBackend constant(double probability);
  // Text file: one `<until_s> <probability>` pair per line, `inf` allowed,
  // `#` comments.
  static ScriptedBackend from_file(const std::filesystem::path& path);

  std::string name() const override { return "scripted"; }
  std::size_t min_input_samples() const override { return min_input_; }
  double infer(std::span<const float> frame, const FrameContext& ctx) override;

  const std::vector<Entry>& schedule() const { return schedule_; }

 private:
  std::vector<Entry> schedule_;
  std::size_t min_input_;
};

// Rejects frames shorter than a hidden minimum and returns a constant
// otherwise. Counts probes, for exercising the minimum-input search.
class MockBackend final : public DetectorBackend {
 public:
  explicit MockBackend(std::size_t min_samples, double probability = 0.5)
      : min_(min_samples), probability_(probability) {}

  std::string name() const override { return "mock"; }
  std::size_t min_input_samples() const override { return min_; }
  double infer(std::span<const float> frame, const FrameContext& ctx) override;

  std::size_t probes() const { return probes_; }

 private:
  std::size_t min_;
  double probability_;
  std::size_t probes_ = 0;
};

// Deterministic signal-processing stand-in for a trained model, so the live
// path can run without weights. Hann-windowed 1024-point STFT (hop 512);
// per window it measures the 500-2000 Hz energy share and the prominence of
// the strongest in-band peak, and over the frame the spread of that peak's
// frequency. Score:
//   x = band_share * min(1, prominence / 50) * (0.5 + 0.5 * min(1, spread / 100 Hz))
//   p = 1 / (1 + exp(-12 * (x - 0.3)))
// Not a classifier of record: only the ordering siren > noise is meaningful.
class HeuristicSirenBackend final : public DetectorBackend {
 public:
  static constexpr std::size_t kWindow = 1024;
  static constexpr std::size_t kHop = 512;
  static constexpr double kBandLowHz = 500.0;
  static constexpr double kBandHighHz = 2000.0;

  HeuristicSirenBackend();
  ~HeuristicSirenBackend() override;

  std::string name() const override { return "heuristic"; }
  std::size_t min_input_samples() const override { return kWindow; }
  double infer(std::span<const float> frame, const FrameContext& ctx) override;

 private:
  struct Fft;
  std::unique_ptr<Fft> fft_;
};

// Parses a backend spec:
//   scripted:<path> | scripted:const:<p> | heuristic | exec:<command> |
//   tcp:<host:port> | mock:<min_samples>[:<p>]
std::unique_ptr<DetectorBackend> make_backend(const std::string& spec);

}  // namespace evsd
