// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <span>
#include <string>

#include "evsd/types.hpp"

namespace evsd {

// Source of mono float samples feeding the producer thread.
class AudioSource {
 public:
  virtual ~AudioSource() = default;

  virtual int sample_rate() const = 0;
  // Fills up to out.size() samples. Returns 0 only at end of stream or after
  // interrupt().
  virtual std::size_t read(std::span<float> out) = 0;
  // True when read() itself blocks at the capture rate (a device), false for
  // in-memory data the engine must pace.
  virtual bool self_paced() const = 0;
  // Total length in seconds when known, 0 otherwise.
  virtual double duration_s() const { return 0.0; }
  // Makes a blocked or future read() return 0.
  virtual void interrupt() { interrupted_ = true; }

 protected:
  std::atomic<bool> interrupted_{false};
};

class ClipSource final : public AudioSource {
 public:
  explicit ClipSource(const AudioClip& clip) : clip_(clip) {}

  int sample_rate() const override { return clip_.sample_rate; }
  std::size_t read(std::span<float> out) override;
  bool self_paced() const override { return false; }
  double duration_s() const override { return clip_.duration_s(); }

 private:
  const AudioClip& clip_;
  std::size_t pos_ = 0;
};

// Plays a clip in an endless loop at the real-time rate, standing in for a
// capture device.
class LoopingFileDevice final : public AudioSource {
 public:
  explicit LoopingFileDevice(AudioClip clip);

  int sample_rate() const override { return clip_.sample_rate; }
  std::size_t read(std::span<float> out) override;
  bool self_paced() const override { return true; }

 private:
  AudioClip clip_;
  std::size_t pos_ = 0;
  std::uint64_t delivered_ = 0;
  std::chrono::steady_clock::time_point start_;
  bool started_ = false;
};

// Raw signed 16-bit little-endian mono from a file descriptor (stdin by
// default), e.g. piped from `arecord -t raw -f S16_LE -c 1`.
class RawPcmDevice final : public AudioSource {
 public:
  RawPcmDevice(int fd, int sample_rate) : fd_(fd), rate_(sample_rate) {}

  int sample_rate() const override { return rate_; }
  std::size_t read(std::span<float> out) override;
  bool self_paced() const override { return true; }

 private:
  int fd_;
  int rate_;
  bool eof_ = false;
};

// Device names: `file:<wav>` (looped, real-time paced) or `stdin[:<rate>]`
// (raw s16le mono, default 32000 Hz).
std::unique_ptr<AudioSource> open_device(const std::string& name);

}  // namespace evsd
