// SPDX-License-Identifier: Apache-2.0
#include "evsd/audio_source.hpp"

#include <poll.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <thread>
#include <vector>

#include "evsd/io.hpp"

namespace evsd {

std::size_t ClipSource::read(std::span<float> out) {
  if (interrupted_) return 0;
  const std::size_t n = std::min(out.size(), clip_.samples.size() - pos_);
  std::copy_n(clip_.samples.begin() + static_cast<std::ptrdiff_t>(pos_), n, out.begin());
  pos_ += n;
  return n;
}

LoopingFileDevice::LoopingFileDevice(AudioClip clip) : clip_(std::move(clip)) {
  if (clip_.samples.empty()) throw ContractViolation("device clip is empty");
}

std::size_t LoopingFileDevice::read(std::span<float> out) {
  using clock = std::chrono::steady_clock;
  if (!started_) {
    start_ = clock::now();
    started_ = true;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = clip_.samples[pos_];
    if (++pos_ == clip_.samples.size()) pos_ = 0;
  }
  delivered_ += out.size();
  // The chunk is "captured" once its last sample would have arrived.
  const auto due = start_ + std::chrono::duration_cast<clock::duration>(
                                std::chrono::duration<double>(static_cast<double>(delivered_) / clip_.sample_rate));
  while (!interrupted_) {
    const auto now = clock::now();
    if (now >= due) break;
    std::this_thread::sleep_for(std::min<clock::duration>(due - now, std::chrono::milliseconds(50)));
  }
  return interrupted_ ? 0 : out.size();
}

std::size_t RawPcmDevice::read(std::span<float> out) {
  std::vector<std::int16_t> raw(out.size());
  std::size_t got_bytes = 0;
  const std::size_t want = out.size() * 2;
  auto* dst = reinterpret_cast<char*>(raw.data());
  while (got_bytes < want && !interrupted_ && !eof_) {
    pollfd p{fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, 100);
    if (rc <= 0) continue;
    ssize_t r = ::read(fd_, dst + got_bytes, want - got_bytes);
    if (r < 0 && (errno == EINTR || errno == EAGAIN)) continue;
    if (r <= 0) {
      eof_ = true;
      break;
    }
    got_bytes += static_cast<std::size_t>(r);
  }
  if (interrupted_) return 0;
  const std::size_t n = got_bytes / 2;
  for (std::size_t i = 0; i < n; ++i) out[i] = raw[i] / 32768.0f;
  return n;
}

std::unique_ptr<AudioSource> open_device(const std::string& name) {
  if (name.rfind("file:", 0) == 0) return std::make_unique<LoopingFileDevice>(load_clip(name.substr(5)));
  if (name == "stdin") return std::make_unique<RawPcmDevice>(STDIN_FILENO, kDefaultSampleRate);
  if (name.rfind("stdin:", 0) == 0)
    return std::make_unique<RawPcmDevice>(STDIN_FILENO, std::stoi(name.substr(6)));
  throw ContractViolation("unknown audio device '" + name + "' (expected file:<wav> or stdin[:<rate>])");
}

}  // namespace evsd
