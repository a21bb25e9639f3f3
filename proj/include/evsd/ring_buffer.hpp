// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

namespace evsd {

// Fixed-capacity circular sample buffer for exactly one producer and one
// consumer thread. Heads are absolute sample counters; storage index is
// head % capacity.
//
// Reads are destructive and tile the stream. When the producer laps an
// unread region, the next read skips forward to the oldest retained sample
// and the skipped count is added to dropped_samples().
class RingBuffer {
 public:
  struct Frame {
    std::uint64_t start_sample = 0;  // absolute stream position of samples[0]
    std::uint64_t dropped_before = 0;  // samples skipped by this read
    std::vector<float> samples;
  };

  explicit RingBuffer(std::size_t capacity);

  RingBuffer(const RingBuffer&) = delete;
  RingBuffer& operator=(const RingBuffer&) = delete;

  // Appends a chunk. Throws std::invalid_argument if chunk.size() > capacity.
  // Empty chunks are ignored. Writes after close() are discarded.
  void write(std::span<const float> chunk);

  // Blocks until n samples are unread, then returns them. Returns nullopt when
  // the buffer is closed and fewer than n samples remain.
  std::optional<Frame> read_frame(std::size_t n);

  // Blocks until `n` samples can be written without overwriting unread data.
  // Returns false if the buffer was closed while waiting.
  bool wait_writable(std::size_t n);

  // Unread samples still retained (at most capacity).
  std::size_t available() const;
  void close();
  bool closed() const;

  std::size_t capacity() const { return storage_.size(); }
  std::uint64_t write_head() const;
  std::uint64_t read_head() const;
  std::uint64_t dropped_samples() const;

 private:
  // Overrun repair; caller holds mu_.
  std::uint64_t reconcile_locked();

  std::vector<float> storage_;
  mutable std::mutex mu_;
  std::condition_variable data_cv_;
  std::condition_variable space_cv_;
  std::uint64_t write_head_ = 0;
  std::uint64_t read_head_ = 0;
  std::uint64_t dropped_ = 0;
  bool closed_ = false;
};

}  // namespace evsd
