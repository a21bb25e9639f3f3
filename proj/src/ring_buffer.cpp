// SPDX-License-Identifier: Apache-2.0
#include "evsd/ring_buffer.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace evsd {

RingBuffer::RingBuffer(std::size_t capacity) : storage_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ring buffer capacity must be positive");
}

void RingBuffer::write(std::span<const float> chunk) {
  if (chunk.size() > storage_.size()) {
    throw std::invalid_argument("chunk of " + std::to_string(chunk.size()) +
                                " samples exceeds ring capacity " + std::to_string(storage_.size()));
  }
  if (chunk.empty()) return;
  {
    std::lock_guard lock(mu_);
    if (closed_) return;
    const std::size_t cap = storage_.size();
    std::size_t pos = write_head_ % cap;
    std::size_t first = std::min(chunk.size(), cap - pos);
    std::copy_n(chunk.begin(), first, storage_.begin() + pos);
    std::copy(chunk.begin() + first, chunk.end(), storage_.begin());
    write_head_ += chunk.size();
  }
  data_cv_.notify_one();
}

std::uint64_t RingBuffer::reconcile_locked() {
  const std::uint64_t cap = storage_.size();
  if (write_head_ - read_head_ <= cap) return 0;
  const std::uint64_t skip = write_head_ - cap - read_head_;
  read_head_ += skip;
  dropped_ += skip;
  return skip;
}

std::optional<RingBuffer::Frame> RingBuffer::read_frame(std::size_t n) {
  if (n > storage_.size()) {
    throw std::invalid_argument("frame of " + std::to_string(n) + " samples exceeds ring capacity " +
                                std::to_string(storage_.size()));
  }
  std::unique_lock lock(mu_);
  data_cv_.wait(lock, [&] { return write_head_ - read_head_ >= n || closed_; });
  Frame frame;
  frame.dropped_before = reconcile_locked();
  if (write_head_ - read_head_ < n) return std::nullopt;  // closed with a short tail

  const std::size_t cap = storage_.size();
  frame.start_sample = read_head_;
  frame.samples.resize(n);
  std::size_t pos = read_head_ % cap;
  std::size_t first = std::min(n, cap - pos);
  std::copy_n(storage_.begin() + pos, first, frame.samples.begin());
  std::copy_n(storage_.begin(), n - first, frame.samples.begin() + first);
  read_head_ += n;
  lock.unlock();
  space_cv_.notify_one();
  return frame;
}

bool RingBuffer::wait_writable(std::size_t n) {
  std::unique_lock lock(mu_);
  space_cv_.wait(lock, [&] {
    const std::uint64_t used = std::min<std::uint64_t>(storage_.size(), write_head_ - read_head_);
    return closed_ || storage_.size() - used >= n;
  });
  return !closed_;
}

std::size_t RingBuffer::available() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::min<std::uint64_t>(storage_.size(), write_head_ - read_head_));
}

void RingBuffer::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  data_cv_.notify_all();
  space_cv_.notify_all();
}

bool RingBuffer::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

std::uint64_t RingBuffer::write_head() const {
  std::lock_guard lock(mu_);
  return write_head_;
}

std::uint64_t RingBuffer::read_head() const {
  std::lock_guard lock(mu_);
  return read_head_;
}

std::uint64_t RingBuffer::dropped_samples() const {
  std::lock_guard lock(mu_);
  return dropped_;
}

}  // namespace evsd
