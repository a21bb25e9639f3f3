// SPDX-License-Identifier: Apache-2.0
#include "evsd/min_input.hpp"

#include <map>
#include <vector>

namespace evsd {

namespace {

class Prober {
 public:
  Prober(DetectorBackend& backend, int sample_rate) : backend_(backend), sample_rate_(sample_rate) {}

  bool accepts(std::size_t n) {
    if (buffer_.size() < n) buffer_.resize(n, 0.0f);
    ++probes_;
    bool ok = true;
    try {
      backend_.infer(std::span<const float>(buffer_.data(), n), FrameContext{0.0, sample_rate_});
    } catch (const FrameTooShort&) {
      ok = false;
    }
    record(n, ok);
    return ok;
  }

  std::size_t probes() const { return probes_; }

 private:
  void record(std::size_t n, bool ok) {
    auto [it, inserted] = seen_.emplace(n, ok);
    if (!inserted && it->second != ok)
      throw ContractViolation("backend contract violation: length " + std::to_string(n) +
                              " both accepted and rejected");
    // Monotone validity: nothing above an accepted length may be rejected.
    for (const auto& [m, m_ok] : seen_) {
      if ((m < n && m_ok && !ok) || (m > n && !m_ok && ok)) {
        const auto a = ok ? n : m, r = ok ? m : n;
        throw ContractViolation("backend contract violation: accepts " + std::to_string(a) +
                                " samples but rejects " + std::to_string(r));
      }
    }
  }

  DetectorBackend& backend_;
  int sample_rate_;
  std::vector<float> buffer_;
  std::map<std::size_t, bool> seen_;
  std::size_t probes_ = 0;
};

}  // namespace

MinInputResult find_min_input_size(DetectorBackend& backend, std::size_t lo, std::size_t hi,
                                   const MinInputOptions& opts) {
  if (lo == 0) lo = 1;
  if (hi < lo) throw ContractViolation("min-input search needs lo <= hi");

  Prober probe(backend, opts.sample_rate);
  // Invariant: every length < left is rejected, every length >= right is
  // accepted (right == hi + 1 stands for "nothing accepted").
  std::size_t left = lo, right = hi + 1;
  while (left < right) {
    const std::size_t mid = left + (right - left) / 2;
    if (probe.accepts(mid))
      right = mid;
    else
      left = mid + 1;
  }
  if (left == hi + 1)
    throw ContractViolation("backend accepts no input length in [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "]");

  if (opts.verify) {
    probe.accepts(left);
    if (left > lo) probe.accepts(left - 1);
    for (int j = 1; j <= 4; ++j) probe.accepts(left + (hi - left) * j / 4);
  }
  return {left, probe.probes()};
}

}  // namespace evsd
