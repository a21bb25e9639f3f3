// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "evsd/backend.hpp"

namespace evsd {

struct MinInputResult {
  std::size_t min_samples = 0;
  std::size_t probes = 0;
};

struct MinInputOptions {
  // Re-probe the boundary and a spread of sizes above it to catch
  // non-monotone or non-deterministic backends. Costs extra probes.
  bool verify = false;
  int sample_rate = kDefaultSampleRate;
};

// Smallest frame length in [lo, hi] the backend accepts, assuming validity is
// monotone in length. Bisects over the hi-lo+2 outcomes {lo, ..., hi, none},
// so at most ceil(log2(hi - lo + 2)) probes without verification.
// Throws ContractViolation if no size in range is accepted or if probe
// results contradict monotonicity.
MinInputResult find_min_input_size(DetectorBackend& backend, std::size_t lo, std::size_t hi,
                                   const MinInputOptions& opts = {});

}  // namespace evsd
