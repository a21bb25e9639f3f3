// SPDX-License-Identifier: Apache-2.0
#include "evsd/types.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace evsd {

std::optional<std::string> EngineConfig::validate(int sample_rate) const {
  auto fail = [](const std::string& why) { return std::optional<std::string>(why); };
  if (sample_rate <= 0) return fail("sample_rate must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) return fail("threshold out of (0,1)");
  if (growth_threshold && !(*growth_threshold > 0.0 && *growth_threshold < 1.0))
    return fail("growth_threshold out of (0,1)");
  if (min_frame_samples <= 0) return fail("min_frame_samples must be positive");
  if (!(max_frame_s > 0.0) || !std::isfinite(max_frame_s))
    return fail("max_frame_s must be positive");
  if (!(increment_rate >= 0.0) || !std::isfinite(increment_rate))
    return fail("increment_rate must be >= 0");
  if (smoothing_window < 1) return fail("smoothing_window must be >= 1");
  if (consecutive_k < 1) return fail("consecutive_k must be >= 1");
  if (release_m < 1) return fail("release_m must be >= 1");
  if (fp_run_n < 1) return fail("fp_run_n must be >= 1");
  if (chunk_samples <= 0) return fail("chunk_samples must be positive");
  if (!(grid_resolution_s > 0.0)) return fail("grid_resolution_s must be positive");

  const double min_frame = min_frame_s(sample_rate);
  if (min_frame > max_frame_s) {
    std::ostringstream os;
    os << "min frame (" << min_frame << " s) exceeds max_frame_s (" << max_frame_s << " s)";
    return fail(os.str());
  }
  if (!(grid_resolution_s < min_frame))
    return fail("grid_resolution_s must be below the minimum frame duration");

  const double capacity = buffer_capacity_s * sample_rate;
  if (!(capacity >= std::llround(max_frame_s * sample_rate)))
    return fail("buffer_capacity_s must hold at least one maximum-size frame");
  if (static_cast<double>(chunk_samples) > capacity)
    return fail("chunk_samples exceeds buffer capacity");
  return std::nullopt;
}

double wall_clock_now() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

}  // namespace evsd
