#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "bapn/error.hpp"

namespace bapn {

/// Below this RMS a signal is treated as silence; normalizing it would
/// just amplify numerical noise.
inline constexpr double kSilenceFloor = 1e-8;

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 0.0;

  size_t size() const { return samples.size(); }
  double duration() const { return sample_rate > 0 ? samples.size() / sample_rate : 0.0; }
};

inline double rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

inline double rms(const Waveform& w) { return rms(w.samples); }

/// Scale so that the result has exactly the requested RMS. Idempotent:
/// applying it twice with the same target is a no-op up to rounding.
inline Waveform rms_normalize(const Waveform& w, double target_rms) {
  require(target_rms > 0.0, ErrorCode::BadConfig, "target rms must be positive");
  double r = rms(w);
  require(r > kSilenceFloor, ErrorCode::SilentInput,
          "rms " + std::to_string(r) + " is below the silence floor");
  Waveform out = w;
  double g = target_rms / r;
  for (double& v : out.samples) v *= g;
  return out;
}

}  // namespace bapn
