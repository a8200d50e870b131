#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "bapn/audio.hpp"
#include "bapn/error.hpp"
#include "bapn/rng.hpp"

namespace bapn {

enum class SourceClass : int { car = 1, motorcycle = 2, train = 3 };

inline const char* class_name(int id) {
  switch (id) {
    case 0: return "background";
    case 1: return "car";
    case 2: return "motorcycle";
    case 3: return "train";
  }
  return "unknown";
}

inline int class_id_from_name(const std::string& name) {
  if (name == "background") return 0;
  if (name == "car") return 1;
  if (name == "motorcycle") return 2;
  if (name == "train" || name == "tram") return 3;
  fail(ErrorCode::UnknownClass, "no class named '" + name + "'");
}

struct SourceSpec {
  SourceClass cls = SourceClass::car;
  double azimuth_deg = 0.0;   // counterclockwise, 0 = facing direction of pair 0
  double distance_m = 2.0;
  double gain = 1.0;
  uint64_t seed = 0;
};

struct Scene {
  std::vector<SourceSpec> sources;
  double ambient_level = 0.0;  // RMS of the added ambient noise per ear
  double duration_s = 2.0;
  uint64_t seed = 0;
};

/// Four head orientations, each listening with one ear pair. The mic ids
/// record which capsules of the physical 8-mic crown each pair maps to.
struct RigConfig {
  std::array<int, 4> orientations_deg{0, 90, 180, 270};
  std::array<std::pair<int, int>, 4> mic_ids{{{3, 8}, {1, 6}, {4, 7}, {2, 5}}};
  double ear_separation_m = 0.18;
  double speed_of_sound = 343.0;

  int orientation_index(int deg) const {
    for (int i = 0; i < 4; ++i)
      if (orientations_deg[i] == deg) return i;
    fail(ErrorCode::BadOrientation, "orientation " + std::to_string(deg) + " is not part of the rig");
  }
};

inline double wrap_degrees(double d) {
  d = std::fmod(d, 360.0);
  if (d < 0) d += 360.0;
  return d;
}

/// Smallest absolute angular distance between two azimuths, in [0, 180].
inline double angular_distance_deg(double a, double b) {
  double d = std::fabs(wrap_degrees(a) - wrap_degrees(b));
  return d > 180.0 ? 360.0 - d : d;
}

inline void validate_scene(const Scene& scene, double min_separation_deg = 0.0) {
  require(scene.duration_s > 0, ErrorCode::BadConfig, "scene duration must be positive");
  require(scene.ambient_level >= 0, ErrorCode::BadConfig, "ambient level must be non-negative");
  for (const auto& s : scene.sources) {
    int id = static_cast<int>(s.cls);
    require(id >= 1 && id <= 3, ErrorCode::UnknownClass, "source class id out of range");
    require(s.distance_m > 0, ErrorCode::BadConfig, "source distance must be positive");
    require(s.gain > 0, ErrorCode::BadConfig, "source gain must be positive");
  }
  if (min_separation_deg > 0)
    for (size_t i = 0; i < scene.sources.size(); ++i)
      for (size_t j = i + 1; j < scene.sources.size(); ++j)
        require(angular_distance_deg(scene.sources[i].azimuth_deg, scene.sources[j].azimuth_deg) >=
                    min_separation_deg,
                ErrorCode::BadConfig, "sources closer than the minimum azimuth separation");
}

namespace detail {

inline std::vector<double> white_noise(Rng& rng, int n) {
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = rng.normal();
  return x;
}

/// Shape white noise in the frequency domain with a per-bin gain.
template <typename GainFn>
inline std::vector<double> shaped_noise(Rng& rng, int n, double sr, GainFn gain) {
  std::vector<double> x = white_noise(rng, n);
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, x);
  int bins = static_cast<int>(spec.size());
  for (int i = 0; i < bins; ++i) {
    double f = (i <= n / 2 ? i : i - n) * sr / n;
    spec[i] *= gain(std::fabs(f));
  }
  std::vector<double> y;
  fft.inv(y, spec);
  return y;
}

inline void add_scaled(std::vector<double>& acc, const std::vector<double>& x, double g) {
  for (size_t i = 0; i < acc.size(); ++i) acc[i] += g * x[i];
}

inline void normalize_rms_inplace(std::vector<double>& x) {
  double r = rms(x);
  require(r > kSilenceFloor, ErrorCode::SilentInput, "synthesized signal is silent");
  for (double& v : x) v /= r;
}

}  // namespace detail

/// Deterministic synthesis of a source signal at unit RMS times the spec
/// gain. Each class has a distinct spectral signature: cars are a low
/// harmonic engine stack over pink-ish noise, motorcycles a pulsed
/// higher-pitched stack, trains a deep hum plus band-limited screech.
inline Waveform synth_source_signal(const SourceSpec& spec, double duration_s, double sample_rate) {
  require(duration_s > 0 && sample_rate > 0, ErrorCode::BadConfig, "bad duration or sample rate");
  int n = static_cast<int>(std::lround(duration_s * sample_rate));
  require(n > 0, ErrorCode::BadConfig, "clip has no samples");

  Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(spec.cls)));
  const double two_pi = 2.0 * 3.14159265358979323846;
  std::vector<double> sig(n, 0.0);

  auto harmonic_stack = [&](double f0, int partials, auto amp_of) {
    std::vector<double> s(n, 0.0);
    for (int k = 1; k <= partials; ++k) {
      double fk = f0 * k;
      if (fk >= sample_rate / 2) break;
      double a = amp_of(k);
      double ph = rng.uniform(0.0, two_pi);
      double w = two_pi * fk / sample_rate;
      for (int i = 0; i < n; ++i) s[i] += a * std::sin(w * i + ph);
    }
    return s;
  };

  switch (spec.cls) {
    case SourceClass::car: {
      double f0 = rng.uniform(80.0, 120.0);
      auto harm = harmonic_stack(f0, 10, [](int k) { return 1.0 / k; });
      auto rumble = detail::shaped_noise(rng, n, sample_rate, [](double f) {
        if (f > 1500.0) return 0.0;
        return 1.0 / std::sqrt(std::max(f, 30.0) / 30.0);
      });
      detail::normalize_rms_inplace(harm);
      detail::normalize_rms_inplace(rumble);
      detail::add_scaled(sig, harm, 1.0);
      detail::add_scaled(sig, rumble, 0.5);
      break;
    }
    case SourceClass::motorcycle: {
      double f0 = rng.uniform(140.0, 220.0);
      auto harm = harmonic_stack(f0, 12, [](int k) { return (k % 2 ? 1.0 : 0.45) / k; });
      double rate = rng.uniform(10.0, 14.0);
      double ph = rng.uniform(0.0, two_pi);
      for (int i = 0; i < n; ++i) {
        double p = std::max(0.0, std::sin(two_pi * rate * i / sample_rate + ph));
        harm[i] *= 0.25 + 0.75 * p * p * p;
      }
      detail::normalize_rms_inplace(harm);
      detail::add_scaled(sig, harm, 1.0);
      break;
    }
    case SourceClass::train: {
      double f0 = rng.uniform(40.0, 60.0);
      auto hum = harmonic_stack(f0, 5, [](int k) { return 1.0 / k; });
      auto screech = detail::shaped_noise(rng, n, sample_rate, [](double f) {
        return (f >= 2000.0 && f <= 4000.0) ? 1.0 : 0.0;
      });
      double am_rate = rng.uniform(0.4, 0.8);
      double am_ph = rng.uniform(0.0, two_pi);
      for (int i = 0; i < n; ++i)
        screech[i] *= 0.6 + 0.4 * std::sin(two_pi * am_rate * i / sample_rate + am_ph);
      detail::normalize_rms_inplace(hum);
      detail::normalize_rms_inplace(screech);
      detail::add_scaled(sig, hum, 0.8);
      detail::add_scaled(sig, screech, 1.0);
      break;
    }
  }

  detail::normalize_rms_inplace(sig);
  for (double& v : sig) v *= spec.gain;
  return Waveform{std::move(sig), sample_rate};
}

struct EarPair {
  Waveform left, right;
};

namespace detail {

/// Read x at a fractional sample index with linear interpolation;
/// zero outside the valid range.
inline double sample_at(const std::vector<double>& x, double idx) {
  if (idx < 0.0) return 0.0;
  int i0 = static_cast<int>(idx);
  if (i0 + 1 >= static_cast<int>(x.size())) return 0.0;
  double frac = idx - i0;
  return x[i0] * (1.0 - frac) + x[size_t(i0) + 1] * frac;
}

inline EarPair render_pair_presynth(const Scene& scene, int orientation_deg, const RigConfig& rig,
                                    double sample_rate, const std::vector<Waveform>& signals) {
  rig.orientation_index(orientation_deg);  // validates the orientation
  int n = static_cast<int>(std::lround(scene.duration_s * sample_rate));
  EarPair out;
  out.left.sample_rate = out.right.sample_rate = sample_rate;
  out.left.samples.assign(n, 0.0);
  out.right.samples.assign(n, 0.0);

  for (size_t si = 0; si < scene.sources.size(); ++si) {
    const SourceSpec& src = scene.sources[si];
    const std::vector<double>& sig = signals[si].samples;
    // Azimuth relative to the pair's facing direction; positive sin means
    // the source sits toward the right ear. Wrapping happens in degrees so
    // that congruent angles give the same double before the radian
    // conversion; rotating a scene and the rig together is then exact.
    double rel_deg = wrap_degrees(src.azimuth_deg - orientation_deg);
    double theta = rel_deg * 3.14159265358979323846 / 180.0;
    double s = std::sin(theta);
    // Interaural time difference: each ear is offset by half the ear
    // separation along the interaural axis.
    double delay = 0.5 * rig.ear_separation_m * s / rig.speed_of_sound * sample_rate;
    // Interaural level difference: first-order directivity around each
    // ear's axis plus 1/distance attenuation.
    double gl = (1.0 - 0.35 * s) / src.distance_m;
    double gr = (1.0 + 0.35 * s) / src.distance_m;
    for (int t = 0; t < n; ++t) {
      out.left.samples[t] += gl * sample_at(sig, t - delay);
      out.right.samples[t] += gr * sample_at(sig, t + delay);
    }
  }

  if (scene.ambient_level > 0) {
    // One ambient stream per ear, independent of orientation, so rotating
    // the scene and rotating the rig stay exactly interchangeable.
    Rng rl(mix_seed(scene.seed, 0xEA0001));
    Rng rr(mix_seed(scene.seed, 0xEA0002));
    for (int t = 0; t < n; ++t) {
      out.left.samples[t] += scene.ambient_level * rl.normal();
      out.right.samples[t] += scene.ambient_level * rr.normal();
    }
  }
  return out;
}

inline std::vector<Waveform> synth_all(const Scene& scene, double sample_rate) {
  std::vector<Waveform> signals;
  signals.reserve(scene.sources.size());
  for (const auto& src : scene.sources)
    signals.push_back(synth_source_signal(src, scene.duration_s, sample_rate));
  return signals;
}

}  // namespace detail

/// Render the two-channel signal heard by the ear pair facing
/// `orientation_deg`.
inline EarPair render_binaural(const Scene& scene, int orientation_deg, const RigConfig& rig,
                               double sample_rate) {
  validate_scene(scene);
  return detail::render_pair_presynth(scene, orientation_deg, rig, sample_rate,
                                      detail::synth_all(scene, sample_rate));
}

struct RigClip {
  std::array<EarPair, 4> pairs;  // indexed like RigConfig::orientations_deg
};

/// Render all four pairs; sources are synthesized once and shared, which
/// is bit-identical to rendering each pair independently.
inline RigClip render_rig(const Scene& scene, const RigConfig& rig, double sample_rate) {
  validate_scene(scene);
  std::vector<Waveform> signals = detail::synth_all(scene, sample_rate);
  RigClip clip;
  for (int i = 0; i < 4; ++i)
    clip.pairs[i] =
        detail::render_pair_presynth(scene, rig.orientations_deg[i], rig, sample_rate, signals);
  return clip;
}

/// Dense class-id grid; rows span elevation (unused by sources, kept for
/// the image-like layout), columns span the full 360 degrees of azimuth.
struct LabelGrid {
  int h = 0, w = 0;
  std::vector<uint8_t> cells;

  uint8_t& at(int r, int c) { return cells[size_t(r) * w + c]; }
  uint8_t at(int r, int c) const { return cells[size_t(r) * w + c]; }
};

struct DepthGrid {
  int h = 0, w = 0;
  std::vector<double> cells;

  double& at(int r, int c) { return cells[size_t(r) * w + c]; }
  double at(int r, int c) const { return cells[size_t(r) * w + c]; }
};

namespace detail {

struct BlobExtent {
  int width_deg;
  int height_deg;
};

inline BlobExtent class_extent(SourceClass cls) {
  switch (cls) {
    case SourceClass::car: return {30, 16};
    case SourceClass::motorcycle: return {18, 10};
    case SourceClass::train: return {60, 24};
  }
  fail(ErrorCode::UnknownClass, "source class id out of range");
}

/// Paint rectangular source blobs into label and depth grids. Nearer
/// sources win overlaps (painted first, later paint only fills
/// background). Blob size scales with 2m/distance around a fixed
/// per-class angular extent, and blobs sit in the middle third of rows.
inline void paint_scene(const Scene& scene, LabelGrid& labels, DepthGrid& depth, double far_depth) {
  int h = labels.h, w = labels.w;
  std::fill(labels.cells.begin(), labels.cells.end(), uint8_t(0));
  std::fill(depth.cells.begin(), depth.cells.end(), far_depth);

  std::vector<size_t> order(scene.sources.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return scene.sources[a].distance_m < scene.sources[b].distance_m;
  });

  for (size_t oi : order) {
    const SourceSpec& src = scene.sources[oi];
    BlobExtent ext = class_extent(src.cls);
    double scale = 2.0 / src.distance_m;
    int bw = std::clamp(static_cast<int>(std::lround(w * ext.width_deg * scale / 360.0)), 1, w);
    int bh = std::clamp(static_cast<int>(std::lround(h * ext.height_deg * scale / 180.0)), 1, h / 3);
    int cc = static_cast<int>(std::lround(w * wrap_degrees(src.azimuth_deg) / 360.0)) % w;
    int r0 = h / 2 - bh / 2;
    int c0 = cc - bw / 2;
    for (int r = r0; r < r0 + bh; ++r) {
      if (r < 0 || r >= h) continue;
      for (int dc = 0; dc < bw; ++dc) {
        int c = ((c0 + dc) % w + w) % w;  // azimuth wraps around
        if (labels.at(r, c) == 0) {
          labels.at(r, c) = static_cast<uint8_t>(src.cls);
          depth.at(r, c) = src.distance_m;
        }
      }
    }
  }
}

}  // namespace detail

inline LabelGrid ground_truth_semantic(const Scene& scene, int h, int w) {
  require(h >= 3 && w >= 3, ErrorCode::BadConfig, "label grid too small");
  LabelGrid labels{h, w, std::vector<uint8_t>(size_t(h) * w, 0)};
  DepthGrid depth{h, w, std::vector<double>(size_t(h) * w, 0.0)};
  detail::paint_scene(scene, labels, depth, 1.0);
  return labels;
}

inline DepthGrid ground_truth_depth(const Scene& scene, int h, int w, double far_depth) {
  require(h >= 3 && w >= 3, ErrorCode::BadConfig, "depth grid too small");
  require(far_depth > 0, ErrorCode::BadConfig, "far depth must be positive");
  for (const auto& s : scene.sources)
    require(s.distance_m < far_depth, ErrorCode::BadConfig, "source beyond the far depth");
  LabelGrid labels{h, w, std::vector<uint8_t>(size_t(h) * w, 0)};
  DepthGrid depth{h, w, std::vector<double>(size_t(h) * w, 0.0)};
  detail::paint_scene(scene, labels, depth, far_depth);
  return depth;
}

/// Semantic and depth ground truth from one painting pass, guaranteeing
/// cell-wise agreement between label support and non-far depth.
inline std::pair<LabelGrid, DepthGrid> ground_truth(const Scene& scene, int h, int w,
                                                    double far_depth) {
  require(h >= 3 && w >= 3, ErrorCode::BadConfig, "grid too small");
  require(far_depth > 0, ErrorCode::BadConfig, "far depth must be positive");
  LabelGrid labels{h, w, std::vector<uint8_t>(size_t(h) * w, 0)};
  DepthGrid depth{h, w, std::vector<double>(size_t(h) * w, 0.0)};
  detail::paint_scene(scene, labels, depth, far_depth);
  return {std::move(labels), std::move(depth)};
}

}  // namespace bapn
