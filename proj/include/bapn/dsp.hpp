#pragma once

#include <complex>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "bapn/audio.hpp"
#include "bapn/error.hpp"

namespace bapn {

/// One-sided complex spectrogram, row-major [freq][frame].
struct Spectrogram {
  int freq_bins = 0;
  int frames = 0;
  int window = 0;
  int hop = 0;
  double sample_rate = 0.0;
  std::vector<std::complex<double>> bins;

  std::complex<double>& at(int f, int t) { return bins[size_t(f) * frames + t]; }
  const std::complex<double>& at(int f, int t) const { return bins[size_t(f) * frames + t]; }
  size_t size() const { return bins.size(); }
};

/// Complex ratio mask with separate real/imag planes, same layout as
/// Spectrogram. Entries produced by the network live in [-1, 1].
struct ComplexMask {
  int freq_bins = 0;
  int frames = 0;
  std::vector<double> re, im;
};

namespace detail {

inline std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * i / n);
  return w;
}

}  // namespace detail

/// Hann-windowed STFT with centered frames: frame t covers samples
/// [t*hop - window/2, t*hop + window/2) of the input, zero-padded at the
/// edges, giving floor(len/hop) + 1 frames and window/2 + 1 bins.
inline Spectrogram stft(const Waveform& w, int window, int hop) {
  require(window > 0 && window % 2 == 0, ErrorCode::BadConfig, "window must be even and positive");
  require(hop > 0 && hop <= window, ErrorCode::BadConfig, "hop must be in (0, window]");
  require(!w.samples.empty(), ErrorCode::SilentInput, "empty input");

  int len = static_cast<int>(w.samples.size());
  int half = window / 2;
  int frames = len / hop + 1;
  int bins = half + 1;

  std::vector<double> padded(size_t(len) + window, 0.0);
  for (int i = 0; i < len; ++i) padded[size_t(i) + half] = w.samples[i];

  std::vector<double> win = detail::hann_window(window);
  Spectrogram s;
  s.freq_bins = bins;
  s.frames = frames;
  s.window = window;
  s.hop = hop;
  s.sample_rate = w.sample_rate;
  s.bins.resize(size_t(bins) * frames);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(window);
  std::vector<std::complex<double>> spec(bins);
  for (int t = 0; t < frames; ++t) {
    const double* src = padded.data() + size_t(t) * hop;
    for (int i = 0; i < window; ++i) frame[i] = src[i] * win[i];
    fft.fwd(spec, frame);  // half-spectrum mode: window/2+1 bins out
    for (int f = 0; f < bins; ++f) s.bins[size_t(f) * frames + t] = spec[f];
  }
  return s;
}

/// Overlap-add inverse of stft(). Requires at least 2x overlap so the
/// squared-window normalization has no interior gaps. Output length is
/// (frames - 1) * hop.
inline Waveform istft(const Spectrogram& s) {
  require(s.window > 0 && s.window % 2 == 0, ErrorCode::BadConfig, "window must be even and positive");
  require(s.hop > 0 && s.hop * 2 <= s.window, ErrorCode::BadConfig,
          "istft needs hop <= window/2 for full overlap coverage");
  require(s.freq_bins == s.window / 2 + 1, ErrorCode::ShapeMismatch, "freq_bins does not match window");
  require(s.frames >= 1 && s.bins.size() == size_t(s.freq_bins) * s.frames, ErrorCode::ShapeMismatch,
          "bin buffer does not match freq_bins x frames");

  int window = s.window, hop = s.hop, frames = s.frames, bins = s.freq_bins;
  int half = window / 2;
  int padded_len = (frames - 1) * hop + window;

  std::vector<double> win = detail::hann_window(window);
  std::vector<double> acc(padded_len, 0.0), den(padded_len, 0.0);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> spec(bins);
  std::vector<double> frame(window);
  for (int t = 0; t < frames; ++t) {
    for (int f = 0; f < bins; ++f) spec[f] = s.bins[size_t(f) * frames + t];
    fft.inv(frame, spec);  // expands the one-sided spectrum internally
    double* dst = acc.data() + size_t(t) * hop;
    double* dend = den.data() + size_t(t) * hop;
    for (int i = 0; i < window; ++i) {
      dst[i] += frame[i] * win[i];
      dend[i] += win[i] * win[i];
    }
  }

  Waveform out;
  out.sample_rate = s.sample_rate;
  out.samples.resize(size_t(frames - 1) * hop);
  for (size_t i = 0; i < out.samples.size(); ++i) {
    double d = den[i + half];
    out.samples[i] = d > 1e-10 ? acc[i + half] / d : 0.0;
  }
  return out;
}

/// log(1 + |s|) magnitude grid, row-major [freq][frame]; the network's
/// input representation.
inline std::vector<double> log_magnitude(const Spectrogram& s) {
  std::vector<double> out(s.bins.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log1p(std::abs(s.bins[i]));
  return out;
}

/// Complex multiply of a mask onto a spectrogram, bin by bin.
inline Spectrogram apply_complex_mask(const Spectrogram& s, const ComplexMask& m) {
  require(m.freq_bins == s.freq_bins && m.frames == s.frames, ErrorCode::ShapeMismatch,
          "mask and spectrogram shapes differ");
  require(m.re.size() == s.bins.size() && m.im.size() == s.bins.size(), ErrorCode::ShapeMismatch,
          "mask plane sizes differ from spectrogram");
  Spectrogram out = s;
  for (size_t i = 0; i < s.bins.size(); ++i)
    out.bins[i] = s.bins[i] * std::complex<double>(m.re[i], m.im[i]);
  return out;
}

/// A rotated-pair signal is recovered by subtracting the predicted
/// difference signal from the reference channel: x_rot = ref - istft(diff).
inline Waveform reconstruct_target(const Waveform& reference, const Spectrogram& diff_spec) {
  Waveform d = istft(diff_spec);
  require(d.samples.size() <= reference.samples.size(), ErrorCode::ShapeMismatch,
          "difference signal longer than reference");
  Waveform out;
  out.sample_rate = reference.sample_rate;
  out.samples.resize(d.samples.size());
  for (size_t i = 0; i < d.samples.size(); ++i) out.samples[i] = reference.samples[i] - d.samples[i];
  return out;
}

/// Magnitude of the analytic signal (Hilbert envelope) via full-length FFT.
inline std::vector<double> envelope(const Waveform& w) {
  require(!w.samples.empty(), ErrorCode::SilentInput, "empty input");
  int n = static_cast<int>(w.samples.size());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec(n), analytic(n);
  std::vector<std::complex<double>> in(n);
  for (int i = 0; i < n; ++i) in[i] = w.samples[i];
  fft.fwd(spec, in);
  for (int i = 0; i < n; ++i) {
    if (i == 0 || (n % 2 == 0 && i == n / 2))
      analytic[i] = spec[i];
    else if (i < (n + 1) / 2)
      analytic[i] = 2.0 * spec[i];
    else
      analytic[i] = 0.0;
  }
  std::vector<std::complex<double>> time(n);
  fft.inv(time, analytic);
  std::vector<double> env(n);
  for (int i = 0; i < n; ++i) env[i] = std::abs(time[i]);
  return env;
}

/// Interior signal-to-noise ratio in dB between a signal and its
/// reconstruction, skipping `skip` samples at each edge.
inline double snr_db(const std::vector<double>& ref, const std::vector<double>& est, size_t skip = 0) {
  require(est.size() <= ref.size(), ErrorCode::ShapeMismatch, "estimate longer than reference");
  size_t n = est.size();
  require(n > 2 * skip, ErrorCode::ShapeMismatch, "signal too short for requested edge skip");
  double sig = 0.0, err = 0.0;
  for (size_t i = skip; i < n - skip; ++i) {
    sig += ref[i] * ref[i];
    double e = ref[i] - est[i];
    err += e * e;
  }
  if (err == 0.0) return 300.0;  // exact match; report a finite ceiling
  return 10.0 * std::log10(sig / err);
}

}  // namespace bapn
