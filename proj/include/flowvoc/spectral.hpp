// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Short-time Fourier analysis shared by the mel front end, the spectral
// losses and the metrics. Every transform here has an exact adjoint so
// losses defined on spectrogram grids can be differentiated with respect
// to the waveform.

#ifndef FLOWVOC_SPECTRAL_HPP_
#define FLOWVOC_SPECTRAL_HPP_

#include <complex>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "flowvoc/common.hpp"

namespace flowvoc {

using Complex = std::complex<double>;
using ComplexGrid = Grid<Complex>;
using RealGrid = Grid<double>;

/// Periodic Hann window (the torch.hann_window default).
inline std::vector<double> hann_window(int length) {
  std::vector<double> w(static_cast<std::size_t>(length));
  for (int n = 0; n < length; ++n)
    w[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / length);
  return w;
}

/// Index into a signal of length `n` after reflect padding; reflects
/// repeatedly so any offset is valid.
inline std::size_t reflect_index(long long i, std::size_t n) {
  if (n == 1) return 0;
  const long long period = 2 * static_cast<long long>(n - 1);
  long long j = i % period;
  if (j < 0) j += period;
  if (j >= static_cast<long long>(n)) j = period - j;
  return static_cast<std::size_t>(j);
}

/// How a signal is padded and cut into frames.
enum class FramingMode {
  /// Pad n_fft/2 on both sides; frames = 1 + len / hop (torch.stft center=True).
  kCentered,
  /// Pad (n_fft - hop)/2 on both sides plus a right pad up to a hop multiple;
  /// frames = ceil(len / hop) and frame k is centered on sample k*hop + hop/2.
  kHopAligned,
};

struct Framing {
  long long pad_left = 0;
  long long frames = 0;
};

/// Reflect-padded, Hann-windowed real STFT with its adjoint.
class Stft {
 public:
  Stft(int n_fft, int hop, int win_length, FramingMode mode = FramingMode::kCentered)
      : n_fft_(n_fft), hop_(hop), win_length_(win_length), mode_(mode) {
    if (n_fft <= 0 || hop <= 0 || win_length <= 0 || win_length > n_fft)
      throw DomainError("invalid STFT geometry");
    // Window of win_length centered inside n_fft, as torch.stft does.
    window_.assign(static_cast<std::size_t>(n_fft), 0.0);
    const auto w = hann_window(win_length);
    const int offset = (n_fft - win_length) / 2;
    for (int i = 0; i < win_length; ++i) window_[static_cast<std::size_t>(offset + i)] = w[i];
    fft_.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  }

  int n_fft() const { return n_fft_; }
  int hop() const { return hop_; }
  int win_length() const { return win_length_; }
  int bins() const { return n_fft_ / 2 + 1; }
  const std::vector<double>& window() const { return window_; }

  double window_sum() const {
    double s = 0.0;
    for (double v : window_) s += v;
    return s;
  }

  Framing framing(std::size_t len) const {
    const auto L = static_cast<long long>(len);
    if (mode_ == FramingMode::kCentered) return {n_fft_ / 2, 1 + L / hop_};
    return {(n_fft_ - hop_) / 2, (L + hop_ - 1) / hop_};
  }

  /// Complex grid [bins x frames].
  ComplexGrid forward(std::span<const double> x) const {
    if (x.empty()) throw ShapeError("STFT of an empty signal");
    const Framing fr = framing(x.size());
    ComplexGrid out(bins(), fr.frames);
    std::vector<double> buf(static_cast<std::size_t>(n_fft_));
    std::vector<Complex> spec;
    for (long long t = 0; t < fr.frames; ++t) {
      const long long start = t * hop_ - fr.pad_left;
      for (int n = 0; n < n_fft_; ++n) {
        const double w = window_[static_cast<std::size_t>(n)];
        buf[static_cast<std::size_t>(n)] = w == 0.0 ? 0.0 : w * x[reflect_index(start + n, x.size())];
      }
      fft_.fwd(spec, buf);
      for (int f = 0; f < bins(); ++f) out(f, t) = spec[static_cast<std::size_t>(f)];
    }
    return out;
  }

  /// Given G = dL/dRe(X) + i dL/dIm(X) on the grid, returns dL/dx.
  std::vector<double> adjoint(const ComplexGrid& grad, std::size_t len) const {
    const Framing fr = framing(len);
    if (grad.rows() != bins() || grad.cols() != fr.frames)
      throw ShapeError("STFT adjoint: gradient grid does not match framing");
    std::vector<double> dx(len, 0.0);
    std::vector<Complex> full(static_cast<std::size_t>(n_fft_));
    std::vector<Complex> time;
    Eigen::FFT<double> inv;
    inv.SetFlag(Eigen::FFT<double>::Unscaled);
    for (long long t = 0; t < fr.frames; ++t) {
      std::fill(full.begin(), full.end(), Complex(0.0, 0.0));
      bool any = false;
      for (int f = 0; f < bins(); ++f) {
        full[static_cast<std::size_t>(f)] = grad(f, t);
        any = any || grad(f, t) != Complex(0.0, 0.0);
      }
      if (!any) continue;
      inv.inv(time, full);
      const long long start = t * hop_ - fr.pad_left;
      for (int n = 0; n < n_fft_; ++n) {
        const double w = window_[static_cast<std::size_t>(n)];
        if (w == 0.0) continue;
        dx[reflect_index(start + n, len)] += w * time[static_cast<std::size_t>(n)].real();
      }
    }
    return dx;
  }

 private:
  int n_fft_;
  int hop_;
  int win_length_;
  FramingMode mode_;
  std::vector<double> window_;
  mutable Eigen::FFT<double> fft_;
};

inline double hz_to_mel_slaney(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / f_sp;
  return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

inline double mel_to_hz_slaney(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * f_sp;
  return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

/// Band edges (n_mels + 2 frequencies in Hz) equally spaced on the Slaney
/// mel scale. Band b rises from edge b, peaks at edge b+1, falls to edge b+2.
inline std::vector<double> mel_band_edges(int n_mels, double f_min, double f_max) {
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  const double lo = hz_to_mel_slaney(f_min);
  const double hi = hz_to_mel_slaney(f_max);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] = mel_to_hz_slaney(lo + (hi - lo) * i / (n_mels + 1));
  return edges;
}

/// Weight of triangular band `b` at frequency `hz` (unit peak).
inline double mel_triangle(const std::vector<double>& edges, int b, double hz) {
  const double lower = edges[static_cast<std::size_t>(b)];
  const double center = edges[static_cast<std::size_t>(b + 1)];
  const double upper = edges[static_cast<std::size_t>(b + 2)];
  const double rise = (hz - lower) / (center - lower);
  const double fall = (upper - hz) / (upper - center);
  return std::max(0.0, std::min(rise, fall));
}

/// Unit-peak triangular filterbank [n_mels x (n_fft/2 + 1)].
inline RealGrid mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_min,
                               double f_max) {
  const auto edges = mel_band_edges(n_mels, f_min, f_max);
  const int n_bins = n_fft / 2 + 1;
  RealGrid fb(n_mels, n_bins);
  for (int b = 0; b < n_mels; ++b)
    for (int k = 0; k < n_bins; ++k)
      fb(b, k) = mel_triangle(edges, b, static_cast<double>(k) * sample_rate / n_fft);
  return fb;
}

}  // namespace flowvoc

#endif  // FLOWVOC_SPECTRAL_HPP_
