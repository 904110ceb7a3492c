// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef FLOWVOC_DATA_HPP_
#define FLOWVOC_DATA_HPP_

#include <algorithm>
#include <memory>
#include <utility>
#include <vector>

#include "flowvoc/audio.hpp"
#include "flowvoc/spectral.hpp"

namespace flowvoc {

/// Mel analysis geometry.
struct MelConfig {
  int n_mels = 100;
  double f_min = 0.0;
  double f_max = 12000.0;
  int n_fft = 1024;
  int win_length = 1024;
  int hop_length = 256;
  int sample_rate = 24000;
  /// Floor applied to the raw scale before the logarithm.
  double log_floor = 1e-5;

  void validate() const {
    if (n_mels <= 0 || n_fft <= 0 || hop_length <= 0 || win_length <= 0 || win_length > n_fft)
      throw InvariantError("MelConfig: non-positive sizes or window longer than FFT");
    if (f_max > sample_rate / 2.0 || f_min < 0.0 || f_min >= f_max)
      throw InvariantError("MelConfig: frequency range must satisfy 0 <= f_min < f_max <= sr/2");
    if (!(log_floor > 0.0)) throw InvariantError("MelConfig: log_floor must be positive");
  }
};

/// Mel spectrogram in two views: `raw` in [0, 32768] and `log` = ln(max(raw, floor)).
/// Both are [n_mels x frames].
struct MelSpectrogram {
  RealGrid raw;
  RealGrid log;

  int n_mels() const { return static_cast<int>(raw.rows()); }
  int frames() const { return static_cast<int>(raw.cols()); }
};

/// Mel front end. Magnitude STFT normalized by the window sum, times 32768,
/// through unit-peak triangular filters, saturated at 32768.
class MelExtractor {
 public:
  explicit MelExtractor(MelConfig cfg = {})
      : cfg_(validated(std::move(cfg))),
        stft_(cfg_.n_fft, cfg_.hop_length, cfg_.win_length,
              FramingMode::kHopAligned),
        filters_(mel_filterbank(cfg_.n_mels, cfg_.n_fft, cfg_.sample_rate, cfg_.f_min,
                                cfg_.f_max)),
        scale_(kFullScale / stft_.window_sum()) {}

  const MelConfig& config() const { return cfg_; }
  const RealGrid& filters() const { return filters_; }
  const Stft& stft() const { return stft_; }

  int frames_for(std::size_t len) const {
    return static_cast<int>((len + cfg_.hop_length - 1) / cfg_.hop_length);
  }

  MelSpectrogram extract(std::span<const double> x) const {
    if (x.size() < static_cast<std::size_t>(cfg_.win_length))
      throw ShapeError("extract_mel: clip of " + std::to_string(x.size()) +
                       " samples is shorter than one window (" +
                       std::to_string(cfg_.win_length) + ")");
    const ComplexGrid spec = stft_.forward(x);
    const RealGrid mag = spec.cwiseAbs();
    MelSpectrogram mel;
    mel.raw = ((filters_ * mag) * scale_).cwiseMin(kFullScale);
    mel.log = mel.raw.cwiseMax(cfg_.log_floor).array().log().matrix();
    return mel;
  }

  MelSpectrogram extract(std::span<const float> x) const {
    std::vector<double> d(x.begin(), x.end());
    return extract(std::span<const double>(d));
  }

  /// Given dL/dlog-mel for signal x, returns dL/dx. Cells on the floor or at
  /// saturation pass no gradient; bins with zero magnitude pass none either.
  std::vector<double> log_mel_backward(std::span<const double> x, const RealGrid& grad_log) const {
    const ComplexGrid spec = stft_.forward(x);
    const RealGrid mag = spec.cwiseAbs();
    const RealGrid raw = (filters_ * mag) * scale_;
    if (grad_log.rows() != raw.rows() || grad_log.cols() != raw.cols())
      throw ShapeError("log_mel_backward: gradient shape mismatch");
    RealGrid grad_raw = RealGrid::Zero(raw.rows(), raw.cols());
    for (Eigen::Index i = 0; i < raw.rows(); ++i)
      for (Eigen::Index j = 0; j < raw.cols(); ++j) {
        const double r = raw(i, j);
        if (r > cfg_.log_floor && r < kFullScale) grad_raw(i, j) = grad_log(i, j) / r;
      }
    const RealGrid grad_mag = (filters_.transpose() * grad_raw) * scale_;
    ComplexGrid grad_spec(spec.rows(), spec.cols());
    for (Eigen::Index i = 0; i < spec.rows(); ++i)
      for (Eigen::Index j = 0; j < spec.cols(); ++j) {
        const double m = mag(i, j);
        grad_spec(i, j) = m > 0.0 ? spec(i, j) * (grad_mag(i, j) / m) : Complex(0.0, 0.0);
      }
    return stft_.adjoint(grad_spec, x.size());
  }

 private:
  static MelConfig validated(MelConfig cfg) {
    cfg.validate();
    return cfg;
  }

  MelConfig cfg_;
  Stft stft_;
  RealGrid filters_;
  double scale_;
};

inline MelSpectrogram extract_mel(const AudioClip& clip, const MelConfig& cfg) {
  clip.validate();
  if (clip.sample_rate != cfg.sample_rate)
    throw InvariantError("extract_mel: clip sample rate " + std::to_string(clip.sample_rate) +
                         " differs from configured " + std::to_string(cfg.sample_rate));
  return MelExtractor(cfg).extract(std::span<const float>(clip.samples));
}

/// A training example: waveform segment, its mel, and how many trailing
/// samples are zero padding.
struct Segment {
  AudioClip audio;
  MelSpectrogram mel;
  std::size_t pad_samples = 0;
};

/// Draws a seg_len window from the clip (uniform start, seeded) and extracts
/// its mel. Shorter clips are right-padded with zeros and flagged.
inline Segment random_segment(const AudioClip& clip, std::size_t seg_len, std::uint64_t seed,
                              const MelExtractor& mel) {
  const auto hop = static_cast<std::size_t>(mel.config().hop_length);
  if (seg_len == 0 || seg_len % hop != 0)
    throw InvariantError("random_segment: segment length " + std::to_string(seg_len) +
                         " is not a positive multiple of hop " + std::to_string(hop));
  Segment seg;
  seg.audio.sample_rate = clip.sample_rate;
  if (clip.size() <= seg_len) {
    seg.audio.samples = clip.samples;
    seg.pad_samples = seg_len - clip.size();
    seg.audio.samples.resize(seg_len, 0.0f);
  } else {
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> start_dist(0, clip.size() - seg_len);
    const std::size_t start = start_dist(rng);
    seg.audio.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                             clip.samples.begin() + static_cast<std::ptrdiff_t>(start + seg_len));
  }
  seg.mel = mel.extract(std::span<const float>(seg.audio.samples));
  return seg;
}

inline Segment random_segment(const AudioClip& clip, std::size_t seg_len, std::uint64_t seed,
                              const MelConfig& cfg = {}) {
  return random_segment(clip, seg_len, seed, MelExtractor(cfg));
}

}  // namespace flowvoc

#endif  // FLOWVOC_DATA_HPP_
