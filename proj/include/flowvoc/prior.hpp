// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef FLOWVOC_PRIOR_HPP_
#define FLOWVOC_PRIOR_HPP_

#include <algorithm>
#include <vector>

#include "flowvoc/data.hpp"

namespace flowvoc {

inline constexpr double kSigmaMin = 1e-3;
inline constexpr double kSigmaMax = 1.0;

/// Diagonal zero-mean Gaussian prior; one standard deviation per audio sample.
struct PriorSpec {
  std::vector<double> sigma;

  std::size_t size() const { return sigma.size(); }

  void validate() const {
    for (std::size_t i = 0; i < sigma.size(); ++i)
      if (!(sigma[i] >= kSigmaMin && sigma[i] <= kSigmaMax))
        throw InvariantError("PriorSpec: sigma[" + std::to_string(i) + "] outside [1e-3, 1]");
  }
};

/// Per-frame standard deviation sqrt(sum_f raw[f, k]) / sqrt(n_mels * 32768),
/// before interpolation and clamping.
inline std::vector<double> frame_sigmas(const RealGrid& raw) {
  const double norm = std::sqrt(static_cast<double>(raw.rows()) * kFullScale);
  std::vector<double> out(static_cast<std::size_t>(raw.cols()));
  for (Eigen::Index k = 0; k < raw.cols(); ++k) {
    double sum = 0.0;
    for (Eigen::Index f = 0; f < raw.rows(); ++f) {
      const double v = raw(f, k);
      if (v < 0.0 || !std::isfinite(v))
        throw InvariantError("build_prior: raw mel cell (" + std::to_string(f) + ", " +
                             std::to_string(k) + ") is negative or non-finite");
      sum += v;
    }
    out[static_cast<std::size_t>(k)] = std::sqrt(sum) / norm;
  }
  return out;
}

/// Mel-conditioned prior. Frame values are anchored at frame centers
/// (k * hop + hop / 2), linearly interpolated between centers, held constant
/// past the first and last center, and clamped to [1e-3, 1].
inline PriorSpec build_prior(const MelSpectrogram& mel, std::size_t target_len, int hop = 256) {
  const auto frames = static_cast<std::size_t>(mel.frames());
  if (frames == 0) throw ShapeError("build_prior: mel has no frames");
  if (target_len != frames * static_cast<std::size_t>(hop))
    throw ShapeError("build_prior: target length " + std::to_string(target_len) +
                     " != frames * hop (" + std::to_string(frames * hop) + ")");
  const auto per_frame = frame_sigmas(mel.raw);
  PriorSpec spec;
  spec.sigma.resize(target_len);
  const double half = hop / 2.0;
  for (std::size_t i = 0; i < target_len; ++i) {
    const double u = (static_cast<double>(i) - half) / hop;
    double s;
    if (u <= 0.0) {
      s = per_frame.front();
    } else if (u >= static_cast<double>(frames - 1)) {
      s = per_frame.back();
    } else {
      const auto k = static_cast<std::size_t>(u);
      const double frac = u - static_cast<double>(k);
      s = frac == 0.0 ? per_frame[k] : (1.0 - frac) * per_frame[k] + frac * per_frame[k + 1];
    }
    spec.sigma[i] = std::clamp(s, kSigmaMin, kSigmaMax);
  }
  return spec;
}

/// x0[i] ~ N(0, sigma[i]^2), independent, deterministic per seed.
inline std::vector<double> sample_prior(const PriorSpec& spec, std::uint64_t seed) {
  spec.validate();
  NormalSource normal(seed);
  std::vector<double> x0(spec.size());
  for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = spec.sigma[i] * normal();
  return x0;
}

}  // namespace flowvoc

#endif  // FLOWVOC_PRIOR_HPP_
