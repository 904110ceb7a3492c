// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include "flowvoc/prior.hpp"

using namespace flowvoc;

namespace {

MelSpectrogram mel_with_frames(const std::vector<double>& per_frame_cell, int n_mels = 100) {
  MelSpectrogram m;
  m.raw.resize(n_mels, static_cast<Eigen::Index>(per_frame_cell.size()));
  for (std::size_t k = 0; k < per_frame_cell.size(); ++k)
    m.raw.col(static_cast<Eigen::Index>(k)).setConstant(per_frame_cell[k]);
  m.log = m.raw.cwiseMax(1e-5).array().log().matrix();
  return m;
}

// Cell value that gives a frame sigma s with 100 identical bands.
double cell_for_sigma(double s) { return s * s * kFullScale; }

}  // namespace

TEST(BuildPrior, FullEnergyFrameIsOne) {
  const auto spec = build_prior(mel_with_frames({kFullScale, kFullScale}), 512);
  EXPECT_EQ(spec.sigma[128], 1.0);
  EXPECT_EQ(spec.sigma[384], 1.0);
}

TEST(BuildPrior, SilentFrameClampsToFloor) {
  const auto spec = build_prior(mel_with_frames({0.0, 0.0, 0.0}), 768);
  for (double s : spec.sigma) EXPECT_EQ(s, 1e-3);
}

TEST(BuildPrior, MidpointInterpolates) {
  const auto spec = build_prior(mel_with_frames({cell_for_sigma(0.2), cell_for_sigma(0.4)}), 512);
  EXPECT_NEAR(spec.sigma[128], 0.2, 1e-12);
  EXPECT_NEAR(spec.sigma[384], 0.4, 1e-12);
  EXPECT_NEAR(spec.sigma[256], 0.3, 1e-12);
  EXPECT_NEAR(spec.sigma[0], 0.2, 1e-12);
  EXPECT_NEAR(spec.sigma[511], 0.4, 1e-12);
}

TEST(BuildPrior, FrameCentersAreExact) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.0, 2000.0);
  MelSpectrogram m;
  m.raw = RealGrid(100, 12);
  for (Eigen::Index i = 0; i < m.raw.size(); ++i) m.raw.data()[i] = u(rng);
  const auto spec = build_prior(m, 12 * 256);
  const auto frames = frame_sigmas(m.raw);
  for (int k = 0; k < 12; ++k)
    EXPECT_EQ(spec.sigma[k * 256 + 128], std::clamp(frames[k], 1e-3, 1.0));
}

TEST(BuildPrior, SilentThresholdGivesFloorExactly) {
  const double threshold_cell = 1e-6 * kFullScale;  // sum = (1e-3)^2 * 100 * 32768
  const auto spec = build_prior(mel_with_frames({threshold_cell, threshold_cell * 0.5}), 512);
  EXPECT_EQ(spec.sigma[128], 1e-3);
  EXPECT_EQ(spec.sigma[384], 1e-3);
}

TEST(BuildPrior, ScaleMonotone) {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(0.0, 300.0);
  for (int trial = 0; trial < 20; ++trial) {
    MelSpectrogram m;
    m.raw = RealGrid(100, 6);
    for (Eigen::Index i = 0; i < m.raw.size(); ++i) m.raw.data()[i] = u(rng) * (i % 7 == 0 ? 0 : 1);
    const double c = 1.0 + trial * 0.7;
    MelSpectrogram scaled = m;
    scaled.raw = (m.raw * c).cwiseMin(kFullScale);
    const auto a = build_prior(m, 6 * 256), b = build_prior(scaled, 6 * 256);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_GE(b.sigma[i], a.sigma[i]);
  }
}

TEST(BuildPrior, RejectsNegativeCellsAndBadLength) {
  auto m = mel_with_frames({1.0, 1.0});
  EXPECT_THROW(build_prior(m, 500), ShapeError);
  m.raw(3, 1) = -1.0;
  EXPECT_THROW(build_prior(m, 512), InvariantError);
}

TEST(SamplePrior, MonteCarloMoments) {
  PriorSpec spec;
  spec.sigma.assign(1'000'000, 1e-3);
  const auto x = sample_prior(spec, 42);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= x.size();
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (x.size() - 1));
  EXPECT_GE(sd, 0.95e-3);
  EXPECT_LE(sd, 1.05e-3);
  EXPECT_LE(std::abs(mean), 4.0 * 1e-3 / 1e3);
}

TEST(SamplePrior, SameSeedSameNoise) {
  PriorSpec spec;
  spec.sigma.assign(4096, 0.25);
  EXPECT_EQ(sample_prior(spec, 3), sample_prior(spec, 3));
  EXPECT_NE(sample_prior(spec, 3), sample_prior(spec, 4));
}

TEST(SamplePrior, RejectsInvalidSpec) {
  PriorSpec spec;
  spec.sigma.assign(16, 2.0);
  EXPECT_THROW(sample_prior(spec, 1), InvariantError);
}
