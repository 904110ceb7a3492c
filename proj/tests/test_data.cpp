// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "flowvoc/data.hpp"

namespace fs = std::filesystem;
using namespace flowvoc;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("flowvoc_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

AudioClip tone(std::size_t n, double hz, double amp = 0.5, int sr = 24000) {
  AudioClip c;
  c.sample_rate = sr;
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    c.samples[i] = static_cast<float>(amp * std::sin(2.0 * kPi * hz * i / sr));
  return c;
}

// Slaney mel scale written out independently of the library.
double to_mel(double hz) { return hz < 1000 ? hz * 3.0 / 200.0 : 15.0 + 27.0 * std::log(hz / 1000) / std::log(6.4); }
double to_hz(double m) { return m < 15 ? m * 200.0 / 3.0 : 1000 * std::exp((m - 15) * std::log(6.4) / 27.0); }

}  // namespace

TEST(Wav, Pcm16AndFloatRoundTrip) {
  const auto dir = scratch_dir("wav");
  AudioClip clip = tone(4000, 440.0, 0.9);
  clip.samples[7] = -1.0f;
  write_wav(dir / "a.wav", clip, WavEncoding::kFloat32);
  EXPECT_EQ(read_wav(dir / "a.wav").samples, clip.samples);
  write_wav(dir / "b.wav", clip, WavEncoding::kPcm16);
  const AudioClip back = read_wav(dir / "b.wav");
  ASSERT_EQ(back.size(), clip.size());
  EXPECT_EQ(back.sample_rate, 24000);
  for (std::size_t i = 0; i < clip.size(); ++i) EXPECT_NEAR(back.samples[i], clip.samples[i], 1.0 / 32768);
  EXPECT_EQ(back.samples[7], -1.0f);
}

TEST(Manifest, SortedHandles) {
  const auto dir = scratch_dir("manifest");
  for (const char* name : {"c.wav", "a.wav", "b.wav"}) write_wav(dir / name, tone(512, 100));
  std::ofstream(dir / "list.txt") << "c.wav\nb.wav\n\n" << (dir / "a.wav").string() << "\n";
  const auto handles = load_manifest(dir / "list.txt");
  ASSERT_EQ(handles.size(), 3u);
  EXPECT_EQ(handles[0].path.filename(), "a.wav");
  EXPECT_EQ(handles[1].path.filename(), "b.wav");
  EXPECT_EQ(handles[2].path.filename(), "c.wav");
  EXPECT_EQ(handles[1].load().size(), 512u);
}

TEST(Manifest, MissingFileIsNamed) {
  const auto dir = scratch_dir("missing");
  write_wav(dir / "a.wav", tone(512, 100));
  std::ofstream(dir / "list.txt") << "a.wav\nghost.wav\n";
  try {
    load_manifest(dir / "list.txt");
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost.wav"), std::string::npos);
  }
}

TEST(Manifest, EmptyManifestIsEmpty) {
  const auto dir = scratch_dir("empty");
  std::ofstream(dir / "list.txt") << "";
  EXPECT_TRUE(load_manifest(dir / "list.txt").empty());
}

TEST(Manifest, StereoRejectedWithChannelCount) {
  const auto dir = scratch_dir("stereo");
  // Hand-built 2-channel PCM-16 header with four frames.
  std::ofstream out(dir / "st.wav", std::ios::binary);
  const unsigned char hdr[] = {'R', 'I', 'F', 'F', 52, 0, 0, 0, 'W', 'A', 'V', 'E', 'f', 'm', 't', ' ',
                               16, 0, 0, 0, 1, 0, 2, 0, 0xC0, 0x5D, 0, 0, 0x00, 0x77, 1, 0,
                               4, 0, 16, 0, 'd', 'a', 't', 'a', 16, 0, 0, 0};
  out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  const char zeros[16] = {};
  out.write(zeros, 16);
  out.close();
  std::ofstream(dir / "list.txt") << "st.wav\n";
  try {
    load_manifest(dir / "list.txt");
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("2 channels"), std::string::npos) << e.what();
  }
}

TEST(ExtractMel, SilenceGivesFloor) {
  AudioClip clip;
  clip.samples.assign(2560, 0.0f);
  const auto mel = extract_mel(clip, MelConfig{});
  EXPECT_EQ(mel.n_mels(), 100);
  EXPECT_EQ(mel.frames(), 10);
  EXPECT_EQ(mel.raw.cwiseAbs().maxCoeff(), 0.0);
  for (Eigen::Index i = 0; i < mel.log.size(); ++i)
    EXPECT_DOUBLE_EQ(mel.log.data()[i], std::log(1e-5));
}

TEST(ExtractMel, FrameCountIsCeilOfHops) {
  const MelExtractor ex;
  for (std::size_t len : {1024u, 1025u, 1280u, 2559u, 2560u, 32768u}) {
    std::vector<double> x(len, 0.0);
    EXPECT_EQ(ex.extract(std::span<const double>(x)).frames(), static_cast<int>((len + 255) / 256))
        << len;
  }
}

TEST(ExtractMel, ShorterThanWindowThrows) {
  AudioClip clip;
  clip.samples.assign(1000, 0.0f);
  EXPECT_THROW(extract_mel(clip, MelConfig{}), ShapeError);
}

TEST(ExtractMel, SineLandsInItsBand) {
  // Band b spans edges b..b+2 of 102 points uniform on the mel axis.
  std::vector<double> edges(102);
  for (int i = 0; i < 102; ++i) edges[i] = to_hz(to_mel(12000.0) * i / 101.0);
  int expected = -1;
  double best = -1.0;
  for (int b = 0; b < 100; ++b) {
    const double w = std::max(0.0, std::min((1000 - edges[b]) / (edges[b + 1] - edges[b]),
                                            (edges[b + 2] - 1000) / (edges[b + 2] - edges[b + 1])));
    if (w > best) best = w, expected = b;
  }
  // 1 kHz has a 24-sample period; with 23809 samples both ends sit on
  // extrema, so reflect padding continues the sinusoid without a kink.
  AudioClip clip;
  clip.samples.resize(23809);
  for (std::size_t i = 0; i < clip.size(); ++i)
    clip.samples[i] = static_cast<float>(std::cos(2.0 * kPi * 1000.0 * i / 24000.0));
  const auto mel = extract_mel(clip, MelConfig{});
  for (int t = 0; t < mel.frames(); ++t) {
    Eigen::Index arg;
    mel.raw.col(t).maxCoeff(&arg);
    EXPECT_EQ(arg, expected) << "frame " << t;
  }
}

TEST(ExtractMel, PrefixAgreesAwayFromEdges) {
  const AudioClip clip = tone(8192, 733.0, 0.7);
  AudioClip half = clip;
  half.samples.resize(4096);
  const auto full = extract_mel(clip, MelConfig{});
  const auto part = extract_mel(half, MelConfig{});
  // Frames whose analysis window touches the reflected right edge differ.
  const int edge = (1024 - 256) / 2 / 256 + 1;
  for (int t = 0; t < part.frames() - edge; ++t)
    for (int f = 0; f < 100; ++f) EXPECT_NEAR(part.raw(f, t), full.raw(f, t), 1e-9 * (1 + full.raw(f, t)));
}

TEST(ExtractMel, FullScaleSignalsStayInRange) {
  const MelExtractor ex;
  for (std::size_t pos : {0u, 100u, 1000u, 2047u}) {
    std::vector<double> x(2048, 0.0);
    x[pos] = 1.0;
    EXPECT_LE(ex.extract(std::span<const double>(x)).raw.maxCoeff(), kFullScale);
  }
  for (double hz : {50.0, 1000.0, 5000.0, 11900.0}) {
    const auto c = tone(4096, hz, 1.0);
    const auto mel = ex.extract(std::span<const float>(c.samples));
    EXPECT_LE(mel.raw.maxCoeff(), kFullScale);
    EXPECT_GE(mel.raw.minCoeff(), 0.0);
  }
}

TEST(ExtractMel, Deterministic) {
  const auto c = tone(5000, 321.0);
  const auto a = extract_mel(c, MelConfig{});
  const auto b = extract_mel(c, MelConfig{});
  EXPECT_TRUE(a.raw == b.raw);
  EXPECT_TRUE(a.log == b.log);
}

TEST(ExtractMel, LogMelBackwardMatchesFiniteDifferences) {
  const MelExtractor ex;
  std::vector<double> x(2048);
  std::mt19937 rng(3);
  std::normal_distribution<double> nd(0.0, 0.2);
  for (auto& v : x) v = nd(rng);
  RealGrid w = RealGrid::Random(100, 8);
  auto objective = [&](const std::vector<double>& s) {
    return (ex.extract(std::span<const double>(s)).log.array() * w.array()).sum();
  };
  const auto g = ex.log_mel_backward(x, w);
  for (std::size_t i : {3u, 500u, 1024u, 2000u}) {
    auto up = x, down = x;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double fd = (objective(up) - objective(down)) / 2e-6;
    EXPECT_NEAR(g[i], fd, 1e-4 * (1 + std::abs(fd))) << i;
  }
}

TEST(RandomSegment, AlignedAndDeterministic) {
  const AudioClip clip = tone(100000, 220.0);
  const auto a = random_segment(clip, 32768, 7);
  const auto b = random_segment(clip, 32768, 7);
  EXPECT_EQ(a.mel.frames(), 128);
  EXPECT_EQ(a.audio.size(), 32768u);
  EXPECT_EQ(a.pad_samples, 0u);
  EXPECT_EQ(a.audio.samples, b.audio.samples);
  EXPECT_TRUE(a.mel.raw == b.mel.raw);
  EXPECT_EQ(a.mel.frames() * 256, static_cast<int>(a.audio.size()));
}

TEST(RandomSegment, ShortClipIsPaddedAndFlagged) {
  const AudioClip clip = tone(1000, 220.0);
  const auto s = random_segment(clip, 32768, 1);
  EXPECT_EQ(s.audio.size(), 32768u);
  EXPECT_EQ(s.pad_samples, 31768u);
  for (std::size_t i = 1000; i < 32768; ++i) ASSERT_EQ(s.audio.samples[i], 0.0f);
  EXPECT_EQ(s.mel.frames(), 128);
}

TEST(RandomSegment, RejectsNonHopMultiple) {
  EXPECT_THROW(random_segment(tone(5000, 220.0), 1000, 1), InvariantError);
}
