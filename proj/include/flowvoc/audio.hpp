// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef FLOWVOC_AUDIO_HPP_
#define FLOWVOC_AUDIO_HPP_

#include <algorithm>
#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "flowvoc/common.hpp"

namespace flowvoc {

/// Mono waveform with its sample rate. Samples are finite and within [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 24000;

  std::size_t size() const { return samples.size(); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }

  void validate() const {
    if (sample_rate <= 0) throw InvariantError("sample rate must be positive");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const float s = samples[i];
      if (!std::isfinite(s) || std::abs(s) > 1.0f)
        throw InvariantError("sample " + std::to_string(i) +
                             " is non-finite or outside [-1, 1]");
    }
  }
};

enum class WavEncoding { kPcm16, kFloat32 };

struct WavInfo {
  int channels = 0;
  int sample_rate = 0;
  int bits_per_sample = 0;
  WavEncoding encoding = WavEncoding::kPcm16;
  std::size_t frames = 0;
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

// Parses the RIFF header. On return `data_offset` points at the first sample.
inline WavInfo parse_wav_header(const std::vector<unsigned char>& bytes, const std::string& path,
                                std::size_t& data_offset) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IngestionError(path + ": not a RIFF/WAVE file");
  WavInfo info;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size())
        throw IngestionError(path + ": truncated fmt chunk");
      std::uint16_t format = read_u16(bytes.data() + body);
      info.channels = read_u16(bytes.data() + body + 2);
      info.sample_rate = static_cast<int>(read_u32(bytes.data() + body + 4));
      info.bits_per_sample = read_u16(bytes.data() + body + 14);
      if (format == 0xFFFE && size >= 26) format = read_u16(bytes.data() + body + 24);
      if (format == 1 && info.bits_per_sample == 16) {
        info.encoding = WavEncoding::kPcm16;
      } else if (format == 3 && info.bits_per_sample == 32) {
        info.encoding = WavEncoding::kFloat32;
      } else {
        throw IngestionError(path + ": unsupported WAV encoding (format " +
                             std::to_string(format) + ", " +
                             std::to_string(info.bits_per_sample) + " bits)");
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw IngestionError(path + ": data chunk precedes fmt chunk");
      const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
      const std::size_t frame_bytes =
          static_cast<std::size_t>(info.channels) * (info.bits_per_sample / 8);
      info.frames = frame_bytes == 0 ? 0 : avail / frame_bytes;
      data_offset = body;
      return info;
    }
    pos = body + size + (size & 1u);
  }
  throw IngestionError(path + ": missing fmt or data chunk");
}

inline std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError(path.string() + ": cannot open file");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

/// Reads only the header of a WAV file.
inline WavInfo probe_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError(path.string() + ": cannot open file");
  std::vector<unsigned char> head(4096);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  std::size_t offset = 0;
  WavInfo info = detail::parse_wav_header(head, path.string(), offset);
  const auto total = std::filesystem::file_size(path);
  const std::size_t frame_bytes =
      static_cast<std::size_t>(info.channels) * (info.bits_per_sample / 8);
  if (frame_bytes > 0 && total > offset) info.frames = (total - offset) / frame_bytes;
  return info;
}

/// Loads a mono PCM-16 or float-32 WAV file.
inline AudioClip read_wav(const std::filesystem::path& path) {
  const auto bytes = detail::slurp(path);
  std::size_t offset = 0;
  const WavInfo info = detail::parse_wav_header(bytes, path.string(), offset);
  if (info.channels != 1)
    throw IngestionError(path.string() + ": expected mono audio, found " +
                         std::to_string(info.channels) + " channels");
  AudioClip clip;
  clip.sample_rate = info.sample_rate;
  clip.samples.resize(info.frames);
  const unsigned char* p = bytes.data() + offset;
  if (info.encoding == WavEncoding::kPcm16) {
    for (std::size_t i = 0; i < info.frames; ++i) {
      const auto raw = static_cast<std::int16_t>(detail::read_u16(p + 2 * i));
      clip.samples[i] = static_cast<float>(raw / kFullScale);
    }
  } else {
    for (std::size_t i = 0; i < info.frames; ++i) {
      float v;
      std::memcpy(&v, p + 4 * i, 4);
      clip.samples[i] = v;
    }
  }
  clip.validate();
  return clip;
}

/// Writes a mono WAV file. PCM-16 output is clipped to the representable range.
inline void write_wav(const std::filesystem::path& path, const AudioClip& clip,
                      WavEncoding encoding = WavEncoding::kPcm16) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError(path.string() + ": cannot open for writing");
  const std::uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * (bits / 8));
  out.write("RIFF", 4);
  detail::put_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  detail::put_u32(out, 16);
  detail::put_u16(out, encoding == WavEncoding::kPcm16 ? 1 : 3);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * (bits / 8));
  detail::put_u16(out, bits / 8);
  detail::put_u16(out, bits);
  out.write("data", 4);
  detail::put_u32(out, data_bytes);
  if (encoding == WavEncoding::kPcm16) {
    std::vector<unsigned char> buf(clip.samples.size() * 2);
    for (std::size_t i = 0; i < clip.samples.size(); ++i) {
      const double scaled = std::nearbyint(static_cast<double>(clip.samples[i]) * kFullScale);
      const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
      const auto u = static_cast<std::uint16_t>(v);
      buf[2 * i] = static_cast<unsigned char>(u & 0xFF);
      buf[2 * i + 1] = static_cast<unsigned char>(u >> 8);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  } else {
    out.write(reinterpret_cast<const char*>(clip.samples.data()),
              static_cast<std::streamsize>(clip.samples.size() * 4));
  }
  if (!out) throw IngestionError(path.string() + ": write failed");
}

/// Lazily loadable reference to one manifest entry.
struct ClipHandle {
  std::filesystem::path path;
  WavInfo info;

  AudioClip load() const { return read_wav(path); }
};

/// Paths listed in a manifest (one audio path per line; relative paths
/// resolve against the manifest's directory), in file order. Blank lines and
/// lines starting with '#' are skipped. Files are not opened.
inline std::vector<std::filesystem::path> manifest_paths(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IngestionError(manifest.string() + ": manifest not found");
  const auto base = manifest.parent_path();
  std::vector<std::filesystem::path> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.pop_back();
    std::size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::filesystem::path p(line.substr(first));
    if (p.is_relative()) p = base / p;
    out.push_back(p.lexically_normal());
  }
  return out;
}

/// Reads and probes every manifest entry. Handles come back sorted by path.
inline std::vector<ClipHandle> load_manifest(const std::filesystem::path& manifest) {
  std::vector<ClipHandle> handles;
  for (const auto& p : manifest_paths(manifest)) {
    if (!std::filesystem::exists(p)) throw IngestionError(p.string() + ": audio file not found");
    ClipHandle h{p, probe_wav(p)};
    if (h.info.channels != 1)
      throw IngestionError(p.string() + ": expected mono audio, found " +
                           std::to_string(h.info.channels) + " channels");
    handles.push_back(std::move(h));
  }
  std::sort(handles.begin(), handles.end(),
            [](const ClipHandle& a, const ClipHandle& b) { return a.path < b.path; });
  return handles;
}

}  // namespace flowvoc

#endif  // FLOWVOC_AUDIO_HPP_
