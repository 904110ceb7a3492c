// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Minimal .npy reader/writer for 2-D little-endian float arrays (mel input
// and output of the CLI).

#ifndef FLOWVOC_NPY_HPP_
#define FLOWVOC_NPY_HPP_

#include <cstring>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>

#include "flowvoc/spectral.hpp"

namespace flowvoc {

/// Writes `grid` as a C-ordered '<f4' array of shape (rows, cols).
inline void write_npy(const std::filesystem::path& path, const RealGrid& grid) {
  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (" +
                     std::to_string(grid.rows()) + ", " + std::to_string(grid.cols()) + "), }";
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict += '\n';
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError(path.string() + ": cannot open for writing");
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(dict.size());
  const unsigned char hl[2] = {static_cast<unsigned char>(len & 0xFF), static_cast<unsigned char>(len >> 8)};
  out.write(reinterpret_cast<const char*>(hl), 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  for (Eigen::Index i = 0; i < grid.rows(); ++i)
    for (Eigen::Index j = 0; j < grid.cols(); ++j) {
      const float v = static_cast<float>(grid(i, j));
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  if (!out) throw IngestionError(path.string() + ": write failed");
}

/// Reads a 2-D '<f4' or '<f8' array in C or Fortran order.
inline RealGrid read_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError(path.string() + ": cannot open");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "\x93NUMPY", 6) != 0)
    throw IngestionError(path.string() + ": not an .npy file");
  std::size_t header_len = 0;
  if (magic[6] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (b[1] << 8);
  } else {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::size_t>(b[3]) << 24);
  }
  std::string header(header_len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header_len)))
    throw IngestionError(path.string() + ": truncated header");
  std::smatch m;
  if (!std::regex_search(header, m, std::regex("'descr':\\s*'([<|]f[48])'")))
    throw IngestionError(path.string() + ": only little-endian float32/float64 arrays are supported");
  const int width = m[1].str()[2] == '4' ? 4 : 8;
  const bool fortran = header.find("'fortran_order': True") != std::string::npos;
  if (!std::regex_search(header, m, std::regex("'shape':\\s*\\((\\d+),\\s*(\\d+),?\\s*\\)")))
    throw IngestionError(path.string() + ": expected a 2-D array");
  const long rows = std::stol(m[1].str()), cols = std::stol(m[2].str());
  RealGrid g(rows, cols);
  for (long k = 0; k < rows * cols; ++k) {
    double v = 0.0;
    if (width == 4) {
      float f;
      if (!in.read(reinterpret_cast<char*>(&f), 4)) throw IngestionError(path.string() + ": truncated data");
      v = f;
    } else if (!in.read(reinterpret_cast<char*>(&v), 8)) {
      throw IngestionError(path.string() + ": truncated data");
    }
    if (fortran) g(k % rows, k / rows) = v;
    else g(k / cols, k % cols) = v;
  }
  return g;
}

}  // namespace flowvoc

#endif  // FLOWVOC_NPY_HPP_
