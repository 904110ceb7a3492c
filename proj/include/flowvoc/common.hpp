// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef FLOWVOC_COMMON_HPP_
#define FLOWVOC_COMMON_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace flowvoc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reading audio or manifests failed.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// An argument was outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Shapes of two operands disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A documented invariant of a domain type does not hold.
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite or runaway value.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

template <class T>
using Vec = std::vector<T>;

/// Row-major [rows x cols] matrix, the storage used for (channels x time)
/// activations and (freq x frames) spectrogram grids.
template <class T>
using Grid = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kPi = std::numbers::pi;

/// 16-bit full scale; raw mel values live in [0, kFullScale].
inline constexpr double kFullScale = 32768.0;

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

template <class T>
bool all_finite(std::span<const T> xs) {
  for (T x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

/// Derives an independent stream seed from a base seed and a salt (splitmix64).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Standard normal draws via Box-Muller so noise streams are identical
/// across standard library implementations.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : rng_(seed) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  Rng& engine() { return rng_; }

 private:
  Rng rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace flowvoc

#endif  // FLOWVOC_COMMON_HPP_
