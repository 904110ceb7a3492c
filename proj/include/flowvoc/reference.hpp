// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Slow, direct reference implementations of the spectral losses, used as
// oracles by the tests and `flowvoc oracle loss_equivalence`. Nothing here
// shares code with the library's transforms.

#ifndef FLOWVOC_REFERENCE_HPP_
#define FLOWVOC_REFERENCE_HPP_

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace flowvoc::reference {

using cplx = std::complex<double>;
using Grid = std::vector<std::vector<double>>;    // [rows][cols]
using CGrid = std::vector<std::vector<cplx>>;

inline double pi() { return std::numbers::pi; }

inline long bounce(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// torch.stft(center=True, pad_mode="reflect") with a periodic Hann window
// of win samples centered in n_fft. Returns [bins][frames].
inline CGrid stft(const std::vector<double>& x, int n_fft, int hop, int win) {
  const long n = static_cast<long>(x.size());
  const long pad = n_fft / 2;
  const long frames = 1 + n / hop;
  std::vector<double> w(n_fft, 0.0);
  for (int i = 0; i < win; ++i)
    w[(n_fft - win) / 2 + i] = 0.5 * (1.0 - std::cos(2.0 * pi() * i / win));
  CGrid out(n_fft / 2 + 1, std::vector<cplx>(frames));
  for (long t = 0; t < frames; ++t)
    for (int k = 0; k <= n_fft / 2; ++k) {
      double re = 0.0, im = 0.0;
      for (int m = 0; m < n_fft; ++m) {
        if (w[m] == 0.0) continue;
        const double v = w[m] * x[bounce(t * hop + m - pad, n)];
        const double ang = 2.0 * pi() * k * m / n_fft;
        re += v * std::cos(ang);
        im -= v * std::sin(ang);
      }
      out[k][t] = {re, im};
    }
  return out;
}

// Zero-padded correlation; kernel [kh][kw], top/left pads given.
inline Grid correlate(const Grid& in, const Grid& kernel, int pad_top, int pad_left) {
  const long rows = static_cast<long>(in.size()), cols = static_cast<long>(in[0].size());
  Grid out(rows, std::vector<double>(cols, 0.0));
  for (long f = 0; f < rows; ++f)
    for (long t = 0; t < cols; ++t) {
      double s = 0.0;
      for (long i = 0; i < static_cast<long>(kernel.size()); ++i)
        for (long j = 0; j < static_cast<long>(kernel[0].size()); ++j) {
          const long ff = f + i - pad_top, tt = t + j - pad_left;
          if (ff < 0 || ff >= rows || tt < 0 || tt >= cols) continue;
          s += kernel[i][j] * in[ff][tt];
        }
      out[f][t] = s;
    }
  return out;
}

inline Grid time_kernel() { return {{-0.25, 0.25}, {-0.5, 0.5}, {-0.25, 0.25}}; }
inline Grid freq_kernel() { return {{-0.25, -0.5, -0.25}, {0.25, 0.5, 0.25}}; }
inline Grid lap_kernel() {
  return {{-0.125, -0.125, -0.125}, {-0.125, 1.0, -0.125}, {-0.125, -0.125, -0.125}};
}

inline double mse(const Grid& a, const Grid& b) {
  double s = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j, ++n) s += (a[i][j] - b[i][j]) * (a[i][j] - b[i][j]);
  return s / n;
}

// Modified multi-resolution loss, cell by cell.
inline double modified_stft_loss(const std::vector<double>& x, const std::vector<double>& y,
                                 const std::vector<int>& ffts = {1024, 2048, 512},
                                 const std::vector<int>& hops = {128, 256, 64},
                                 const std::vector<int>& wins = {512, 1024, 256}) {
  const double floor = 1e-6;
  double loss = 0.0;
  for (std::size_t r = 0; r < ffts.size(); ++r) {
    const CGrid X = stft(x, ffts[r], hops[r], wins[r]);
    const CGrid Y = stft(y, ffts[r], hops[r], wins[r]);
    Grid a(X.size(), std::vector<double>(X[0].size()));
    Grid b = a;
    double phase = 0.0, mag = 0.0;
    long masked = 0, cells = 0;
    for (std::size_t i = 0; i < X.size(); ++i)
      for (std::size_t j = 0; j < X[i].size(); ++j, ++cells) {
        const double mx = std::norm(X[i][j]), my = std::norm(Y[i][j]);
        if (mx > floor && my > floor) {
          const double d = std::atan2(X[i][j].imag(), X[i][j].real()) -
                           std::atan2(Y[i][j].imag(), Y[i][j].real());
          phase += std::abs(std::atan2(std::sin(d), std::cos(d)));
          ++masked;
        }
        a[i][j] = std::sqrt(mx + floor);
        b[i][j] = std::sqrt(my + floor);
        mag += std::abs(std::log(a[i][j]) - std::log(b[i][j]));
      }
    loss += (masked ? phase / masked : 0.0) + mag / cells;
    loss += 4.0 * mse(correlate(a, freq_kernel(), 1, 1), correlate(b, freq_kernel(), 1, 1));
    loss += 4.0 * mse(correlate(a, time_kernel(), 1, 1), correlate(b, time_kernel(), 1, 1));
    loss += 2.0 * mse(correlate(a, lap_kernel(), 1, 1), correlate(b, lap_kernel(), 1, 1));
  }
  return loss / ffts.size();
}

// Spectral convergence (unfloored) + log magnitude (clamped), averaged.
inline double classic_stft_loss(const std::vector<double>& x, const std::vector<double>& y) {
  const std::vector<int> ffts{1024, 2048, 512}, hops{120, 240, 50}, wins{600, 1200, 240};
  const double floor = 1e-8;
  double loss = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    const CGrid X = stft(x, ffts[r], hops[r], wins[r]);
    const CGrid Y = stft(y, ffts[r], hops[r], wins[r]);
    double num = 0.0, den = 0.0, mag = 0.0;
    long cells = 0;
    for (std::size_t i = 0; i < X.size(); ++i)
      for (std::size_t j = 0; j < X[i].size(); ++j, ++cells) {
        const double ax = std::abs(X[i][j]), ay = std::abs(Y[i][j]);
        num += (ax - ay) * (ax - ay);
        den += ax * ax;
        mag += std::abs(std::log(std::sqrt(std::max(ax * ax, floor))) -
                        std::log(std::sqrt(std::max(ay * ay, floor))));
      }
    loss += std::sqrt(num) / std::sqrt(den) + mag / cells;
  }
  return loss / 3.0;
}

// Central finite difference of f at coordinate i.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

inline std::vector<double> noise(std::size_t n, unsigned seed, double scale = 0.3) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(n);
  for (auto& s : v) s = nd(rng);
  return v;
}

inline double rel_err(double a, double b) {
  const double d = std::abs(a - b);
  const double m = std::max(std::abs(a), std::abs(b));
  return m == 0.0 ? d : d / m;
}

}  // namespace flowvoc::reference

#endif  // FLOWVOC_REFERENCE_HPP_
