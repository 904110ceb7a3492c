// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Training objective: time-weighted mean square on the predicted clean
// waveform, a multi-resolution STFT loss (wrapped phase, log magnitude and
// gradient/Laplacian penalties on the magnitude grid), and a log-mel L1 term.
// Every loss returns its value and, on request, the exact gradient with
// respect to the prediction.

#ifndef FLOWVOC_LOSSES_HPP_
#define FLOWVOC_LOSSES_HPP_

#include <array>
#include <optional>
#include <vector>

#include "flowvoc/data.hpp"
#include "flowvoc/spectral.hpp"

namespace flowvoc {

/// Resolutions of a multi-resolution STFT loss.
struct StftConfig {
  std::vector<int> fft_sizes{1024, 2048, 512};
  std::vector<int> hop_sizes{128, 256, 64};
  std::vector<int> win_lengths{512, 1024, 256};
  /// Floor added to (modified loss) or clamped onto (classic loss) the
  /// squared magnitude.
  double mag_floor = 1e-6;

  /// Parallel WaveGAN / auraloss resolutions for the classic loss and M-STFT.
  static StftConfig classic() {
    return StftConfig{{1024, 2048, 512}, {120, 240, 50}, {600, 1200, 240}, 1e-8};
  }

  std::size_t resolutions() const { return fft_sizes.size(); }

  void validate() const {
    if (fft_sizes.size() != 3 || hop_sizes.size() != 3 || win_lengths.size() != 3)
      throw InvariantError("StftConfig: expected exactly three resolutions");
    for (std::size_t i = 0; i < 3; ++i)
      if (win_lengths[i] > fft_sizes[i] || hop_sizes[i] <= 0 || win_lengths[i] <= 0)
        throw InvariantError("StftConfig: window longer than FFT or non-positive size");
    if (!(mag_floor > 0.0)) throw InvariantError("StftConfig: mag_floor must be positive");
  }
};

struct LossWeights {
  double lambda0 = 0.02;  // STFT term
  double lambda1 = 0.02;  // mel L1 term
  double time_weight_cap = 10.0;

  void validate() const {
    if (lambda0 < 0.0 || lambda1 < 0.0 || time_weight_cap < 1.0)
      throw InvariantError("LossWeights: weights must be nonnegative and cap >= 1");
  }
};

/// Unscaled per-resolution sub-terms. The modified loss fills phase,
/// log_mag and the three operator MSEs; the classic loss fills
/// spectral_convergence and log_mag.
struct ResolutionTerms {
  double phase = 0.0;
  double log_mag = 0.0;
  double d_time = 0.0;
  double d_freq = 0.0;
  double laplacian = 0.0;
  double spectral_convergence = 0.0;
  /// Cells where both squared magnitudes exceed the floor.
  std::size_t phase_cells = 0;

  double combined() const {
    return phase + log_mag + 4.0 * d_freq + 4.0 * d_time + 2.0 * laplacian +
           spectral_convergence;
  }
};

struct LossReport {
  double fm_term = 0.0;
  double stft_term = 0.0;
  double mel_term = 0.0;
  double total = 0.0;
  double time_weight = 1.0;
  std::vector<ResolutionTerms> resolutions;

  double weighted_sum(const LossWeights& w) const {
    return fm_term + w.lambda0 * stft_term + w.lambda1 * mel_term;
  }
};

/// 1 / max(1/cap, 1 - t); with the default cap this is 1/(1-t) below 0.9 and 10 above.
inline double time_weight(double t, double cap = 10.0) {
  if (!(t >= 0.0 && t < 1.0)) throw DomainError("time_weight: t must lie in [0, 1)");
  return 1.0 / std::max(1.0 / cap, 1.0 - t);
}

/// time_weight(t) * mean((x1 - v1)^2). Writes d/dv1 into `grad` when given.
inline double fm_loss(std::span<const double> x1, std::span<const double> v1, double t,
                      std::vector<double>* grad = nullptr, double cap = 10.0) {
  require(x1.size() == v1.size(), "fm_loss: length mismatch");
  require(!x1.empty(), "fm_loss: empty input");
  const double w = time_weight(t, cap);
  const double n = static_cast<double>(x1.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    const double d = x1[i] - v1[i];
    sum += d * d;
  }
  if (grad) {
    grad->resize(x1.size());
    for (std::size_t i = 0; i < x1.size(); ++i) (*grad)[i] = -2.0 * w * (x1[i] - v1[i]) / n;
  }
  return w * sum / n;
}

/// Zero-padded 2-D correlation on a [freq x time] grid whose output has the
/// input's shape. out(f, t) = sum_ij k(i, j) * in(f + i - pad_top, t + j - pad_left).
struct SpectroOperator {
  RealGrid kernel;
  int pad_top = 0;
  int pad_left = 0;

  RealGrid apply(const RealGrid& in) const {
    check(in);
    RealGrid out = RealGrid::Zero(in.rows(), in.cols());
    const auto rows = in.rows();
    const auto cols = in.cols();
    for (Eigen::Index i = 0; i < kernel.rows(); ++i)
      for (Eigen::Index j = 0; j < kernel.cols(); ++j) {
        const double k = kernel(i, j);
        if (k == 0.0) continue;
        const Eigen::Index df = i - pad_top;
        const Eigen::Index dt = j - pad_left;
        const Eigen::Index f0 = std::max<Eigen::Index>(0, -df);
        const Eigen::Index f1 = std::min<Eigen::Index>(rows, rows - df);
        const Eigen::Index t0 = std::max<Eigen::Index>(0, -dt);
        const Eigen::Index t1 = std::min<Eigen::Index>(cols, cols - dt);
        if (f1 <= f0 || t1 <= t0) continue;
        out.block(f0, t0, f1 - f0, t1 - t0) += k * in.block(f0 + df, t0 + dt, f1 - f0, t1 - t0);
      }
    return out;
  }

  RealGrid adjoint(const RealGrid& grad_out) const {
    check(grad_out);
    RealGrid g = RealGrid::Zero(grad_out.rows(), grad_out.cols());
    const auto rows = grad_out.rows();
    const auto cols = grad_out.cols();
    for (Eigen::Index i = 0; i < kernel.rows(); ++i)
      for (Eigen::Index j = 0; j < kernel.cols(); ++j) {
        const double k = kernel(i, j);
        if (k == 0.0) continue;
        const Eigen::Index df = i - pad_top;
        const Eigen::Index dt = j - pad_left;
        const Eigen::Index f0 = std::max<Eigen::Index>(0, -df);
        const Eigen::Index f1 = std::min<Eigen::Index>(rows, rows - df);
        const Eigen::Index t0 = std::max<Eigen::Index>(0, -dt);
        const Eigen::Index t1 = std::min<Eigen::Index>(cols, cols - dt);
        if (f1 <= f0 || t1 <= t0) continue;
        g.block(f0 + df, t0 + dt, f1 - f0, t1 - t0) += k * grad_out.block(f0, t0, f1 - f0, t1 - t0);
      }
    return g;
  }

 private:
  void check(const RealGrid& in) const {
    if (in.rows() < kernel.rows() || in.cols() < kernel.cols())
      throw ShapeError("spectrogram operator: grid smaller than kernel");
  }
};

/// Time gradient: [[-1, 1], [-2, 2], [-1, 1]] / 4, padded one frame on the left.
inline SpectroOperator time_gradient_operator() {
  RealGrid k(3, 2);
  k << -1, 1, -2, 2, -1, 1;
  return {k / 4.0, 1, 1};
}

/// Frequency gradient: [[-1, -2, -1], [1, 2, 1]] / 4, padded one bin on top.
inline SpectroOperator freq_gradient_operator() {
  RealGrid k(2, 3);
  k << -1, -2, -1, 1, 2, 1;
  return {k / 4.0, 1, 1};
}

/// Eight-neighbour Laplacian / 8, padded one cell on every side.
inline SpectroOperator laplacian_operator() {
  RealGrid k(3, 3);
  k << -1, -1, -1, -1, 8, -1, -1, -1, -1;
  return {k / 8.0, 1, 1};
}

struct SpectroGrids {
  RealGrid d_time;
  RealGrid d_freq;
  RealGrid laplacian;
};

inline SpectroGrids spectro_operators(const RealGrid& mag) {
  return {time_gradient_operator().apply(mag), freq_gradient_operator().apply(mag),
          laplacian_operator().apply(mag)};
}

namespace detail {

inline double sign(double v) { return (v > 0.0) - (v < 0.0); }

inline double wrap_phase(double d) { return std::atan2(std::sin(d), std::cos(d)); }

inline double mse(const RealGrid& a, const RealGrid& b) {
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

// Modified loss at one resolution from the two spectra. When `grad` is set,
// receives d(combined)/dY as dRe + i dIm.
inline ResolutionTerms modified_resolution(const ComplexGrid& X, const ComplexGrid& Y,
                                           double floor, ComplexGrid* grad) {
  const auto rows = X.rows();
  const auto cols = X.cols();
  const double n = static_cast<double>(X.size());
  const RealGrid mx = X.cwiseAbs2();
  const RealGrid my = Y.cwiseAbs2();
  const RealGrid a = (mx.array() + floor).sqrt().matrix();
  const RealGrid b = (my.array() + floor).sqrt().matrix();

  ResolutionTerms r;
  std::size_t masked = 0;
  double phase_sum = 0.0;
  double mag_sum = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (mx(i, j) > floor && my(i, j) > floor) {
        const double dp = std::arg(X(i, j)) - std::arg(Y(i, j));
        phase_sum += std::abs(wrap_phase(dp));
        ++masked;
      }
      mag_sum += std::abs(std::log(a(i, j)) - std::log(b(i, j)));
    }
  r.phase_cells = masked;
  r.phase = masked ? phase_sum / static_cast<double>(masked) : 0.0;
  r.log_mag = mag_sum / n;

  const auto op_t = time_gradient_operator();
  const auto op_f = freq_gradient_operator();
  const auto op_l = laplacian_operator();
  const RealGrid at = op_t.apply(a), bt = op_t.apply(b);
  const RealGrid af = op_f.apply(a), bf = op_f.apply(b);
  const RealGrid al = op_l.apply(a), bl = op_l.apply(b);
  r.d_time = mse(at, bt);
  r.d_freq = mse(af, bf);
  r.laplacian = mse(al, bl);

  if (grad) {
    // Gradient w.r.t. the floored magnitude b from the three operator terms.
    RealGrid gb = op_t.adjoint((bt - at) * (8.0 / n)) + op_f.adjoint((bf - af) * (8.0 / n)) +
                  op_l.adjoint((bl - al) * (4.0 / n));
    grad->resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        const Complex y = Y(i, j);
        const double bij = b(i, j);
        const double s = sign(std::log(a(i, j)) - std::log(bij));
        // log-magnitude term, then operator terms, both through db/dY = Y / b.
        double coeff = -s / (n * bij * bij) + gb(i, j) / bij;
        Complex g = y * coeff;
        if (masked && mx(i, j) > floor && my(i, j) > floor) {
          const double w = wrap_phase(std::arg(X(i, j)) - std::arg(y));
          const double k = sign(w) / (static_cast<double>(masked) * my(i, j));
          g += Complex(k * y.imag(), -k * y.real());
        }
        (*grad)(i, j) = g;
      }
  }
  return r;
}

inline ResolutionTerms classic_resolution(const ComplexGrid& X, const ComplexGrid& Y,
                                          double floor, ComplexGrid* grad) {
  const double n = static_cast<double>(X.size());
  const RealGrid ax = X.cwiseAbs();
  const RealGrid ay = Y.cwiseAbs();
  const RealGrid mx = X.cwiseAbs2();
  const RealGrid my = Y.cwiseAbs2();
  const double ref_norm = std::max(ax.norm(), std::sqrt(n * floor));
  const double diff_norm = (ax - ay).norm();
  ResolutionTerms r;
  r.spectral_convergence = diff_norm / ref_norm;
  double mag_sum = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j)
      mag_sum += std::abs(0.5 * std::log(std::max(mx(i, j), floor)) -
                          0.5 * std::log(std::max(my(i, j), floor)));
  r.log_mag = mag_sum / n;
  if (grad) {
    grad->resize(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const Complex y = Y(i, j);
        Complex g(0.0, 0.0);
        if (ay(i, j) > 0.0 && diff_norm > 0.0)
          g += y * (-(ax(i, j) - ay(i, j)) / (diff_norm * ref_norm * ay(i, j)));
        if (my(i, j) > floor) {
          const double s =
              sign(0.5 * std::log(std::max(mx(i, j), floor)) - 0.5 * std::log(my(i, j)));
          g += y * (-s / (n * my(i, j)));
        }
        (*grad)(i, j) = g;
      }
  }
  return r;
}

}  // namespace detail

/// Multi-resolution STFT loss with cached transforms.
class MultiResolutionStftLoss {
 public:
  enum class Kind { kModified, kClassic };

  explicit MultiResolutionStftLoss(StftConfig cfg = {}, Kind kind = Kind::kModified)
      : cfg_(std::move(cfg)), kind_(kind) {
    cfg_.validate();
    for (std::size_t i = 0; i < cfg_.resolutions(); ++i)
      plans_.emplace_back(cfg_.fft_sizes[i], cfg_.hop_sizes[i], cfg_.win_lengths[i],
                          FramingMode::kCentered);
  }

  const StftConfig& config() const { return cfg_; }
  const Stft& plan(std::size_t r) const { return plans_.at(r); }

  /// Average over resolutions of the per-resolution combined terms. Fills
  /// `terms` (one entry per resolution) and d/dxhat when requested.
  double evaluate(std::span<const double> x, std::span<const double> xhat,
                  std::vector<ResolutionTerms>* terms = nullptr,
                  std::vector<double>* grad = nullptr) const {
    require(x.size() == xhat.size(), "stft_loss: length mismatch");
    require(!x.empty(), "stft_loss: empty input");
    const double k = static_cast<double>(plans_.size());
    double total = 0.0;
    if (terms) terms->clear();
    if (grad) grad->assign(x.size(), 0.0);
    for (const auto& plan : plans_) {
      const ComplexGrid X = plan.forward(x);
      const ComplexGrid Y = plan.forward(xhat);
      ComplexGrid g;
      const ResolutionTerms r =
          kind_ == Kind::kModified
              ? detail::modified_resolution(X, Y, cfg_.mag_floor, grad ? &g : nullptr)
              : detail::classic_resolution(X, Y, cfg_.mag_floor, grad ? &g : nullptr);
      total += r.combined();
      if (terms) terms->push_back(r);
      if (grad) {
        const auto gx = plan.adjoint(g, x.size());
        for (std::size_t i = 0; i < gx.size(); ++i) (*grad)[i] += gx[i] / k;
      }
    }
    return total / k;
  }

 private:
  StftConfig cfg_;
  Kind kind_;
  std::vector<Stft> plans_;
};

/// Complex STFT grid [fft/2+1 x frames] of one configured resolution.
inline ComplexGrid stft_grids(std::span<const double> x, const StftConfig& cfg,
                              std::size_t resolution) {
  if (resolution >= cfg.resolutions()) throw DomainError("stft_grids: no such resolution");
  if (x.size() < static_cast<std::size_t>(cfg.win_lengths[resolution]))
    throw ShapeError("stft_grids: waveform shorter than one window");
  return Stft(cfg.fft_sizes[resolution], cfg.hop_sizes[resolution], cfg.win_lengths[resolution])
      .forward(x);
}

struct PhaseMagTerms {
  double phase = 0.0;
  double log_mag = 0.0;
};

inline std::vector<PhaseMagTerms> stft_phase_mag_loss(std::span<const double> x,
                                                      std::span<const double> xhat,
                                                      const StftConfig& cfg = {}) {
  std::vector<ResolutionTerms> terms;
  MultiResolutionStftLoss(cfg).evaluate(x, xhat, &terms);
  std::vector<PhaseMagTerms> out;
  for (const auto& t : terms) out.push_back({t.phase, t.log_mag});
  return out;
}

inline double stft_loss(std::span<const double> x, std::span<const double> xhat,
                        const StftConfig& cfg = {}) {
  return MultiResolutionStftLoss(cfg).evaluate(x, xhat);
}

/// Spectral convergence + log magnitude, averaged over resolutions.
inline double original_stft_loss(std::span<const double> x, std::span<const double> xhat,
                                 const StftConfig& cfg = StftConfig::classic()) {
  return MultiResolutionStftLoss(cfg, MultiResolutionStftLoss::Kind::kClassic).evaluate(x, xhat);
}

/// Mean absolute difference of log-mel grids.
inline double mel_l1(std::span<const double> x, std::span<const double> xhat,
                     const MelExtractor& mel, std::vector<double>* grad = nullptr) {
  require(x.size() == xhat.size(), "mel_l1: length mismatch");
  const RealGrid lx = mel.extract(x).log;
  const RealGrid ly = mel.extract(xhat).log;
  const double m = static_cast<double>(lx.size());
  const double value = (lx - ly).cwiseAbs().sum() / m;
  if (grad) {
    RealGrid g(lx.rows(), lx.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = 0; j < g.cols(); ++j)
        g(i, j) = -detail::sign(lx(i, j) - ly(i, j)) / m;
    *grad = mel.log_mel_backward(xhat, g);
  }
  return value;
}

inline double mel_l1(std::span<const double> x, std::span<const double> xhat,
                     const MelConfig& cfg = {}) {
  return mel_l1(x, xhat, MelExtractor(cfg));
}

/// Everything total_loss needs; transforms are built once.
struct LossSettings {
  LossWeights weights;
  StftConfig stft;
  MelConfig mel;
  /// Ablation: classic spectral-convergence loss in place of the modified one.
  bool classic_stft = false;
};

class TrainingLoss {
 public:
  explicit TrainingLoss(LossSettings settings = {})
      : settings_(std::move(settings)),
        stft_(settings_.classic_stft ? StftConfig::classic() : settings_.stft,
              settings_.classic_stft ? MultiResolutionStftLoss::Kind::kClassic
                                     : MultiResolutionStftLoss::Kind::kModified),
        mel_(settings_.mel) {
    settings_.weights.validate();
  }

  const LossSettings& settings() const { return settings_; }
  const MelExtractor& mel() const { return mel_; }

  /// fm + lambda0 * stft + lambda1 * mel for one example. Spectral terms are
  /// skipped (left at zero) when their weight is zero.
  LossReport evaluate(std::span<const double> x1, std::span<const double> v1, double t,
                      std::vector<double>* grad = nullptr) const {
    const auto& w = settings_.weights;
    LossReport rep;
    rep.time_weight = time_weight(t, w.time_weight_cap);
    std::vector<double> g_fm, g_stft, g_mel;
    rep.fm_term = fm_loss(x1, v1, t, grad ? &g_fm : nullptr, w.time_weight_cap);
    if (w.lambda0 > 0.0)
      rep.stft_term = stft_.evaluate(x1, v1, &rep.resolutions, grad ? &g_stft : nullptr);
    if (w.lambda1 > 0.0) rep.mel_term = mel_l1(x1, v1, mel_, grad ? &g_mel : nullptr);
    rep.total = rep.weighted_sum(w);
    if (grad) {
      *grad = g_fm;
      for (std::size_t i = 0; i < grad->size(); ++i) {
        if (!g_stft.empty()) (*grad)[i] += w.lambda0 * g_stft[i];
        if (!g_mel.empty()) (*grad)[i] += w.lambda1 * g_mel[i];
      }
    }
    return rep;
  }

 private:
  LossSettings settings_;
  MultiResolutionStftLoss stft_;
  MelExtractor mel_;
};

inline LossReport total_loss(std::span<const double> x1, std::span<const double> v1, double t,
                             const LossSettings& settings = {}) {
  return TrainingLoss(settings).evaluate(x1, v1, t);
}

}  // namespace flowvoc

#endif  // FLOWVOC_LOSSES_HPP_
