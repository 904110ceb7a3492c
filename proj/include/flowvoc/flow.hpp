// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Flow-matching training with a clean-audio-predicting network and Euler
// sampling of the reconstructed velocity field.

#ifndef FLOWVOC_FLOW_HPP_
#define FLOWVOC_FLOW_HPP_

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowvoc/data.hpp"
#include "flowvoc/losses.hpp"
#include "flowvoc/network.hpp"
#include "flowvoc/nn/optim.hpp"
#include "flowvoc/prior.hpp"

namespace flowvoc {

struct TrainConfig {
  double lr_init = 7.5e-5;
  double lr_final = 5e-6;
  int batch = 16;
  long steps = 1000000;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 5e-4;
  std::size_t segment_len = 32768;
  std::uint64_t seed = 0;
  /// Steps whose flow-matching term exceeds this are skipped.
  double divergence_threshold = 1e4;

  void validate() const {
    if (!(lr_final < lr_init) || !(lr_final >= 0.0))
      throw InvariantError("TrainConfig: need 0 <= lr_final < lr_init");
    if (steps < 1 || batch < 1 || segment_len == 0)
      throw InvariantError("TrainConfig: steps, batch and segment_len must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0) || weight_decay < 0.0)
      throw InvariantError("TrainConfig: bad optimizer settings");
  }

  nn::AdamWConfig adamw() const { return {beta1, beta2, 1e-8, weight_decay}; }
  double lr_at(long step) const { return nn::cosine_lr(step, steps, lr_init, lr_final); }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, lr_init, lr_final, batch, steps, beta1,
                                                beta2, weight_decay, segment_len, seed,
                                                divergence_threshold)

/// t * x1 + (1 - t) * x0.
inline std::vector<double> interpolate(std::span<const double> x0, std::span<const double> x1,
                                       double t) {
  if (x0.size() != x1.size()) throw ShapeError("interpolate: length mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("interpolate: t must lie in [0, 1]");
  std::vector<double> xt(x0.size());
  for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = t * x1[i] + (1.0 - t) * x0[i];
  return xt;
}

/// (net_out - x) / (1 - t).
inline std::vector<double> reconstruct_velocity(std::span<const double> net_out,
                                                std::span<const double> x, double t) {
  if (net_out.size() != x.size()) throw ShapeError("reconstruct_velocity: length mismatch");
  if (!(t < 1.0)) throw DomainError("reconstruct_velocity: t must be < 1");
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (net_out[i] - x[i]) / (1.0 - t);
  return v;
}

/// Euler integration of the reconstructed field on t_k = k / n. `denoise(x, t)`
/// returns the clean-audio estimate. The last step returns that estimate
/// directly, which is what the update reduces to there.
template <class Denoise>
std::vector<double> euler_integrate(Denoise&& denoise, std::vector<double> x, int n_steps) {
  if (n_steps < 1) throw DomainError("euler_integrate: n_steps must be >= 1");
  const double h = 1.0 / n_steps;
  for (int k = 0; k < n_steps; ++k) {
    const double t = static_cast<double>(k) / n_steps;
    std::vector<double> y = denoise(static_cast<const std::vector<double>&>(x), t);
    if (y.size() != x.size()) throw ShapeError("euler_integrate: denoiser changed the length");
    if (k == n_steps - 1) return y;
    const auto v = reconstruct_velocity(y, x, t);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += h * v[i];
  }
  return x;
}

/// Evaluates the network on double-precision inputs.
template <class T>
std::vector<double> denoise(const VocoderNet<T>& net, std::span<const double> x, double t,
                            const MelSpectrogram& mel) {
  Grid<T> xin(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) xin(0, static_cast<Eigen::Index>(i)) = static_cast<T>(x[i]);
  const Grid<T> y = net.forward(xin, t, mel.log.cast<T>());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(y(0, static_cast<Eigen::Index>(i)));
  return out;
}

/// Samples a waveform of mel.frames() * hop samples from the prior and
/// integrates n_steps Euler steps.
template <class T>
std::vector<double> sample_euler(const VocoderNet<T>& net, const MelSpectrogram& mel,
                                 int n_steps, std::uint64_t seed) {
  if (n_steps < 1) throw DomainError("sample_euler: n_steps must be >= 1");
  const int hop = net.config().hop();
  const auto len = static_cast<std::size_t>(mel.frames()) * static_cast<std::size_t>(hop);
  auto x0 = sample_prior(build_prior(mel, len, hop), seed);
  return euler_integrate(
      [&](const std::vector<double>& x, double t) { return denoise(net, x, t, mel); },
      std::move(x0), n_steps);
}

struct TrainExample {
  std::vector<double> x1;
  MelSpectrogram mel;
};

struct StepResult {
  long step = 0;
  double lr = 0.0;
  LossReport report;  // batch means
  std::vector<double> t;
  bool skipped = false;
  std::string reason;
};

struct StepOptions {
  /// Use this t for every batch element instead of sampling.
  std::optional<double> forced_t;
  /// Compute gradients but leave the parameters untouched.
  bool skip_update = false;
};

namespace detail {

inline void accumulate(LossReport& acc, const LossReport& r, double w) {
  acc.fm_term += w * r.fm_term;
  acc.stft_term += w * r.stft_term;
  acc.mel_term += w * r.mel_term;
  acc.total += w * r.total;
  acc.time_weight += w * r.time_weight;
}

template <class T>
Grid<T> to_row(std::span<const double> x) {
  Grid<T> r(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) r(0, static_cast<Eigen::Index>(i)) = static_cast<T>(x[i]);
  return r;
}

template <class T>
std::vector<double> from_row(const Grid<T>& r) {
  std::vector<double> x(static_cast<std::size_t>(r.cols()));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(r(0, static_cast<Eigen::Index>(i)));
  return x;
}

}  // namespace detail

/// One flow-matching step: per example t ~ U[0, 1), x0 from the mel prior,
/// x_t = interpolate(x0, x1, t), loss on net(x_t, t, mel) against x1, then one
/// AdamW update at `lr`. Steps with a non-finite loss or a flow-matching term
/// above `divergence_threshold` are skipped without touching the parameters.
template <class T>
StepResult train_step(VocoderNet<T>& net, nn::AdamW<T>& opt, const std::vector<TrainExample>& batch,
                      const TrainingLoss& loss, double lr, std::uint64_t step_seed,
                      double divergence_threshold = 1e4, const StepOptions& options = {}) {
  if (batch.empty()) throw ShapeError("train_step: empty batch");
  StepResult res;
  res.lr = lr;
  res.report.time_weight = 0.0;
  const int hop = net.config().hop();
  const double w = 1.0 / static_cast<double>(batch.size());
  net.zero_grad();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ex = batch[b];
    NormalSource src(mix_seed(step_seed, 2 * b));
    const double t = options.forced_t ? *options.forced_t : src.uniform();
    res.t.push_back(t);
    const auto x0 = sample_prior(build_prior(ex.mel, ex.x1.size(), hop), mix_seed(step_seed, 2 * b + 1));
    const auto xt = interpolate(x0, ex.x1, t);
    const Grid<T> out = net.forward_train(detail::to_row<T>(xt), t, ex.mel.log.cast<T>());
    const auto pred = detail::from_row(out);
    std::vector<double> grad;
    const LossReport r = loss.evaluate(ex.x1, pred, t, &grad);
    detail::accumulate(res.report, r, w);
    if (!std::isfinite(r.total) || !(r.fm_term <= divergence_threshold)) {
      res.skipped = true;
      res.reason = "divergence: fm_term=" + std::to_string(r.fm_term) +
                   " total=" + std::to_string(r.total);
      net.backward(Grid<T>::Zero(1, out.cols()));  // release cached activations
      continue;
    }
    Grid<T> g(1, out.cols());
    for (Eigen::Index i = 0; i < g.cols(); ++i) g(0, i) = static_cast<T>(w * grad[static_cast<std::size_t>(i)]);
    net.backward(g);
  }
  if (!res.skipped && !options.skip_update) opt.step(net, lr);
  return res;
}

/// Draws a training batch from a corpus, deterministically for (seed, step).
inline std::vector<TrainExample> draw_batch(const std::vector<AudioClip>& corpus, int batch,
                                            std::size_t segment_len, std::uint64_t seed, long step,
                                            const MelExtractor& mel) {
  if (corpus.empty()) throw IngestionError("draw_batch: empty corpus");
  Rng rng(mix_seed(seed, 0x5eed0000ULL + static_cast<std::uint64_t>(step)));
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  std::vector<TrainExample> out;
  for (int b = 0; b < batch; ++b) {
    const std::size_t idx = pick(rng);
    Segment seg = random_segment(corpus[idx], segment_len, rng(), mel);
    out.push_back({std::vector<double>(seg.audio.samples.begin(), seg.audio.samples.end()),
                   std::move(seg.mel)});
  }
  return out;
}

/// Owns the optimizer and step counter for a training run.
template <class T>
class FlowTrainer {
 public:
  FlowTrainer(VocoderNet<T>& net, TrainConfig cfg, LossSettings loss = {})
      : net_(net), cfg_(std::move(cfg)), loss_(std::move(loss)), opt_(cfg_.adamw()) {
    cfg_.validate();
    if (loss_.mel().config().hop_length != net_.config().hop())
      throw InvariantError("FlowTrainer: mel hop differs from the network's upsampling product");
  }

  StepResult step(const std::vector<AudioClip>& corpus) {
    const auto batch = draw_batch(corpus, cfg_.batch, cfg_.segment_len, cfg_.seed, step_, loss_.mel());
    return step(batch);
  }

  StepResult step(const std::vector<TrainExample>& batch, const StepOptions& options = {}) {
    StepResult r = train_step(net_, opt_, batch, loss_, cfg_.lr_at(step_),
                              mix_seed(cfg_.seed, static_cast<std::uint64_t>(step_)),
                              cfg_.divergence_threshold, options);
    r.step = step_++;
    return r;
  }

  long current_step() const { return step_; }
  void set_step(long s) { step_ = s; }
  nn::AdamW<T>& optimizer() { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  const TrainingLoss& loss() const { return loss_; }

 private:
  VocoderNet<T>& net_;
  TrainConfig cfg_;
  TrainingLoss loss_;
  nn::AdamW<T> opt_;
  long step_ = 0;
};

/// Independent x0 ~ N(0, s0^2) and x1 ~ N(mu, s1^2), for which the flow is
/// available in closed form.
struct GaussianFlow {
  double mu = 0.0;
  double s0 = 1.0;
  double s1 = 1.0;

  /// E[x1 | x_t = x].
  double posterior_mean(double x, double t) const {
    const double d = t * t * s1 * s1 + (1.0 - t) * (1.0 - t) * s0 * s0;
    return mu + t * s1 * s1 * (x - t * mu) / d;
  }

  double velocity(double x, double t) const {
    const double d = t * t * s1 * s1 + (1.0 - t) * (1.0 - t) * s0 * s0;
    return mu + (t * s1 * s1 - (1.0 - t) * s0 * s0) * (x - t * mu) / d;
  }
};

struct MomentErrors {
  double mean = 0.0;
  double variance = 0.0;
  double mean_err = 0.0;  // |mean - mu| / max(|mu|, s1)
  double var_err = 0.0;   // |variance - s1^2| / s1^2
};

inline MomentErrors endpoint_errors(const std::vector<double>& xs, const GaussianFlow& g) {
  double m = 0.0;
  for (double v : xs) m += v;
  m /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double v : xs) var += (v - m) * (v - m);
  var /= static_cast<double>(xs.size() - 1);
  return {m, var, std::abs(m - g.mu) / std::max(std::abs(g.mu), g.s1),
          std::abs(var - g.s1 * g.s1) / (g.s1 * g.s1)};
}

/// Integrates the exact posterior-mean denoiser from n_trials prior draws
/// with the same Euler sampler the network uses, and compares endpoint
/// moments with N(mu, s1^2).
inline MomentErrors analytic_gaussian_flow_check(double mu, double s0, double s1, int n_steps,
                                                 int n_trials, std::uint64_t seed) {
  if (!(s0 > 0.0 && s1 > 0.0)) throw DomainError("analytic_gaussian_flow_check: s0, s1 must be > 0");
  if (n_trials < 2) throw DomainError("analytic_gaussian_flow_check: need at least 2 trials");
  const GaussianFlow g{mu, s0, s1};
  NormalSource normal(seed);
  std::vector<double> x0(static_cast<std::size_t>(n_trials));
  for (double& v : x0) v = s0 * normal();
  const auto x1 = euler_integrate(
      [&](const std::vector<double>& x, double t) {
        std::vector<double> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = g.posterior_mean(x[i], t);
        return y;
      },
      std::move(x0), n_steps);
  return endpoint_errors(x1, g);
}

}  // namespace flowvoc

#endif  // FLOWVOC_FLOW_HPP_
