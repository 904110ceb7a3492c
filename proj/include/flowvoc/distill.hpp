// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Consistency distillation of a trained flow model into a one-step student.

#ifndef FLOWVOC_DISTILL_HPP_
#define FLOWVOC_DISTILL_HPP_

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowvoc/flow.hpp"

namespace flowvoc {

struct DistillConfig {
  double ema_decay = 0.999;
  double delta_t = 0.01;
  double t_sigma = 0.33;
  double t_max = 0.99;
  long steps = 25000;
  double lr = 2e-5;
  double beta1 = 0.8;
  double beta2 = 0.95;
  double weight_decay = 1e-2;
  int batch = 16;
  std::size_t segment_len = 32768;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(ema_decay >= 0.0 && ema_decay < 1.0))
      throw InvariantError("DistillConfig: ema_decay must lie in [0, 1)");
    if (!(t_max > 0.0 && t_max < 1.0)) throw InvariantError("DistillConfig: t_max must lie in (0, 1)");
    if (!(delta_t > 0.0 && delta_t <= 1.0 - t_max + delta_t && t_max + delta_t <= 1.0))
      throw InvariantError("DistillConfig: delta_t must be positive with t_max + delta_t <= 1");
    if (!(t_sigma > 0.0)) throw InvariantError("DistillConfig: t_sigma must be positive");
    if (steps < 1 || batch < 1 || segment_len == 0 || !(lr > 0.0))
      throw InvariantError("DistillConfig: steps, batch, segment_len and lr must be positive");
  }

  nn::AdamWConfig adamw() const { return {beta1, beta2, 1e-8, weight_decay}; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DistillConfig, ema_decay, delta_t, t_sigma, t_max,
                                                steps, lr, beta1, beta2, weight_decay, batch,
                                                segment_len, seed)

/// t ~ N(0, sigma^2) restricted to [0, upper], by rejection on |z|.
inline double sample_t_truncated(NormalSource& normal, double sigma = 0.33, double upper = 0.99) {
  for (;;) {
    const double z = std::abs(sigma * normal());
    if (z <= upper) return z;
  }
}

/// P(t <= x) for the truncated distribution above.
inline double truncated_t_cdf(double x, double sigma = 0.33, double upper = 0.99) {
  if (x <= 0.0) return 0.0;
  if (x >= upper) return 1.0;
  return std::erf(x / (sigma * std::sqrt(2.0))) / std::erf(upper / (sigma * std::sqrt(2.0)));
}

/// shadow <- mu * shadow + (1 - mu) * live, parameter by parameter.
template <class T>
void ema_update(VocoderNet<T>& shadow, const VocoderNet<T>& live, double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw DomainError("ema_update: mu must lie in [0, 1]");
  std::vector<const nn::Param<T>*> src;
  live.visit([&](const nn::Param<T>& p) { src.push_back(&p); });
  std::size_t i = 0;
  shadow.visit([&](nn::Param<T>& p) {
    if (i >= src.size() || src[i]->value.rows() != p.value.rows() ||
        src[i]->value.cols() != p.value.cols())
      throw ShapeError("ema_update: parameter layouts differ at " + p.name);
    p.value = static_cast<T>(mu) * p.value + static_cast<T>(1.0 - mu) * src[i]->value;
    ++i;
  });
  if (i != src.size()) throw ShapeError("ema_update: parameter counts differ");
}

struct DistillOptions {
  std::optional<double> forced_t;
};

struct DistillStepResult {
  StepResult step;
  /// Per example: true when the target was the clean audio.
  std::vector<bool> clean_target;
};

/// One distillation step. Teacher and EMA are only read; the student gets one
/// optimizer update, after which the EMA follows it.
template <class T>
DistillStepResult distill_step(VocoderNet<T>& student, VocoderNet<T>& ema,
                               const VocoderNet<T>& teacher, nn::AdamW<T>& opt,
                               const std::vector<TrainExample>& batch, const TrainingLoss& loss,
                               const DistillConfig& cfg, std::uint64_t step_seed,
                               const DistillOptions& options = {}) {
  if (batch.empty()) throw ShapeError("distill_step: empty batch");
  DistillStepResult res;
  res.step.lr = cfg.lr;
  res.step.report.time_weight = 0.0;
  const int hop = student.config().hop();
  const double w = 1.0 / static_cast<double>(batch.size());
  student.zero_grad();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ex = batch[b];
    NormalSource src(mix_seed(step_seed, 2 * b));
    const double t = options.forced_t ? *options.forced_t
                                      : sample_t_truncated(src, cfg.t_sigma, cfg.t_max);
    res.step.t.push_back(t);
    const auto x0 = sample_prior(build_prior(ex.mel, ex.x1.size(), hop), mix_seed(step_seed, 2 * b + 1));
    const auto xt = interpolate(x0, ex.x1, t);
    std::vector<double> target;
    const bool clean = t + cfg.delta_t > cfg.t_max;
    res.clean_target.push_back(clean);
    if (clean) {
      target = ex.x1;
    } else {
      const auto y = denoise(teacher, xt, t, ex.mel);
      const auto v = reconstruct_velocity(y, xt, t);
      std::vector<double> next(xt.size());
      for (std::size_t i = 0; i < next.size(); ++i) next[i] = xt[i] + cfg.delta_t * v[i];
      target = denoise(ema, next, t + cfg.delta_t, ex.mel);
    }
    if (!all_finite(std::span<const double>(target))) {
      res.step.skipped = true;
      res.step.reason = "non-finite target";
      break;
    }
    const Grid<T> out = student.forward_train(detail::to_row<T>(xt), t, ex.mel.log.cast<T>());
    std::vector<double> grad;
    const LossReport r = loss.evaluate(target, detail::from_row(out), t, &grad);
    detail::accumulate(res.step.report, r, w);
    Grid<T> g(1, out.cols());
    for (Eigen::Index i = 0; i < g.cols(); ++i) g(0, i) = static_cast<T>(w * grad[static_cast<std::size_t>(i)]);
    student.backward(g);
  }
  if (!res.step.skipped && !std::isfinite(res.step.report.total)) {
    res.step.skipped = true;
    res.step.reason = "non-finite loss";
  }
  if (!res.step.skipped) {
    opt.step(student, cfg.lr);
    ema_update(ema, student, cfg.ema_decay);
  }
  return res;
}

/// Student, EMA and frozen teacher for a distillation run. The student and
/// EMA start as copies of the teacher.
template <class T>
class Distiller {
 public:
  Distiller(const VocoderNet<T>& teacher, DistillConfig cfg, LossSettings loss = {})
      : teacher_(teacher), student_(teacher), ema_(teacher), cfg_(std::move(cfg)),
        loss_(std::move(loss)), opt_(cfg_.adamw()) {
    cfg_.validate();
  }

  DistillStepResult step(const std::vector<AudioClip>& corpus) {
    const auto batch = draw_batch(corpus, cfg_.batch, cfg_.segment_len, cfg_.seed, step_, loss_.mel());
    return step(batch);
  }

  DistillStepResult step(const std::vector<TrainExample>& batch, const DistillOptions& options = {}) {
    auto r = distill_step(student_, ema_, teacher_, opt_, batch, loss_, cfg_,
                          mix_seed(cfg_.seed ^ 0xd1571110ULL, static_cast<std::uint64_t>(step_)),
                          options);
    r.step.step = step_++;
    return r;
  }

  VocoderNet<T>& student() { return student_; }
  VocoderNet<T>& ema() { return ema_; }
  const VocoderNet<T>& teacher() const { return teacher_; }
  nn::AdamW<T>& optimizer() { return opt_; }
  long current_step() const { return step_; }
  void set_step(long s) { step_ = s; }

 private:
  VocoderNet<T> teacher_, student_, ema_;
  DistillConfig cfg_;
  TrainingLoss loss_;
  nn::AdamW<T> opt_;
  long step_ = 0;
};

/// x0 from the mel prior, then a single student evaluation at t = 0.
template <class T>
std::vector<double> one_step_synthesize(const VocoderNet<T>& student, const MelSpectrogram& mel,
                                        std::uint64_t seed) {
  const int hop = student.config().hop();
  const auto len = static_cast<std::size_t>(mel.frames()) * static_cast<std::size_t>(hop);
  return denoise(student, sample_prior(build_prior(mel, len, hop), seed), 0.0, mel);
}

// ---------------------------------------------------------------------------
// One-dimensional distillation experiment on the closed-form Gaussian flow.

/// Denoiser f(x, t) = a(t) x + b(t), with a and b piecewise linear on a
/// uniform knot grid over [0, 1].
class PiecewiseLinearDenoiser {
 public:
  explicit PiecewiseLinearDenoiser(int knots)
      : a_("a", knots, 1), b_("b", knots, 1) {
    if (knots < 2) throw InvariantError("PiecewiseLinearDenoiser: need at least 2 knots");
  }

  /// Knot values taken from the exact posterior mean, which is linear in x.
  static PiecewiseLinearDenoiser from_flow(const GaussianFlow& g, int knots) {
    PiecewiseLinearDenoiser d(knots);
    for (int k = 0; k < knots; ++k) {
      const double t = d.knot(k);
      const double b = g.posterior_mean(0.0, t);
      d.a_.value(k, 0) = g.posterior_mean(1.0, t) - b;
      d.b_.value(k, 0) = b;
    }
    return d;
  }

  double knot(int k) const { return static_cast<double>(k) / (a_.value.rows() - 1); }

  double operator()(double x, double t) const {
    const auto [k, frac] = locate(t);
    const double a = (1 - frac) * a_.value(k, 0) + frac * a_.value(k + 1, 0);
    const double b = (1 - frac) * b_.value(k, 0) + frac * b_.value(k + 1, 0);
    return a * x + b;
  }

  /// Adds g * d f(x, t) / d(knots) to the gradients.
  void backward(double x, double t, double g) {
    const auto [k, frac] = locate(t);
    a_.grad(k, 0) += g * (1 - frac) * x;
    a_.grad(k + 1, 0) += g * frac * x;
    b_.grad(k, 0) += g * (1 - frac);
    b_.grad(k + 1, 0) += g * frac;
  }

  template <class F>
  void visit(F&& f) {
    f(a_);
    f(b_);
  }

  void zero_grad() {
    a_.zero_grad();
    b_.zero_grad();
  }

  void ema_from(const PiecewiseLinearDenoiser& live, double mu) {
    a_.value = mu * a_.value + (1 - mu) * live.a_.value;
    b_.value = mu * b_.value + (1 - mu) * live.b_.value;
  }

 private:
  std::pair<int, double> locate(double t) const {
    const int segs = static_cast<int>(a_.value.rows()) - 1;
    const double u = std::clamp(t, 0.0, 1.0) * segs;
    const int k = std::min(static_cast<int>(u), segs - 1);
    return {k, u - k};
  }

  nn::Param<double> a_, b_;
};

struct ToyDistillConfig {
  GaussianFlow flow{0.0, 1.0, 1.0};
  /// A faster EMA than the full-scale default; see README.
  DistillConfig distill = [] {
    DistillConfig d;
    d.ema_decay = 0.95;
    return d;
  }();
  int knots = 101;
  long steps = 2000;
  int batch = 256;
  double lr = 1e-2;
  int eval_trials = 100000;
  std::uint64_t seed = 0;
};

struct ToyDistillResult {
  MomentErrors teacher_one_step;
  MomentErrors student_one_step;

  double variance_ratio() const {
    return student_one_step.var_err / teacher_one_step.var_err;
  }
};

/// Distills the exact teacher into a piecewise-linear student with the same
/// target rule as distill_step, then compares one-step endpoint moments.
inline ToyDistillResult distill_toy(const ToyDistillConfig& cfg) {
  cfg.distill.validate();
  const GaussianFlow& g = cfg.flow;
  auto teacher = [&](double x, double t) { return g.posterior_mean(x, t); };
  PiecewiseLinearDenoiser student = PiecewiseLinearDenoiser::from_flow(g, cfg.knots);
  PiecewiseLinearDenoiser ema = student;
  nn::AdamW<double> opt({0.9, 0.999, 1e-8, 0.0});
  const auto& d = cfg.distill;
  for (long step = 0; step < cfg.steps; ++step) {
    NormalSource normal(mix_seed(cfg.seed, static_cast<std::uint64_t>(step)));
    student.zero_grad();
    for (int i = 0; i < cfg.batch; ++i) {
      const double t = sample_t_truncated(normal, d.t_sigma, d.t_max);
      const double x0 = g.s0 * normal();
      const double x1 = g.mu + g.s1 * normal();
      const double xt = t * x1 + (1 - t) * x0;
      double target;
      if (t + d.delta_t > d.t_max) {
        target = x1;
      } else {
        const double next = xt + d.delta_t * (teacher(xt, t) - xt) / (1 - t);
        target = ema(next, t + d.delta_t);
      }
      const double r = student(xt, t) - target;
      student.backward(xt, t, 2.0 * time_weight(t) * r / cfg.batch);
    }
    opt.step(student, cfg.lr);
    ema.ema_from(student, d.ema_decay);
  }

  NormalSource normal(mix_seed(cfg.seed, 0xe7a1ULL));
  std::vector<double> teacher_out(static_cast<std::size_t>(cfg.eval_trials));
  std::vector<double> student_out(teacher_out.size());
  for (std::size_t i = 0; i < teacher_out.size(); ++i) {
    const double x0 = g.s0 * normal();
    teacher_out[i] = euler_integrate(
        [&](const std::vector<double>& x, double t) { return std::vector<double>{teacher(x[0], t)}; },
        std::vector<double>{x0}, 1)[0];
    student_out[i] = student(x0, 0.0);
  }
  return {endpoint_errors(teacher_out, g), endpoint_errors(student_out, g)};
}

}  // namespace flowvoc

#endif  // FLOWVOC_DISTILL_HPP_
