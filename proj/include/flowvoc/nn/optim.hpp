// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef FLOWVOC_NN_OPTIM_HPP_
#define FLOWVOC_NN_OPTIM_HPP_

#include <cmath>
#include <vector>

#include "flowvoc/nn/layers.hpp"

namespace flowvoc::nn {

/// Cosine annealing from lr_init at step 0 to lr_final at `total` steps.
inline double cosine_lr(long step, long total, double lr_init, double lr_final) {
  if (total <= 0) throw InvariantError("cosine_lr: total steps must be positive");
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(kPi * frac));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

/// AdamW with decoupled weight decay (PyTorch semantics).
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  long steps_taken() const { return t_; }

  /// Applies one update to every parameter the module visits, using its grad.
  template <class Module>
  void step(Module& module, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t i = 0;
    module.visit([&](Param<T>& p) {
      if (i == m_.size()) {
        m_.push_back(Grid<T>::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Grid<T>::Zero(p.value.rows(), p.value.cols()));
      }
      Grid<T>& m = m_[i];
      Grid<T>& v = v_[i];
      if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
        throw ShapeError("AdamW: parameter layout changed between steps (" + p.name + ")");
      const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
      m = b1 * m + (T(1) - b1) * p.grad;
      v = b2 * v + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value *= static_cast<T>(1.0 - lr * cfg_.weight_decay);
      const T step_size = static_cast<T>(lr / bc1);
      const T denom_scale = static_cast<T>(1.0 / std::sqrt(bc2));
      p.value.array() -= step_size * m.array() /
                         (v.array().sqrt() * denom_scale + static_cast<T>(cfg_.eps));
      ++i;
    });
  }

  std::vector<Grid<T>>& first_moments() { return m_; }
  std::vector<Grid<T>>& second_moments() { return v_; }
  const std::vector<Grid<T>>& first_moments() const { return m_; }
  const std::vector<Grid<T>>& second_moments() const { return v_; }

  void restore(long t, std::vector<Grid<T>> m, std::vector<Grid<T>> v) {
    if (m.size() != v.size()) throw ShapeError("AdamW::restore: moment lists differ in size");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  std::vector<Grid<T>> m_, v_;
};

}  // namespace flowvoc::nn

#endif  // FLOWVOC_NN_OPTIM_HPP_
