// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Minimal 1-D convolutional layers with explicit backward passes. Every
// layer processes one example at a time: activations are [channels x time]
// row-major matrices. A layer run through forward_train keeps what its backward pass
// needs (forward_train); forward() is const and keeps nothing. backward()
// accumulates parameter gradients and returns the input gradient.

#ifndef FLOWVOC_NN_LAYERS_HPP_
#define FLOWVOC_NN_LAYERS_HPP_

#include <algorithm>
#include <string>
#include <utility>

#include "flowvoc/common.hpp"

namespace flowvoc::nn {

template <class T>
using Act = Grid<T>;

template <class T>
struct Param {
  std::string name;
  Grid<T> value;
  Grid<T> grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Grid<T>::Zero(rows, cols)), grad(Grid<T>::Zero(rows, cols)) {}

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

/// U(-bound, bound) initialization, the PyTorch default for conv/linear layers.
template <class T>
void init_uniform(Param<T>& p, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(u(rng));
}

template <class T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(const std::string& name, int in_ch, int out_ch, int kernel, int stride = 1,
         int dilation = 1, int padding = -1)
      : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), dil_(dilation),
        pad_(padding >= 0 ? padding : dilation * (kernel - 1) / 2),
        weight_(name + ".weight", out_ch, static_cast<Eigen::Index>(in_ch) * kernel),
        bias_(name + ".bias", out_ch, 1) {}

  void init(Rng& rng, double gain = 1.0) {
    const double bound = gain / std::sqrt(static_cast<double>(in_) * k_);
    init_uniform(weight_, bound, rng);
    init_uniform(bias_, bound, rng);
  }

  Eigen::Index out_length(Eigen::Index len) const {
    return (len + 2 * pad_ - static_cast<Eigen::Index>(dil_) * (k_ - 1) - 1) / stride_ + 1;
  }

  Act<T> forward(const Act<T>& x) const {
    if (x.rows() != in_) throw ShapeError(weight_.name + ": channel mismatch");
    const Eigen::Index lo = out_length(x.cols());
    if (lo <= 0) throw ShapeError(weight_.name + ": input too short");
    if (stride_ != 1) {
      Act<T> y = weight_.value * im2col(x, lo);
      y.colwise() += bias_.value.col(0);
      return y;
    }
    // Unit stride: one GEMM per tap on shifted views, no column buffer.
    Act<T> y(out_, lo);
    y.colwise() = bias_.value.col(0);
    for (int j = 0; j < k_; ++j) {
      const auto [l0, n, off] = tap_range(j, x.cols(), lo);
      if (n <= 0) continue;
      const Grid<T> wj = weight_.value(Eigen::all, Eigen::seqN(j, in_, k_));
      y.middleCols(l0, n).noalias() += wj * x.middleCols(l0 + off, n);
    }
    return y;
  }

  Act<T> forward_train(const Act<T>& x) {
    Act<T> y = forward(x);
    input_ = x;
    return y;
  }

  /// Returns dL/dx unless `need_input_grad` is false (then an empty matrix).
  Act<T> backward(const Act<T>& gy, bool need_input_grad = true) {
    if (input_.size() == 0) throw Error(weight_.name + ": backward without cached forward");
    bias_.grad.col(0) += gy.rowwise().sum();
    Act<T> gx;
    if (stride_ == 1) {
      if (need_input_grad) gx = Act<T>::Zero(in_, input_.cols());
      for (int j = 0; j < k_; ++j) {
        const auto [l0, n, off] = tap_range(j, input_.cols(), gy.cols());
        if (n <= 0) continue;
        weight_.grad(Eigen::all, Eigen::seqN(j, in_, k_)) +=
            gy.middleCols(l0, n) * input_.middleCols(l0 + off, n).transpose();
        if (need_input_grad) {
          const Grid<T> wj = weight_.value(Eigen::all, Eigen::seqN(j, in_, k_));
          gx.middleCols(l0 + off, n).noalias() += wj.transpose() * gy.middleCols(l0, n);
        }
      }
      input_.resize(0, 0);
      return gx;
    }
    const Grid<T> cols = im2col(input_, gy.cols());
    weight_.grad.noalias() += gy * cols.transpose();
    if (need_input_grad) {
      const Grid<T> gcols = weight_.value.transpose() * gy;
      gx = col2im(gcols, input_.cols());
    }
    input_.resize(0, 0);
    return gx;
  }

  template <class F>
  void visit(F&& f) {
    f(weight_);
    f(bias_);
  }

  template <class F>
  void visit(F&& f) const {
    f(weight_);
    f(bias_);
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  struct TapRange {
    Eigen::Index first, count, offset;
  };

  /// Output columns [first, first + count) read input columns shifted by offset.
  TapRange tap_range(int j, Eigen::Index li, Eigen::Index lo) const {
    const Eigen::Index off = static_cast<Eigen::Index>(j) * dil_ - pad_;
    const Eigen::Index l0 = std::max<Eigen::Index>(0, -off);
    const Eigen::Index l1 = std::min<Eigen::Index>(lo, li - off);
    return {l0, l1 - l0, off};
  }

  Grid<T> im2col(const Act<T>& x, Eigen::Index lo) const {
    const Eigen::Index li = x.cols();
    Grid<T> cols = Grid<T>::Zero(static_cast<Eigen::Index>(in_) * k_, lo);
    for (int c = 0; c < in_; ++c)
      for (int j = 0; j < k_; ++j) {
        const Eigen::Index row = static_cast<Eigen::Index>(c) * k_ + j;
        const Eigen::Index off = static_cast<Eigen::Index>(j) * dil_ - pad_;
        T* dst = cols.row(row).data();
        const T* src = x.row(c).data();
        if (stride_ == 1) {
          const Eigen::Index l0 = std::max<Eigen::Index>(0, -off);
          const Eigen::Index l1 = std::min<Eigen::Index>(lo, li - off);
          if (l1 > l0) std::copy(src + l0 + off, src + l1 + off, dst + l0);
        } else {
          for (Eigen::Index l = 0; l < lo; ++l) {
            const Eigen::Index p = l * stride_ + off;
            if (p >= 0 && p < li) dst[l] = src[p];
          }
        }
      }
    return cols;
  }

  Act<T> col2im(const Grid<T>& cols, Eigen::Index li) const {
    Act<T> gx = Act<T>::Zero(in_, li);
    const Eigen::Index lo = cols.cols();
    for (int c = 0; c < in_; ++c)
      for (int j = 0; j < k_; ++j) {
        const Eigen::Index row = static_cast<Eigen::Index>(c) * k_ + j;
        const Eigen::Index off = static_cast<Eigen::Index>(j) * dil_ - pad_;
        const T* src = cols.row(row).data();
        T* dst = gx.row(c).data();
        for (Eigen::Index l = 0; l < lo; ++l) {
          const Eigen::Index p = l * stride_ + off;
          if (p >= 0 && p < li) dst[p] += src[l];
        }
      }
    return gx;
  }

  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, dil_ = 1, pad_ = 0;
  Param<T> weight_, bias_;
  Act<T> input_;
};

/// Transposed convolution; output length (L - 1) * stride - 2 * padding + kernel.
template <class T>
class ConvTranspose1d {
 public:
  ConvTranspose1d() = default;
  ConvTranspose1d(const std::string& name, int in_ch, int out_ch, int kernel, int stride,
                  int padding)
      : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(padding),
        weight_(name + ".weight", in_ch, static_cast<Eigen::Index>(out_ch) * kernel),
        bias_(name + ".bias", out_ch, 1) {}

  void init(Rng& rng) {
    // PyTorch computes fan_in from weight.size(1) * kernel = out_ch * kernel.
    const double bound = 1.0 / std::sqrt(static_cast<double>(out_) * k_);
    init_uniform(weight_, bound, rng);
    init_uniform(bias_, bound, rng);
  }

  Eigen::Index out_length(Eigen::Index len) const {
    return (len - 1) * stride_ - 2 * pad_ + k_;
  }

  Act<T> forward_train(const Act<T>& x) {
    Act<T> y = forward(x);
    input_ = x;
    return y;
  }

  Act<T> forward(const Act<T>& x) const {
    if (x.rows() != in_) throw ShapeError(weight_.name + ": channel mismatch");
    const Eigen::Index li = x.cols();
    const Eigen::Index lo = out_length(li);
    const Grid<T> cols = weight_.value.transpose() * x;  // [out*k x li]
    Act<T> y = Act<T>::Zero(out_, lo);
    for (int c = 0; c < out_; ++c)
      for (int j = 0; j < k_; ++j) {
        const T* src = cols.row(static_cast<Eigen::Index>(c) * k_ + j).data();
        T* dst = y.row(c).data();
        for (Eigen::Index l = 0; l < li; ++l) {
          const Eigen::Index p = l * stride_ + j - pad_;
          if (p >= 0 && p < lo) dst[p] += src[l];
        }
      }
    y.colwise() += bias_.value.col(0);
    return y;
  }

  Act<T> backward(const Act<T>& gy) {
    if (input_.size() == 0) throw Error(weight_.name + ": backward without cached forward");
    const Eigen::Index li = input_.cols();
    const Eigen::Index lo = gy.cols();
    Grid<T> gcols = Grid<T>::Zero(static_cast<Eigen::Index>(out_) * k_, li);
    for (int c = 0; c < out_; ++c)
      for (int j = 0; j < k_; ++j) {
        T* dst = gcols.row(static_cast<Eigen::Index>(c) * k_ + j).data();
        const T* src = gy.row(c).data();
        for (Eigen::Index l = 0; l < li; ++l) {
          const Eigen::Index p = l * stride_ + j - pad_;
          if (p >= 0 && p < lo) dst[l] = src[p];
        }
      }
    bias_.grad.col(0) += gy.rowwise().sum();
    weight_.grad.noalias() += input_ * gcols.transpose();
    Act<T> gx = weight_.value * gcols;
    input_.resize(0, 0);
    return gx;
  }

  template <class F>
  void visit(F&& f) {
    f(weight_);
    f(bias_);
  }

  template <class F>
  void visit(F&& f) const {
    f(weight_);
    f(bias_);
  }

 private:
  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Param<T> weight_, bias_;
  Act<T> input_;
};

/// snake(x) = x + sin^2(e^alpha x) / (e^beta + eps), per-channel log-scale alpha, beta.
template <class T>
class SnakeBeta {
 public:
  SnakeBeta() = default;
  SnakeBeta(const std::string& name, int channels, double eps = 1e-8)
      : alpha_(name + ".alpha", channels, 1), beta_(name + ".beta", channels, 1), eps_(eps) {}

  Act<T> forward_train(const Act<T>& x) {
    Act<T> y = forward(x);
    input_ = x;
    return y;
  }

  Act<T> forward(const Act<T>& x) const {
    if (x.rows() != alpha_.value.rows()) throw ShapeError(alpha_.name + ": channel mismatch");
    Act<T> y(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
      const T a = std::exp(alpha_.value(c, 0));
      const T inv_b = T(1) / (std::exp(beta_.value(c, 0)) + static_cast<T>(eps_));
      const auto in = x.row(c).array();
      y.row(c).array() = in + (a * in).sin().square() * inv_b;
    }
    return y;
  }

  /// Input cached by the last forward_train().
  const Act<T>& input() const { return input_; }

  Act<T> backward(const Act<T>& gy) {
    if (input_.size() == 0) throw Error(alpha_.name + ": backward without cached forward");
    Act<T> gx(gy.rows(), gy.cols());
    Eigen::Array<T, 1, Eigen::Dynamic> ax, s, sin2;
    for (Eigen::Index c = 0; c < gy.rows(); ++c) {
      const T a = std::exp(alpha_.value(c, 0));
      const T eb = std::exp(beta_.value(c, 0));
      const T inv_b = T(1) / (eb + static_cast<T>(eps_));
      const auto g = gy.row(c).array();
      ax = a * input_.row(c).array();
      s = ax.sin();
      sin2 = T(2) * s * ax.cos();
      gx.row(c).array() = g * (T(1) + a * inv_b * sin2);
      alpha_.grad(c, 0) += inv_b * (g * ax * sin2).sum();
      beta_.grad(c, 0) -= eb * inv_b * inv_b * (g * s.square()).sum();
    }
    input_.resize(0, 0);
    return gx;
  }

  template <class F>
  void visit(F&& f) {
    f(alpha_);
    f(beta_);
  }

  template <class F>
  void visit(F&& f) const {
    f(alpha_);
    f(beta_);
  }

 private:
  Param<T> alpha_, beta_;
  double eps_ = 1e-8;
  Act<T> input_;
};

/// y = W x + b on column vectors.
template <class T>
class Linear {
 public:
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  Linear() = default;
  Linear(const std::string& name, int in, int out)
      : weight_(name + ".weight", out, in), bias_(name + ".bias", out, 1) {}

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(weight_.value.cols()));
    init_uniform(weight_, bound, rng);
    init_uniform(bias_, bound, rng);
  }

  Vector forward(const Vector& x) const { return weight_.value * x + bias_.value.col(0); }

  Vector forward_train(const Vector& x) {
    input_ = x;
    return forward(x);
  }

  Vector backward(const Vector& gy) {
    weight_.grad.noalias() += gy * input_.transpose();
    bias_.grad.col(0) += gy;
    return weight_.value.transpose() * gy;
  }

  template <class F>
  void visit(F&& f) {
    f(weight_);
    f(bias_);
  }

  template <class F>
  void visit(F&& f) const {
    f(weight_);
    f(bias_);
  }

 private:
  Param<T> weight_, bias_;
  Vector input_;
};

template <class T>
class Silu {
 public:
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  Vector forward(const Vector& x) const {
    return x.unaryExpr([](T v) { return v / (T(1) + std::exp(-v)); });
  }

  Vector forward_train(const Vector& x) {
    input_ = x;
    return forward(x);
  }

  Vector backward(const Vector& gy) const {
    Vector gx(gy.size());
    for (Eigen::Index i = 0; i < gy.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-input_(i)));
      gx(i) = gy(i) * s * (T(1) + input_(i) * (T(1) - s));
    }
    return gx;
  }

 private:
  Vector input_;
};

}  // namespace flowvoc::nn

#endif  // FLOWVOC_NN_LAYERS_HPP_
