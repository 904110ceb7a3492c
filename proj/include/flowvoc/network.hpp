// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Asymmetric U-Net predicting clean audio from (x_t, t, log-mel). The
// downsampling path reads the noisy waveform through strided convolutions;
// the upsampling path starts from the mel stem and adds the downsampling
// features as skips at each resolution.

#ifndef FLOWVOC_NETWORK_HPP_
#define FLOWVOC_NETWORK_HPP_

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowvoc/common.hpp"
#include "flowvoc/nn/layers.hpp"

namespace flowvoc {

struct NetworkConfig {
  int n_mels = 100;
  /// Upsampling factors from mel rate to sample rate; downsampling mirrors them.
  std::vector<int> upsample_factors{8, 8, 2, 2};
  /// Widths per resolution, mel rate first, sample rate last.
  std::vector<int> channels{464, 232, 116, 58, 29};
  std::vector<int> up_kernels{3, 7, 11};
  std::vector<int> up_dilations{1, 3, 5};
  std::vector<int> down_kernels{3, 7, 11, 15};
  std::vector<int> down_dilations{1};
  int time_embed_dim = 128;
  int time_hidden_dim = 512;
  int edge_kernel = 7;
  double snake_eps = 1e-8;

  static NetworkConfig reference() { return {}; }

  /// Desk-scale configuration, well under 1M parameters.
  static NetworkConfig tiny() {
    NetworkConfig c;
    c.channels = {64, 32, 16, 8, 8};
    c.time_hidden_dim = 64;
    return c;
  }

  NetworkConfig with_width_scale(double s) const {
    NetworkConfig c = *this;
    for (int& w : c.channels) w = std::max(1, static_cast<int>(std::lround(w * s)));
    return c;
  }

  int levels() const { return static_cast<int>(upsample_factors.size()); }

  int hop() const {
    return std::accumulate(upsample_factors.begin(), upsample_factors.end(), 1,
                           std::multiplies<>());
  }

  void validate() const {
    if (upsample_factors.empty()) throw InvariantError("NetworkConfig: no upsampling stages");
    for (int u : upsample_factors)
      if (u < 2 || u % 2 != 0) throw InvariantError("NetworkConfig: factors must be even and >= 2");
    if (channels.size() != upsample_factors.size() + 1)
      throw InvariantError("NetworkConfig: need one width per resolution (factors + 1)");
    for (int c : channels)
      if (c <= 0) throw InvariantError("NetworkConfig: widths must be positive");
    auto odd_positive = [](const std::vector<int>& ks) {
      return !ks.empty() && std::all_of(ks.begin(), ks.end(), [](int k) { return k > 0 && k % 2; });
    };
    auto positive = [](const std::vector<int>& ds) {
      return !ds.empty() && std::all_of(ds.begin(), ds.end(), [](int d) { return d > 0; });
    };
    if (!odd_positive(up_kernels) || !odd_positive(down_kernels) || edge_kernel <= 0 ||
        edge_kernel % 2 == 0)
      throw InvariantError("NetworkConfig: kernels must be odd and positive");
    if (!positive(up_dilations) || !positive(down_dilations))
      throw InvariantError("NetworkConfig: dilations must be positive");
    if (time_embed_dim < 4 || time_embed_dim % 2 || time_hidden_dim <= 0 || n_mels <= 0)
      throw InvariantError("NetworkConfig: bad embedding or mel sizes");
    if (!(snake_eps > 0.0)) throw InvariantError("NetworkConfig: snake_eps must be positive");
  }

  bool operator==(const NetworkConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NetworkConfig, n_mels, upsample_factors, channels,
                                                up_kernels, up_dilations, down_kernels,
                                                down_dilations, time_embed_dim, time_hidden_dim,
                                                edge_kernel, snake_eps)

/// Sinusoidal time encoding: sin(100 * 10^(4k/(h-1)) * t) for k < h, then the
/// matching cosines, with h = dim / 2.
inline Eigen::VectorXd time_embedding(double t, int dim = 128) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time_embedding: t must lie in [0, 1]");
  if (dim < 4 || dim % 2) throw InvariantError("time_embedding: dim must be even and >= 4");
  const int half = dim / 2;
  Eigen::VectorXd e(dim);
  for (int k = 0; k < half; ++k) {
    const double w = 100.0 * std::pow(10.0, 4.0 * k / (half - 1));
    e(k) = std::sin(w * t);
    e(half + k) = std::cos(w * t);
  }
  return e;
}

namespace nn {

/// Residual stack x <- x + conv(snake(conv_d(snake(x)))) over a dilation list.
template <class T>
class ResBlock {
 public:
  ResBlock(const std::string& name, int channels, int kernel, const std::vector<int>& dilations,
           double eps) {
    for (std::size_t i = 0; i < dilations.size(); ++i) {
      const std::string p = name + "." + std::to_string(i);
      act1_.emplace_back(p + ".act1", channels, eps);
      conv1_.emplace_back(p + ".conv1", channels, channels, kernel, 1, dilations[i]);
      act2_.emplace_back(p + ".act2", channels, eps);
      conv2_.emplace_back(p + ".conv2", channels, channels, kernel, 1, 1);
    }
  }

  void init(Rng& rng) {
    for (std::size_t i = 0; i < conv1_.size(); ++i) {
      conv1_[i].init(rng);
      conv2_[i].init(rng);
    }
  }

  Act<T> forward(Act<T> x) const {
    for (std::size_t i = 0; i < conv1_.size(); ++i)
      x += conv2_[i].forward(act2_[i].forward(conv1_[i].forward(act1_[i].forward(x))));
    return x;
  }

  Act<T> forward_train(Act<T> x) {
    for (std::size_t i = 0; i < conv1_.size(); ++i)
      x += conv2_[i].forward_train(
          act2_[i].forward_train(conv1_[i].forward_train(act1_[i].forward_train(x))));
    return x;
  }

  Act<T> backward(Act<T> g) {
    for (std::size_t i = conv1_.size(); i-- > 0;)
      g += act1_[i].backward(conv1_[i].backward(act2_[i].backward(conv2_[i].backward(g))));
    return g;
  }

  template <class F>
  void visit(F&& f) {
    for (std::size_t i = 0; i < conv1_.size(); ++i) {
      act1_[i].visit(f);
      conv1_[i].visit(f);
      act2_[i].visit(f);
      conv2_[i].visit(f);
    }
  }

  template <class F>
  void visit(F&& f) const {
    for (std::size_t i = 0; i < conv1_.size(); ++i) {
      act1_[i].visit(f);
      conv1_[i].visit(f);
      act2_[i].visit(f);
      conv2_[i].visit(f);
    }
  }

 private:
  std::vector<SnakeBeta<T>> act1_, act2_;
  std::vector<Conv1d<T>> conv1_, conv2_;
};

/// Multi-receptive-field layer: mean of one ResBlock per kernel size.
template <class T>
class ResLayer {
 public:
  ResLayer(const std::string& name, int channels, const std::vector<int>& kernels,
           const std::vector<int>& dilations, double eps) {
    for (std::size_t i = 0; i < kernels.size(); ++i)
      blocks_.emplace_back(name + ".block" + std::to_string(i), channels, kernels[i], dilations,
                           eps);
  }

  void init(Rng& rng) {
    for (auto& b : blocks_) b.init(rng);
  }

  Act<T> forward(const Act<T>& x) const {
    Act<T> y = blocks_[0].forward(x);
    for (std::size_t i = 1; i < blocks_.size(); ++i) y += blocks_[i].forward(x);
    return y / static_cast<T>(blocks_.size());
  }

  Act<T> forward_train(const Act<T>& x) {
    Act<T> y = blocks_[0].forward_train(x);
    for (std::size_t i = 1; i < blocks_.size(); ++i) y += blocks_[i].forward_train(x);
    return y / static_cast<T>(blocks_.size());
  }

  Act<T> backward(const Act<T>& g) {
    const Act<T> gs = g / static_cast<T>(blocks_.size());
    Act<T> gx = blocks_[0].backward(gs);
    for (std::size_t i = 1; i < blocks_.size(); ++i) gx += blocks_[i].backward(gs);
    return gx;
  }

  template <class F>
  void visit(F&& f) {
    for (auto& b : blocks_) b.visit(f);
  }

  template <class F>
  void visit(F&& f) const {
    for (const auto& b : blocks_) b.visit(f);
  }

 private:
  std::vector<ResBlock<T>> blocks_;
};

}  // namespace nn

/// The vocoder network for one example at a time: waveform [1 x L], log-mel
/// [n_mels x L/hop]. forward() is read-only; forward_train() caches
/// activations for one subsequent backward().
template <class T>
class VocoderNet {
 public:
  using Act = nn::Act<T>;
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  explicit VocoderNet(NetworkConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int n = cfg_.levels();
    const auto& ch = cfg_.channels;
    const double eps = cfg_.snake_eps;
    time1_ = nn::Linear<T>("time.fc1", cfg_.time_embed_dim, cfg_.time_hidden_dim);
    time2_ = nn::Linear<T>("time.fc2", cfg_.time_hidden_dim, cfg_.time_hidden_dim);
    conv_pre_ = nn::Conv1d<T>("conv_pre", 1, ch[n], cfg_.edge_kernel);
    // Down level i runs at width ch[n - i] and strides by upsample_factors[n - 1 - i].
    for (int i = 0; i < n; ++i) {
      const std::string p = "down." + std::to_string(i);
      const int c = ch[n - i];
      const int s = cfg_.upsample_factors[n - 1 - i];
      time_proj_.emplace_back(p + ".time", cfg_.time_hidden_dim, c);
      down_res_.emplace_back(p + ".res", c, cfg_.down_kernels, cfg_.down_dilations, eps);
      down_act_.emplace_back(p + ".act", c, eps);
      down_conv_.emplace_back(p + ".conv", c, ch[n - i - 1], 2 * s, s, 1, s / 2);
    }
    mel_pre_ = nn::Conv1d<T>("mel_pre", cfg_.n_mels, ch[0], cfg_.edge_kernel);
    for (int j = 0; j < n; ++j) {
      const std::string p = "up." + std::to_string(j);
      const int u = cfg_.upsample_factors[j];
      up_act_.emplace_back(p + ".act", ch[j], eps);
      up_conv_.emplace_back(p + ".conv", ch[j], ch[j + 1], 2 * u, u, u / 2);
      up_res_.emplace_back(p + ".res", ch[j + 1], cfg_.up_kernels, cfg_.up_dilations, eps);
    }
    post_act_ = nn::SnakeBeta<T>("post.act", ch[n], eps);
    conv_post_ = nn::Conv1d<T>("conv_post", ch[n], 1, cfg_.edge_kernel);

    Rng rng(seed);
    time1_.init(rng);
    time2_.init(rng);
    conv_pre_.init(rng);
    for (int i = 0; i < n; ++i) {
      time_proj_[i].init(rng);
      down_res_[i].init(rng);
      down_conv_[i].init(rng);
    }
    mel_pre_.init(rng);
    for (int j = 0; j < n; ++j) {
      up_conv_[j].init(rng);
      up_res_[j].init(rng);
    }
    conv_post_.init(rng);
  }

  const NetworkConfig& config() const { return cfg_; }

  Act forward(const Act& x, double t, const Act& mel) const {
    check_inputs(x, mel);
    const int n = cfg_.levels();
    const Vector hidden = silu_.forward(time2_.forward(silu_.forward(time1_.forward(embed(t)))));
    std::vector<Act> skips(n);
    Act h = conv_pre_.forward(x);
    for (int i = 0; i < n; ++i) {
      h.colwise() += time_proj_[i].forward(hidden);
      h = down_res_[i].forward(h);
      skips[i] = h;
      h = down_conv_[i].forward(down_act_[i].forward(h));
    }
    Act u = mel_pre_.forward(mel) + h;
    for (int j = 0; j < n; ++j) {
      u = up_conv_[j].forward(up_act_[j].forward(u)) + skips[n - 1 - j];
      u = up_res_[j].forward(u);
    }
    return conv_post_.forward(post_act_.forward(u));
  }

  Act forward_train(const Act& x, double t, const Act& mel) {
    check_inputs(x, mel);
    const int n = cfg_.levels();
    const Vector hidden =
        silu2_.forward_train(time2_.forward_train(silu1_.forward_train(time1_.forward_train(embed(t)))));
    Act h = conv_pre_.forward_train(x);
    for (int i = 0; i < n; ++i) {
      h.colwise() += time_proj_[i].forward_train(hidden);
      h = down_res_[i].forward_train(h);
      h = down_conv_[i].forward_train(down_act_[i].forward_train(h));
    }
    // Skips are the down-res outputs, which the down activations cached.
    Act u = mel_pre_.forward_train(mel) + h;
    for (int j = 0; j < n; ++j) {
      u = up_conv_[j].forward_train(up_act_[j].forward_train(u)) + down_act_[n - 1 - j].input();
      u = up_res_[j].forward_train(u);
    }
    return conv_post_.forward_train(post_act_.forward_train(u));
  }

  /// Accumulates parameter gradients for the last forward_train().
  void backward(const Act& grad_out) {
    const int n = cfg_.levels();
    Act g = post_act_.backward(conv_post_.backward(grad_out));
    std::vector<Act> gskip(n);
    for (int j = n - 1; j >= 0; --j) {
      g = up_res_[j].backward(g);
      gskip[n - 1 - j] = g;
      g = up_act_[j].backward(up_conv_[j].backward(g));
    }
    mel_pre_.backward(g, false);
    Vector ghidden = Vector::Zero(cfg_.time_hidden_dim);
    for (int i = n - 1; i >= 0; --i) {
      g = down_act_[i].backward(down_conv_[i].backward(g)) + gskip[i];
      g = down_res_[i].backward(g);
      ghidden += time_proj_[i].backward(g.rowwise().sum());
    }
    conv_pre_.backward(g, false);
    time1_.backward(silu1_.backward(time2_.backward(silu2_.backward(ghidden))));
  }

  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }

  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  void zero_grad() {
    visit([](nn::Param<T>& p) { p.zero_grad(); });
  }

  std::size_t num_params() const {
    std::size_t total = 0;
    visit([&](const nn::Param<T>& p) { total += static_cast<std::size_t>(p.size()); });
    return total;
  }

  /// Batched inference: x is [B x L], mels holds B grids, ts holds B times.
  Grid<T> forward_batch(const Grid<T>& x, const std::vector<double>& ts,
                        const std::vector<Act>& mels) const {
    if (static_cast<std::size_t>(x.rows()) != ts.size() || ts.size() != mels.size())
      throw ShapeError("forward_batch: batch sizes disagree");
    Grid<T> out(x.rows(), x.cols());
    for (Eigen::Index b = 0; b < x.rows(); ++b) out.row(b) = forward(x.row(b), ts[b], mels[b]);
    return out;
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    self.time1_.visit(f);
    self.time2_.visit(f);
    self.conv_pre_.visit(f);
    for (int i = 0; i < self.cfg_.levels(); ++i) {
      self.time_proj_[i].visit(f);
      self.down_res_[i].visit(f);
      self.down_act_[i].visit(f);
      self.down_conv_[i].visit(f);
    }
    self.mel_pre_.visit(f);
    for (int j = 0; j < self.cfg_.levels(); ++j) {
      self.up_act_[j].visit(f);
      self.up_conv_[j].visit(f);
      self.up_res_[j].visit(f);
    }
    self.post_act_.visit(f);
    self.conv_post_.visit(f);
  }

  Vector embed(double t) const { return time_embedding(t, cfg_.time_embed_dim).cast<T>(); }

  void check_inputs(const Act& x, const Act& mel) const {
    if (x.rows() != 1) throw ShapeError("VocoderNet: waveform must be a single row");
    const Eigen::Index len = x.cols();
    if (len == 0 || len % cfg_.hop() != 0)
      throw ShapeError("VocoderNet: waveform length must be a positive multiple of " +
                       std::to_string(cfg_.hop()));
    if (mel.rows() != cfg_.n_mels || mel.cols() != len / cfg_.hop())
      throw ShapeError("VocoderNet: mel must be [" + std::to_string(cfg_.n_mels) + " x " +
                       std::to_string(len / cfg_.hop()) + "], got [" + std::to_string(mel.rows()) +
                       " x " + std::to_string(mel.cols()) + "]");
    if (!x.allFinite() || !mel.allFinite()) throw DomainError("VocoderNet: non-finite input");
  }

  NetworkConfig cfg_;
  nn::Linear<T> time1_, time2_;
  nn::Silu<T> silu_, silu1_, silu2_;
  nn::Conv1d<T> conv_pre_, mel_pre_, conv_post_;
  std::vector<nn::Linear<T>> time_proj_;
  std::vector<nn::ResLayer<T>> down_res_, up_res_;
  std::vector<nn::SnakeBeta<T>> down_act_, up_act_;
  nn::SnakeBeta<T> post_act_;
  std::vector<nn::Conv1d<T>> down_conv_;
  std::vector<nn::ConvTranspose1d<T>> up_conv_;
};

/// Exact trainable parameter count of a configuration.
inline std::size_t count_params(const NetworkConfig& cfg) {
  return VocoderNet<float>(cfg).num_params();
}

}  // namespace flowvoc

#endif  // FLOWVOC_NETWORK_HPP_
