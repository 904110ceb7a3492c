// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <filesystem>

#include "flowvoc/checkpoint.hpp"
#include "flowvoc/losses.hpp"
#include "flowvoc/network.hpp"
#include "naive.hpp"

using namespace flowvoc;
using nn::Act;

namespace {

Act<double> random_act(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  NormalSource n(seed);
  Act<double> a(rows, cols);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = scale * n();
  return a;
}

void randomize(nn::Param<double>& p, std::uint64_t seed, double scale = 0.5) {
  NormalSource n(seed);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = scale * n();
}

// Checks d<w, layer(x)>/dx and d/dparams by central differences.
template <class Layer>
void check_layer_gradients(Layer& layer, Act<double> x, std::uint64_t seed) {
  const Act<double> y = layer.forward_train(x);
  const Act<double> w = random_act(y.rows(), y.cols(), seed);
  layer.visit([](nn::Param<double>& p) { p.zero_grad(); });
  const Act<double> gx = layer.backward(w);
  auto objective = [&] { return (layer.forward(x).array() * w.array()).sum(); };
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.size(); i += std::max<Eigen::Index>(1, x.size() / 17)) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = objective();
    x.data()[i] = keep - h;
    const double down = objective();
    x.data()[i] = keep;
    EXPECT_NEAR(gx.data()[i], (up - down) / (2 * h), 1e-6 * std::max(1.0, std::abs(gx.data()[i])))
        << "input " << i;
  }
  layer.visit([&](nn::Param<double>& p) {
    for (Eigen::Index i = 0; i < p.value.size(); i += std::max<Eigen::Index>(1, p.value.size() / 11)) {
      const double keep = p.value.data()[i];
      p.value.data()[i] = keep + h;
      const double up = objective();
      p.value.data()[i] = keep - h;
      const double down = objective();
      p.value.data()[i] = keep;
      EXPECT_NEAR(p.grad.data()[i], (up - down) / (2 * h),
                  1e-6 * std::max(1.0, std::abs(p.grad.data()[i])))
          << p.name << " " << i;
    }
  });
}

// Direct-definition convolution: y[o][l] = b[o] + sum_{c,j} W[o][c][j] x[c][l*s + j*d - p].
Act<double> naive_conv(const Act<double>& x, const Grid<double>& w, const Grid<double>& b, int k,
                       int s, int d, int p) {
  const long li = x.cols();
  const long lo = (li + 2 * p - d * (k - 1) - 1) / s + 1;
  Act<double> y(w.rows(), lo);
  for (long o = 0; o < w.rows(); ++o)
    for (long l = 0; l < lo; ++l) {
      double acc = b(o, 0);
      for (long c = 0; c < x.rows(); ++c)
        for (int j = 0; j < k; ++j) {
          const long q = l * s + j * d - p;
          if (q >= 0 && q < li) acc += w(o, c * k + j) * x(c, q);
        }
      y(o, l) = acc;
    }
  return y;
}

// Direct-definition transposed convolution by scattering each input sample.
Act<double> naive_conv_transpose(const Act<double>& x, const Grid<double>& w, const Grid<double>& b,
                                 int out_ch, int k, int s, int p) {
  const long li = x.cols();
  const long lo = (li - 1) * s - 2 * p + k;
  Act<double> y = Act<double>::Zero(out_ch, lo);
  for (long c = 0; c < x.rows(); ++c)
    for (long l = 0; l < li; ++l)
      for (int o = 0; o < out_ch; ++o)
        for (int j = 0; j < k; ++j) {
          const long q = l * s + j - p;
          if (q >= 0 && q < lo) y(o, q) += w(c, o * k + j) * x(c, l);
        }
  for (int o = 0; o < out_ch; ++o) y.row(o).array() += b(o, 0);
  return y;
}

// Parameter count from the architecture description, written out by hand.
std::size_t expected_params(const NetworkConfig& c) {
  auto conv = [](long in, long out, long k) { return static_cast<std::size_t>(in * out * k + out); };
  auto snake = [](long ch) { return static_cast<std::size_t>(2 * ch); };
  auto reslayer = [&](long ch, const std::vector<int>& ks, const std::vector<int>& ds) {
    std::size_t n = 0;
    for (int k : ks) n += ds.size() * (2 * conv(ch, ch, k) + 2 * snake(ch));
    return n;
  };
  const long L = c.levels();
  const auto& ch = c.channels;
  std::size_t n = 0;
  n += static_cast<std::size_t>(c.time_embed_dim * c.time_hidden_dim + c.time_hidden_dim);
  n += static_cast<std::size_t>(c.time_hidden_dim * c.time_hidden_dim + c.time_hidden_dim);
  n += conv(1, ch[L], c.edge_kernel);
  for (long i = 0; i < L; ++i) {
    const long w = ch[L - i];
    const long s = c.upsample_factors[L - 1 - i];
    n += static_cast<std::size_t>(c.time_hidden_dim * w + w);
    n += reslayer(w, c.down_kernels, c.down_dilations);
    n += snake(w) + conv(w, ch[L - i - 1], 2 * s);
  }
  n += conv(c.n_mels, ch[0], c.edge_kernel);
  for (long j = 0; j < L; ++j) {
    n += snake(ch[j]) + conv(ch[j], ch[j + 1], 2 * c.upsample_factors[j]);
    n += reslayer(ch[j + 1], c.up_kernels, c.up_dilations);
  }
  n += snake(ch[L]) + conv(ch[L], 1, c.edge_kernel);
  return n;
}

Act<float> random_mel(int frames, std::uint64_t seed) {
  NormalSource n(seed);
  Act<float> m(100, frames);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(-4.0 + 2.0 * n());
  return m;
}

Act<float> random_wave(Eigen::Index len, std::uint64_t seed) {
  NormalSource n(seed);
  Act<float> x(1, len);
  for (Eigen::Index i = 0; i < len; ++i) x(0, i) = static_cast<float>(0.3 * n());
  return x;
}

}  // namespace

TEST(SnakeBeta, Values) {
  nn::SnakeBeta<double> act("a", 2);
  Act<double> x(2, 3);
  x << 0.0, naive::pi() / 2, -1.0, 0.0, 0.3, 2.0;
  const Act<double> y = act.forward(x);
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_EQ(y(1, 0), 0.0);
  EXPECT_NEAR(y(0, 1), naive::pi() / 2 + 1.0 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(y(0, 2), -1.0 + std::pow(std::sin(-1.0), 2) / (1.0 + 1e-8), 1e-15);
  act.visit([](nn::Param<double>& p) {
    if (p.name == "a.beta") p.value.setConstant(40.0);
  });
  const Act<double> z = act.forward(x);
  EXPECT_NEAR((z - x).cwiseAbs().maxCoeff(), 0.0, 1e-16);
}

TEST(SnakeBeta, PerChannelParameters) {
  nn::SnakeBeta<double> act("a", 2);
  act.visit([](nn::Param<double>& p) {
    if (p.name == "a.alpha") p.value(1, 0) = std::log(2.0);
  });
  Act<double> x(2, 1);
  x << 0.7, 0.7;
  const Act<double> y = act.forward(x);
  EXPECT_NEAR(y(0, 0), 0.7 + std::pow(std::sin(0.7), 2) / (1 + 1e-8), 1e-14);
  EXPECT_NEAR(y(1, 0), 0.7 + std::pow(std::sin(1.4), 2) / (1 + 1e-8), 1e-14);
}

TEST(TimeEmbedding, Values) {
  const auto e0 = time_embedding(0.0);
  ASSERT_EQ(e0.size(), 128);
  for (int k = 0; k < 64; ++k) {
    EXPECT_EQ(e0(k), 0.0);
    EXPECT_EQ(e0(64 + k), 1.0);
  }
  const auto e = time_embedding(0.01);
  EXPECT_DOUBLE_EQ(e(0), std::sin(1.0));
  EXPECT_DOUBLE_EQ(e(64), std::cos(1.0));
  EXPECT_NEAR(e(63), std::sin(100.0 * 1e4 * 0.01), 1e-9);
  // Lipschitz in t with constant equal to the top frequency, 100 * 10^4.
  for (double t : {0.0, 0.123, 0.5, 0.77, 0.999999}) {
    const auto a = time_embedding(t);
    EXPECT_LE(a.cwiseAbs().maxCoeff(), 1.0);
    const auto b = time_embedding(t + 1e-9);
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e6 * 1e-9 * 1.001);
    EXPECT_LT((a - b).head(32).cwiseAbs().maxCoeff(), 1e-5);
  }
  EXPECT_THROW(time_embedding(-0.01), DomainError);
  EXPECT_THROW(time_embedding(1.01), DomainError);
}

TEST(Conv1d, MatchesDirectDefinition) {
  Rng rng(3);
  for (auto [k, s, d, p] : std::vector<std::array<int, 4>>{{3, 1, 1, 1}, {7, 1, 3, 9}, {4, 2, 1, 1},
                                                          {16, 8, 1, 4}, {5, 3, 2, 0}}) {
    nn::Conv1d<double> conv("c", 3, 4, k, s, d, p);
    conv.init(rng);
    const auto x = random_act(3, 40, 11 + k);
    const auto y = conv.forward(x);
    const auto ref = naive_conv(x, conv.weight().value, conv.bias().value, k, s, d, p);
    ASSERT_EQ(y.cols(), ref.cols());
    EXPECT_LT((y - ref).cwiseAbs().maxCoeff(), 1e-12) << k << " " << s << " " << d;
  }
}

TEST(Conv1d, SamePaddingKeepsLength) {
  for (int k : {3, 7, 11, 15})
    for (int d : {1, 3, 5}) {
      nn::Conv1d<double> conv("c", 2, 2, k, 1, d);
      EXPECT_EQ(conv.out_length(100), 100);
    }
  nn::Conv1d<double> down("d", 2, 2, 16, 8, 1, 4);
  EXPECT_EQ(down.out_length(128), 16);
}

TEST(ConvTranspose1d, MatchesDirectDefinition) {
  Rng rng(5);
  for (auto [k, s, p] : std::vector<std::array<int, 3>>{{16, 8, 4}, {4, 2, 1}, {3, 1, 1}, {5, 2, 0}}) {
    nn::ConvTranspose1d<double> up("u", 3, 2, k, s, p);
    up.init(rng);
    Grid<double> w, b;
    up.visit([&](nn::Param<double>& prm) {
      if (prm.name == "u.weight") w = prm.value;
      else b = prm.value;
    });
    const auto x = random_act(3, 9, 21 + k);
    const auto y = up.forward(x);
    const auto ref = naive_conv_transpose(x, w, b, 2, k, s, p);
    ASSERT_EQ(y.cols(), ref.cols());
    EXPECT_LT((y - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
  nn::ConvTranspose1d<double> up("u", 1, 1, 16, 8, 4);
  EXPECT_EQ(up.out_length(16), 128);
}

TEST(LayerGradients, Conv1d) {
  Rng rng(1);
  for (auto [k, s, d, p] : std::vector<std::array<int, 4>>{{3, 1, 1, 1}, {7, 1, 3, 9}, {4, 2, 1, 1}}) {
    nn::Conv1d<double> conv("c", 3, 2, k, s, d, p);
    conv.init(rng);
    check_layer_gradients(conv, random_act(3, 24, 2), 3);
  }
}

TEST(LayerGradients, ConvTranspose1d) {
  Rng rng(2);
  nn::ConvTranspose1d<double> up("u", 3, 2, 8, 4, 2);
  up.init(rng);
  check_layer_gradients(up, random_act(3, 6, 4), 5);
}

TEST(LayerGradients, SnakeBeta) {
  nn::SnakeBeta<double> act("a", 3);
  act.visit([](nn::Param<double>& p) { randomize(p, p.name.size()); });
  check_layer_gradients(act, random_act(3, 20, 6), 7);
}

TEST(LayerGradients, ResLayer) {
  Rng rng(3);
  nn::ResLayer<double> layer("r", 2, {3, 5}, {1, 3}, 1e-8);
  layer.init(rng);
  layer.visit([](nn::Param<double>& p) {
    if (p.name.find("act") != std::string::npos) randomize(p, p.name.size(), 0.3);
  });
  check_layer_gradients(layer, random_act(2, 30, 8), 9);
}

TEST(LayerGradients, LinearSilu) {
  Rng rng(4);
  nn::Linear<double> lin("l", 5, 4);
  lin.init(rng);
  nn::Silu<double> silu;
  Eigen::VectorXd x = random_act(5, 1, 10).col(0);
  const Eigen::VectorXd w = random_act(4, 1, 11).col(0);
  silu.forward_train(lin.forward_train(x));
  lin.visit([](nn::Param<double>& p) { p.zero_grad(); });
  const Eigen::VectorXd gx = lin.backward(silu.backward(w));
  const double h = 1e-6;
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    const double fd = (w.dot(silu.forward(lin.forward(a))) - w.dot(silu.forward(lin.forward(b)))) / (2 * h);
    EXPECT_NEAR(gx(i), fd, 1e-8);
  }
}

TEST(CountParams, ReferenceBudget) {
  const std::size_t n = count_params(NetworkConfig::reference());
  EXPECT_GE(n, 17550000u);
  EXPECT_LE(n, 21450000u);
  EXPECT_EQ(n, expected_params(NetworkConfig::reference()));
}

TEST(CountParams, HalvedWidthsRoughlyQuarter) {
  const auto ref = NetworkConfig::reference();
  const auto half = ref.with_width_scale(0.5);
  const double ratio = static_cast<double>(count_params(half)) / count_params(ref);
  EXPECT_GE(ratio, 0.2);
  EXPECT_LE(ratio, 0.3);
  EXPECT_EQ(count_params(half), expected_params(half));
}

TEST(CountParams, TinyConfig) {
  const auto tiny = NetworkConfig::tiny();
  EXPECT_LT(count_params(tiny), 1000000u);
  EXPECT_EQ(count_params(tiny), expected_params(tiny));
}

TEST(NetworkConfig, Validation) {
  auto c = NetworkConfig::reference();
  EXPECT_EQ(c.hop(), 256);
  c.channels.pop_back();
  EXPECT_THROW(c.validate(), InvariantError);
  c = NetworkConfig::reference();
  c.up_kernels = {4};
  EXPECT_THROW(c.validate(), InvariantError);
  c = NetworkConfig::reference();
  c.upsample_factors = {8, 8, 3, 2};
  EXPECT_THROW(c.validate(), InvariantError);
}

TEST(NetworkConfig, JsonRoundTrip) {
  const auto c = NetworkConfig::tiny();
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<NetworkConfig>(), c);
}

TEST(VocoderNet, ReferenceShapeContract) {
  const VocoderNet<float> net(NetworkConfig::reference(), 1);
  Grid<float> x(2, 32768);
  x.row(0) = random_wave(32768, 1);
  x.row(1) = random_wave(32768, 2);
  const Grid<float> y = net.forward_batch(x, {0.2, 0.7}, {random_mel(128, 3), random_mel(128, 4)});
  EXPECT_EQ(y.rows(), 2);
  EXPECT_EQ(y.cols(), 32768);
  EXPECT_TRUE(y.allFinite());
}

TEST(VocoderNet, FullyConvolutional) {
  const VocoderNet<float> net(NetworkConfig::tiny(), 2);
  for (int frames : {1, 4, 8, 16}) {
    const auto y = net.forward(random_wave(256 * frames, frames), 0.5, random_mel(frames, 9));
    EXPECT_EQ(y.cols(), 256 * frames);
    EXPECT_TRUE(y.allFinite());
  }
}

TEST(VocoderNet, SensitiveToMelAndTime) {
  const VocoderNet<float> net(NetworkConfig::tiny(), 3);
  const auto x = random_wave(2048, 1);
  const auto mel = random_mel(8, 2);
  const auto base = net.forward(x, 0.4, mel);
  EXPECT_GT((net.forward(x, 0.4, random_mel(8, 3)) - base).cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_GT((net.forward(x, 0.6, mel) - base).cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_GT((net.forward(random_wave(2048, 5), 0.4, mel) - base).cwiseAbs().maxCoeff(), 0.0f);
}

TEST(VocoderNet, RejectsBadShapes) {
  const VocoderNet<float> net(NetworkConfig::tiny(), 3);
  EXPECT_THROW(net.forward(random_wave(1000, 1), 0.1, random_mel(4, 1)), ShapeError);
  EXPECT_THROW(net.forward(random_wave(1024, 1), 0.1, random_mel(5, 1)), ShapeError);
  auto x = random_wave(1024, 1);
  x(0, 10) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(net.forward(x, 0.1, random_mel(4, 1)), DomainError);
  EXPECT_THROW(net.forward(random_wave(1024, 1), 1.5, random_mel(4, 1)), DomainError);
}

TEST(VocoderNet, DeterministicPerSeed) {
  const VocoderNet<float> a(NetworkConfig::tiny(), 42), b(NetworkConfig::tiny(), 42),
      c(NetworkConfig::tiny(), 43);
  const auto x = random_wave(1024, 1);
  const auto mel = random_mel(4, 2);
  const auto ya = a.forward(x, 0.3, mel);
  EXPECT_TRUE((ya.array() == b.forward(x, 0.3, mel).array()).all());
  EXPECT_FALSE((ya.array() == c.forward(x, 0.3, mel).array()).all());
}

TEST(VocoderNet, TrainForwardMatchesInference) {
  VocoderNet<double> net(NetworkConfig::tiny(), 4);
  const auto x = random_wave(1024, 1).cast<double>().eval();
  const auto mel = random_mel(4, 2).cast<double>().eval();
  const auto a = net.forward(x, 0.3, mel);
  const auto b = net.forward_train(x, 0.3, mel);
  EXPECT_TRUE((a.array() == b.array()).all());
}

TEST(VocoderNet, GradientMatchesFiniteDifferences) {
  VocoderNet<double> net(NetworkConfig::tiny(), 5);
  // Non-trivial snake parameters so their gradients are exercised too.
  NormalSource n(9);
  net.visit([&](nn::Param<double>& p) {
    if (p.name.find("act") != std::string::npos)
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = 0.3 * n();
  });
  const auto x = random_wave(512, 1).cast<double>().eval();
  const auto mel = random_mel(2, 2).cast<double>().eval();
  const auto w = random_act(1, 512, 3);
  net.zero_grad();
  net.forward_train(x, 0.37, mel);
  net.backward(w);
  auto objective = [&] { return (net.forward(x, 0.37, mel).array() * w.array()).sum(); };
  Rng pick(6);
  int checked = 0;
  const double h = 1e-6;
  net.visit([&](nn::Param<double>& p) {
    std::uniform_int_distribution<Eigen::Index> idx(0, p.value.size() - 1);
    const Eigen::Index i = idx(pick);
    const double keep = p.value.data()[i];
    p.value.data()[i] = keep + h;
    const double up = objective();
    p.value.data()[i] = keep - h;
    const double down = objective();
    p.value.data()[i] = keep;
    const double fd = (up - down) / (2 * h);
    EXPECT_NEAR(p.grad.data()[i], fd, 1e-5 * std::max(1.0, std::abs(fd))) << p.name;
    ++checked;
  });
  EXPECT_GT(checked, 100);
}

TEST(VocoderNet, GradientReachesNearlyAllParameters) {
  VocoderNet<float> net(NetworkConfig::tiny(), 6);
  const TrainingLoss loss;
  NormalSource n(1);
  std::vector<double> x1(4096);
  for (auto& v : x1) v = 0.3 * std::sin(0.05 * (&v - x1.data())) + 0.01 * n();
  const auto mel = loss.mel().extract(std::span<const double>(x1));
  std::vector<double> xt(x1.size());
  for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = 0.4 * x1[i] + 0.6 * 0.1 * n();
  Grid<float> xin(1, 4096);
  for (int i = 0; i < 4096; ++i) xin(0, i) = static_cast<float>(xt[i]);
  net.zero_grad();
  const auto out = net.forward_train(xin, 0.4, mel.log.cast<float>());
  std::vector<double> pred(out.data(), out.data() + out.size());
  std::vector<double> grad;
  loss.evaluate(x1, pred, 0.4, &grad);
  Grid<float> g(1, 4096);
  for (int i = 0; i < 4096; ++i) g(0, i) = static_cast<float>(grad[i]);
  net.backward(g);
  std::size_t total = 0, nonzero = 0;
  bool finite = true;
  net.visit([&](const nn::Param<float>& p) {
    total += p.size();
    nonzero += (p.grad.array() != 0.0f).count();
    finite = finite && p.grad.allFinite();
  });
  EXPECT_TRUE(finite);
  EXPECT_GE(static_cast<double>(nonzero) / total, 0.99) << nonzero << "/" << total;
}

TEST(AdamW, MatchesHandComputedStep) {
  nn::SnakeBeta<double> m("m", 1);
  m.visit([](nn::Param<double>& p) {
    p.value(0, 0) = 1.0;
    p.grad(0, 0) = p.name == "m.alpha" ? 0.5 : -2.0;
  });
  nn::AdamW<double> opt({0.9, 0.99, 1e-8, 0.1});
  opt.step(m, 0.01);
  // Decay then a bias-corrected step of magnitude lr * g / (|g| + eps').
  m.visit([](nn::Param<double>& p) {
    const double g = p.name == "m.alpha" ? 0.5 : -2.0;
    const double expected = 1.0 * (1 - 0.01 * 0.1) - 0.01 * g / (std::abs(g) + 1e-8);
    EXPECT_NEAR(p.value(0, 0), expected, 1e-12) << p.name;
  });
  m.visit([](nn::Param<double>& p) { p.grad(0, 0) = 0.0; });
  opt.step(m, 0.01);
  m.visit([](nn::Param<double>& p) {
    const double g = p.name == "m.alpha" ? 0.5 : -2.0;
    const double v1 = 1.0 * (1 - 0.001) - 0.01 * g / (std::abs(g) + 1e-8);
    const double mh = 0.9 * 0.1 * g / (1 - 0.81);
    const double vh = 0.99 * 0.01 * g * g / (1 - 0.9801);
    EXPECT_NEAR(p.value(0, 0), v1 * (1 - 0.001) - 0.01 * mh / (std::sqrt(vh) + 1e-8), 1e-12);
  });
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(nn::cosine_lr(0, 100, 7.5e-5, 5e-6), 7.5e-5);
  EXPECT_DOUBLE_EQ(nn::cosine_lr(100, 100, 7.5e-5, 5e-6), 5e-6);
  EXPECT_NEAR(nn::cosine_lr(50, 100, 7.5e-5, 5e-6), 0.5 * (7.5e-5 + 5e-6), 1e-20);
  EXPECT_GT(nn::cosine_lr(30, 100, 1.0, 0.0), nn::cosine_lr(31, 100, 1.0, 0.0));
}

TEST(Checkpoint, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "flowvoc_ckpt_test";
  std::filesystem::create_directories(dir);
  VocoderNet<float> net(NetworkConfig::tiny(), 8);
  nn::AdamW<float> opt;
  net.visit([](nn::Param<float>& p) { p.grad.setConstant(0.01f); });
  opt.step(net, 1e-3);
  Checkpoint ck;
  ck.network = net.config();
  ck.step = 17;
  ck.meta["note"] = "x";
  ck.params = capture_params(net);
  capture_optimizer(opt, net, ck);
  save_checkpoint(dir / "a.ckpt", ck);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.step, 17);
  EXPECT_FALSE(back.distilled);
  EXPECT_EQ(back.meta["note"], "x");
  EXPECT_EQ(back.optimizer_step, 1);
  auto net2 = network_from_checkpoint<float>(back, NetworkConfig::tiny());
  const auto x = random_wave(1024, 1);
  const auto mel = random_mel(4, 1);
  EXPECT_TRUE((net.forward(x, 0.2, mel).array() == net2.forward(x, 0.2, mel).array()).all());
  nn::AdamW<float> opt2;
  restore_optimizer(opt2, back);
  EXPECT_EQ(opt2.steps_taken(), 1);
  EXPECT_TRUE((opt2.second_moments()[3].array() == opt.second_moments()[3].array()).all());
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, MismatchedConfigIsAnError) {
  const auto dir = std::filesystem::temp_directory_path() / "flowvoc_ckpt_test2";
  VocoderNet<float> net(NetworkConfig::tiny(), 8);
  Checkpoint ck;
  ck.network = net.config();
  ck.params = capture_params(net);
  save_checkpoint(dir / "a.ckpt", ck);
  auto other = NetworkConfig::tiny();
  other.channels[4] = 16;
  EXPECT_THROW(network_from_checkpoint<float>(load_checkpoint(dir / "a.ckpt"), other), InvariantError);
  VocoderNet<float> wrong(other);
  EXPECT_THROW(restore_params(wrong, ck.params), ShapeError);
  {
    std::ofstream trunc(dir / "b.ckpt", std::ios::binary);
    trunc << "FLOWVOC";
  }
  EXPECT_THROW(load_checkpoint(dir / "b.ckpt"), IngestionError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IngestionError);
  std::filesystem::remove_all(dir);
}
