#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "jigsaw/gradcheck.hpp"
#include "jigsaw/tensor_nn.hpp"
#include "test_util.hpp"

using namespace jigsaw;
using namespace jigsaw::nn;

namespace {

template <typename T>
std::vector<T> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return v;
}

// Direct definition: out[y][x][o] = b[o] + sum over taps inside the image.
std::vector<double> conv_reference(const Conv2d<double>& c, const std::vector<double>& in, std::size_t h,
                                   std::size_t w) {
  const auto k = c.kernel, ci_n = c.in_channels, co_n = c.out_channels;
  const auto pad = static_cast<long>(k / 2);
  std::vector<double> out(h * w * co_n);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t o = 0; o < co_n; ++o) {
        double s = c.params.bias.values[o];
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long iy = static_cast<long>(y + ky) - pad, ix = static_cast<long>(x + kx) - pad;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
            for (std::size_t i = 0; i < ci_n; ++i) {
              s += in[(iy * w + ix) * ci_n + i] * c.params.weights.values[((ky * k + kx) * ci_n + i) * co_n + o];
            }
          }
        }
        out[(y * w + x) * co_n + o] = s;
      }
    }
  }
  return out;
}

Conv2d<double> random_conv(std::size_t k, std::size_t cin, std::size_t cout, std::uint64_t seed) {
  Conv2d<double> c("c", k, cin, cout);
  c.params.weights.values = random_vector<double>(c.params.weights.size(), seed);
  c.params.bias.values = random_vector<double>(cout, seed + 1);
  return c;
}

}  // namespace

TEST(Conv2d, IdentityOneByOne) {
  Conv2d<float> c("c", 1, 3, 3);
  for (std::size_t i = 0; i < 3; ++i) c.params.weights.values[i * 3 + i] = 1.0f;
  const auto in = random_vector<float>(5 * 4 * 3, 1);
  std::vector<float> out(in.size());
  c.forward(in, 5, 4, out);
  EXPECT_EQ(out, in);
}

TEST(Conv2d, OnesKernelHandSums) {
  Conv2d<float> c("c", 3, 1, 1);
  std::fill(c.params.weights.values.begin(), c.params.weights.values.end(), 1.0f);
  const std::vector<float> in(9, 1.0f);
  std::vector<float> out(9);
  c.forward(in, 3, 3, out);
  EXPECT_EQ(out, (std::vector<float>{4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(Conv2d, MatchesBruteForceLoops) {
  std::uint64_t seed = 10;
  for (std::size_t k : {1, 3, 5, 7}) {
    for (auto [cin, cout] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 4}, {5, 9}, {12, 8}, {2, 17}}) {
      for (auto [h, w] : {std::pair<std::size_t, std::size_t>{5, 5}, {3, 7}, {17, 17}}) {
        const auto c = random_conv(k, cin, cout, seed++);
        const auto in = random_vector<double>(h * w * cin, seed++);
        std::vector<double> out(h * w * cout);
        c.forward(in, h, w, out);
        const auto ref = conv_reference(c, in, h, w);
        for (std::size_t i = 0; i < out.size(); ++i) ASSERT_NEAR(out[i], ref[i], 1e-12) << k << " " << i;
      }
    }
  }
}

TEST(Conv2d, BackwardMatchesDefinition) {
  const std::size_t k = 5, cin = 3, cout = 4, h = 6, w = 7;
  auto c = random_conv(k, cin, cout, 3);
  const auto in = random_vector<double>(h * w * cin, 4);
  const auto g = random_vector<double>(h * w * cout, 5);
  std::vector<double> gin(in.size());
  c.params.zero_grad();
  c.backward(in, h, w, g, gin);
  // dL/dW[ky][kx][i][o] = sum_{y,x} g[y][x][o] * in[y+ky-2][x+kx-2][i]; dL/din by the transpose.
  std::vector<double> gw(c.params.weights.size(), 0.0), gi(in.size(), 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long iy = static_cast<long>(y + ky) - 2, ix = static_cast<long>(x + kx) - 2;
          if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
          for (std::size_t i = 0; i < cin; ++i) {
            for (std::size_t o = 0; o < cout; ++o) {
              const auto wi = ((ky * k + kx) * cin + i) * cout + o;
              gw[wi] += g[(y * w + x) * cout + o] * in[(iy * w + ix) * cin + i];
              gi[(iy * w + ix) * cin + i] += g[(y * w + x) * cout + o] * c.params.weights.values[wi];
            }
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < gw.size(); ++i) ASSERT_NEAR(c.params.grad_weights.values[i], gw[i], 1e-12);
  for (std::size_t i = 0; i < gi.size(); ++i) ASSERT_NEAR(gin[i], gi[i], 1e-12);
  for (std::size_t o = 0; o < cout; ++o) {
    double s = 0.0;
    for (std::size_t p = 0; p < h * w; ++p) s += g[p * cout + o];
    EXPECT_NEAR(c.params.grad_bias.values[o], s, 1e-12);
  }
}

TEST(Conv2d, ZeroUpstreamGivesZeroGradients) {
  auto c = random_conv(3, 2, 3, 1);
  const auto in = random_vector<double>(4 * 4 * 2, 2);
  std::vector<double> g(4 * 4 * 3, 0.0), gin(in.size(), 1.0);
  c.params.zero_grad();
  c.backward(in, 4, 4, g, gin);
  for (double v : c.params.grad_weights.values) EXPECT_EQ(v, 0.0);
  for (double v : c.params.grad_bias.values) EXPECT_EQ(v, 0.0);
  for (double v : gin) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, ZeroInputGivesZeroWeightGradients) {
  auto c = random_conv(7, 2, 3, 1);
  const std::vector<double> in(5 * 5 * 2, 0.0);
  const auto g = random_vector<double>(5 * 5 * 3, 3);
  c.params.zero_grad();
  c.backward(in, 5, 5, g);
  for (double v : c.params.grad_weights.values) EXPECT_EQ(v, 0.0);
  for (std::size_t o = 0; o < 3; ++o) {
    double s = 0.0;
    for (std::size_t p = 0; p < 25; ++p) s += g[p * 3 + o];
    EXPECT_NEAR(c.params.grad_bias.values[o], s, 1e-12);
  }
}

TEST(Conv2d, FiniteDifferences) {
  for (std::size_t k : {1, 3, 5, 7}) {
    for (std::uint64_t seed : {1, 2, 3}) EXPECT_LT(check_conv_gradients(k, seed), 1e-6) << k;
  }
}

TEST(Conv2d, Errors) {
  EXPECT_JIGSAW_ERROR(Conv2d<float>("c", 4, 1, 1), ErrorCode::InvalidConfig);
  Conv2d<float> c("c", 3, 2, 2);
  std::vector<float> in(9 * 2), out(9 * 2), bad(5);
  EXPECT_JIGSAW_ERROR(c.forward(bad, 3, 3, out), ErrorCode::ShapeMismatch);
  EXPECT_JIGSAW_ERROR(c.forward(in, 3, 3, bad), ErrorCode::ShapeMismatch);
  EXPECT_JIGSAW_ERROR(c.backward(in, 3, 3, bad), ErrorCode::ShapeMismatch);
}

TEST(MaxPool, StrictMaxRoutesToWinner) {
  const auto pool = MaxPool2d::halving();
  const std::vector<float> in{1, 2, 3, 4};
  std::vector<float> out(1);
  std::vector<std::size_t> arg(1);
  pool.forward<float>(in, 2, 2, 1, out, arg);
  EXPECT_EQ(out[0], 4.0f);
  std::vector<float> g(4, 9.0f);
  MaxPool2d::backward<float>(std::vector<float>{1.5f}, arg, g);
  EXPECT_EQ(g, (std::vector<float>{0, 0, 0, 1.5f}));
}

TEST(MaxPool, TieGoesToFirstCell) {
  const auto pool = MaxPool2d::halving();
  const std::vector<float> in{5, 5, 5, 5};
  std::vector<float> out(1), g(4);
  std::vector<std::size_t> arg(1);
  pool.forward<float>(in, 2, 2, 1, out, arg);
  EXPECT_EQ(out[0], 5.0f);
  MaxPool2d::backward<float>(std::vector<float>{1.0f}, arg, g);
  EXPECT_EQ(g, (std::vector<float>{1, 0, 0, 0}));
}

TEST(MaxPool, OddSizesAndSamePooling) {
  const auto halving = MaxPool2d::halving();
  EXPECT_EQ(halving.output_size(17), 9u);
  const auto in = random_vector<float>(17 * 17 * 2, 4);
  std::vector<float> out(9 * 9 * 2);
  std::vector<std::size_t> arg(out.size());
  halving.forward<float>(in, 17, 17, 2, out, arg);
  // Last row/column windows hold a single input row/column.
  EXPECT_EQ(out[(8 * 9 + 8) * 2 + 1], in[(16 * 17 + 16) * 2 + 1]);

  const auto same = MaxPool2d::same_size(3);
  EXPECT_EQ(same.output_size(17), 17u);
  std::vector<float> s(17 * 17 * 2);
  std::vector<std::size_t> sarg(s.size());
  same.forward<float>(in, 17, 17, 2, s, sarg);
  for (std::size_t y = 0; y < 17; ++y) {
    for (std::size_t x = 0; x < 17; ++x) {
      for (std::size_t c = 0; c < 2; ++c) {
        float best = -INFINITY;
        for (long dy = -1; dy <= 1; ++dy) {
          for (long dx = -1; dx <= 1; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= 17 || xx >= 17) continue;
            best = std::max(best, in[(yy * 17 + xx) * 2 + c]);
          }
        }
        ASSERT_EQ(s[(y * 17 + x) * 2 + c], best);
      }
    }
  }
}

TEST(MaxPool, FiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3}) {
    EXPECT_LT(check_maxpool_gradients(MaxPool2d::halving(), seed), 1e-6);
    EXPECT_LT(check_maxpool_gradients(MaxPool2d::same_size(3), seed), 1e-6);
  }
}

TEST(Dense, IdentityAndHandValue) {
  Dense<float> id("d", 3, 3);
  for (std::size_t i = 0; i < 3; ++i) id.params.weights.values[i * 3 + i] = 1.0f;
  const std::vector<float> x{0.5f, -2.0f, 3.0f};
  std::vector<float> y(3);
  id.forward(x, y);
  EXPECT_EQ(y, x);

  Dense<float> d("d", 2, 1);
  d.params.weights.values = {2.0f, 3.0f};
  d.params.bias.values = {1.0f};
  std::vector<float> out(1);
  d.forward(std::vector<float>{1.0f, 1.0f}, out);
  EXPECT_EQ(out[0], 6.0f);
}

TEST(Dense, BackwardHandValues) {
  Dense<double> d("d", 2, 1);
  d.params.weights.values = {2.0, 3.0};
  std::vector<double> gin(2);
  d.params.zero_grad();
  d.backward(std::vector<double>{1.0, -4.0}, std::vector<double>{0.5}, gin);
  EXPECT_EQ(d.params.grad_weights.values, (std::vector<double>{0.5, -2.0}));
  EXPECT_EQ(d.params.grad_bias.values, (std::vector<double>{0.5}));
  EXPECT_EQ(gin, (std::vector<double>{1.0, 1.5}));
}

TEST(Dense, FiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3, 4}) EXPECT_LT(check_dense_gradients(5, 3, seed), 1e-6);
  EXPECT_LT(check_dense_gradients(17, 9, 5), 1e-6);
}

TEST(Dense, BatchEqualsSingleSamples) {
  Dense<float> a("d", 40, 12);
  a.params.weights.values = random_vector<float>(a.params.weights.size(), 1);
  a.params.bias.values = random_vector<float>(12, 2);
  auto b = a;
  std::vector<std::vector<float>> xs, gs, outs(5, std::vector<float>(12)), gins(5, std::vector<float>(40));
  for (int s = 0; s < 5; ++s) {
    auto x = random_vector<float>(40, 10 + s);
    for (std::size_t i = 0; i < x.size(); i += 3) x[i] = 0.0f;
    xs.push_back(x);
    gs.push_back(random_vector<float>(12, 20 + s));
  }
  std::vector<const float*> in, g;
  std::vector<float*> out, gin;
  for (int s = 0; s < 5; ++s) {
    in.push_back(xs[s].data());
    g.push_back(gs[s].data());
    out.push_back(outs[s].data());
    gin.push_back(gins[s].data());
  }
  a.forward_batch(in, out);
  a.params.zero_grad();
  a.backward_batch(in, g, gin);
  b.params.zero_grad();
  for (int s = 0; s < 5; ++s) {
    std::vector<float> y(12), gi(40);
    b.forward(xs[s], y);
    EXPECT_EQ(y, outs[s]);
    b.backward(xs[s], gs[s], gi);
    EXPECT_EQ(gi, gins[s]);
  }
  EXPECT_EQ(a.params.grad_weights, b.params.grad_weights);
  EXPECT_EQ(a.params.grad_bias, b.params.grad_bias);

  // ReLU-aware input gradient: zero wherever the input is zero.
  a.backward_batch(in, g, gin, true);
  for (int s = 0; s < 5; ++s) {
    for (std::size_t i = 0; i < 40; ++i) {
      if (xs[s][i] <= 0.0f) EXPECT_EQ(gins[s][i], 0.0f);
    }
  }
}

TEST(Dense, ShapeMismatch) {
  Dense<float> d("d", 3, 2);
  std::vector<float> x(4), y(2);
  EXPECT_JIGSAW_ERROR(d.forward(x, y), ErrorCode::ShapeMismatch);
  std::vector<float> x3(3), y3(3);
  EXPECT_JIGSAW_ERROR(d.forward(x3, y3), ErrorCode::ShapeMismatch);
  EXPECT_JIGSAW_ERROR(d.backward(x3, y3), ErrorCode::ShapeMismatch);
}

TEST(Relu, ForwardBackward) {
  std::vector<float> v{-1.0f, 0.0f, 2.0f};
  relu_forward(std::span<float>(v));
  EXPECT_EQ(v, (std::vector<float>{0.0f, 0.0f, 2.0f}));
  std::vector<float> g{5.0f, 5.0f, 5.0f};
  relu_backward<float>(v, g);
  EXPECT_EQ(g, (std::vector<float>{0.0f, 0.0f, 5.0f}));
}

TEST(Softmax, UniformCase) {
  const std::vector<double> logits(7, 0.3);
  std::vector<double> p(7);
  const double loss = softmax_cross_entropy<double>(logits, 4, p);
  for (double v : p) EXPECT_NEAR(v, 1.0 / 7.0, 1e-15);
  EXPECT_NEAR(loss, std::log(7.0), 1e-12);
  EXPECT_NEAR(loss, 1.9459, 5e-5);
}

TEST(Softmax, ShiftInvariantPositiveNormalized) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto logits = random_vector<double>(7, seed, -20.0, 20.0);
    std::vector<double> p(7), q(7);
    softmax<double>(logits, p);
    for (auto& z : logits) z += 123.0;
    softmax<double>(logits, q);
    double sum = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
      EXPECT_GT(p[i], 0.0);
      EXPECT_NEAR(p[i], q[i], 1e-12);
      sum += p[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    // float: large logits must not overflow
    std::vector<float> big(7, 80.0f), pf(7);
    big[3] = 100.0f;
    softmax<float>(big, pf);
    EXPECT_TRUE(std::isfinite(pf[3]));
    EXPECT_GT(pf[3], 0.99f);
  }
}

TEST(Softmax, CrossEntropyGradientAndLimits) {
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) EXPECT_LT(check_softmax_cross_entropy_gradients(seed), 1e-6);
  std::vector<double> logits(7, 0.0), p(7), g(7);
  logits[2] = 60.0;
  const double loss = softmax_cross_entropy<double>(logits, 3, p, g);
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 1e-20);
  EXPECT_NEAR(g[2], p[2] - 1.0, 1e-15);
  logits[2] = -60.0;
  EXPECT_GT(softmax_cross_entropy<double>(logits, 3, p), 59.0);
  EXPECT_JIGSAW_ERROR(softmax_cross_entropy<double>(logits, 0, p), ErrorCode::LabelOutOfRange);
  EXPECT_JIGSAW_ERROR(softmax_cross_entropy<double>(logits, 8, p), ErrorCode::LabelOutOfRange);
}

TEST(Optimizer, SgdStep) {
  LayerParams<double> p("w", {1}, 1);
  p.weights.values = {1.0};
  p.grad_weights.values = {0.5};
  OptimizerState<double> opt({OptimizerKind::sgd, 0.1});
  LayerParams<double>* layers[] = {&p};
  opt.apply(layers);
  EXPECT_NEAR(p.weights.values[0], 0.95, 1e-15);
}

TEST(Optimizer, AdamMatchesScalarHandComputation) {
  LayerParams<double> p("w", {1}, 1);
  p.weights.values = {1.0};
  OptimizerState<double> opt(OptimizerSettings{});
  LayerParams<double>* layers[] = {&p};
  const double g = 0.37, lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double w = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    p.grad_weights.values = {g};
    opt.apply(layers);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    w -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    EXPECT_NEAR(p.weights.values[0], w, 1e-15) << t;
    if (t == 1) EXPECT_NEAR(1.0 - p.weights.values[0], lr, 1e-10);
  }
}

TEST(Optimizer, ZeroGradientIsIdentity) {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    LayerParams<float> p("w", {3, 2}, 2);
    p.weights.values = random_vector<float>(6, 1);
    p.bias.values = {0.25f, -0.5f};
    const auto before = p;
    OptimizerSettings s;
    s.kind = kind;
    OptimizerState<float> opt(s);
    LayerParams<float>* layers[] = {&p};
    opt.apply(layers);
    opt.apply(layers);
    EXPECT_EQ(p.weights, before.weights);
    EXPECT_EQ(p.bias, before.bias);
  }
}

TEST(Optimizer, NonFiniteGradientAbortsAndNamesLayer) {
  LayerParams<float> a("first", {2}, 1), b("second", {2}, 1);
  a.grad_weights.values = {1.0f, 1.0f};
  b.grad_bias.values = {NAN};
  const auto a_before = a.weights;
  OptimizerState<float> opt({OptimizerKind::sgd, 0.1});
  LayerParams<float>* layers[] = {&a, &b};
  try {
    opt.apply(layers);
    FAIL() << "expected NonFiniteGradient";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteGradient);
    EXPECT_NE(std::string(e.what()).find("second"), std::string::npos);
  }
  EXPECT_EQ(a.weights, a_before);
  EXPECT_EQ(opt.step, 0u);
}

TEST(LayerParams, HeUniformInit) {
  LayerParams<float> p("w", {10, 20}, 20);
  Rng rng(5);
  p.bias.values.assign(20, 3.0f);
  p.init_uniform(rng, 10);
  const float bound = std::sqrt(6.0f / 10.0f);
  for (float w : p.weights.values) {
    EXPECT_LE(std::abs(w), bound);
  }
  for (float b : p.bias.values) EXPECT_EQ(b, 0.0f);
  EXPECT_EQ(p.parameter_count(), 220u);
}

TEST(GradCheck, RelativeErrorDefinition) {
  EXPECT_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_NEAR(relative_error(1.0, 0.5), 0.5, 1e-15);
  EXPECT_NEAR(relative_error(0.0, 1e-13), 0.1, 1e-12);
  std::vector<double> x{0.3, -0.7};
  const std::vector<double> right{2 * 0.3, 3 * -0.7 * -0.7}, wrong{1.0, 3 * 0.49};
  const auto loss = [&] { return x[0] * x[0] + x[1] * x[1] * x[1]; };
  EXPECT_LT(grad_check(std::span<double>(x), std::span<const double>(right), loss), 1e-9);
  EXPECT_GT(grad_check(std::span<double>(x), std::span<const double>(wrong), loss), 0.3);
  EXPECT_EQ(x, (std::vector<double>{0.3, -0.7}));
}
