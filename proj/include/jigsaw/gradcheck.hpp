#pragma once

// Double-precision gradient checks of every layer type and of the composed
// network against central differences.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "jigsaw/dataset.hpp"
#include "jigsaw/jigsaw_model.hpp"
#include "jigsaw/random.hpp"
#include "jigsaw/tensor_nn.hpp"

namespace jigsaw {

struct GradCheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_error < tolerance; }
};

inline constexpr double kLayerGradTolerance = 1e-6;
inline constexpr double kModelGradTolerance = 1e-4;

namespace detail {

inline std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

/// sum_i weights[i] * (values[i] - baseline[i]). Subtracting the unperturbed
/// output first keeps untouched outputs at exactly zero, so the central
/// difference only carries rounding from the outputs a parameter reaches.
inline double projected_change(std::span<const double> values, std::span<const double> baseline,
                               std::span<const double> weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += weights[i] * (values[i] - baseline[i]);
  return s;
}

}  // namespace detail

/// Conv layer on a random 7x7x3 input with 4 output channels; the loss is a
/// fixed random projection of the output. Checks weights, bias and input.
inline double check_conv_gradients(std::size_t kernel, std::uint64_t seed) {
  constexpr std::size_t h = 7, w = 7, cin = 3, cout = 4;
  Rng rng(seed);
  nn::Conv2d<double> conv("conv", kernel, cin, cout);
  // Small weights keep outputs, and hence their rounding, small.
  conv.params.weights.values = detail::random_values(rng, conv.params.weights.size(), -0.1, 0.1);
  conv.params.bias.values = detail::random_values(rng, cout, -0.1, 0.1);
  auto input = detail::random_values(rng, h * w * cin);
  const auto proj = detail::random_values(rng, h * w * cout);

  std::vector<double> grad_input(input.size());
  conv.params.zero_grad();
  conv.backward(input, h, w, proj, grad_input);

  std::vector<double> out(h * w * cout), base(h * w * cout);
  conv.forward(input, h, w, base);
  const auto loss = [&] {
    conv.forward(input, h, w, out);
    return detail::projected_change(out, base, proj);
  };
  const auto gw = conv.params.grad_weights.values;
  const auto gb = conv.params.grad_bias.values;
  double worst = nn::grad_check(std::span<double>(conv.params.weights.values), std::span<const double>(gw), loss);
  worst = std::max(worst, nn::grad_check(std::span<double>(conv.params.bias.values), std::span<const double>(gb), loss));
  worst = std::max(worst, nn::grad_check(std::span<double>(input), std::span<const double>(grad_input), loss));
  return worst;
}

/// Max-pool gradient routing on a random odd-sized input.
inline double check_maxpool_gradients(const nn::MaxPool2d& pool, std::uint64_t seed) {
  constexpr std::size_t h = 5, w = 5, c = 2;
  Rng rng(seed);
  auto input = detail::random_values(rng, h * w * c);
  const auto out_size = pool.output_size(h) * pool.output_size(w) * c;
  const auto proj = detail::random_values(rng, out_size);
  std::vector<double> out(out_size);
  std::vector<std::size_t> argmax(out_size);
  pool.forward<double>(input, h, w, c, out, argmax);
  const auto base = out;
  std::vector<double> grad_input(input.size());
  nn::MaxPool2d::backward<double>(proj, argmax, grad_input);
  const auto loss = [&] {
    pool.forward<double>(input, h, w, c, out, argmax);
    return detail::projected_change(out, base, proj);
  };
  return nn::grad_check(std::span<double>(input), std::span<const double>(grad_input), loss);
}

inline double check_dense_gradients(std::size_t inputs, std::size_t outputs, std::uint64_t seed) {
  Rng rng(seed);
  nn::Dense<double> dense("dense", inputs, outputs);
  dense.params.weights.values = detail::random_values(rng, dense.params.weights.size(), -0.1, 0.1);
  dense.params.bias.values = detail::random_values(rng, outputs, -0.1, 0.1);
  auto input = detail::random_values(rng, inputs);
  const auto proj = detail::random_values(rng, outputs);
  std::vector<double> grad_input(inputs);
  dense.params.zero_grad();
  dense.backward(input, proj, grad_input);
  std::vector<double> out(outputs), base(outputs);
  dense.forward(input, base);
  const auto loss = [&] {
    dense.forward(input, out);
    return detail::projected_change(out, base, proj);
  };
  const auto gw = dense.params.grad_weights.values;
  const auto gb = dense.params.grad_bias.values;
  double worst = nn::grad_check(std::span<double>(dense.params.weights.values), std::span<const double>(gw), loss);
  worst = std::max(worst, nn::grad_check(std::span<double>(dense.params.bias.values), std::span<const double>(gb), loss));
  worst = std::max(worst, nn::grad_check(std::span<double>(input), std::span<const double>(grad_input), loss));
  return worst;
}

inline double check_softmax_cross_entropy_gradients(std::uint64_t seed) {
  Rng rng(seed);
  auto logits = detail::random_values(rng, kNumClasses, -3.0, 3.0);
  const int label = 1 + static_cast<int>(rng.below(kNumClasses));
  std::vector<double> probs(kNumClasses), grad(kNumClasses);
  nn::softmax_cross_entropy<double>(logits, label, probs, grad);
  const auto loss = [&] { return nn::softmax_cross_entropy<double>(logits, label, probs); };
  return nn::grad_check(std::span<double>(logits), std::span<const double>(grad), loss);
}

/// Small-width configuration used for whole-model checks.
inline JigsawConfig gradcheck_model_config(std::size_t bands = 4, std::uint64_t seed = 0) {
  JigsawConfig c;
  c.input_bands = bands;
  c.conv_channels = {2, 2, 2, 2};
  c.dense_widths = {4, 4};
  c.fusion_width = 8;
  c.seed = seed;
  return c;
}

inline Tile random_tile(Rng& rng, std::size_t bands, std::size_t size = kTileSize, double hi = 1.0) {
  Tile t;
  t.size = size;
  t.bands = bands;
  t.values.resize(size * size * bands);
  for (auto& v : t.values) v = static_cast<float>(rng.uniform(0.0, hi));
  t.label = static_cast<std::uint8_t>(1 + rng.below(kNumClasses));
  return t;
}

/// Smallest |input| over every ReLU in the network for `tile`. Central
/// differences are meaningless when a probe pushes one of these across zero.
inline double relu_margin(const Model<double>& m, const Tile& tile) {
  const auto& c = m.config;
  const auto n = c.tile_size;
  const std::vector<double> input(tile.values.begin(), tile.values.end());
  double margin = std::numeric_limits<double>::infinity();
  const auto track = [&margin](std::span<const double> pre) {
    for (double v : pre) margin = std::min(margin, std::abs(v));
  };
  std::vector<double> pre;
  for (std::size_t i = 0; i < 3; ++i) {
    pre.assign(n * n * c.conv_channels[i], 0.0);
    m.convs[i].forward(input, n, n, pre);
    track(pre);
  }
  std::vector<double> pooled(input.size());
  std::vector<std::size_t> argmax(input.size());
  nn::MaxPool2d::same_size(JigsawConfig::kPoolWindow).forward<double>(input, n, n, c.input_bands, pooled, argmax);
  pre.assign(n * n * c.conv_channels[3], 0.0);
  m.pool_projection.forward(pooled, n, n, pre);
  track(pre);

  Activations<double> acts(c);
  forward(m, tile, acts);
  std::vector<double> hidden(c.dense_widths[0]), block_b(c.dense_widths[1]), fusion_pre(c.fusion_width);
  m.pixel_hidden.forward(acts.pixel, hidden);
  track(hidden);
  m.pixel_out.forward(acts.pixel_hidden, block_b);
  track(block_b);
  m.fusion.forward(acts.fused, fusion_pre);
  track(fusion_pre);
  return margin;
}

inline constexpr double kReluMargin = 1e-4;

/// Every parameter of a whole network against central differences of the
/// cross-entropy loss on one random tile, redrawn until no ReLU input lies
/// within kReluMargin of its kink.
inline double check_model_gradients(const JigsawConfig& config, std::uint64_t seed) {
  auto model = build<double>(config);
  Rng rng(seed);
  auto tile = random_tile(rng, config.input_bands, config.tile_size);
  for (int attempt = 0; attempt < 100 && relu_margin(model, tile) < kReluMargin; ++attempt) {
    tile = random_tile(rng, config.input_bands, config.tile_size);
  }
  Activations<double> acts(config);
  model.zero_grad();
  accumulate_gradients(model, tile, acts);
  const auto loss = [&] {
    forward(model, tile, acts);
    return nn::softmax_cross_entropy<double>(acts.logits, tile.label, acts.probs);
  };
  double worst = 0.0;
  for (auto* layer : model.layers()) {
    const auto gw = layer->grad_weights.values;
    const auto gb = layer->grad_bias.values;
    worst = std::max(worst, nn::grad_check(std::span<double>(layer->weights.values), std::span<const double>(gw), loss));
    worst = std::max(worst, nn::grad_check(std::span<double>(layer->bias.values), std::span<const double>(gb), loss));
  }
  return worst;
}

inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 0) {
  std::vector<GradCheckResult> results;
  for (std::size_t k : {3, 5, 7, 1}) {
    results.push_back({"conv" + std::to_string(k) + "x" + std::to_string(k), check_conv_gradients(k, seed + k),
                       kLayerGradTolerance});
  }
  results.push_back({"maxpool2x2_stride2", check_maxpool_gradients(nn::MaxPool2d::halving(), seed + 11),
                     kLayerGradTolerance});
  results.push_back({"maxpool3x3_same", check_maxpool_gradients(nn::MaxPool2d::same_size(3), seed + 12),
                     kLayerGradTolerance});
  results.push_back({"dense5x3", check_dense_gradients(5, 3, seed + 13), kLayerGradTolerance});
  results.push_back({"softmax_cross_entropy", check_softmax_cross_entropy_gradients(seed + 14), kLayerGradTolerance});
  for (std::uint64_t i = 0; i < 2; ++i) {
    results.push_back({"jigsaw_model_17x17x4_#" + std::to_string(i + 1),
                       check_model_gradients(gradcheck_model_config(4, seed + 20 + i), seed + 30 + i),
                       kModelGradTolerance});
  }
  return results;
}

}  // namespace jigsaw
