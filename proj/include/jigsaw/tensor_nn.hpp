#pragma once

// Minimal CPU neural-network core: HWC convolutions with same padding,
// max pooling, dense layers, ReLU, fused softmax cross-entropy and SGD/Adam.
// Everything is templated on the scalar so the same code runs in float for
// training and in double for gradient checking.
//
// Forward passes are const and write into caller-owned buffers; backward
// passes accumulate into LayerParams gradients. A frozen layer can therefore
// be shared between threads as long as each thread owns its activations.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "jigsaw/error.hpp"
#include "jigsaw/random.hpp"

#if defined(__SSE2__) || defined(_M_X64)
#include <xmmintrin.h>
#define JIGSAW_HAS_MXCSR 1
#endif

namespace jigsaw::nn {

template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, T fill = T(0)) : shape(std::move(s)) {
    values.assign(std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>()), fill);
  }

  std::size_t size() const { return values.size(); }
  std::span<T> span() { return values; }
  std::span<const T> span() const { return values; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.values.assign(values.begin(), values.end());
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <typename T>
struct LayerParams {
  std::string name;
  Tensor<T> weights;
  Tensor<T> bias;
  Tensor<T> grad_weights;
  Tensor<T> grad_bias;

  LayerParams() = default;
  LayerParams(std::string n, std::vector<std::size_t> weight_shape, std::size_t bias_size)
      : name(std::move(n)),
        weights(weight_shape),
        bias({bias_size}),
        grad_weights(weight_shape),
        grad_bias({bias_size}) {}

  std::size_t parameter_count() const { return weights.size() + bias.size(); }

  void zero_grad() {
    std::fill(grad_weights.values.begin(), grad_weights.values.end(), T(0));
    std::fill(grad_bias.values.begin(), grad_bias.values.end(), T(0));
  }

  /// He-style uniform init: weights ~ U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)), bias 0.
  void init_uniform(Rng& rng, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& w : weights.values) w = static_cast<T>(rng.uniform(-bound, bound));
    std::fill(bias.values.begin(), bias.values.end(), T(0));
  }

  template <typename U>
  LayerParams<U> cast() const {
    LayerParams<U> out;
    out.name = name;
    out.weights = weights.template cast<U>();
    out.bias = bias.template cast<U>();
    out.grad_weights = grad_weights.template cast<U>();
    out.grad_bias = grad_bias.template cast<U>();
    return out;
  }

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

namespace detail {

inline void check_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + ": expected " + std::to_string(want) + " values, got " + std::to_string(got));
  }
}

/// Dot product with 32 independent partial sums (four chains of eight)
/// combined in a fixed order; vectorizes without reassociation flags and
/// stays deterministic.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[4][8] = {};
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t l = 0; l < 8; ++l) acc[c][l] += a[i + 8 * c + l] * b[i + 8 * c + l];
    }
  }
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[0][l] += a[i + l] * b[i + l];
  }
  for (; i < n; ++i) acc[0][0] += a[i] * b[i];
  T lane[8];
  for (std::size_t l = 0; l < 8; ++l) lane[l] = (acc[0][l] + acc[1][l]) + (acc[2][l] + acc[3][l]);
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

/// Flushes subnormal results and inputs to zero on the calling thread while
/// alive. A nearly converged network produces subnormal gradients, which
/// are very slow on x86. No-op elsewhere.
class FlushDenormals {
 public:
#ifdef JIGSAW_HAS_MXCSR
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~FlushDenormals() { _mm_setcsr(saved_); }
#endif
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
#ifdef JIGSAW_HAS_MXCSR
  unsigned saved_;
#endif
};

template <typename T>
void axpy(T alpha, const T* __restrict x, T* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

/// k x k convolution, stride 1, zero "same" padding, over an H x W x Cin
/// input stored [y][x][c]. Weights are [ky][kx][cin][cout].
template <typename T>
struct Conv2d {
  std::size_t kernel = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  LayerParams<T> params;

  Conv2d() = default;
  Conv2d(std::string name, std::size_t k, std::size_t cin, std::size_t cout)
      : kernel(k), in_channels(cin), out_channels(cout), params(std::move(name), {k, k, cin, cout}, cout) {
    if (k % 2 == 0) throw Error(ErrorCode::InvalidConfig, "convolution kernel size must be odd");
  }

  std::size_t fan_in() const { return kernel * kernel * in_channels; }

  static constexpr std::size_t kLanes = 8;

  /// Kernel taps [first, last) that land inside [0, n) for output position `pos`.
  std::pair<std::size_t, std::size_t> tap_range(std::size_t pos, std::size_t n) const {
    const std::size_t pad = kernel / 2;
    const std::size_t first = pos < pad ? pad - pos : 0;
    const std::size_t last = std::min(kernel, n + pad - pos);
    return {first, last};
  }

  void forward(std::span<const T> input, std::size_t height, std::size_t width, std::span<T> output) const {
    detail::check_size(input.size(), height * width * in_channels, "conv2d input");
    detail::check_size(output.size(), height * width * out_channels, "conv2d output");
    const T* wts = params.weights.values.data();
    const T* bias = params.bias.values.data();
    const std::size_t co_n = out_channels;
    for (std::size_t y = 0; y < height; ++y) {
      const auto [ky0, ky1] = tap_range(y, height);
      for (std::size_t x = 0; x < width; ++x) {
        const auto [kx0, kx1] = tap_range(x, width);
        T* out = &output[(y * width + x) * co_n];
        for (std::size_t c0 = 0; c0 < co_n; c0 += kLanes) {
          const std::size_t lanes = std::min(kLanes, co_n - c0);
          // Four accumulator chains over input channels (ci mod 4), summed
          // in a fixed order at the end.
          T acc[4][kLanes] = {};
          for (std::size_t ky = ky0; ky < ky1; ++ky) {
            const std::size_t iy = y + ky - kernel / 2;
            for (std::size_t kx = kx0; kx < kx1; ++kx) {
              const std::size_t ix = x + kx - kernel / 2;
              const T* in = &input[(iy * width + ix) * in_channels];
              const T* wk = wts + (ky * kernel + kx) * in_channels * co_n + c0;
              if (lanes == kLanes) {
                std::size_t ci = 0;
                for (; ci + 4 <= in_channels; ci += 4) {
                  for (std::size_t a = 0; a < 4; ++a) {
                    const T v = in[ci + a];
                    const T* wr = wk + (ci + a) * co_n;
                    for (std::size_t l = 0; l < kLanes; ++l) acc[a][l] += v * wr[l];
                  }
                }
                for (; ci < in_channels; ++ci) {
                  const T v = in[ci];
                  const T* wr = wk + ci * co_n;
                  for (std::size_t l = 0; l < kLanes; ++l) acc[0][l] += v * wr[l];
                }
              } else {
                for (std::size_t ci = 0; ci < in_channels; ++ci) {
                  for (std::size_t l = 0; l < lanes; ++l) acc[0][l] += in[ci] * wk[ci * co_n + l];
                }
              }
            }
          }
          for (std::size_t l = 0; l < lanes; ++l) {
            out[c0 + l] = bias[c0 + l] + ((acc[0][l] + acc[1][l]) + (acc[2][l] + acc[3][l]));
          }
        }
      }
    }
  }

  /// Accumulates weight/bias gradients; writes the input gradient only when
  /// `grad_input` is non-empty.
  void backward(std::span<const T> input, std::size_t height, std::size_t width, std::span<const T> grad_output,
                std::span<T> grad_input = {}) {
    detail::check_size(input.size(), height * width * in_channels, "conv2d input");
    detail::check_size(grad_output.size(), height * width * out_channels, "conv2d upstream gradient");
    const std::size_t co_n = out_channels;
    T* gb = params.grad_bias.values.data();
    for (std::size_t p = 0; p < height * width; ++p) {
      for (std::size_t co = 0; co < co_n; ++co) gb[co] += grad_output[p * co_n + co];
    }

    T* gw = params.grad_weights.values.data();
    const std::size_t pad = kernel / 2;
    for (std::size_t y = 0; y < height; ++y) {
      const auto [ky0, ky1] = tap_range(y, height);
      for (std::size_t x = 0; x < width; ++x) {
        const auto [kx0, kx1] = tap_range(x, width);
        const T* g = &grad_output[(y * width + x) * co_n];
        for (std::size_t ky = ky0; ky < ky1; ++ky) {
          for (std::size_t kx = kx0; kx < kx1; ++kx) {
            const T* in = &input[((y + ky - pad) * width + x + kx - pad) * in_channels];
            T* gwk = gw + (ky * kernel + kx) * in_channels * co_n;
            for (std::size_t ci = 0; ci < in_channels; ++ci) {
              const T v = in[ci];
              if (v == T(0)) continue;
              detail::axpy(v, g, gwk + ci * co_n, co_n);
            }
          }
        }
      }
    }

    if (grad_input.empty()) return;
    detail::check_size(grad_input.size(), input.size(), "conv2d input gradient");
    std::fill(grad_input.begin(), grad_input.end(), T(0));
    const T* wts = params.weights.values.data();
    for (std::size_t y = 0; y < height; ++y) {
      const auto [ky0, ky1] = tap_range(y, height);
      for (std::size_t x = 0; x < width; ++x) {
        const auto [kx0, kx1] = tap_range(x, width);
        const T* g = &grad_output[(y * width + x) * co_n];
        for (std::size_t ky = ky0; ky < ky1; ++ky) {
          for (std::size_t kx = kx0; kx < kx1; ++kx) {
            T* gin = &grad_input[((y + ky - pad) * width + x + kx - pad) * in_channels];
            const T* wk = wts + (ky * kernel + kx) * in_channels * co_n;
            for (std::size_t ci = 0; ci < in_channels; ++ci) gin[ci] += detail::dot(wk + ci * co_n, g, co_n);
          }
        }
      }
    }
  }

  template <typename U>
  Conv2d<U> cast() const {
    Conv2d<U> out;
    out.kernel = kernel;
    out.in_channels = in_channels;
    out.out_channels = out_channels;
    out.params = params.template cast<U>();
    return out;
  }
};

/// Fully connected layer: out = W^T x + b with W stored [in][out].
template <typename T>
struct Dense {
  std::size_t inputs = 1;
  std::size_t outputs = 1;
  LayerParams<T> params;

  Dense() = default;
  Dense(std::string name, std::size_t n_in, std::size_t n_out)
      : inputs(n_in), outputs(n_out), params(std::move(name), {n_in, n_out}, n_out) {}

  std::size_t fan_in() const { return inputs; }

  void forward(std::span<const T> input, std::span<T> output) const {
    detail::check_size(input.size(), inputs, "dense input");
    detail::check_size(output.size(), outputs, "dense output");
    const T* in = input.data();
    T* out = output.data();
    forward_batch(std::span<const T* const>(&in, 1), std::span<T* const>(&out, 1));
  }

  void backward(std::span<const T> input, std::span<const T> grad_output, std::span<T> grad_input = {}) {
    detail::check_size(input.size(), inputs, "dense input");
    detail::check_size(grad_output.size(), outputs, "dense upstream gradient");
    if (!grad_input.empty()) detail::check_size(grad_input.size(), inputs, "dense input gradient");
    const T* in = input.data();
    const T* g = grad_output.data();
    T* gin = grad_input.data();
    backward_batch(std::span<const T* const>(&in, 1), std::span<const T* const>(&g, 1),
                   grad_input.empty() ? std::span<T* const>() : std::span<T* const>(&gin, 1));
  }

  /// Forward over several samples at once (each pointer addresses `inputs`
  /// or `outputs` values). Walks the weights row by row so each row is read
  /// once per batch; per-sample results equal forward().
  void forward_batch(std::span<const T* const> input, std::span<T* const> output) const {
    if (input.size() != output.size()) throw Error(ErrorCode::ShapeMismatch, "dense batch sizes differ");
    const T* bias = params.bias.values.data();
    for (auto* out : output) std::copy_n(bias, outputs, out);
    const T* wts = params.weights.values.data();
    for (std::size_t i = 0; i < inputs; ++i) {
      const T* row = wts + i * outputs;
      for (std::size_t s = 0; s < input.size(); ++s) {
        const T v = input[s][i];
        if (v != T(0)) detail::axpy(v, row, output[s], outputs);
      }
    }
  }

  /// Batched backward; samples contribute to the parameter gradients in
  /// batch order, matching repeated backward() calls. `grad_input` may be
  /// empty to skip the input gradient. With `relu_input` the inputs are
  /// ReLU outputs and the returned gradient already has the ReLU applied
  /// (zero wherever the input is zero).
  void backward_batch(std::span<const T* const> input, std::span<const T* const> grad_output,
                      std::span<T* const> grad_input = {}, bool relu_input = false) {
    if (input.size() != grad_output.size() || (!grad_input.empty() && grad_input.size() != input.size())) {
      throw Error(ErrorCode::ShapeMismatch, "dense batch sizes differ");
    }
    const T* wts = params.weights.values.data();
    T* gw = params.grad_weights.values.data();
    T* gb = params.grad_bias.values.data();
    for (const auto* g : grad_output) {
      for (std::size_t j = 0; j < outputs; ++j) gb[j] += g[j];
    }
    for (std::size_t i = 0; i < inputs; ++i) {
      const T* row = wts + i * outputs;
      T* grow = gw + i * outputs;
      for (std::size_t s = 0; s < input.size(); ++s) {
        const T v = input[s][i];
        if (v != T(0)) detail::axpy(v, grad_output[s], grow, outputs);
        if (grad_input.empty()) continue;
        grad_input[s][i] = relu_input && v <= T(0) ? T(0) : detail::dot(row, grad_output[s], outputs);
      }
    }
  }

  template <typename U>
  Dense<U> cast() const {
    Dense<U> out;
    out.inputs = inputs;
    out.outputs = outputs;
    out.params = params.template cast<U>();
    return out;
  }
};

/// Max pooling over H x W x C. With `same` the window is centered and the
/// output keeps the input size (stride must be 1); otherwise windows start at
/// multiples of the stride and the output is ceil(H / stride). Cells past the
/// input edge are ignored (treated as -inf).
struct MaxPool2d {
  std::size_t window = 2;
  std::size_t stride = 2;
  bool same = false;

  static MaxPool2d halving() { return {2, 2, false}; }
  static MaxPool2d same_size(std::size_t window) { return {window, 1, true}; }

  std::size_t output_size(std::size_t n) const { return same ? n : (n + stride - 1) / stride; }

  /// `argmax` receives, per output value, the flat input index that won; ties
  /// go to the first cell in row-major scan order.
  template <typename T>
  void forward(std::span<const T> input, std::size_t height, std::size_t width, std::size_t channels,
               std::span<T> output, std::span<std::size_t> argmax) const {
    const auto oh = output_size(height), ow = output_size(width);
    detail::check_size(input.size(), height * width * channels, "maxpool input");
    detail::check_size(output.size(), oh * ow * channels, "maxpool output");
    detail::check_size(argmax.size(), output.size(), "maxpool argmax");
    const auto offset = same ? static_cast<std::ptrdiff_t>((window - 1) / 2) : std::ptrdiff_t{0};
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        for (std::size_t c = 0; c < channels; ++c) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_index = 0;
          bool found = false;
          for (std::size_t wy = 0; wy < window; ++wy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + wy) - offset;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
            for (std::size_t wx = 0; wx < window; ++wx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride + wx) - offset;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
              const auto idx = (static_cast<std::size_t>(iy) * width + static_cast<std::size_t>(ix)) * channels + c;
              if (!found || input[idx] > best) {
                best = input[idx];
                best_index = idx;
                found = true;
              }
            }
          }
          const auto o = (oy * ow + ox) * channels + c;
          output[o] = best;
          argmax[o] = best_index;
        }
      }
    }
  }

  template <typename T>
  static void backward(std::span<const T> grad_output, std::span<const std::size_t> argmax, std::span<T> grad_input) {
    detail::check_size(argmax.size(), grad_output.size(), "maxpool argmax");
    std::fill(grad_input.begin(), grad_input.end(), T(0));
    for (std::size_t o = 0; o < grad_output.size(); ++o) grad_input[argmax[o]] += grad_output[o];
  }
};

template <typename T>
void relu_forward(std::span<T> values) {
  for (auto& v : values) v = v > T(0) ? v : T(0);
}

/// Masks `grad` in place where the ReLU output was not positive.
template <typename T>
void relu_backward(std::span<const T> output, std::span<T> grad) {
  detail::check_size(grad.size(), output.size(), "relu gradient");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(output[i] > T(0))) grad[i] = T(0);
  }
}

/// Max-subtracted softmax.
template <typename T>
void softmax(std::span<const T> logits, std::span<T> probs) {
  detail::check_size(probs.size(), logits.size(), "softmax output");
  const T max = *std::max_element(logits.begin(), logits.end());
  T sum = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - max);
    sum += probs[i];
  }
  for (auto& p : probs) p /= sum;
}

/// Softmax followed by -ln p[label]; `label` is 1-based. Fills the
/// probabilities and, when `grad_logits` is non-empty, probs - onehot.
template <typename T>
T softmax_cross_entropy(std::span<const T> logits, int label, std::span<T> probs, std::span<T> grad_logits = {}) {
  if (label < 1 || label > static_cast<int>(logits.size())) {
    throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label));
  }
  softmax(logits, probs);
  const T max = *std::max_element(logits.begin(), logits.end());
  T sum = T(0);
  for (auto z : logits) sum += std::exp(z - max);
  const auto k = static_cast<std::size_t>(label - 1);
  const T loss = std::log(sum) - (logits[k] - max);
  if (!grad_logits.empty()) {
    detail::check_size(grad_logits.size(), logits.size(), "logit gradient");
    std::copy(probs.begin(), probs.end(), grad_logits.begin());
    grad_logits[k] -= T(1);
  }
  return loss;
}

enum class OptimizerKind { sgd, adam };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct OptimizerState {
  OptimizerSettings settings;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;  // one entry per weight/bias tensor, in layer order
  std::vector<std::vector<T>> v;

  OptimizerState() = default;
  explicit OptimizerState(OptimizerSettings s) : settings(s) {}

  /// Applies one update to every layer. Throws NonFiniteGradient, leaving all
  /// parameters untouched, if any gradient is NaN or infinite.
  void apply(std::span<LayerParams<T>* const> layers) {
    for (const auto* layer : layers) {
      for (const auto* g : {&layer->grad_weights, &layer->grad_bias}) {
        for (auto x : g->values) {
          if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteGradient, "layer '" + layer->name + "'");
        }
      }
    }
    ++step;
    const T lr = static_cast<T>(settings.learning_rate);
    if (settings.kind == OptimizerKind::sgd) {
      for (auto* layer : layers) {
        for (auto [p, g] : {std::pair{&layer->weights, &layer->grad_weights}, std::pair{&layer->bias, &layer->grad_bias}}) {
          for (std::size_t i = 0; i < p->size(); ++i) p->values[i] -= lr * g->values[i];
        }
      }
      return;
    }

    if (m.empty()) {
      for (const auto* layer : layers) {
        for (const auto* p : {&layer->weights, &layer->bias}) {
          m.emplace_back(p->size(), T(0));
          v.emplace_back(p->size(), T(0));
        }
      }
    }
    if (m.size() != 2 * layers.size()) throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match layers");
    const T b1 = static_cast<T>(settings.beta1), b2 = static_cast<T>(settings.beta2);
    const T eps = static_cast<T>(settings.epsilon);
    const T c1 = static_cast<T>(1.0 - std::pow(settings.beta1, static_cast<double>(step)));
    const T c2 = static_cast<T>(1.0 - std::pow(settings.beta2, static_cast<double>(step)));
    std::size_t slot = 0;
    for (auto* layer : layers) {
      for (auto [p, g] : {std::pair{&layer->weights, &layer->grad_weights}, std::pair{&layer->bias, &layer->grad_bias}}) {
        auto& mm = m[slot];
        auto& vv = v[slot];
        ++slot;
        if (mm.size() != p->size()) throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match layers");
        for (std::size_t i = 0; i < p->size(); ++i) {
          const T gi = g->values[i];
          mm[i] = b1 * mm[i] + (T(1) - b1) * gi;
          vv[i] = b2 * vv[i] + (T(1) - b2) * gi * gi;
          const T m_hat = mm[i] / c1;
          const T v_hat = vv[i] / c2;
          p->values[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
      }
    }
  }
};

/// |a - n| / max(|a|, |n|, 1e-12)
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
}

/// Compares `analytic[i]` against the central difference
/// (loss(x + h) - loss(x - h)) / 2h obtained by perturbing `values[i]` in
/// place. Returns the worst relative error; does not judge it.
template <typename Loss>
double grad_check(std::span<double> values, std::span<const double> analytic, Loss&& loss, double h = 1e-5) {
  detail::check_size(analytic.size(), values.size(), "grad_check analytic gradient");
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss();
    values[i] = saved - h;
    const double down = loss();
    values[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

}  // namespace jigsaw::nn
