#pragma once

// The Jigsaw network. A 17x17xB tile flows through two parallel blocks:
//
//   Block A  conv 3x3 -> ReLU  |  conv 5x5 -> ReLU  |  conv 7x7 -> ReLU  |
//            maxpool 3x3 (stride 1, same) -> conv 1x1 -> ReLU
//            concatenated channel-wise, then flattened to one vector.
//   Block B  center-pixel spectrum -> dense -> ReLU -> dense -> ReLU
//   Block C  [A, B] -> dense -> ReLU -> dense(7) -> softmax
//
// Counting input, activations, pooling, concatenations and flatten as layers
// the default graph has 21 of them.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "jigsaw/class_scheme.hpp"
#include "jigsaw/dataset.hpp"
#include "jigsaw/detail/binary.hpp"
#include "jigsaw/error.hpp"
#include "jigsaw/random.hpp"
#include "jigsaw/raster_io.hpp"
#include "jigsaw/tensor_nn.hpp"

namespace jigsaw {

struct JigsawConfig {
  std::size_t tile_size = kTileSize;
  std::size_t input_bands = 12;
  std::size_t classes = kNumClasses;
  /// Output channels of the k=3, k=5, k=7 and pooled branches of Block A.
  std::array<std::size_t, 4> conv_channels{8, 8, 8, 8};
  std::array<std::size_t, 2> dense_widths{32, 32};
  std::size_t fusion_width = 128;
  std::uint64_t seed = 0;

  static constexpr std::array<std::size_t, 3> kKernels{3, 5, 7};
  static constexpr std::size_t kPoolWindow = 3;

  void validate() const {
    const auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
    if (tile_size % 2 == 0) fail("tile_size must be odd");
    if (input_bands < 1) fail("input_bands must be at least 1");
    if (classes != kNumClasses) fail("classes must be 7");
    for (auto c : conv_channels) {
      if (c < 1) fail("conv channels must be at least 1");
    }
    for (auto w : dense_widths) {
      if (w < 1) fail("dense widths must be at least 1");
    }
    if (fusion_width < 1) fail("fusion_width must be at least 1");
  }

  std::size_t block_a_channels() const {
    return conv_channels[0] + conv_channels[1] + conv_channels[2] + conv_channels[3];
  }
  std::size_t block_a_length() const { return tile_size * tile_size * block_a_channels(); }
  std::size_t fusion_inputs() const { return block_a_length() + dense_widths[1]; }

  /// sum over k in {3,5,7} of (k^2 B c_k + c_k) + (B c_p + c_p)
  /// + (B d1 + d1) + (d1 d2 + d2) + (F_in f + f) + (f 7 + 7)
  std::size_t parameter_count() const {
    const auto b = input_bands;
    std::size_t n = 0;
    for (std::size_t i = 0; i < 3; ++i) n += kKernels[i] * kKernels[i] * b * conv_channels[i] + conv_channels[i];
    n += b * conv_channels[3] + conv_channels[3];
    n += b * dense_widths[0] + dense_widths[0];
    n += dense_widths[0] * dense_widths[1] + dense_widths[1];
    n += fusion_inputs() * fusion_width + fusion_width;
    n += fusion_width * classes + classes;
    return n;
  }

  friend bool operator==(const JigsawConfig&, const JigsawConfig&) = default;
};

template <typename T>
struct Model {
  JigsawConfig config;
  std::array<nn::Conv2d<T>, 3> convs;  // k = 3, 5, 7
  nn::Conv2d<T> pool_projection;       // 1x1 after max pooling
  nn::Dense<T> pixel_hidden;
  nn::Dense<T> pixel_out;
  nn::Dense<T> fusion;
  nn::Dense<T> classifier;

  /// Parameterized layers in build (and serialization) order.
  std::vector<nn::LayerParams<T>*> layers() {
    return {&convs[0].params,       &convs[1].params,  &convs[2].params, &pool_projection.params,
            &pixel_hidden.params,   &pixel_out.params, &fusion.params,   &classifier.params};
  }
  std::vector<const nn::LayerParams<T>*> layers() const {
    return {&convs[0].params,       &convs[1].params,  &convs[2].params, &pool_projection.params,
            &pixel_hidden.params,   &pixel_out.params, &fusion.params,   &classifier.params};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* l : layers()) n += l->parameter_count();
    return n;
  }

  void zero_grad() {
    for (auto* l : layers()) l->zero_grad();
  }

  template <typename U>
  Model<U> cast() const {
    Model<U> out;
    out.config = config;
    for (std::size_t i = 0; i < 3; ++i) out.convs[i] = convs[i].template cast<U>();
    out.pool_projection = pool_projection.template cast<U>();
    out.pixel_hidden = pixel_hidden.template cast<U>();
    out.pixel_out = pixel_out.template cast<U>();
    out.fusion = fusion.template cast<U>();
    out.classifier = classifier.template cast<U>();
    return out;
  }
};

namespace detail {

template <typename T>
Model<T> make_layers(const JigsawConfig& config) {
  config.validate();
  Model<T> m;
  m.config = config;
  const auto b = config.input_bands;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto k = JigsawConfig::kKernels[i];
    m.convs[i] = nn::Conv2d<T>("conv" + std::to_string(k) + "x" + std::to_string(k), k, b, config.conv_channels[i]);
  }
  m.pool_projection = nn::Conv2d<T>("pool_conv1x1", 1, b, config.conv_channels[3]);
  m.pixel_hidden = nn::Dense<T>("pixel_dense1", b, config.dense_widths[0]);
  m.pixel_out = nn::Dense<T>("pixel_dense2", config.dense_widths[0], config.dense_widths[1]);
  m.fusion = nn::Dense<T>("fusion_dense", config.fusion_inputs(), config.fusion_width);
  m.classifier = nn::Dense<T>("classifier", config.fusion_width, config.classes);
  return m;
}

}  // namespace detail

/// Builds a model with He-uniform weights drawn from `config.seed`, layer by
/// layer in build order.
template <typename T = float>
Model<T> build(const JigsawConfig& config) {
  auto m = detail::make_layers<T>(config);
  Rng rng(config.seed);
  for (auto& c : m.convs) c.params.init_uniform(rng, c.fan_in());
  m.pool_projection.params.init_uniform(rng, m.pool_projection.fan_in());
  for (auto* d : {&m.pixel_hidden, &m.pixel_out, &m.fusion, &m.classifier}) d->params.init_uniform(rng, d->fan_in());
  return m;
}

/// Per-sample scratch buffers. One per thread; reused across samples.
template <typename T>
struct Activations {
  std::vector<T> input;                      // tile values, [y][x][band]
  std::array<std::vector<T>, 4> branch;      // post-ReLU branch outputs, [y][x][c]
  std::vector<T> pooled;                     // max-pooled input
  std::vector<std::size_t> pool_argmax;
  std::vector<T> pixel;                      // center-pixel spectrum
  std::vector<T> pixel_hidden;
  std::vector<T> fused;                      // [flattened Block A | Block B output]
  std::vector<T> hidden;
  std::vector<T> logits;
  std::vector<T> probs;

  // gradients
  std::vector<T> grad_logits;
  std::vector<T> grad_hidden;
  std::vector<T> grad_fused;
  std::vector<T> grad_branch;
  std::vector<T> grad_pixel_hidden;

  explicit Activations(const JigsawConfig& c = {}) { resize(c); }

  void resize(const JigsawConfig& c) {
    const auto hw = c.tile_size * c.tile_size;
    input.resize(hw * c.input_bands);
    for (std::size_t i = 0; i < 4; ++i) branch[i].resize(hw * c.conv_channels[i]);
    pooled.resize(hw * c.input_bands);
    pool_argmax.resize(hw * c.input_bands);
    pixel.resize(c.input_bands);
    pixel_hidden.resize(c.dense_widths[0]);
    fused.resize(c.fusion_inputs());
    hidden.resize(c.fusion_width);
    logits.resize(c.classes);
    probs.resize(c.classes);
    grad_logits.resize(c.classes);
    grad_hidden.resize(c.fusion_width);
    grad_fused.resize(c.fusion_inputs());
    grad_branch.resize(hw * *std::max_element(c.conv_channels.begin(), c.conv_channels.end()));
    grad_pixel_hidden.resize(c.dense_widths[0]);
  }

  /// Block B's output vector (the tail of `fused`).
  std::span<const T> block_b(const JigsawConfig& c) const {
    return std::span<const T>(fused).subspan(c.block_a_length());
  }
};

namespace detail {

template <typename T>
void check_tile(const JigsawConfig& c, const Tile& tile) {
  if (tile.size != c.tile_size || tile.bands != c.input_bands || tile.values.size() != c.tile_size * c.tile_size * c.input_bands) {
    throw Error(ErrorCode::ShapeMismatch, "tile is " + std::to_string(tile.size) + "x" + std::to_string(tile.size) +
                                              "x" + std::to_string(tile.bands) + ", model expects " +
                                              std::to_string(c.tile_size) + "x" + std::to_string(c.tile_size) + "x" +
                                              std::to_string(c.input_bands));
  }
}

// Blocks A and B, filling acts.fused.
template <typename T>
void forward_features(const Model<T>& m, const Tile& tile, Activations<T>& acts) {
  const auto& c = m.config;
  check_tile<T>(c, tile);
  const auto n = c.tile_size;
  const auto hw = n * n;
  std::copy(tile.values.begin(), tile.values.end(), acts.input.begin());

  // Block A
  for (std::size_t i = 0; i < 3; ++i) {
    m.convs[i].forward(acts.input, n, n, acts.branch[i]);
    nn::relu_forward(std::span<T>(acts.branch[i]));
  }
  nn::MaxPool2d::same_size(JigsawConfig::kPoolWindow)
      .forward<T>(acts.input, n, n, c.input_bands, acts.pooled, acts.pool_argmax);
  m.pool_projection.forward(acts.pooled, n, n, acts.branch[3]);
  nn::relu_forward(std::span<T>(acts.branch[3]));

  const auto total_channels = c.block_a_channels();
  std::size_t channel_offset = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto ch = c.conv_channels[i];
    for (std::size_t p = 0; p < hw; ++p) {
      std::copy_n(&acts.branch[i][p * ch], ch, &acts.fused[p * total_channels + channel_offset]);
    }
    channel_offset += ch;
  }

  // Block B
  const auto center = (n / 2) * n + n / 2;
  std::copy_n(&acts.input[center * c.input_bands], c.input_bands, acts.pixel.begin());
  m.pixel_hidden.forward(acts.pixel, acts.pixel_hidden);
  nn::relu_forward(std::span<T>(acts.pixel_hidden));
  auto block_b = std::span<T>(acts.fused).subspan(c.block_a_length());
  m.pixel_out.forward(acts.pixel_hidden, block_b);
  nn::relu_forward(block_b);
}

// Block C: the fusion layer for the whole batch, then per-sample heads.
template <typename T>
void forward_fusion(const Model<T>& m, std::span<Activations<T>> acts) {
  std::vector<const T*> in(acts.size());
  std::vector<T*> out(acts.size());
  for (std::size_t s = 0; s < acts.size(); ++s) {
    in[s] = acts[s].fused.data();
    out[s] = acts[s].hidden.data();
  }
  m.fusion.forward_batch(in, out);
  for (auto& a : acts) {
    nn::relu_forward(std::span<T>(a.hidden));
    m.classifier.forward(a.hidden, a.logits);
    nn::softmax<T>(a.logits, a.probs);
  }
}

template <typename T>
void backward_features(Model<T>& m, Activations<T>& acts) {
  const auto& c = m.config;
  // grad_fused arrives with the ReLU of `fused` already applied.

  // Block B
  const auto grad_b = std::span<const T>(acts.grad_fused).subspan(c.block_a_length());
  m.pixel_out.backward(acts.pixel_hidden, grad_b, acts.grad_pixel_hidden);
  nn::relu_backward<T>(acts.pixel_hidden, acts.grad_pixel_hidden);
  m.pixel_hidden.backward(acts.pixel, acts.grad_pixel_hidden);

  // Block A: gather each branch's slice of the flattened gradient.
  const auto n = c.tile_size;
  const auto hw = n * n;
  const auto total_channels = c.block_a_channels();
  std::size_t channel_offset = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto ch = c.conv_channels[i];
    auto grad = std::span<T>(acts.grad_branch).first(hw * ch);
    for (std::size_t p = 0; p < hw; ++p) {
      std::copy_n(&acts.grad_fused[p * total_channels + channel_offset], ch, &grad[p * ch]);
    }
    channel_offset += ch;
    // relu_backward already applied through `fused`, which holds the branch outputs.
    if (i < 3) {
      m.convs[i].backward(acts.input, n, n, grad);
    } else {
      m.pool_projection.backward(acts.pooled, n, n, grad);
    }
  }
}

}  // namespace detail

/// Runs the network on each tile; acts[s].probs holds tile s's class
/// probabilities. Gives the same values as one forward() per tile.
template <typename T>
void forward_batch(const Model<T>& m, std::span<const Tile* const> tiles, std::span<Activations<T>> acts) {
  if (acts.size() < tiles.size()) throw Error(ErrorCode::ShapeMismatch, "fewer activation buffers than tiles");
  acts = acts.first(tiles.size());
  for (std::size_t s = 0; s < tiles.size(); ++s) detail::forward_features(m, *tiles[s], acts[s]);
  detail::forward_fusion(m, acts);
}

/// Runs the network on `tile` and returns the class probabilities (a view
/// into `acts`).
template <typename T>
std::span<const T> forward(const Model<T>& m, const Tile& tile, Activations<T>& acts) {
  const Tile* t = &tile;
  forward_batch(m, std::span<const Tile* const>(&t, 1), std::span<Activations<T>>(&acts, 1));
  return acts.probs;
}

template <typename T>
std::vector<T> forward(const Model<T>& m, const Tile& tile) {
  Activations<T> acts(m.config);
  const auto probs = forward(m, tile, acts);
  return {probs.begin(), probs.end()};
}

/// Forward pass, cross-entropy against each tile's label, and backward pass
/// for a batch. Gradients are added to the model's gradient buffers in tile
/// order; returns the per-tile losses.
template <typename T>
std::vector<T> accumulate_batch_gradients(Model<T>& m, std::span<const Tile* const> tiles,
                                          std::span<Activations<T>> acts) {
  forward_batch(m, tiles, acts);
  acts = acts.first(tiles.size());
  std::vector<T> losses(tiles.size());
  std::vector<const T*> fused(tiles.size()), grad_hidden(tiles.size());
  std::vector<T*> grad_fused(tiles.size());
  for (std::size_t s = 0; s < tiles.size(); ++s) {
    auto& a = acts[s];
    losses[s] = nn::softmax_cross_entropy<T>(a.logits, tiles[s]->label, a.probs, a.grad_logits);
    m.classifier.backward(a.hidden, a.grad_logits, a.grad_hidden);
    nn::relu_backward<T>(a.hidden, a.grad_hidden);
    fused[s] = a.fused.data();
    grad_hidden[s] = a.grad_hidden.data();
    grad_fused[s] = a.grad_fused.data();
  }
  m.fusion.backward_batch(fused, grad_hidden, grad_fused, true);
  for (auto& a : acts) detail::backward_features(m, a);
  return losses;
}

template <typename T>
T accumulate_gradients(Model<T>& m, const Tile& tile, Activations<T>& acts) {
  const Tile* t = &tile;
  return accumulate_batch_gradients(m, std::span<const Tile* const>(&t, 1), std::span<Activations<T>>(&acts, 1))[0];
}

/// Index of the largest probability as a 1-based class id; ties go to the
/// lowest id.
template <typename T>
std::uint8_t argmax_class(std::span<const T> probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return static_cast<std::uint8_t>(best + 1);
}

template <typename T>
std::uint8_t predict(const Model<T>& m, const Tile& tile, Activations<T>& acts) {
  return argmax_class(forward(m, tile, acts));
}

/// Class ids for a batch of tiles; `acts` needs at least one buffer per tile.
template <typename T>
std::vector<std::uint8_t> predict_batch(const Model<T>& m, std::span<const Tile* const> tiles,
                                        std::span<Activations<T>> acts) {
  forward_batch(m, tiles, acts);
  std::vector<std::uint8_t> ids(tiles.size());
  for (std::size_t s = 0; s < tiles.size(); ++s) ids[s] = argmax_class<T>(acts[s].probs);
  return ids;
}

template <typename T>
std::uint8_t predict(const Model<T>& m, const Tile& tile) {
  Activations<T> acts(m.config);
  return predict(m, tile, acts);
}

// Weight files: "JIGW", u32 version, the config as u32 fields plus a u64
// seed, then every layer's weights and bias as f32, all little-endian.

inline constexpr std::uint32_t kWeightFormatVersion = 1;

inline std::vector<char> serialize_weights(const Model<float>& m) {
  std::vector<char> out{'J', 'I', 'G', 'W'};
  detail::put_le<std::uint32_t>(out, kWeightFormatVersion);
  const auto& c = m.config;
  for (auto v : {c.tile_size, c.input_bands, c.classes, c.conv_channels[0], c.conv_channels[1], c.conv_channels[2],
                 c.conv_channels[3], c.dense_widths[0], c.dense_widths[1], c.fusion_width}) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  detail::put_le<std::uint64_t>(out, c.seed);
  for (const auto* layer : m.layers()) {
    for (float w : layer->weights.values) detail::put_le(out, w);
    for (float b : layer->bias.values) detail::put_le(out, b);
  }
  return out;
}

inline Model<float> deserialize_weights(std::span<const char> bytes) {
  constexpr std::size_t kConfigBytes = 10 * 4 + 8;
  if (bytes.size() < 4) throw Error(ErrorCode::TruncatedFile, "weight file shorter than its magic");
  if (std::memcmp(bytes.data(), "JIGW", 4) != 0) throw Error(ErrorCode::BadMagic, "not a Jigsaw weight file");
  if (bytes.size() < 8) throw Error(ErrorCode::TruncatedFile, "weight file ends inside its header");
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kWeightFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, "weight format version " + std::to_string(version) + ", expected " +
                                                std::to_string(kWeightFormatVersion));
  }
  if (bytes.size() < 8 + kConfigBytes) throw Error(ErrorCode::TruncatedFile, "weight file ends inside its config");

  const char* p = bytes.data() + 8;
  const auto next = [&p] {
    const auto v = detail::get_le<std::uint32_t>(p);
    p += 4;
    return static_cast<std::size_t>(v);
  };
  JigsawConfig c;
  c.tile_size = next();
  c.input_bands = next();
  c.classes = next();
  for (auto& ch : c.conv_channels) ch = next();
  for (auto& w : c.dense_widths) w = next();
  c.fusion_width = next();
  c.seed = detail::get_le<std::uint64_t>(p);
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigMismatch, std::string("stored config is invalid: ") + e.what());
  }

  auto m = detail::make_layers<float>(c);
  const std::size_t expected = 8 + kConfigBytes + 4 * c.parameter_count();
  if (bytes.size() < expected) {
    throw Error(ErrorCode::TruncatedFile, "weight file has " + std::to_string(bytes.size()) + " bytes, config needs " +
                                              std::to_string(expected));
  }
  if (bytes.size() > expected) {
    throw Error(ErrorCode::ConfigMismatch, "weight file has " + std::to_string(bytes.size() - expected) +
                                               " bytes beyond what its config describes");
  }
  std::size_t offset = 8 + kConfigBytes;
  for (auto* layer : m.layers()) {
    for (auto* t : {&layer->weights, &layer->bias}) {
      for (auto& v : t->values) {
        v = detail::get_le<float>(bytes.data() + offset);
        offset += 4;
      }
    }
  }
  return m;
}

inline void save_weights(const Model<float>& m, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(m);
  detail::write_file(path, bytes);
}

inline Model<float> load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

/// As load_weights, but also requires the stored config to equal `expected`.
inline Model<float> load_weights(const std::filesystem::path& path, const JigsawConfig& expected) {
  auto m = load_weights(path);
  if (!(m.config == expected)) throw Error(ErrorCode::ConfigMismatch, path.string() + ": stored config differs");
  return m;
}

}  // namespace jigsaw
