#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "jigsaw/class_scheme.hpp"
#include "jigsaw/dataset.hpp"
#include "jigsaw/detail/text.hpp"
#include "jigsaw/error.hpp"
#include "jigsaw/jigsaw_model.hpp"
#include "jigsaw/random.hpp"
#include "jigsaw/tensor_nn.hpp"

namespace jigsaw {

enum class Precision { f32, f64 };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  nn::OptimizerSettings optimizer;
  bool augment = true;
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  /// 1 = single sequence. More workers split each batch into contiguous
  /// chunks whose gradients are summed in worker order, so results are
  /// reproducible for a fixed worker count but differ between counts.
  std::size_t workers = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;      // mean over the epoch's samples
  double accuracy = 0.0;  // fraction predicted correctly before each step

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

using History = std::vector<EpochStats>;
using EpochCallback = std::function<void(const EpochStats&)>;

inline std::string history_to_text(const History& history) {
  std::ostringstream out;
  out << "epoch,loss,accuracy\n";
  for (const auto& e : history) {
    out << e.epoch << "," << detail::format_double(e.loss) << "," << detail::format_double(e.accuracy) << "\n";
  }
  return out.str();
}

namespace detail {

struct BatchResult {
  double loss = 0.0;
  std::size_t correct = 0;
};

// Per-worker scratch: activation buffers and augmented tile copies.
template <typename T>
struct Workspace {
  std::vector<Activations<T>> acts;
  std::vector<Tile> augmented;
  std::vector<const Tile*> batch;
};

template <typename T>
BatchResult run_samples(Model<T>& model, Workspace<T>& ws, const std::vector<Tile>& tiles,
                        std::span<const std::pair<std::uint32_t, std::uint8_t>> items) {
  BatchResult r;
  if (items.empty()) return r;
  while (ws.acts.size() < items.size()) ws.acts.emplace_back(model.config);
  ws.augmented.resize(std::max(ws.augmented.size(), items.size()));
  ws.batch.clear();
  for (std::size_t s = 0; s < items.size(); ++s) {
    const auto [index, variant] = items[s];
    if (variant == 0) {
      ws.batch.push_back(&tiles[index]);
    } else {
      ws.augmented[s] = augment_variant(tiles[index], variant);
      ws.batch.push_back(&ws.augmented[s]);
    }
  }
  const auto losses = accumulate_batch_gradients(model, std::span<const Tile* const>(ws.batch),
                                                 std::span<Activations<T>>(ws.acts));
  for (std::size_t s = 0; s < items.size(); ++s) {
    r.loss += static_cast<double>(losses[s]);
    r.correct += argmax_class<T>(ws.acts[s].probs) == ws.batch[s]->label;
  }
  return r;
}

template <typename T>
History train_impl(Model<T>& model, const std::vector<Tile>& tiles, const TrainConfig& config,
                   const EpochCallback& on_epoch) {
  const nn::detail::FlushDenormals flush;
  const std::size_t variants = config.augment ? 8 : 1;
  std::vector<std::pair<std::uint32_t, std::uint8_t>> order;
  order.reserve(tiles.size() * variants);

  const std::size_t workers = std::max<std::size_t>(1, config.workers);
  std::vector<Model<T>> replicas(workers - 1, model);
  std::vector<Workspace<T>> acts(workers);

  nn::OptimizerState<T> optimizer(config.optimizer);
  Rng rng(config.seed);
  History history;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    order.clear();
    for (std::uint32_t i = 0; i < tiles.size(); ++i) {
      for (std::size_t v = 0; v < variants; ++v) order.emplace_back(i, static_cast<std::uint8_t>(v));
    }
    rng.shuffle(std::span(order));

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const auto batch = std::span(order).subspan(start, std::min(config.batch_size, order.size() - start));
      model.zero_grad();

      BatchResult total;
      if (workers == 1) {
        total = run_samples(model, acts[0], tiles, batch);
      } else {
        const auto chunk = (batch.size() + workers - 1) / workers;
        std::vector<BatchResult> results(workers);
        std::vector<std::thread> threads;
        for (std::size_t w = 1; w < workers; ++w) {
          auto& replica = replicas[w - 1];
          for (std::size_t l = 0; l < replica.layers().size(); ++l) {
            replica.layers()[l]->weights = model.layers()[l]->weights;
            replica.layers()[l]->bias = model.layers()[l]->bias;
          }
          replica.zero_grad();
          const auto begin = std::min(batch.size(), w * chunk);
          const auto part = batch.subspan(begin, std::min(chunk, batch.size() - begin));
          threads.emplace_back([&, w, part] {
            const nn::detail::FlushDenormals worker_flush;
            results[w] = run_samples(replicas[w - 1], acts[w], tiles, part);
          });
        }
        results[0] = run_samples(model, acts[0], tiles, batch.first(std::min(chunk, batch.size())));
        for (auto& t : threads) t.join();
        for (std::size_t w = 0; w < workers; ++w) {
          total.loss += results[w].loss;
          total.correct += results[w].correct;
          if (w == 0) continue;
          auto dst = model.layers();
          auto src = replicas[w - 1].layers();
          for (std::size_t l = 0; l < dst.size(); ++l) {
            for (std::size_t i = 0; i < dst[l]->grad_weights.size(); ++i) {
              dst[l]->grad_weights.values[i] += src[l]->grad_weights.values[i];
            }
            for (std::size_t i = 0; i < dst[l]->grad_bias.size(); ++i) {
              dst[l]->grad_bias.values[i] += src[l]->grad_bias.values[i];
            }
          }
        }
      }

      if (!std::isfinite(total.loss)) {
        throw Error(ErrorCode::NonFiniteLoss,
                    "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index + 1));
      }
      const T scale = T(1) / static_cast<T>(batch.size());
      for (auto* layer : model.layers()) {
        for (auto& g : layer->grad_weights.values) g *= scale;
        for (auto& g : layer->grad_bias.values) g *= scale;
      }
      const auto layers = model.layers();
      optimizer.apply(layers);
      loss_sum += total.loss;
      correct += total.correct;
    }

    const auto n = static_cast<double>(order.size());
    history.push_back({epoch, loss_sum / n, static_cast<double>(correct) / n});
    if (on_epoch) on_epoch(history.back());
  }
  return history;
}

inline void check_train_inputs(const std::vector<Tile>& tiles, const TrainConfig& config) {
  if (config.epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be at least 1");
  if (config.batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be at least 1");
  if (tiles.empty()) throw Error(ErrorCode::EmptyDataset, "no training tiles");
}

}  // namespace detail

/// Mini-batch training: each epoch shuffles every (tile, dihedral variant)
/// pair, then for each batch runs forward, softmax cross-entropy and backward
/// per sample, averages the gradients and takes one optimizer step.
template <typename T>
History train(Model<T>& model, const std::vector<Tile>& tiles, const TrainConfig& config,
              const EpochCallback& on_epoch = {}) {
  detail::check_train_inputs(tiles, config);
  return detail::train_impl(model, tiles, config, on_epoch);
}

/// Float model entry point honoring `config.precision`.
inline History train(Model<float>& model, const std::vector<Tile>& tiles, const TrainConfig& config,
                     const EpochCallback& on_epoch = {}) {
  detail::check_train_inputs(tiles, config);
  if (config.precision == Precision::f32) return detail::train_impl(model, tiles, config, on_epoch);
  auto wide = model.cast<double>();
  auto history = detail::train_impl(wide, tiles, config, on_epoch);
  model = wide.cast<float>();
  return history;
}

/// counts[predicted][actual], class ids 1..7.
class ConfusionMatrix {
 public:
  void add(std::uint8_t predicted, std::uint8_t actual, std::uint64_t n = 1) {
    check(predicted);
    check(actual);
    counts_[predicted - 1][actual - 1] += n;
  }

  std::uint64_t count(std::uint8_t predicted, std::uint8_t actual) const {
    check(predicted);
    check(actual);
    return counts_[predicted - 1][actual - 1];
  }

  std::uint64_t column_total(std::uint8_t actual) const {
    std::uint64_t n = 0;
    for (std::uint8_t p = 1; p <= kNumClasses; ++p) n += count(p, actual);
    return n;
  }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts_) {
      for (auto v : row) n += v;
    }
    return n;
  }

  /// Share of actual class `actual` predicted as `predicted`, in percent;
  /// empty when no sample of `actual` was seen.
  std::optional<double> percent(std::uint8_t predicted, std::uint8_t actual) const {
    const auto col = column_total(actual);
    if (col == 0) return std::nullopt;
    return 100.0 * static_cast<double>(count(predicted, actual)) / static_cast<double>(col);
  }

  std::optional<double> class_accuracy(std::uint8_t c) const {
    auto p = percent(c, c);
    if (!p) return std::nullopt;
    return *p / 100.0;
  }

  /// trace / total, 0 for an empty matrix.
  double overall_accuracy() const {
    const auto n = total();
    if (n == 0) return 0.0;
    std::uint64_t diag = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) diag += counts_[c][c];
    return static_cast<double>(diag) / static_cast<double>(n);
  }

  /// Mean of the per-class accuracies over classes that occur.
  std::optional<double> mean_class_accuracy() const {
    double sum = 0.0;
    int present = 0;
    for (std::uint8_t c = 1; c <= kNumClasses; ++c) {
      if (auto a = class_accuracy(c)) {
        sum += *a;
        ++present;
      }
    }
    if (present == 0) return std::nullopt;
    return sum / present;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    for (std::size_t p = 0; p < kNumClasses; ++p) {
      for (std::size_t a = 0; a < kNumClasses; ++a) counts_[p][a] += other.counts_[p][a];
    }
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  static void check(std::uint8_t c) {
    if (c < 1 || c > kNumClasses) throw Error(ErrorCode::LabelOutOfRange, "class id " + std::to_string(c));
  }

  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts_{};
};

/// Classifies every tile against its label. Workers classify contiguous
/// chunks and their matrices are added together.
template <typename T>
ConfusionMatrix evaluate(const Model<T>& model, const std::vector<Tile>& tiles, std::size_t workers = 1) {
  if (tiles.empty()) throw Error(ErrorCode::EmptyDataset, "no test tiles");
  workers = std::clamp<std::size_t>(workers, 1, tiles.size());
  std::vector<ConfusionMatrix> partial(workers);
  const auto chunk = (tiles.size() + workers - 1) / workers;
  const auto work = [&](std::size_t w) {
    constexpr std::size_t kBatch = 32;
    std::vector<Activations<T>> acts;
    std::vector<const Tile*> batch;
    const auto end = std::min(tiles.size(), (w + 1) * chunk);
    for (std::size_t i = w * chunk; i < end; i += kBatch) {
      batch.clear();
      for (std::size_t j = i; j < std::min(end, i + kBatch); ++j) batch.push_back(&tiles[j]);
      while (acts.size() < batch.size()) acts.emplace_back(model.config);
      const auto ids = predict_batch<T>(model, batch, acts);
      for (std::size_t j = 0; j < batch.size(); ++j) partial[w].add(ids[j], batch[j]->label);
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(work, w);
  work(0);
  for (auto& t : threads) t.join();
  ConfusionMatrix total;
  for (const auto& p : partial) total += p;
  return total;
}

namespace detail {

inline std::string percent_cell(std::optional<double> v) {
  return v ? format_fixed(*v, 1) + "%" : std::string("n/a");
}

}  // namespace detail

/// Text table: predicted classes as rows, actual classes as columns, each
/// column normalized to 100%, followed by overall and mean per-class
/// accuracy.
inline std::string report(const ConfusionMatrix& m, const ClassScheme& scheme) {
  std::size_t label_width = std::string("Predicted").size();
  for (const auto& e : scheme.entries()) label_width = std::max(label_width, e.name.size());
  label_width += 2;
  std::vector<std::size_t> widths;
  for (const auto& e : scheme.entries()) widths.push_back(std::max<std::size_t>(e.name.size(), 6) + 2);

  std::ostringstream out;
  out << detail::pad_right("", label_width) << "Actual value\n";
  out << detail::pad_right("Predicted", label_width);
  for (std::size_t a = 0; a < widths.size(); ++a) out << detail::pad_left(scheme.entries()[a].name, widths[a]);
  out << "\n";
  for (std::uint8_t p = 1; p <= kNumClasses; ++p) {
    out << detail::pad_right(scheme.name(p), label_width);
    for (std::uint8_t a = 1; a <= kNumClasses; ++a) {
      out << detail::pad_left(detail::percent_cell(m.percent(p, a)), widths[a - 1]);
    }
    out << "\n";
  }
  out << "\nSamples: " << m.total() << "\n";
  out << "Overall accuracy: " << detail::format_fixed(100.0 * m.overall_accuracy(), 1) << "%\n";
  const auto mean = m.mean_class_accuracy();
  out << "Mean per-class accuracy: " << (mean ? detail::format_fixed(100.0 * *mean, 1) + "%" : "n/a") << "\n";
  return out.str();
}

/// `pred,actual,count` rows for every cell, predicted-major.
inline std::string confusion_to_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "pred,actual,count\n";
  for (std::uint8_t p = 1; p <= kNumClasses; ++p) {
    for (std::uint8_t a = 1; a <= kNumClasses; ++a) out << int(p) << "," << int(a) << "," << m.count(p, a) << "\n";
  }
  return out.str();
}

}  // namespace jigsaw
