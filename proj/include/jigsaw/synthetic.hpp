#pragma once

// Synthetic scenes for testing and demos: a Voronoi layout of the seven
// classes, each class with its own random spectral signature, plus
// multiplicative Gaussian noise.

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <limits>
#include <vector>

#include "jigsaw/class_scheme.hpp"
#include "jigsaw/dataset.hpp"
#include "jigsaw/error.hpp"
#include "jigsaw/random.hpp"
#include "jigsaw/raster_io.hpp"

namespace jigsaw {

struct SyntheticOptions {
  std::size_t width = 128;
  std::size_t height = 128;
  std::size_t bands = 12;
  double relative_noise = 0.05;
  std::size_t regions_per_class = 4;
  std::size_t min_pixels_per_class = 0;
  /// Raw values are reflectance times this (10000 mimics Level-2A digital numbers).
  double scale = 10000.0;
  std::uint64_t seed = 0;
};

using Signatures = std::array<std::vector<double>, kNumClasses>;

/// Per-class reflectance in [0.05, 0.6] for every band, redrawn until every
/// pair of classes differs by at least 0.05 on average.
inline Signatures make_signatures(std::size_t bands, Rng& rng) {
  Signatures s;
  while (true) {
    for (auto& sig : s) {
      sig.resize(bands);
      for (auto& v : sig) v = rng.uniform(0.05, 0.6);
    }
    bool separated = true;
    for (std::size_t a = 0; a < s.size() && separated; ++a) {
      for (std::size_t b = a + 1; b < s.size() && separated; ++b) {
        double d = 0.0;
        for (std::size_t k = 0; k < bands; ++k) d += std::abs(s[a][k] - s[b][k]);
        separated = d / static_cast<double>(bands) >= 0.05;
      }
    }
    if (separated) return s;
  }
}

/// Nearest-center labeling with `regions_per_class` centers per class.
inline AnnotationMask make_layout(const SyntheticOptions& opts, Rng& rng) {
  const auto min_pixels = opts.min_pixels_per_class;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<std::pair<double, double>> centers;
    for (std::size_t i = 0; i < kNumClasses * opts.regions_per_class; ++i) {
      centers.emplace_back(rng.uniform(0.0, static_cast<double>(opts.width)),
                           rng.uniform(0.0, static_cast<double>(opts.height)));
    }
    AnnotationMask mask(opts.width, opts.height);
    std::array<std::size_t, kNumClasses> counts{};
    for (std::size_t y = 0; y < opts.height; ++y) {
      for (std::size_t x = 0; x < opts.width; ++x) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < centers.size(); ++i) {
          const double dx = static_cast<double>(x) + 0.5 - centers[i].first;
          const double dy = static_cast<double>(y) + 0.5 - centers[i].second;
          const double d = dx * dx + dy * dy;
          if (d < best) {
            best = d;
            best_i = i;
          }
        }
        const auto label = static_cast<std::uint8_t>(best_i % kNumClasses + 1);
        mask.at(y, x) = label;
        ++counts[label - 1];
      }
    }
    bool ok = true;
    for (auto n : counts) ok = ok && n >= std::max<std::size_t>(min_pixels, 1);
    if (ok) return mask;
  }
  throw Error(ErrorCode::InvalidArgument, "cannot lay out a synthetic scene with enough pixels per class");
}

/// value = scale * signature[class][band] * (1 + noise * N(0, 1)), floored at 0.
inline Raster render_scene(const LabelGrid& labels, const Signatures& signatures, double relative_noise,
                           double scale, Rng& rng) {
  const auto bands = signatures[0].size();
  Raster r(labels.width, labels.height, bands, labels.pixel_size_m);
  for (std::size_t b = 0; b < bands; ++b) r.band_names.push_back("B" + std::to_string(b + 1));
  for (std::size_t y = 0; y < labels.height; ++y) {
    for (std::size_t x = 0; x < labels.width; ++x) {
      const auto label = labels.at(y, x);
      if (label < 1 || label > kNumClasses) throw Error(ErrorCode::LabelOutOfRange, "synthetic layout label");
      for (std::size_t b = 0; b < bands; ++b) {
        const double v = scale * signatures[label - 1][b] * (1.0 + relative_noise * rng.normal());
        r.at(b, y, x) = static_cast<float>(std::max(0.0, v));
      }
    }
  }
  return r;
}

struct SyntheticScene {
  AnnotationMask truth;
  Signatures signatures;
  Raster raster;  // raw, unnormalized
};

inline SyntheticScene make_synthetic_scene(const SyntheticOptions& opts) {
  Rng rng(opts.seed);
  SyntheticScene scene;
  scene.signatures = make_signatures(opts.bands, rng);
  scene.truth = make_layout(opts, rng);
  scene.raster = render_scene(scene.truth, scene.signatures, opts.relative_noise, opts.scale, rng);
  return scene;
}

/// Grows a 4-connected blob of exactly `pixels` non-target pixels from a
/// random start (breadth-first, neighbours visited left, right, up, down)
/// and relabels it as `target`. Returns the new labels; `blob` receives the
/// flipped coordinates.
inline AnnotationMask flip_blob(const AnnotationMask& truth, std::size_t pixels, std::uint8_t target,
                                std::uint64_t seed, std::vector<Coord>* blob = nullptr) {
  Rng rng(seed);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < truth.labels.size(); ++i) {
    if (truth.labels[i] != target) candidates.push_back(i);
  }
  for (int attempt = 0; attempt < 100 && !candidates.empty(); ++attempt) {
    const auto start = candidates[rng.below(candidates.size())];
    std::vector<char> seen(truth.labels.size(), 0);
    std::vector<std::size_t> chosen;
    std::deque<std::size_t> queue{start};
    seen[start] = 1;
    while (!queue.empty() && chosen.size() < pixels) {
      const auto i = queue.front();
      queue.pop_front();
      chosen.push_back(i);
      const auto x = i % truth.width, y = i / truth.width;
      const auto visit = [&](std::size_t nx, std::size_t ny) {
        const auto j = ny * truth.width + nx;
        if (!seen[j] && truth.labels[j] != target) {
          seen[j] = 1;
          queue.push_back(j);
        }
      };
      if (x > 0) visit(x - 1, y);
      if (x + 1 < truth.width) visit(x + 1, y);
      if (y > 0) visit(x, y - 1);
      if (y + 1 < truth.height) visit(x, y + 1);
    }
    if (chosen.size() < pixels) continue;
    AnnotationMask after = truth;
    if (blob) blob->clear();
    for (auto i : chosen) {
      after.labels[i] = target;
      if (blob) blob->push_back({static_cast<std::int64_t>(i % truth.width), static_cast<std::int64_t>(i / truth.width)});
    }
    return after;
  }
  throw Error(ErrorCode::InvalidArgument, "no connected region large enough for a " + std::to_string(pixels) + "-pixel blob");
}

/// Block mean over factor x factor cells; the inverse direction of
/// upsample_band for making coarse bands. Dimensions must divide evenly.
inline Plane downsample_mean(const Plane& plane, int factor) {
  if (factor < 1) throw Error(ErrorCode::InvalidFactor, "factor " + std::to_string(factor));
  const auto f = static_cast<std::size_t>(factor);
  if (plane.width % f != 0 || plane.height % f != 0) {
    throw Error(ErrorCode::ExtentMismatch, std::to_string(plane.width) + "x" + std::to_string(plane.height) +
                                               " is not a multiple of " + std::to_string(factor));
  }
  Plane out(plane.width / f, plane.height / f);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      double s = 0.0;
      for (std::size_t dy = 0; dy < f; ++dy) {
        for (std::size_t dx = 0; dx < f; ++dx) s += plane.at(y * f + dy, x * f + dx);
      }
      out.at(y, x) = static_cast<float>(s / static_cast<double>(f * f));
    }
  }
  return out;
}

struct SentinelBand {
  const char* name;
  double pixel_size_m;
};

/// The twelve Level-2A bands in file order with their native resolutions.
inline constexpr std::array<SentinelBand, 12> kSentinel2Bands{{{"B01", 60.0},
                                                               {"B02", 10.0},
                                                               {"B03", 10.0},
                                                               {"B04", 10.0},
                                                               {"B05", 20.0},
                                                               {"B06", 20.0},
                                                               {"B07", 20.0},
                                                               {"B08", 10.0},
                                                               {"B8A", 20.0},
                                                               {"B09", 60.0},
                                                               {"B11", 20.0},
                                                               {"B12", 20.0}}};

/// Splits a 12-band 10 m raster into per-band inputs at Sentinel-2 native
/// resolutions (coarse bands block-averaged).
inline std::vector<BandInput> to_sentinel_bands(const Raster& r) {
  if (r.bands != kSentinel2Bands.size()) {
    throw Error(ErrorCode::BandMismatch, "expected 12 bands, got " + std::to_string(r.bands));
  }
  std::vector<BandInput> out;
  for (std::size_t b = 0; b < r.bands; ++b) {
    Plane p(r.width, r.height);
    const auto src = r.plane(b);
    std::copy(src.begin(), src.end(), p.values.begin());
    const auto factor = static_cast<int>(kSentinel2Bands[b].pixel_size_m / 10.0);
    out.push_back({factor == 1 ? p : downsample_mean(p, factor), kSentinel2Bands[b].pixel_size_m,
                   kSentinel2Bands[b].name});
  }
  return out;
}

/// Writes one single-band header per input into `dir` (named after the band).
inline std::vector<std::filesystem::path> save_bands(const std::vector<BandInput>& bands,
                                                     const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> paths;
  for (const auto& b : bands) {
    Raster r(b.plane.width, b.plane.height, 1, b.native_pixel_size_m);
    r.band_names = {b.name};
    r.values = b.plane.values;
    paths.push_back(dir / (b.name + ".hdr"));
    save_raster(r, paths.back());
  }
  return paths;
}

/// Reads a single-band header back as an assemble_scene input.
inline BandInput load_band(const std::filesystem::path& path) {
  const auto r = load_raster(path);
  if (r.bands != 1) throw Error(ErrorCode::BandMismatch, path.string() + " has " + std::to_string(r.bands) + " bands, expected 1");
  BandInput b;
  b.plane = Plane(r.width, r.height);
  b.plane.values = r.values;
  b.native_pixel_size_m = r.pixel_size_m;
  b.name = r.band_names.empty() ? path.stem().string() : r.band_names.front();
  return b;
}

}  // namespace jigsaw
