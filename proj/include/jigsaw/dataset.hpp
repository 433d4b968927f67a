#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "jigsaw/class_scheme.hpp"
#include "jigsaw/detail/text.hpp"
#include "jigsaw/error.hpp"
#include "jigsaw/random.hpp"
#include "jigsaw/raster_io.hpp"

namespace jigsaw {

inline constexpr std::size_t kTileSize = 17;

struct Coord {
  std::int64_t x = 0;
  std::int64_t y = 0;
  friend bool operator==(const Coord&, const Coord&) = default;
  friend auto operator<=>(const Coord&, const Coord&) = default;
};

/// A size x size x bands window, stored [y][x][band], labeled by the class of
/// its center pixel.
struct Tile {
  std::size_t size = kTileSize;
  std::size_t bands = 0;
  std::vector<float> values;
  std::uint8_t label = kUnlabeled;
  Coord origin;

  float at(std::size_t y, std::size_t x, std::size_t b) const { return values[(y * size + x) * bands + b]; }
  float& at(std::size_t y, std::size_t x, std::size_t b) { return values[(y * size + x) * bands + b]; }

  friend bool operator==(const Tile&, const Tile&) = default;
};

/// Mirror index k into [0, n) without repeating the edge sample
/// (-1 -> 1, n -> n - 2).
inline std::size_t reflect_index(std::int64_t k, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::int64_t>(2 * (n - 1));
  k %= period;
  if (k < 0) k += period;
  return static_cast<std::size_t>(k < static_cast<std::int64_t>(n) ? k : period - k);
}

/// Window centered on `center`, filled by reflection past the raster edges.
inline Tile extract_tile(const Raster& r, Coord center, std::size_t size = kTileSize) {
  if (size % 2 == 0) throw Error(ErrorCode::InvalidArgument, "tile size must be odd");
  if (center.x < 0 || center.y < 0 || center.x >= static_cast<std::int64_t>(r.width) ||
      center.y >= static_cast<std::int64_t>(r.height)) {
    throw Error(ErrorCode::CenterOutOfBounds, "(" + std::to_string(center.x) + ", " + std::to_string(center.y) +
                                                  ") outside " + std::to_string(r.width) + "x" +
                                                  std::to_string(r.height));
  }
  Tile t;
  t.size = size;
  t.bands = r.bands;
  t.origin = center;
  t.values.resize(size * size * r.bands);
  const auto half = static_cast<std::int64_t>(size / 2);
  for (std::size_t ty = 0; ty < size; ++ty) {
    const auto sy = reflect_index(center.y + static_cast<std::int64_t>(ty) - half, r.height);
    for (std::size_t tx = 0; tx < size; ++tx) {
      const auto sx = reflect_index(center.x + static_cast<std::int64_t>(tx) - half, r.width);
      float* dst = &t.values[(ty * size + tx) * r.bands];
      for (std::size_t b = 0; b < r.bands; ++b) dst[b] = r.at(b, sy, sx);
    }
  }
  return t;
}

struct Sample {
  std::uint8_t label = kUnlabeled;
  Coord at;
  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Per-class sampled coordinates; coords[c - 1] holds class c.
struct SamplePlan {
  std::size_t per_class = 1200;
  std::uint64_t seed = 0;
  std::array<std::vector<Coord>, kNumClasses> coords;

  std::vector<Sample> samples() const {
    std::vector<Sample> out;
    for (std::size_t c = 0; c < coords.size(); ++c) {
      for (const auto& p : coords[c]) out.push_back({static_cast<std::uint8_t>(c + 1), p});
    }
    return out;
  }
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& c : coords) n += c.size();
    return n;
  }

  friend bool operator==(const SamplePlan&, const SamplePlan&) = default;
};

/// Draws `per_class` distinct labeled pixels of every class without
/// replacement. Candidates are enumerated in row-major order and picked by a
/// partial Fisher-Yates shuffle; classes are drawn 1..7 from one generator.
inline SamplePlan sample_training_set(const AnnotationMask& mask, std::size_t per_class, std::uint64_t seed) {
  if (per_class < 1) throw Error(ErrorCode::InvalidArgument, "per_class must be at least 1");
  std::array<std::vector<Coord>, kNumClasses> candidates;
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      const auto label = mask.at(y, x);
      if (label == kUnlabeled) continue;
      if (label > kNumClasses) throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label));
      candidates[label - 1].push_back({static_cast<std::int64_t>(x), static_cast<std::int64_t>(y)});
    }
  }
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (candidates[c].size() < per_class) {
      throw Error(ErrorCode::InsufficientLabels, "class " + std::to_string(c + 1) + " has " +
                                                     std::to_string(candidates[c].size()) +
                                                     " labeled pixels, " + std::to_string(per_class) +
                                                     " requested");
    }
  }

  SamplePlan plan;
  plan.per_class = per_class;
  plan.seed = seed;
  Rng rng(seed);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    auto& pool = candidates[c];
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    plan.coords[c].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(per_class));
  }
  return plan;
}

namespace detail {

/// Clockwise quarter turn of a square tile.
inline Tile rotate90(const Tile& t) {
  Tile out = t;
  const auto n = t.size;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t b = 0; b < t.bands; ++b) out.at(y, x, b) = t.at(n - 1 - x, y, b);
    }
  }
  return out;
}

inline Tile mirror(const Tile& t) {
  Tile out = t;
  const auto n = t.size;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t b = 0; b < t.bands; ++b) out.at(y, x, b) = t.at(y, n - 1 - x, b);
    }
  }
  return out;
}

}  // namespace detail

/// The 8 symmetries of the square: rotations by 0/90/180/270 degrees of the
/// tile, then the same rotations of its horizontal mirror. Index 0 is the
/// identity.
inline std::array<Tile, 8> augment_tile(const Tile& t) {
  std::array<Tile, 8> out;
  out[0] = t;
  for (int i = 1; i < 4; ++i) out[i] = detail::rotate90(out[i - 1]);
  out[4] = detail::mirror(t);
  for (int i = 5; i < 8; ++i) out[i] = detail::rotate90(out[i - 1]);
  return out;
}

/// One dihedral variant (0..7, same order as augment_tile) without building
/// the other seven.
inline Tile augment_variant(const Tile& t, int variant) {
  Tile out = variant >= 4 ? detail::mirror(t) : t;
  for (int i = 0; i < variant % 4; ++i) out = detail::rotate90(out);
  return out;
}

struct Split {
  std::vector<Sample> train;
  std::vector<Sample> test;
  double fraction = 0.5;
  std::uint64_t seed = 0;

  friend bool operator==(const Split&, const Split&) = default;
};

/// Stratified split: each class is shuffled independently and its first
/// round(fraction * n_c) samples go to train.
inline Split split_samples(const SamplePlan& plan, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "split fraction must be in (0, 1)");
  }
  Split split;
  split.fraction = fraction;
  split.seed = seed;
  Rng rng(seed);
  for (std::size_t c = 0; c < plan.coords.size(); ++c) {
    auto coords = plan.coords[c];
    if (coords.empty()) continue;
    rng.shuffle(std::span<Coord>(coords));
    const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(coords.size())));
    if (n_train >= coords.size()) {
      throw Error(ErrorCode::EmptyClassAfterSplit, "class " + std::to_string(c + 1) + " would get no test samples (" +
                                                       std::to_string(coords.size()) + " samples)");
    }
    const auto label = static_cast<std::uint8_t>(c + 1);
    for (std::size_t i = 0; i < coords.size(); ++i) {
      (i < n_train ? split.train : split.test).push_back({label, coords[i]});
    }
  }
  return split;
}

inline std::vector<Tile> make_tiles(const Raster& r, const std::vector<Sample>& samples,
                                    std::size_t size = kTileSize) {
  std::vector<Tile> tiles;
  tiles.reserve(samples.size());
  for (const auto& s : samples) {
    tiles.push_back(extract_tile(r, s.at, size));
    tiles.back().label = s.label;
  }
  return tiles;
}

// Text forms: `key=value` header lines followed by `class,x,y` rows.

inline std::string to_text(const SamplePlan& plan) {
  std::ostringstream out;
  out << "per_class=" << plan.per_class << "\nseed=" << plan.seed << "\n";
  for (const auto& s : plan.samples()) out << int(s.label) << "," << s.at.x << "," << s.at.y << "\n";
  return out.str();
}

inline std::string to_text(const Split& split) {
  std::ostringstream out;
  out << "fraction=" << detail::format_double(split.fraction) << "\nseed=" << split.seed << "\n";
  out << "train\n";
  for (const auto& s : split.train) out << int(s.label) << "," << s.at.x << "," << s.at.y << "\n";
  out << "test\n";
  for (const auto& s : split.test) out << int(s.label) << "," << s.at.x << "," << s.at.y << "\n";
  return out.str();
}

namespace detail {

inline Sample parse_sample_row(std::string_view line, int line_no) {
  const auto fields = split(line, ',');
  auto label = fields.size() == 3 ? parse_number<int>(fields[0]) : std::nullopt;
  auto x = fields.size() == 3 ? parse_number<std::int64_t>(fields[1]) : std::nullopt;
  auto y = fields.size() == 3 ? parse_number<std::int64_t>(fields[2]) : std::nullopt;
  if (!label || !x || !y || *label < 1 || *label > kNumClasses) {
    throw Error(ErrorCode::HeaderParse, "line " + std::to_string(line_no) + ": expected class,x,y");
  }
  return {static_cast<std::uint8_t>(*label), {*x, *y}};
}

template <typename T>
T parse_header_value(std::string_view line, std::string_view key, int line_no) {
  const auto prefix = std::string(key) + "=";
  std::optional<T> v;
  if (line.substr(0, prefix.size()) == prefix) v = parse_number<T>(line.substr(prefix.size()));
  if (!v) throw Error(ErrorCode::HeaderParse, "line " + std::to_string(line_no) + ": expected " + prefix + "<value>");
  return *v;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace detail

inline SamplePlan sample_plan_from_text(const std::vector<std::string>& lines) {
  if (lines.size() < 2) throw Error(ErrorCode::HeaderParse, "sample plan is missing its header");
  SamplePlan plan;
  plan.per_class = detail::parse_header_value<std::size_t>(lines[0], "per_class", 1);
  plan.seed = detail::parse_header_value<std::uint64_t>(lines[1], "seed", 2);
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    const auto s = detail::parse_sample_row(lines[i], static_cast<int>(i + 1));
    plan.coords[s.label - 1].push_back(s.at);
  }
  return plan;
}

inline Split split_from_text(const std::vector<std::string>& lines) {
  if (lines.size() < 3) throw Error(ErrorCode::HeaderParse, "split is missing its header");
  Split split;
  split.fraction = detail::parse_header_value<double>(lines[0], "fraction", 1);
  split.seed = detail::parse_header_value<std::uint64_t>(lines[1], "seed", 2);
  if (lines[2] != "train") throw Error(ErrorCode::HeaderParse, "line 3: expected 'train'");
  std::vector<Sample>* section = &split.train;
  for (std::size_t i = 3; i < lines.size(); ++i) {
    if (lines[i] == "test") {
      if (section == &split.test) throw Error(ErrorCode::HeaderParse, "duplicate 'test' section");
      section = &split.test;
      continue;
    }
    if (detail::trim(lines[i]).empty()) continue;
    section->push_back(detail::parse_sample_row(lines[i], static_cast<int>(i + 1)));
  }
  if (section != &split.test) throw Error(ErrorCode::HeaderParse, "missing 'test' section");
  return split;
}

inline void save_sample_plan(const SamplePlan& plan, const std::filesystem::path& path) {
  detail::write_text(path, to_text(plan));
}
inline SamplePlan load_sample_plan(const std::filesystem::path& path) {
  return sample_plan_from_text(detail::read_lines(path));
}
inline void save_split(const Split& split, const std::filesystem::path& path) { detail::write_text(path, to_text(split)); }
inline Split load_split(const std::filesystem::path& path) { return split_from_text(detail::read_lines(path)); }

}  // namespace jigsaw
