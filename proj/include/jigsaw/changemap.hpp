#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "jigsaw/class_scheme.hpp"
#include "jigsaw/dataset.hpp"
#include "jigsaw/detail/text.hpp"
#include "jigsaw/error.hpp"
#include "jigsaw/jigsaw_model.hpp"
#include "jigsaw/raster_io.hpp"

namespace jigsaw {

/// Classifies every pixel of `r` from its reflection-padded tile. Rows are
/// dealt to workers in contiguous blocks; the result does not depend on the
/// worker count.
template <typename T>
ClassMap classify_image(const Model<T>& model, const Raster& r, std::size_t workers = 1) {
  if (model.config.input_bands != r.bands) {
    throw Error(ErrorCode::BandMismatch, "model expects " + std::to_string(model.config.input_bands) +
                                             " bands, raster has " + std::to_string(r.bands));
  }
  ClassMap map(r.width, r.height, kUnlabeled, r.pixel_size_m);
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, r.height));
  const auto rows = (r.height + workers - 1) / workers;
  const auto work = [&](std::size_t w) {
    constexpr std::size_t kBatch = 32;
    std::vector<Activations<T>> acts;
    std::vector<Tile> tiles(kBatch);
    std::vector<const Tile*> batch;
    const auto end = std::min(r.height, (w + 1) * rows);
    for (std::size_t y = w * rows; y < end; ++y) {
      for (std::size_t x0 = 0; x0 < r.width; x0 += kBatch) {
        batch.clear();
        for (std::size_t x = x0; x < std::min(r.width, x0 + kBatch); ++x) {
          tiles[x - x0] = extract_tile(r, {static_cast<std::int64_t>(x), static_cast<std::int64_t>(y)},
                                       model.config.tile_size);
          batch.push_back(&tiles[x - x0]);
        }
        while (acts.size() < batch.size()) acts.emplace_back(model.config);
        const auto ids = predict_batch<T>(model, batch, acts);
        for (std::size_t i = 0; i < ids.size(); ++i) map.at(y, x0 + i) = ids[i];
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(work, w);
  work(0);
  for (auto& t : threads) t.join();
  return map;
}

inline void check_same_dimensions(const LabelGrid& a, const LabelGrid& b) {
  if (a.width != b.width || a.height != b.height) {
    throw Error(ErrorCode::DimensionMismatch, std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                                                  std::to_string(b.width) + "x" + std::to_string(b.height));
  }
}

/// Flags pixels that are `target` after but were something else before.
inline ChangeMask change_mask(const ClassMap& before, const ClassMap& after, std::uint8_t target = kMineTailings) {
  check_same_dimensions(before, after);
  if (target < 1 || target > kNumClasses) {
    throw Error(ErrorCode::LabelOutOfRange, "target class " + std::to_string(target));
  }
  ChangeMask mask(before.width, before.height, 0, before.pixel_size_m);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    mask.labels[i] = after.labels[i] == target && before.labels[i] != target;
  }
  return mask;
}

struct ImpactReport {
  std::array<std::uint64_t, kNumClasses> pixels{};  // flagged pixels by before-class
  std::array<double, kNumClasses> hectares{};
  std::uint64_t total_pixels = 0;
  double total_hectares = 0.0;
  double pixel_size_m = 10.0;

  double area(std::uint8_t class_id) const { return hectares.at(class_id - 1); }
};

inline constexpr double kSquareMetersPerHectare = 10'000.0;

/// Area of each before-class under the mask; 1 ha = 10,000 m^2, so a 10 m
/// pixel is 0.01 ha.
inline ImpactReport impact_report(const ClassMap& before, const ChangeMask& mask) {
  check_same_dimensions(before, mask);
  ImpactReport report;
  report.pixel_size_m = before.pixel_size_m;
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    if (!mask.labels[i]) continue;
    const auto c = before.labels[i];
    if (c < 1 || c > kNumClasses) {
      throw Error(ErrorCode::LabelOutOfRange, "before-map label " + std::to_string(c) + " under the change mask");
    }
    ++report.pixels[c - 1];
    ++report.total_pixels;
  }
  const double pixel_area = before.pixel_size_m * before.pixel_size_m;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    report.hectares[c] = static_cast<double>(report.pixels[c]) * pixel_area / kSquareMetersPerHectare;
  }
  report.total_hectares = static_cast<double>(report.total_pixels) * pixel_area / kSquareMetersPerHectare;
  return report;
}

/// Full before -> after transition counts, counts[before - 1][after - 1].
/// Unlabeled pixels are skipped.
inline std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> transition_counts(const ClassMap& before,
                                                                                          const ClassMap& after) {
  check_same_dimensions(before, after);
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};
  for (std::size_t i = 0; i < before.labels.size(); ++i) {
    const auto b = before.labels[i], a = after.labels[i];
    if (b >= 1 && b <= kNumClasses && a >= 1 && a <= kNumClasses) ++counts[b - 1][a - 1];
  }
  return counts;
}

/// Table of hectares per class and total, two decimals (the resolution of a
/// 10 m pixel).
inline std::string impact_to_text(const ImpactReport& report, const ClassScheme& scheme) {
  std::size_t width = std::string("Total").size();
  for (const auto& e : scheme.entries()) width = std::max(width, e.name.size());
  width += 2;
  std::ostringstream out;
  out << "Estimation of impact to region by tailings\n";
  out << detail::pad_right("", width) << detail::pad_left("hectares", 10) << "\n";
  for (const auto& e : scheme.entries()) {
    out << detail::pad_right(e.name, width) << detail::pad_left(detail::format_fixed(report.area(e.id), 2), 10) << "\n";
  }
  out << detail::pad_right("Total", width) << detail::pad_left(detail::format_fixed(report.total_hectares, 2), 10)
      << "\n";
  return out.str();
}

inline std::string impact_to_csv(const ImpactReport& report, const ClassScheme& scheme) {
  std::ostringstream out;
  out << "class_id,class_name,hectares\n";
  for (const auto& e : scheme.entries()) {
    out << int(e.id) << "," << e.name << "," << detail::format_double(report.area(e.id)) << "\n";
  }
  return out.str();
}

/// Before-map colors with flagged pixels overdrawn in the target's color
/// (red for Mine & tailings).
inline void render_change_map(const ClassMap& before, const ChangeMask& mask, const ClassScheme& scheme,
                              const std::filesystem::path& out_path, std::uint8_t target = kMineTailings) {
  check_same_dimensions(before, mask);
  detail::check_label_range(before, kNumClasses, "before map");
  auto pixels = detail::colorize(before, scheme);
  const auto overlay = scheme.color(target);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (mask.labels[i]) pixels[i] = overlay;
  }
  detail::write_ppm(out_path, before.width, before.height, pixels);
}

struct ChangeOutputs {
  std::filesystem::path mask_header;
  std::filesystem::path impact_text;
  std::filesystem::path impact_csv;
  std::filesystem::path rendered;
};

/// Writes mask.hdr/mask.u8, impact.txt, impact.csv and changemap.ppm into
/// `out_dir` (created if missing).
inline ChangeOutputs write_change_outputs(const ChangeMask& mask, const ImpactReport& report, const ClassMap& before,
                                          const ClassMap& after, const std::filesystem::path& out_dir,
                                          const ClassScheme& scheme = ClassScheme::standard()) {
  check_same_dimensions(before, after);
  check_same_dimensions(before, mask);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
  ChangeOutputs paths{out_dir / "mask.hdr", out_dir / "impact.txt", out_dir / "impact.csv", out_dir / "changemap.ppm"};
  save_change_mask(mask, paths.mask_header);
  detail::write_text(paths.impact_text, impact_to_text(report, scheme));
  detail::write_text(paths.impact_csv, impact_to_csv(report, scheme));
  render_change_map(before, mask, scheme, paths.rendered);
  return paths;
}

}  // namespace jigsaw
