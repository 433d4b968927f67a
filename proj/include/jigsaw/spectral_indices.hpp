#pragma once

#include <set>
#include <string>
#include <vector>

#include "jigsaw/detail/text.hpp"
#include "jigsaw/error.hpp"
#include "jigsaw/raster_io.hpp"

namespace jigsaw {

/// Normalized difference (A - B) / (A + B) between two bands of a raster,
/// addressed by their position in band order.
///
/// Common choices: NDVI = (NIR - Red) / (NIR + Red) and
/// NDWI = (Green - NIR) / (Green + NIR). Positions depend on how the scene
/// was exported, so they are never hard-coded here.
struct IndexSpec {
  std::string name;
  std::size_t band_a = 0;
  std::size_t band_b = 0;

  friend bool operator==(const IndexSpec&, const IndexSpec&) = default;
};

/// Parses `name:band_a:band_b`.
inline IndexSpec parse_index_spec(std::string_view text) {
  const auto parts = detail::split(text, ':');
  if (parts.size() != 3) {
    throw Error(ErrorCode::ConfigError, "index spec '" + std::string(text) + "' is not name:band_a:band_b");
  }
  const auto a = detail::parse_number<std::size_t>(parts[1]);
  const auto b = detail::parse_number<std::size_t>(parts[2]);
  const auto name = detail::trim(parts[0]);
  if (name.empty() || !a || !b) {
    throw Error(ErrorCode::ConfigError, "index spec '" + std::string(text) + "' is not name:band_a:band_b");
  }
  return {std::string(name), *a, *b};
}

inline void validate(const IndexSpec& spec, const Raster& r) {
  if (spec.band_a >= r.bands || spec.band_b >= r.bands || spec.band_a == spec.band_b) {
    throw Error(ErrorCode::BandOutOfRange, "index '" + spec.name + "' uses bands " +
                                               std::to_string(spec.band_a) + "," + std::to_string(spec.band_b) +
                                               " of a " + std::to_string(r.bands) + "-band raster");
  }
}

/// Zero where A + B == 0, so the plane stays finite.
inline Plane normalized_difference(const Raster& r, const IndexSpec& spec) {
  validate(spec, r);
  Plane out(r.width, r.height);
  const auto a = r.plane(spec.band_a);
  const auto b = r.plane(spec.band_b);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double num = static_cast<double>(a[i]) - b[i];
    const double den = static_cast<double>(a[i]) + b[i];
    out.values[i] = den == 0.0 ? 0.0f : static_cast<float>(num / den);
  }
  return out;
}

/// Appends one plane per spec, in order. Existing planes are untouched.
inline Raster append_indices(const Raster& r, const std::vector<IndexSpec>& specs) {
  std::set<std::string> names(r.band_names.begin(), r.band_names.end());
  for (const auto& spec : specs) {
    validate(spec, r);
    if (!names.insert(spec.name).second) throw Error(ErrorCode::DuplicateName, "band name '" + spec.name + "'");
  }
  if (specs.empty()) return r;

  Raster out = r;
  out.bands += specs.size();
  if (out.band_names.empty()) {
    for (std::size_t b = 0; b < r.bands; ++b) out.band_names.push_back("band" + std::to_string(b + 1));
  }
  out.values.reserve(out.values.size() + specs.size() * r.plane_size());
  for (const auto& spec : specs) {
    const auto plane = normalized_difference(r, spec);
    out.values.insert(out.values.end(), plane.values.begin(), plane.values.end());
    out.band_names.push_back(spec.name);
  }
  return out;
}

}  // namespace jigsaw
