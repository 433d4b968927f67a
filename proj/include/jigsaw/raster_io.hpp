#pragma once

// Band-stack rasters: a UTF-8 `key=value` header plus a raw little-endian
// band-sequential payload. Rasters are f32, label grids (annotation masks,
// class maps, change masks) are u8 with a single band.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "jigsaw/class_scheme.hpp"
#include "jigsaw/detail/binary.hpp"
#include "jigsaw/detail/text.hpp"
#include "jigsaw/error.hpp"

namespace jigsaw {

/// One height x width band, row-major.
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), values(w * h, fill) {}
  Plane(std::size_t w, std::size_t h, std::vector<float> v) : width(w), height(h), values(std::move(v)) {
    if (values.size() != w * h) throw Error(ErrorCode::SizeMismatch, "plane value count");
  }

  float& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }

  friend bool operator==(const Plane&, const Plane&) = default;
};

struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t bands = 0;
  double pixel_size_m = 10.0;
  std::vector<std::string> band_names;  // empty or exactly `bands` entries
  std::vector<float> values;            // bands planes, each height x width

  Raster() = default;
  Raster(std::size_t w, std::size_t h, std::size_t b, double px = 10.0)
      : width(w), height(h), bands(b), pixel_size_m(px), values(w * h * b, 0.0f) {}

  std::size_t plane_size() const { return width * height; }

  float& at(std::size_t band, std::size_t y, std::size_t x) {
    return values[band * plane_size() + y * width + x];
  }
  float at(std::size_t band, std::size_t y, std::size_t x) const {
    return values[band * plane_size() + y * width + x];
  }

  std::span<const float> plane(std::size_t band) const {
    return std::span<const float>(values).subspan(band * plane_size(), plane_size());
  }
  std::span<float> plane(std::size_t band) {
    return std::span<float>(values).subspan(band * plane_size(), plane_size());
  }

  friend bool operator==(const Raster&, const Raster&) = default;
};

/// Single-band u8 grid shared by masks and class maps.
struct LabelGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  double pixel_size_m = 10.0;
  std::vector<std::uint8_t> labels;

  LabelGrid() = default;
  LabelGrid(std::size_t w, std::size_t h, std::uint8_t fill = 0, double px = 10.0)
      : width(w), height(h), pixel_size_m(px), labels(w * h, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }

  friend bool operator==(const LabelGrid&, const LabelGrid&) = default;
};

/// Ground-truth annotations: 0 = unlabeled, 1..7 = class id.
struct AnnotationMask : LabelGrid {
  using LabelGrid::LabelGrid;
};

/// Per-pixel predicted classes.
struct ClassMap : LabelGrid {
  using LabelGrid::LabelGrid;
};

/// 1 where a pixel became tailings-covered, 0 elsewhere.
struct ChangeMask : LabelGrid {
  using LabelGrid::LabelGrid;
  std::size_t count() const {
    std::size_t n = 0;
    for (auto f : labels) n += f != 0;
    return n;
  }
};

namespace detail {

struct BandStackHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t bands = 0;
  std::string dtype;
  double pixel_size_m = 0.0;
  std::string payload;
  std::vector<std::string> band_names;
};

inline std::size_t dtype_size(const std::string& dtype) { return dtype == "f32" ? 4 : 1; }

inline BandStackHeader read_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());

  BandStackHeader h;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::HeaderParse, path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key(trim(text.substr(0, eq)));
    const std::string value(trim(text.substr(eq + 1)));
    if (!seen.insert(key).second) {
      throw Error(ErrorCode::HeaderParse, path.string() + ": duplicate key '" + key + "'");
    }
    const auto bad_value = [&] {
      return Error(ErrorCode::HeaderParse, path.string() + ": bad value for '" + key + "': " + value);
    };
    if (key == "width" || key == "height" || key == "bands") {
      auto v = parse_number<std::size_t>(value);
      if (!v || *v == 0) throw bad_value();
      (key == "width" ? h.width : key == "height" ? h.height : h.bands) = *v;
    } else if (key == "dtype") {
      if (value != "f32" && value != "u8") throw bad_value();
      h.dtype = value;
    } else if (key == "pixel_size_m") {
      auto v = parse_number<double>(value);
      if (!v || !(*v > 0.0) || !std::isfinite(*v)) throw bad_value();
      h.pixel_size_m = *v;
    } else if (key == "payload") {
      if (value.empty()) throw bad_value();
      h.payload = value;
    } else if (key == "band_names") {
      for (auto name : split(value, ',')) h.band_names.emplace_back(trim(name));
    } else {
      throw Error(ErrorCode::HeaderParse, path.string() + ": unknown key '" + key + "'");
    }
  }
  for (const char* required : {"width", "height", "bands", "dtype", "pixel_size_m", "payload"}) {
    if (!seen.count(required)) {
      throw Error(ErrorCode::HeaderParse, path.string() + ": missing required key '" + required + "'");
    }
  }
  if (!h.band_names.empty() && h.band_names.size() != h.bands) {
    throw Error(ErrorCode::HeaderParse, path.string() + ": band_names count does not match bands");
  }
  return h;
}

inline std::vector<char> read_payload(const std::filesystem::path& header_path, const BandStackHeader& h) {
  const auto payload_path = header_path.parent_path() / h.payload;
  std::ifstream in(payload_path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, payload_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = h.width * h.height * h.bands * dtype_size(h.dtype);
  if (bytes.size() != expected) {
    throw Error(ErrorCode::SizeMismatch, payload_path.string() + ": expected " + std::to_string(expected) +
                                             " bytes, found " + std::to_string(bytes.size()));
  }
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span<const char>(text.data(), text.size()));
}

inline void write_band_stack(const std::filesystem::path& header_path, BandStackHeader h,
                             std::span<const char> payload) {
  auto payload_path = header_path;
  payload_path.replace_extension(h.dtype == "f32" ? ".f32" : ".u8");
  h.payload = payload_path.filename().string();

  std::ostringstream text;
  text << "width=" << h.width << "\n"
       << "height=" << h.height << "\n"
       << "bands=" << h.bands << "\n"
       << "dtype=" << h.dtype << "\n"
       << "pixel_size_m=" << format_double(h.pixel_size_m) << "\n"
       << "payload=" << h.payload << "\n";
  if (!h.band_names.empty()) {
    text << "band_names=";
    for (std::size_t i = 0; i < h.band_names.size(); ++i) text << (i ? "," : "") << h.band_names[i];
    text << "\n";
  }
  write_file(payload_path, payload);
  write_text(header_path, text.str());
}

inline void check_label_range(const LabelGrid& grid, std::uint8_t max_label, const std::string& what) {
  for (std::size_t y = 0; y < grid.height; ++y) {
    for (std::size_t x = 0; x < grid.width; ++x) {
      const auto v = grid.at(y, x);
      if (v > max_label) {
        throw Error(ErrorCode::LabelOutOfRange, what + ": label " + std::to_string(v) + " at (x=" +
                                                    std::to_string(x) + ", y=" + std::to_string(y) + ")");
      }
    }
  }
}

template <typename Grid>
Grid load_grid(const std::filesystem::path& path, std::uint8_t max_label) {
  const auto h = read_header(path);
  if (h.dtype != "u8") throw Error(ErrorCode::HeaderParse, path.string() + ": expected dtype=u8");
  if (h.bands != 1) throw Error(ErrorCode::HeaderParse, path.string() + ": expected bands=1");
  const auto bytes = read_payload(path, h);
  Grid grid;
  grid.width = h.width;
  grid.height = h.height;
  grid.pixel_size_m = h.pixel_size_m;
  grid.labels.assign(bytes.begin(), bytes.end());
  check_label_range(grid, max_label, path.string());
  return grid;
}

inline void save_grid(const LabelGrid& grid, const std::filesystem::path& path) {
  if (grid.labels.size() != grid.width * grid.height) {
    throw Error(ErrorCode::SizeMismatch, "label grid value count does not match dimensions");
  }
  BandStackHeader h{grid.width, grid.height, 1, "u8", grid.pixel_size_m, {}, {}};
  write_band_stack(path, h, std::span<const char>(reinterpret_cast<const char*>(grid.labels.data()),
                                                  grid.labels.size()));
}

}  // namespace detail

inline Raster load_raster(const std::filesystem::path& header_path) {
  const auto h = detail::read_header(header_path);
  if (h.dtype != "f32") throw Error(ErrorCode::HeaderParse, header_path.string() + ": expected dtype=f32");
  const auto bytes = detail::read_payload(header_path, h);

  Raster r;
  r.width = h.width;
  r.height = h.height;
  r.bands = h.bands;
  r.pixel_size_m = h.pixel_size_m;
  r.band_names = h.band_names;
  r.values = detail::from_le_bytes<float>(bytes);
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    if (!std::isfinite(r.values[i])) {
      const auto plane = i / r.plane_size();
      const auto row = (i % r.plane_size()) / r.width;
      const auto col = i % r.width;
      throw Error(ErrorCode::NonFiniteValue, header_path.string() + ": plane " + std::to_string(plane) +
                                                 ", row " + std::to_string(row) + ", col " +
                                                 std::to_string(col));
    }
  }
  return r;
}

inline void save_raster(const Raster& r, const std::filesystem::path& header_path) {
  if (r.values.size() != r.width * r.height * r.bands) {
    throw Error(ErrorCode::SizeMismatch, "raster value count does not match dimensions");
  }
  if (!r.band_names.empty() && r.band_names.size() != r.bands) {
    throw Error(ErrorCode::SizeMismatch, "band_names count does not match bands");
  }
  for (const auto& name : r.band_names) {
    if (name.find_first_of(",\n=") != std::string::npos || name != detail::trim(name)) {
      throw Error(ErrorCode::InvalidArgument, "band name '" + name + "' cannot be stored in a header");
    }
  }
  detail::BandStackHeader h{r.width, r.height, r.bands, "f32", r.pixel_size_m, {}, r.band_names};
  const auto payload = detail::to_le_bytes<float>(r.values);
  detail::write_band_stack(header_path, h, payload);
}

inline AnnotationMask load_mask(const std::filesystem::path& path) {
  return detail::load_grid<AnnotationMask>(path, kNumClasses);
}
inline void save_mask(const AnnotationMask& mask, const std::filesystem::path& path) {
  detail::check_label_range(mask, kNumClasses, "mask");
  detail::save_grid(mask, path);
}

inline ClassMap load_class_map(const std::filesystem::path& path) {
  return detail::load_grid<ClassMap>(path, kNumClasses);
}
inline void save_class_map(const ClassMap& map, const std::filesystem::path& path) {
  detail::check_label_range(map, kNumClasses, "class map");
  detail::save_grid(map, path);
}

inline ChangeMask load_change_mask(const std::filesystem::path& path) {
  return detail::load_grid<ChangeMask>(path, 1);
}
inline void save_change_mask(const ChangeMask& mask, const std::filesystem::path& path) {
  detail::check_label_range(mask, 1, "change mask");
  detail::save_grid(mask, path);
}

/// Nearest-neighbour block replication: out[i][j] = in[i / factor][j / factor].
inline Plane upsample_band(const Plane& plane, int factor) {
  if (factor < 1) throw Error(ErrorCode::InvalidFactor, "factor " + std::to_string(factor));
  const auto f = static_cast<std::size_t>(factor);
  Plane out(plane.width * f, plane.height * f);
  for (std::size_t i = 0; i < out.height; ++i) {
    for (std::size_t j = 0; j < out.width; ++j) out.at(i, j) = plane.at(i / f, j / f);
  }
  return out;
}

struct BandInput {
  Plane plane;
  double native_pixel_size_m = 10.0;
  std::string name;
};

/// Stacks bands of 10, 20 or 60 m native resolution into one 10 m raster,
/// keeping the given band order.
inline Raster assemble_scene(const std::vector<BandInput>& bands) {
  if (bands.empty()) throw Error(ErrorCode::InvalidArgument, "no bands to assemble");
  std::vector<Plane> planes;
  planes.reserve(bands.size());
  for (std::size_t b = 0; b < bands.size(); ++b) {
    const double native = bands[b].native_pixel_size_m;
    int factor = 0;
    if (native == 10.0) factor = 1;
    else if (native == 20.0) factor = 2;
    else if (native == 60.0) factor = 6;
    else {
      throw Error(ErrorCode::UnsupportedResolution,
                  "band " + std::to_string(b) + ": native pixel size " + detail::format_double(native) + " m");
    }
    planes.push_back(upsample_band(bands[b].plane, factor));
    if (planes.back().width != planes.front().width || planes.back().height != planes.front().height) {
      throw Error(ErrorCode::ExtentMismatch,
                  "band " + std::to_string(b) + " is " + std::to_string(planes.back().width) + "x" +
                      std::to_string(planes.back().height) + " at 10 m, expected " +
                      std::to_string(planes.front().width) + "x" + std::to_string(planes.front().height));
    }
  }

  Raster r(planes.front().width, planes.front().height, planes.size(), 10.0);
  bool named = false;
  for (const auto& b : bands) named = named || !b.name.empty();
  for (std::size_t b = 0; b < planes.size(); ++b) {
    std::copy(planes[b].values.begin(), planes[b].values.end(), r.plane(b).begin());
    if (named) r.band_names.push_back(bands[b].name.empty() ? "band" + std::to_string(b + 1) : bands[b].name);
  }
  return r;
}

struct NormalizeOptions {
  double scale = 10000.0;
  double clamp_max = 1.5;
};

/// v -> min(v / scale, clamp_max).
inline Raster normalize(const Raster& r, NormalizeOptions opts = {}) {
  if (!(opts.scale > 0.0) || !std::isfinite(opts.scale)) {
    throw Error(ErrorCode::InvalidScale, "scale must be positive, got " + detail::format_double(opts.scale));
  }
  Raster out = r;
  for (auto& v : out.values) {
    v = static_cast<float>(std::min(static_cast<double>(v) / opts.scale, opts.clamp_max));
  }
  return out;
}

namespace detail {

inline std::string ppm_header(std::size_t width, std::size_t height) {
  return "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

inline void write_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      const std::vector<Rgb>& pixels) {
  std::string bytes = ppm_header(width, height);
  bytes.reserve(bytes.size() + 3 * pixels.size());
  for (const auto& p : pixels) {
    bytes.push_back(static_cast<char>(p.r));
    bytes.push_back(static_cast<char>(p.g));
    bytes.push_back(static_cast<char>(p.b));
  }
  write_text(path, bytes);
}

inline std::vector<Rgb> colorize(const LabelGrid& map, const ClassScheme& scheme) {
  std::vector<Rgb> pixels(map.labels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = scheme.color(map.labels[i]);
  return pixels;
}

}  // namespace detail

/// Writes a binary PPM (P6) with each pixel colored by its class.
inline void render_map(const ClassMap& map, const ClassScheme& scheme, const std::filesystem::path& out_path) {
  detail::check_label_range(map, kNumClasses, "class map");
  detail::write_ppm(out_path, map.width, map.height, detail::colorize(map, scheme));
}

}  // namespace jigsaw
