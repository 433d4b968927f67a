#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "jigsaw/error.hpp"

namespace jigsaw {

inline constexpr int kNumClasses = 7;
inline constexpr std::uint8_t kUnlabeled = 0;
inline constexpr std::uint8_t kMineTailings = 1;

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct ClassEntry {
  std::uint8_t id;
  std::string name;
  Rgb color;
};

/// The seven land-use classes with their map colors. Ids are 1..7; 0 is
/// reserved for unlabeled pixels and renders black.
class ClassScheme {
 public:
  static ClassScheme standard() {
    return ClassScheme({
        {1, "Mine & tailings", {255, 0, 0}},
        {2, "Forest", {0, 128, 0}},
        {3, "Build up", {255, 255, 0}},
        {4, "River", {0, 0, 255}},
        {5, "Clear water", {0, 255, 255}},
        {6, "Agricultural", {128, 0, 128}},
        {7, "Grassland", {255, 255, 255}},
    });
  }

  explicit ClassScheme(std::vector<ClassEntry> entries) : entries_(std::move(entries)) {
    if (entries_.size() != kNumClasses) {
      throw Error(ErrorCode::InvalidConfig, "class scheme must have exactly 7 entries");
    }
    std::set<std::string> names;
    std::set<std::tuple<int, int, int>> colors;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.id != i + 1) throw Error(ErrorCode::InvalidConfig, "class ids must be 1..7 in order");
      if (!names.insert(e.name).second) {
        throw Error(ErrorCode::InvalidConfig, "duplicate class name '" + e.name + "'");
      }
      if (!colors.insert({e.color.r, e.color.g, e.color.b}).second) {
        throw Error(ErrorCode::InvalidConfig, "duplicate color for class '" + e.name + "'");
      }
    }
  }

  const std::vector<ClassEntry>& entries() const { return entries_; }

  const ClassEntry& entry(std::uint8_t id) const {
    if (id < 1 || id > kNumClasses) {
      throw Error(ErrorCode::LabelOutOfRange, "class id " + std::to_string(id));
    }
    return entries_[id - 1];
  }

  const std::string& name(std::uint8_t id) const { return entry(id).name; }

  Rgb color(std::uint8_t id) const { return id == kUnlabeled ? Rgb{} : entry(id).color; }

 private:
  std::vector<ClassEntry> entries_;
};

}  // namespace jigsaw
