#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <type_traits>
#include <vector>

namespace jigsaw::detail {

template <typename T>
T byteswap_value(T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

/// Appends `v` to `out` in little-endian byte order.
template <typename T>
void put_le(std::vector<char>& out, T v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
  const auto* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
  return v;
}

template <typename T>
std::vector<char> to_le_bytes(std::span<const T> values) {
  std::vector<char> out;
  out.reserve(values.size() * sizeof(T));
  for (T v : values) put_le(out, v);
  return out;
}

template <typename T>
std::vector<T> from_le_bytes(std::span<const char> bytes) {
  std::vector<T> out(bytes.size() / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_le<T>(bytes.data() + i * sizeof(T));
  return out;
}

}  // namespace jigsaw::detail
