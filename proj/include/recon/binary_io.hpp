#pragma once

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <type_traits>

#include "recon/common.hpp"

namespace recon::bin {

static_assert(std::endian::native == std::endian::little, "record formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, const T& value) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

/// Reads one value; throws ParseError with the stream offset on short reads.
template <typename T>
T get(std::istream& is, const char* what) {
  static_assert(std::is_trivially_copyable_v<T>);
  T value{};
  const auto offset = static_cast<std::uint64_t>(is.tellg());
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw ParseError(std::string("truncated ") + what, offset);
  }
  return value;
}

template <typename T>
void store(unsigned char* dst, const T& value) {
  std::memcpy(dst, &value, sizeof(T));
}

template <typename T>
T load(const unsigned char* src) {
  T value;
  std::memcpy(&value, src, sizeof(T));
  return value;
}

}  // namespace recon::bin
