#pragma once

// Little-endian fixed-width encoding shared by the dataset and checkpoint files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace tedge::io {

template <typename T>
T to_little(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

template <typename T>
void put(std::ostream& out, T value) {
  value = to_little(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error(std::string("truncated file while reading ") + what);
  return to_little(value);
}

inline void put_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4] = {};
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0) {
    throw std::runtime_error(std::string("bad magic: expected '") + magic + "'");
  }
}

}  // namespace tedge::io
