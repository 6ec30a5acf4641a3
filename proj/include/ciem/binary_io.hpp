#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "ciem/error.hpp"

// Little-endian primitive I/O shared by the model, feature and embedding
// file formats.
namespace ciem::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw DataError("unexpected end of binary stream");
  }
  return v;
}

inline void put_floats(std::ostream& os, std::span<const float> xs) {
  os.write(reinterpret_cast<const char*>(xs.data()),
           static_cast<std::streamsize>(xs.size() * sizeof(float)));
}

inline void get_floats(std::istream& is, std::span<float> xs) {
  if (!is.read(reinterpret_cast<char*>(xs.data()),
               static_cast<std::streamsize>(xs.size() * sizeof(float)))) {
    throw DataError("unexpected end of binary stream");
  }
}

inline void put_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) ||
      got != magic) {
    throw DataError("bad magic: expected '" + std::string(magic) + "'");
  }
}

}  // namespace ciem::binio
