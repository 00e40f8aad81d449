#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "slpd/errors.hpp"

// Little-endian primitives shared by the dataset and checkpoint formats.

namespace slpd::detail {

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  write_u32_le(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
  write_u32_le(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_f32_le(std::ostream& os, float f) {
  write_u32_le(os, std::bit_cast<std::uint32_t>(f));
}

inline void write_f64_le(std::ostream& os, double d) {
  write_u64_le(os, std::bit_cast<std::uint64_t>(d));
}

inline std::uint32_t read_u32_le(std::istream& is, const std::string& context) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("truncated read (u32) in " + context);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64_le(std::istream& is, const std::string& context) {
  std::uint64_t lo = read_u32_le(is, context);
  std::uint64_t hi = read_u32_le(is, context);
  return lo | (hi << 32);
}

inline float read_f32_le(std::istream& is, const std::string& context) {
  return std::bit_cast<float>(read_u32_le(is, context));
}

inline double read_f64_le(std::istream& is, const std::string& context) {
  return std::bit_cast<double>(read_u64_le(is, context));
}

/// Bulk float payload, row-major. On little-endian targets this is a single
/// write; elsewhere it falls back to per-element conversion.
inline void write_f32_block(std::ostream& os, const float* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
  } else {
    for (std::size_t i = 0; i < count; ++i) write_f32_le(os, data[i]);
  }
}

inline void read_f32_block(std::istream& is, float* data, std::size_t count,
                           const std::string& context) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 4));
    if (!is) throw DataError("truncated float payload in " + context);
  } else {
    for (std::size_t i = 0; i < count; ++i) data[i] = read_f32_le(is, context);
  }
}

}  // namespace slpd::detail
