#pragma once

// Little-endian primitives shared by the VOL1 and CKPT1 formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "inrsynth/common.hpp"

namespace inrsynth::binio {

template <class UInt>
void put_le(std::ostream& os, UInt v) {
  unsigned char buf[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(UInt));
}

inline void put_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
inline void put_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }

template <class UInt>
UInt get_le(std::istream& is, const std::string& field) {
  unsigned char buf[sizeof(UInt)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(UInt)))
    throw FormatError(field, "truncated");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= UInt(buf[i]) << (8 * i);
  return v;
}

inline std::uint32_t get_u32(std::istream& is, const std::string& field) {
  return get_le<std::uint32_t>(is, field);
}
inline float get_f32(std::istream& is, const std::string& field) {
  return std::bit_cast<float>(get_le<std::uint32_t>(is, field));
}
inline double get_f64(std::istream& is, const std::string& field) {
  return std::bit_cast<double>(get_le<std::uint64_t>(is, field));
}

}  // namespace inrsynth::binio
