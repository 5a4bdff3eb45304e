#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <string_view>

namespace ffts::detail {

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename U>
U get_le(std::string_view bytes, std::size_t offset) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return value;
}

inline void put_f32(std::string& out, double v) {
  put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}
inline void put_f64(std::string& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
inline double get_f32(std::string_view b, std::size_t off) {
  return std::bit_cast<float>(get_le<std::uint32_t>(b, off));
}
inline double get_f64(std::string_view b, std::size_t off) {
  return std::bit_cast<double>(get_le<std::uint64_t>(b, off));
}

}  // namespace ffts::detail
