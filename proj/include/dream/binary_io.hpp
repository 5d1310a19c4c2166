#pragma once

// Little-endian scalar IO over std streams.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace dream::io {

class TruncatedInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
using UnsignedOf = std::conditional_t<sizeof(T) == 1, std::uint8_t,
                                      std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                         std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                                            std::uint64_t>>>;

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_arithmetic_v<T>);
  auto bits = std::bit_cast<UnsignedOf<T>>(value);
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  static_assert(std::is_arithmetic_v<T>);
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) throw TruncatedInput("unexpected end of file");
  UnsignedOf<T> bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<UnsignedOf<T>>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

inline void write_bytes(std::ostream& out, const std::string& s) { out.write(s.data(), static_cast<std::streamsize>(s.size())); }

inline std::string read_bytes(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) throw TruncatedInput("unexpected end of file");
  return s;
}

}  // namespace dream::io
