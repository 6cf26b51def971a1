#pragma once

// Little-endian primitives shared by the WAV, SPF1 and SPM1 codecs.

#include "vfrpool/core.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace vfrpool::io {

inline void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void put_i32(std::ostream& os, std::int32_t v) { put_u32(os, static_cast<std::uint32_t>(v)); }

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline bool get_bytes(std::istream& is, unsigned char* dst, std::size_t n) {
  is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(is.gcount()) == n;
}

inline std::uint16_t get_u16(std::istream& is, ErrorKind on_eof) {
  unsigned char b[2];
  if (!get_bytes(is, b, 2)) throw Error(on_eof, "unexpected end of file");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream& is, ErrorKind on_eof) {
  unsigned char b[4];
  if (!get_bytes(is, b, 4)) throw Error(on_eof, "unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, ErrorKind on_eof) {
  const std::uint64_t lo = get_u32(is, on_eof);
  const std::uint64_t hi = get_u32(is, on_eof);
  return lo | (hi << 32);
}

inline std::int32_t get_i32(std::istream& is, ErrorKind on_eof) {
  return static_cast<std::int32_t>(get_u32(is, on_eof));
}

inline float get_f32(std::istream& is, ErrorKind on_eof) {
  return std::bit_cast<float>(get_u32(is, on_eof));
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::IoError, "cannot open '" + path + "' for reading");
  return is;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::IoError, "cannot open '" + path + "' for writing");
  return os;
}

}  // namespace vfrpool::io
