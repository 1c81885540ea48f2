#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "mobclip/errors.hpp"

namespace mobclip::io {

/// Little-endian writer over an std::ostream.
class LeWriter {
public:
  explicit LeWriter(std::ostream& os) : os_(os) {}

  void magic(std::string_view m) { os_.write(m.data(), static_cast<std::streamsize>(m.size())); }

  template <typename T>
  void put(T value) {
    static_assert(std::is_arithmetic_v<T>);
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    auto bits = std::bit_cast<U>(value);
    std::array<char, sizeof(T)> buf{};
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
    os_.write(buf.data(), sizeof(T));
  }

  void check() const {
    if (!os_) throw Error("write failed");
  }

private:
  std::ostream& os_;
};

/// Little-endian reader that tracks the byte offset for error reporting.
class LeReader {
public:
  explicit LeReader(std::istream& is, std::int64_t start_offset = 0) : is_(is), offset_(start_offset) {}

  void expect_magic(std::string_view m) {
    std::string got(m.size(), '\0');
    const auto at = offset_;
    read_raw(got.data(), got.size());
    if (got != m) throw ParseError("bad magic, expected \"" + std::string(m) + "\"", -1, at);
  }

  template <typename T>
  T get() {
    static_assert(std::is_arithmetic_v<T>);
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    std::array<unsigned char, sizeof(T)> buf{};
    read_raw(reinterpret_cast<char*>(buf.data()), sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(buf[i]) << (8 * i);
    return std::bit_cast<T>(bits);
  }

  std::int64_t offset() const noexcept { return offset_; }

  void expect_eof() {
    if (is_.peek() != std::char_traits<char>::eof())
      throw ParseError("trailing bytes after payload", -1, offset_);
  }

private:
  void read_raw(char* dst, std::size_t n) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw ParseError("unexpected end of file", -1, offset_ + is_.gcount());
    offset_ += static_cast<std::int64_t>(n);
  }

  std::istream& is_;
  std::int64_t offset_ = 0;
};

}  // namespace mobclip::io
