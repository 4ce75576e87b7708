#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "codd/error.h"

namespace codd::detail {

// Little-endian writer over an in-memory buffer.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t x) { buf_.push_back(static_cast<char>(x)); }
  void u32(std::uint32_t x) { put(x); }
  void f32(float x) { put(std::bit_cast<std::uint32_t>(x)); }
  void f64(double x) { put(std::bit_cast<std::uint64_t>(x)); }

  const std::string& data() const { return buf_; }
  void flush_to(std::ostream& out) const { out.write(buf_.data(), static_cast<std::streamsize>(buf_.size())); }

 private:
  template <typename U>
  void put(U x) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

// Little-endian reader that reports truncation with byte offsets.
class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}

  static ByteReader from_stream(std::istream& in) {
    return ByteReader(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
  }

  std::size_t offset() const { return pos_; }
  std::size_t size() const { return data_.size(); }
  bool at_end() const { return pos_ == data_.size(); }

  void expect_magic(std::string_view magic) {
    require(magic.size(), "magic");
    if (std::string_view(data_).substr(pos_, magic.size()) != magic)
      throw FormatError("magic mismatch: expected \"" + std::string(magic) + "\"", pos_);
    pos_ += magic.size();
  }
  std::uint8_t u8() {
    require(1, "u8");
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() { return get<std::uint32_t>("u32"); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>("f32")); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>("f64")); }

  // Throws unless at least `count * width` bytes remain.
  void require_bytes(std::size_t count, std::size_t width, const char* what) {
    if (width != 0 && count > (data_.size() - pos_) / width)
      throw FormatError(std::string("truncated payload reading ") + what + ": expected " +
                            std::to_string(count * width) + " bytes, " +
                            std::to_string(data_.size() - pos_) + " available",
                        pos_);
  }

 private:
  void require(std::size_t n, const char* what) { require_bytes(n, 1, what); }

  template <typename U>
  U get(const char* what) {
    require(sizeof(U), what);
    U x = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      x |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return x;
  }

  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace codd::detail
