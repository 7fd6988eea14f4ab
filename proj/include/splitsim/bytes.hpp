#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace splitsim {

using Bytes = std::vector<std::uint8_t>;

inline Bytes to_bytes(std::string_view s) {
  return Bytes(s.begin(), s.end());
}

inline std::string to_string(std::span<const std::uint8_t> b) {
  return std::string(b.begin(), b.end());
}

std::string hex_encode(std::span<const std::uint8_t> data);
Bytes hex_decode(std::string_view hex);  // throws std::invalid_argument on bad input

/// Little-endian scalar packing used by every wire format in the project.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v & 0xff));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void str_fixed(std::string_view s, std::size_t width) {
    for (std::size_t i = 0; i < width; ++i)
      buf_.push_back(i < s.size() ? static_cast<std::uint8_t>(s[i]) : 0);
  }

  Bytes take() { return std::move(buf_); }
  const Bytes& view() const { return buf_; }

 private:
  Bytes buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  bool ok() const { return ok_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  std::uint8_t u8() { return take(1) ? data_[pos_ - 1] : 0; }
  std::uint16_t u16() {
    if (!take(2)) return 0;
    return static_cast<std::uint16_t>(data_[pos_ - 2] | (data_[pos_ - 1] << 8));
  }
  std::uint32_t u32() {
    if (!take(4)) return 0;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ - 4 + i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    if (!take(8)) return 0;
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ - 8 + i]) << (8 * i);
    return v;
  }
  Bytes bytes(std::size_t n) {
    if (!take(n)) return {};
    return Bytes(data_.begin() + static_cast<std::ptrdiff_t>(pos_ - n),
                 data_.begin() + static_cast<std::ptrdiff_t>(pos_));
  }
  Bytes rest() { return bytes(remaining()); }
  std::string str_fixed(std::size_t width) {
    Bytes raw = bytes(width);
    std::size_t len = 0;
    while (len < raw.size() && raw[len] != 0) ++len;
    return std::string(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(len));
  }

 private:
  bool take(std::size_t n) {
    if (!ok_ || remaining() < n) {
      ok_ = false;
      return false;
    }
    pos_ += n;
    return true;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  bool ok_ = true;
};

}  // namespace splitsim
