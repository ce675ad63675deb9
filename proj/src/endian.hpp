#pragma once

// Little-endian (low-byte-first) field codecs shared by the on-disk formats.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cdfs/error.hpp"

namespace cdfs {

class ByteWriter {
 public:
  explicit ByteWriter(std::span<uint8_t> out) : out_(out) {}

  void u8(uint8_t v) { put(v, 1); }
  void u16(uint16_t v) { put(v, 2); }
  void u32(uint32_t v) { put(v, 4); }
  void u64(uint64_t v) { put(v, 8); }
  void bytes(std::span<const uint8_t> b) {
    check(b.size());
    std::copy(b.begin(), b.end(), out_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ += b.size();
  }
  // Writes `s` NUL-padded to exactly `width` bytes.
  void padded(const std::string& s, size_t width) {
    check(width);
    for (size_t i = 0; i < width; ++i) out_[pos_ + i] = i < s.size() ? static_cast<uint8_t>(s[i]) : 0;
    pos_ += width;
  }
  void text(const std::string& s) {
    bytes({reinterpret_cast<const uint8_t*>(s.data()), s.size()});
  }
  size_t position() const { return pos_; }

 private:
  void put(uint64_t v, size_t n) {
    check(n);
    for (size_t i = 0; i < n; ++i) out_[pos_++] = static_cast<uint8_t>(v >> (8 * i));
  }
  void check(size_t n) {
    if (pos_ + n > out_.size()) fail(Errc::invalid_argument, "record buffer overflow");
  }

  std::span<uint8_t> out_;
  size_t pos_ = 0;
};

// Bounds-checked reader; running off the end raises Errc::truncated.
class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> in, size_t pos = 0) : in_(in), pos_(pos) {}

  uint8_t u8() { return static_cast<uint8_t>(get(1)); }
  uint16_t u16() { return static_cast<uint16_t>(get(2)); }
  uint32_t u32() { return static_cast<uint32_t>(get(4)); }
  uint64_t u64() { return get(8); }
  std::span<const uint8_t> bytes(size_t n) {
    check(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  // Fixed-width NUL-padded text; trailing NULs are dropped.
  std::string padded(size_t width) {
    auto b = bytes(width);
    size_t n = width;
    while (n > 0 && b[n - 1] == 0) --n;
    return std::string(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(n));
  }
  std::string text(size_t n) {
    auto b = bytes(n);
    return std::string(b.begin(), b.end());
  }
  size_t position() const { return pos_; }
  void seek(size_t pos) { pos_ = pos; }
  size_t remaining() const { return pos_ <= in_.size() ? in_.size() - pos_ : 0; }

 private:
  uint64_t get(size_t n) {
    check(n);
    uint64_t v = 0;
    for (size_t i = 0; i < n; ++i) v |= uint64_t{in_[pos_ + i]} << (8 * i);
    pos_ += n;
    return v;
  }
  void check(size_t n) {
    if (pos_ > in_.size() || n > in_.size() - pos_) fail(Errc::truncated, "record truncated");
  }

  std::span<const uint8_t> in_;
  size_t pos_ = 0;
};

}  // namespace cdfs
