#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cdfs {

// One field of the cdblock partitioning: values range over [0, modulo).
struct PointerDef {
  uint32_t modulo = 0;
  uint16_t bits = 0;

  bool operator==(const PointerDef&) const = default;
};

inline constexpr size_t kMaxPointerDefs = 16;

// A 64-bit media location. Interpretation depends on the AddressScheme in
// force for the volume; raw value comparison matches media order.
struct MediaAddress {
  uint64_t raw = 0;

  static constexpr MediaAddress null() { return MediaAddress{~uint64_t{0}}; }
  constexpr bool is_null() const { return raw == ~uint64_t{0}; }

  auto operator<=>(const MediaAddress&) const = default;
};

// Mixed-radix partitioning of a MediaAddress. Entry 0 occupies the most
// significant bits; the last entry is the byte offset within a block and its
// modulo is the block size.
class AddressScheme {
 public:
  AddressScheme() = default;
  explicit AddressScheme(std::vector<PointerDef> entries);

  // Minute/second/block/offset partitioning used by audio-format discs.
  static AddressScheme audio(uint32_t block_size = 2048);
  // "m0:b0,m1:b1,..."
  static AddressScheme parse(std::string_view text);

  std::span<const PointerDef> entries() const { return entries_; }
  size_t block_field_count() const { return entries_.empty() ? 0 : entries_.size() - 1; }
  uint32_t block_size() const { return entries_.empty() ? 0 : entries_.back().modulo; }
  // Number of blocks addressable under this scheme (saturates at UINT64_MAX).
  uint64_t block_count() const { return block_count_; }

  std::vector<uint64_t> decode(MediaAddress addr) const;
  MediaAddress encode(std::span<const uint64_t> fields) const;

  uint64_t linear_index(MediaAddress addr) const;
  uint32_t offset(MediaAddress addr) const;
  MediaAddress from_linear(uint64_t ordinal, uint32_t offset = 0) const;

  // Successor arithmetic in whole blocks; offset is zeroed.
  MediaAddress advance(MediaAddress addr, int64_t nblocks, uint64_t capacity_blocks) const;
  // Byte arithmetic across block boundaries.
  MediaAddress add_bytes(MediaAddress addr, uint64_t nbytes) const;
  uint64_t byte_position(MediaAddress addr) const;

  // "000.001.074:12" style rendering; "null" for the sentinel.
  std::string format(MediaAddress addr) const;
  // Accepts the dotted form (optional ":offset") or a plain block ordinal.
  MediaAddress parse_address(std::string_view text) const;
  std::string describe() const;

  bool operator==(const AddressScheme& other) const { return entries_ == other.entries_; }

 private:
  std::vector<PointerDef> entries_;
  std::vector<unsigned> shifts_;
  uint64_t block_count_ = 0;
};

}  // namespace cdfs
