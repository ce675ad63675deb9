#include "cdfs/address.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <limits>

#include "cdfs/error.hpp"

namespace cdfs {

namespace {

uint64_t field_mask(unsigned bits) { return bits >= 64 ? ~uint64_t{0} : (uint64_t{1} << bits) - 1; }

uint64_t parse_u64(std::string_view text, std::string_view what) {
  uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    fail(Errc::invalid_argument, "bad " + std::string(what) + ": '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

AddressScheme::AddressScheme(std::vector<PointerDef> entries) : entries_(std::move(entries)) {
  if (entries_.size() < 2 || entries_.size() > kMaxPointerDefs) {
    fail(Errc::invalid_argument, "address scheme needs 2..16 fields");
  }
  unsigned total = 0;
  for (const auto& e : entries_) {
    if (e.bits == 0 || e.bits > 64) fail(Errc::invalid_argument, "field width out of range");
    if (e.modulo < 2) fail(Errc::invalid_argument, "field modulo must be at least 2");
    if (e.bits < 32 && e.modulo > (uint64_t{1} << e.bits)) {
      fail(Errc::invalid_argument, "field modulo does not fit its bit width");
    }
    total += e.bits;
  }
  if (total != 64) fail(Errc::invalid_argument, "address scheme fields must total 64 bits");

  shifts_.resize(entries_.size());
  unsigned shift = 0;
  for (size_t i = entries_.size(); i-- > 0;) {
    shifts_[i] = shift;
    shift += entries_[i].bits;
  }

  block_count_ = 1;
  for (size_t i = 0; i + 1 < entries_.size(); ++i) {
    uint64_t m = entries_[i].modulo;
    if (block_count_ > std::numeric_limits<uint64_t>::max() / m) {
      block_count_ = std::numeric_limits<uint64_t>::max();
      break;
    }
    block_count_ *= m;
  }
}

AddressScheme AddressScheme::audio(uint32_t block_size) {
  return AddressScheme({{70, 16}, {60, 16}, {75, 16}, {block_size, 16}});
}

AddressScheme AddressScheme::parse(std::string_view text) {
  std::vector<PointerDef> defs;
  while (!text.empty()) {
    auto comma = text.find(',');
    auto item = text.substr(0, comma);
    auto colon = item.find(':');
    if (colon == std::string_view::npos) {
      fail(Errc::invalid_argument, "scheme entry must be modulo:bits");
    }
    uint64_t modulo = parse_u64(item.substr(0, colon), "modulo");
    uint64_t bits = parse_u64(item.substr(colon + 1), "bit count");
    if (modulo > std::numeric_limits<uint32_t>::max() || bits > 64) {
      fail(Errc::invalid_argument, "scheme entry out of range");
    }
    defs.push_back({static_cast<uint32_t>(modulo), static_cast<uint16_t>(bits)});
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return AddressScheme(std::move(defs));
}

std::vector<uint64_t> AddressScheme::decode(MediaAddress addr) const {
  if (addr.is_null()) fail(Errc::invalid_argument, "null address has no fields");
  std::vector<uint64_t> fields(entries_.size());
  for (size_t i = 0; i < entries_.size(); ++i) {
    fields[i] = (addr.raw >> shifts_[i]) & field_mask(entries_[i].bits);
    if (fields[i] >= entries_[i].modulo) {
      fail(Errc::out_of_range, "address field " + std::to_string(i) + " exceeds its modulo");
    }
  }
  return fields;
}

MediaAddress AddressScheme::encode(std::span<const uint64_t> fields) const {
  if (fields.size() != entries_.size()) fail(Errc::invalid_argument, "wrong field count");
  uint64_t raw = 0;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (fields[i] >= entries_[i].modulo) {
      fail(Errc::out_of_range, "address field " + std::to_string(i) + " exceeds its modulo");
    }
    raw |= fields[i] << shifts_[i];
  }
  return MediaAddress{raw};
}

uint64_t AddressScheme::linear_index(MediaAddress addr) const {
  auto fields = decode(addr);
  uint64_t ordinal = 0;
  for (size_t i = 0; i + 1 < fields.size(); ++i) ordinal = ordinal * entries_[i].modulo + fields[i];
  return ordinal;
}

uint32_t AddressScheme::offset(MediaAddress addr) const {
  return static_cast<uint32_t>(decode(addr).back());
}

MediaAddress AddressScheme::from_linear(uint64_t ordinal, uint32_t offset) const {
  if (ordinal >= block_count_) fail(Errc::out_of_range, "block ordinal beyond address space");
  std::vector<uint64_t> fields(entries_.size());
  fields.back() = offset;
  for (size_t i = entries_.size() - 1; i-- > 0;) {
    fields[i] = ordinal % entries_[i].modulo;
    ordinal /= entries_[i].modulo;
  }
  return encode(fields);
}

MediaAddress AddressScheme::advance(MediaAddress addr, int64_t nblocks, uint64_t capacity_blocks) const {
  __int128 target = static_cast<__int128>(linear_index(addr)) + nblocks;
  uint64_t limit = std::min(capacity_blocks, block_count_);
  if (target < 0 || target >= static_cast<__int128>(limit)) {
    fail(Errc::out_of_range, "advance leaves the media");
  }
  return from_linear(static_cast<uint64_t>(target), 0);
}

uint64_t AddressScheme::byte_position(MediaAddress addr) const {
  return linear_index(addr) * block_size() + offset(addr);
}

MediaAddress AddressScheme::add_bytes(MediaAddress addr, uint64_t nbytes) const {
  uint64_t pos = byte_position(addr) + nbytes;
  return from_linear(pos / block_size(), static_cast<uint32_t>(pos % block_size()));
}

std::string AddressScheme::format(MediaAddress addr) const {
  if (addr.is_null()) return "null";
  std::vector<uint64_t> fields;
  try {
    fields = decode(addr);
  } catch (const Error&) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(addr.raw));
    return buf;
  }
  std::string out;
  for (size_t i = 0; i + 1 < fields.size(); ++i) {
    if (i) out += '.';
    char buf[24];
    std::snprintf(buf, sizeof buf, "%03llu", static_cast<unsigned long long>(fields[i]));
    out += buf;
  }
  out += ':' + std::to_string(fields.back());
  return out;
}

MediaAddress AddressScheme::parse_address(std::string_view text) const {
  if (text == "null") return MediaAddress::null();
  uint64_t offset = 0;
  if (auto colon = text.find(':'); colon != std::string_view::npos) {
    offset = parse_u64(text.substr(colon + 1), "offset");
    text = text.substr(0, colon);
  }
  if (offset >= block_size()) fail(Errc::out_of_range, "offset beyond block size");
  if (text.find('.') == std::string_view::npos) {
    return from_linear(parse_u64(text, "block ordinal"), static_cast<uint32_t>(offset));
  }
  std::vector<uint64_t> fields;
  while (true) {
    auto dot = text.find('.');
    fields.push_back(parse_u64(text.substr(0, dot), "address field"));
    if (dot == std::string_view::npos) break;
    text.remove_prefix(dot + 1);
  }
  if (fields.size() != block_field_count()) {
    fail(Errc::invalid_argument, "address has wrong number of block fields");
  }
  fields.push_back(offset);
  return encode(fields);
}

std::string AddressScheme::describe() const {
  std::string out;
  for (const auto& e : entries_) {
    if (!out.empty()) out += ',';
    out += std::to_string(e.modulo) + ':' + std::to_string(e.bits);
  }
  return out;
}

}  // namespace cdfs
