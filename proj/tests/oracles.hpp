#pragma once

// Reference models written without reusing library code paths. Tests check
// the library against these rather than against itself.

#include <openssl/evp.h>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace oracle {

// ---------------------------------------------------------------------------
// Checksums

inline uint32_t word_total(std::span<const uint8_t> bytes) {
  uint64_t total = 0;
  for (size_t i = 0; i < bytes.size(); i += 2) {
    uint32_t lo = bytes[i];
    uint32_t hi = i + 1 < bytes.size() ? bytes[i + 1] : 0;
    total += lo + hi * 256;
  }
  return static_cast<uint32_t>(total % 65536);
}

inline bool checksum_ok(std::span<const uint8_t> bytes) { return word_total(bytes) == 0; }

// Tries every value for the 16-bit field at `offset`.
inline uint16_t find_seal(std::vector<uint8_t> bytes, size_t offset) {
  for (uint32_t v = 0; v < 65536; ++v) {
    bytes[offset] = static_cast<uint8_t>(v & 0xFF);
    bytes[offset + 1] = static_cast<uint8_t>(v >> 8);
    if (checksum_ok(bytes)) return static_cast<uint16_t>(v);
  }
  throw std::logic_error("no sealing value");
}

// ---------------------------------------------------------------------------
// Calendar

inline bool leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

inline int64_t days_since_1901(int y, unsigned m, unsigned d) {
  static const unsigned kMonth[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int64_t days = 0;
  for (int yy = 1901; yy < y; ++yy) days += leap(yy) ? 366 : 365;
  for (unsigned mm = 1; mm < m; ++mm) days += kMonth[mm - 1] + (mm == 2 && leap(y) ? 1 : 0);
  return days + (d - 1);
}

inline uint64_t seconds_since_1901(int y, unsigned m, unsigned d, unsigned hh = 0, unsigned mi = 0, unsigned ss = 0) {
  return static_cast<uint64_t>(days_since_1901(y, m, d)) * 86400 + hh * 3600 + mi * 60 + ss;
}

// ---------------------------------------------------------------------------
// Digests

inline std::string sha256(std::span<const uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < n; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string sha256(const std::string& s) {
  return sha256(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

// ---------------------------------------------------------------------------
// Fragmented file contents: one optional byte per logical offset.

class ShadowOracle {
 public:
  enum class Outcome { ok, hole };
  struct Read {
    std::vector<uint8_t> bytes;
    std::optional<uint64_t> hole;  // first unmapped offset in the range
  };

  explicit ShadowOracle(std::vector<uint8_t> initial) : data_(std::move(initial)), mapped_(data_.size(), true) {}

  uint64_t size() const { return data_.size(); }

  // Writes starting strictly inside a hole are rejected; writes past the end
  // leave a hole between the old end and the offset.
  Outcome patch(uint64_t offset, std::span<const uint8_t> bytes) {
    if (offset > 0 && offset < size() && !mapped_[offset] && !mapped_[offset - 1]) return Outcome::hole;
    if (offset + bytes.size() > size()) {
      data_.resize(offset + bytes.size(), 0);
      mapped_.resize(offset + bytes.size(), false);
    }
    for (size_t i = 0; i < bytes.size(); ++i) {
      data_[offset + i] = bytes[i];
      mapped_[offset + i] = true;
    }
    return Outcome::ok;
  }

  Read read(uint64_t pos, uint64_t n) const {
    Read r;
    uint64_t end = std::min<uint64_t>(size(), pos + n);
    for (uint64_t i = pos; i < end; ++i) {
      if (!mapped_[i]) {
        r.hole = i;
        return r;
      }
    }
    r.bytes.assign(data_.begin() + static_cast<std::ptrdiff_t>(std::min(pos, size())),
                   data_.begin() + static_cast<std::ptrdiff_t>(end));
    return r;
  }

  uint64_t mapped_count() const {
    uint64_t n = 0;
    for (bool b : mapped_) n += b;
    return n;
  }

 private:
  std::vector<uint8_t> data_;
  std::vector<bool> mapped_;
};

// ---------------------------------------------------------------------------
// Soft-link resolution over a toy tree. Strings use 0xFE (down) and 0xFD (up).

class RefTree {
 public:
  enum class Kind { file, dir, link };
  enum class Status { ok, not_found, not_a_directory, above_root, link_depth };
  struct Result {
    Status status = Status::ok;
    uint32_t id = 0;  // file number of the final target
  };

  RefTree() { parent_[1] = 0; }

  void add_dir(uint32_t parent, const std::string& name, uint32_t id) {
    dirs_[parent][name] = {Kind::dir, id, 0, {}};
    parent_[id] = parent;
    dirs_[id];
  }
  void add_file(uint32_t dir, const std::string& name, uint32_t id) { dirs_[dir][name] = {Kind::file, id, 0, {}}; }
  void add_link(uint32_t dir, const std::string& name, uint32_t id, uint32_t target_dir, const std::string& target) {
    dirs_[dir][name] = {Kind::link, id, target_dir, target};
  }

  Result resolve(uint32_t start, const std::string& s) const {
    int depth = 0;
    Resolved r = run(start, s, depth);
    return {r.status, r.id};
  }

 private:
  struct Entry {
    Kind kind;
    uint32_t id;
    uint32_t target_dir;
    std::string target;
  };
  struct Resolved {
    Status status = Status::ok;
    uint32_t id = 0;
    uint32_t holder = 0;  // directory containing the target
    bool is_dir = false;
  };

  Resolved lookup(uint32_t dir, const std::string& name, int& depth) const {
    auto d = dirs_.find(dir);
    if (d == dirs_.end()) return {Status::not_found};
    auto e = d->second.find(name);
    if (e == d->second.end()) return {Status::not_found};
    const Entry& x = e->second;
    if (x.kind == Kind::link) {
      if (++depth > 64) return {Status::link_depth};
      return run(x.target_dir, x.target, depth);
    }
    return {Status::ok, x.id, dir, x.kind == Kind::dir};
  }

  Resolved run(uint32_t start, const std::string& s, int& depth) const {
    uint32_t cur = start;
    std::string name;
    for (char ch : s) {
      auto c = static_cast<uint8_t>(ch);
      if (c == 0xFE) {
        if (name.empty()) continue;
        Resolved r = lookup(cur, name, depth);
        if (r.status != Status::ok) return r;
        if (!r.is_dir) return {Status::not_a_directory};
        cur = r.id;
        name.clear();
      } else if (c == 0xFD) {
        if (name.empty()) {
          if (cur == 1) return {Status::above_root};
          cur = parent_.at(cur);
        } else {
          Resolved r = lookup(cur, name, depth);
          if (r.status != Status::ok) return r;
          if (r.holder == 0) return {Status::above_root};
          cur = r.holder;
          name.clear();
        }
      } else {
        name += ch;
      }
    }
    if (!name.empty()) return lookup(cur, name, depth);
    return {Status::ok, cur, parent_.at(cur), true};
  }

  std::map<uint32_t, std::map<std::string, Entry>> dirs_;
  std::map<uint32_t, uint32_t> parent_;
};

}  // namespace oracle
