#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cdfs/error.hpp"
#include "cdfs/volume.hpp"
#include "oracles.hpp"

namespace testing_support {

using namespace cdfs;

// Deterministic clock: one second per call from 2024-03-01.
inline Clock stepping_clock(uint64_t start = oracle::seconds_since_1901(2024, 3, 1)) {
  auto t = std::make_shared<uint64_t>(start);
  return [t] { return Timestamp{(*t)++}; };
}

inline VolumeOptions options(std::string owner = "tester") {
  VolumeOptions o;
  o.owner = std::move(owner);
  o.clock = stepping_clock();
  return o;
}

inline std::shared_ptr<MemoryDevice> memory(uint64_t blocks, uint32_t block_size = 2048) {
  return std::make_shared<MemoryDevice>(DeviceGeometry::audio(blocks, block_size));
}

inline std::vector<uint8_t> bytes(std::string_view s) { return {s.begin(), s.end()}; }

inline std::vector<uint8_t> random_bytes(std::mt19937_64& rng, size_t n) {
  std::vector<uint8_t> out(n);
  for (auto& b : out) b = static_cast<uint8_t>(rng());
  return out;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "cdfs-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

// Digest of the live tree: names, hierarchy, types, file numbers, contents and
// link targets. Versions and media addresses are left out.
inline std::string tree_listing(Volume& v) {
  std::string out;
  std::function<void(uint32_t, const std::string&)> walk = [&](uint32_t dir, const std::string& prefix) {
    for (const auto& e : v.list_entries(dir)) {
      std::string path = prefix + "/" + printable(e.name);
      out += std::string(file_type_name(e.type)) + " " + path + " #" + std::to_string(e.file_number);
      if (e.type == FileType::directory) {
        out += "\n";
        walk(e.file_number, path);
        continue;
      }
      if (e.type == FileType::soft_link) {
        auto info = v.file_info(dir, e.name, 0, true);
        const auto& l = *info.header->link;
        out += " -> " + std::to_string(l.target_dir) + ":" + printable(l.target_name) + "@" +
               std::to_string(l.target_version);
      } else if (e.type != FileType::addname) {
        try {
          out += " " + oracle::sha256(v.read_file(dir, e.name));
        } catch (const HoleError& h) {
          auto info = v.file_info(dir, e.name, 0, true);
          std::string map;
          for (const auto& s : info.map->strips) {
            auto run = v.open_read(dir, e.name);
            run.seek(s.ordinal);
            map += std::to_string(s.ordinal) + "+" + oracle::sha256(run.read(s.valid_chars)) + ",";
          }
          out += " holes " + oracle::sha256(map);
        }
      }
      out += "\n";
    }
  };
  walk(kRootDirectory, "");
  return out;
}

inline std::string tree_hash(Volume& v) { return oracle::sha256(tree_listing(v)); }

// Raw bytes at a linear media byte position, straight from the device.
inline std::vector<uint8_t> raw_bytes(BlockDevice& d, uint64_t pos, size_t n) {
  std::vector<uint8_t> out;
  const uint32_t bs = d.block_size();
  while (out.size() < n) {
    auto r = d.read_block(pos / bs);
    if (!r.written()) throw std::runtime_error("raw read of an unwritten block");
    size_t off = pos % bs;
    size_t take = std::min<size_t>(bs - off, n - out.size());
    out.insert(out.end(), r.data.begin() + static_cast<std::ptrdiff_t>(off),
               r.data.begin() + static_cast<std::ptrdiff_t>(off + take));
    pos += take;
  }
  return out;
}

inline uint32_t le(std::span<const uint8_t> b, size_t at, size_t width) {
  uint32_t v = 0;
  for (size_t i = 0; i < width; ++i) v |= static_cast<uint32_t>(b[at + i]) << (8 * i);
  return v;
}

struct AuditResult {
  size_t checked = 0;
  std::vector<std::string> failures;
};

// Re-checks every checksummed record reachable from the newest EOT with the
// reference word-sum: the EOT chain, every dir list it names, and the headers
// of all versions of live files and directories.
inline AuditResult audit_checksums(Volume& v) {
  AuditResult res;
  BlockDevice& d = v.device();
  const auto& s = v.scheme();
  auto check = [&](const std::string& what, uint64_t pos, size_t length_at, bool dir_list) {
    auto head = raw_bytes(d, pos, 36);
    size_t len = dir_list ? 36 + 36 * size_t{le(head, 32, 4)} : le(head, length_at, 2);
    auto rec = raw_bytes(d, pos, len + (len & 1));
    ++res.checked;
    if (!oracle::checksum_ok(rec)) res.failures.push_back(what + " at byte " + std::to_string(pos));
  };
  std::set<uint64_t> lists;
  for (MediaAddress at = v.last_eot_address(); !at.is_null();) {
    uint64_t pos = s.byte_position(at);
    check("eot", pos, 10, false);
    Eot e = decode_eot(raw_bytes(d, pos, d.block_size()), at);
    if (!e.current_dir_list.is_null()) lists.insert(s.byte_position(e.current_dir_list));
    at = e.previous_eot;
  }
  for (uint64_t pos : lists) check("dir-list", pos, 0, true);
  std::set<uint64_t> headers;
  for (const auto& el : v.dir_list()) {
    if (!el.header_location.is_null()) headers.insert(s.byte_position(el.header_location));
    for (const auto& e : v.list_entries(el.dir_number)) {
      if (e.type == FileType::directory || e.type == FileType::addname) continue;
      for (const auto& ver : v.history(el.dir_number, e.name)) {
        headers.insert(s.byte_position(ver.header_location));
      }
    }
  }
  for (uint64_t pos : headers) check("file-header", pos, 14, false);
  return res;
}

}  // namespace testing_support
