#include <algorithm>
#include <functional>
#include <set>
#include <sstream>

#include "cdfs/error.hpp"
#include "cdfs/volume.hpp"

namespace cdfs {

const char* fsck_status_name(FsckStatus status) {
  switch (status) {
    case FsckStatus::ok: return "ok";
    case FsckStatus::bad_magic: return "bad-magic";
    case FsckStatus::bad_checksum: return "bad-checksum";
    case FsckStatus::self_ref_mismatch: return "self-ref-mismatch";
    case FsckStatus::unreadable: return "unreadable";
    case FsckStatus::orphaned: return "orphaned";
    case FsckStatus::malformed: return "malformed";
  }
  return "?";
}

bool FsckReport::clean() const {
  return std::all_of(findings.begin(), findings.end(), [](const FsckFinding& f) {
    return f.status == FsckStatus::ok || f.status == FsckStatus::orphaned || f.status == FsckStatus::unreadable;
  });
}

size_t FsckReport::count(FsckStatus status) const {
  return static_cast<size_t>(
      std::count_if(findings.begin(), findings.end(), [&](const FsckFinding& f) { return f.status == status; }));
}

std::string FsckReport::render(bool verbose) const {
  std::ostringstream out;
  out << "chain_length = " << chain_length << "\n";
  out << "files = " << files << "\n";
  out << "dirs = " << dirs << "\n";
  out << "versions = " << versions << "\n";
  out << "blocks = " << block_roles.size() << "\n";
  out << "destroyed_blocks = " << destroyed_blocks << "\n";
  out << "orphaned_blocks = " << orphaned_blocks << "\n";
  for (auto s : {FsckStatus::ok, FsckStatus::bad_magic, FsckStatus::bad_checksum, FsckStatus::self_ref_mismatch,
                 FsckStatus::unreadable, FsckStatus::orphaned, FsckStatus::malformed}) {
    out << "findings." << fsck_status_name(s) << " = " << count(s) << "\n";
  }
  for (const auto& f : findings) {
    if (!verbose && f.status == FsckStatus::ok) continue;
    out << fsck_status_name(f.status) << " " << f.kind << " block " << f.block;
    if (!f.where.empty()) out << " " << f.where;
    if (!f.detail.empty()) out << ": " << f.detail;
    out << "\n";
  }
  if (verbose) {
    for (size_t i = 0; i < block_roles.size(); ++i) out << "block[" << i << "] = " << block_roles[i] << "\n";
  }
  out << (clean() ? "clean" : "damaged") << "\n";
  return out.str();
}

namespace {

FsckStatus status_of(Errc code) {
  switch (code) {
    case Errc::bad_magic: return FsckStatus::bad_magic;
    case Errc::bad_checksum: return FsckStatus::bad_checksum;
    case Errc::self_ref_mismatch: return FsckStatus::self_ref_mismatch;
    case Errc::unreadable:
    case Errc::not_written: return FsckStatus::unreadable;
    default: return FsckStatus::malformed;
  }
}

}  // namespace

FsckReport Volume::fsck() {
  std::lock_guard lock(mu_);
  FsckReport rep;
  const uint64_t bs = scheme_.block_size();
  rep.block_roles.assign(next_write_, "");

  auto mark = [&](MediaAddress at, uint64_t length, const char* role) {
    uint64_t pos = scheme_.byte_position(at);
    uint64_t first = pos / bs, last = (pos + std::max<uint64_t>(length, 1) - 1) / bs;
    for (uint64_t b = first; b <= last && b < next_write_; ++b) {
      if (rep.block_roles[b].empty()) rep.block_roles[b] = role;
    }
  };
  auto finding = [&](MediaAddress at, std::string kind, FsckStatus st, std::string where, std::string detail = {}) {
    rep.findings.push_back({at, scheme_.linear_index(at), std::move(kind), st, std::move(where), std::move(detail)});
  };
  // Runs `body`; a decode or read failure becomes a finding and returns false.
  auto guarded = [&](MediaAddress at, const char* kind, const std::string& where, const std::function<void()>& body) {
    try {
      body();
      return true;
    } catch (const Error& e) {
      finding(at, kind, status_of(e.code()), where, e.what());
      return false;
    }
  };
  auto in_range = [&](MediaAddress at) { return !at.is_null() && scheme_.linear_index(at) < next_write_; };

  std::set<uint64_t> seen_headers, seen_lists;
  std::set<uint32_t> file_numbers;
  std::vector<MediaAddress> dir_lists;

  // Content blocks are checked by state alone so fsck reads no file data.
  auto check_content = [&](MediaAddress at, uint64_t length, const std::string& where) {
    if (length == 0) return;
    uint64_t pos = scheme_.byte_position(at);
    for (uint64_t b = pos / bs; b <= (pos + length - 1) / bs; ++b) {
      if (b >= next_write_ || dev_->state(b) != BlockState::written) {
        finding(scheme_.from_linear(b), "content", FsckStatus::unreadable, where,
                b >= next_write_ ? "beyond the written prefix" : "block is not readable");
      }
    }
    mark(at, length, "content");
  };

  std::function<void(MediaAddress, uint16_t)> walk_headers = [&](MediaAddress at, uint16_t size) {
    while (in_range(at) && seen_headers.insert(at.raw).second) {
      FileHeader h;
      std::string where = "header";
      if (!guarded(at, "fileheader", where, [&] { h = read_header(at, size); })) return;
      if (h.backup) where = "/" + printable(h.backup->pathname);
      finding(at, "fileheader", FsckStatus::ok, where);
      mark(at, h.encoded_length(), h.type == FileType::directory ? "directory" : "header");
      if (h.type == FileType::directory) {
        if (h.file_info) {
          MediaAddress rec = h.file_info->location;
          Directory d;
          if (guarded(rec, "directory", where, [&] { d = decode_directory(read_bytes(rec, h.file_info->length)); })) {
            finding(rec, "directory", FsckStatus::ok, where);
            mark(rec, h.file_info->length, "directory");
            for (const auto& e : d.entries) {
              // Subdirectories are reached through the dir lists.
              if (e.type != FileType::addname && e.type != FileType::directory) {
                walk_headers(e.header_location, e.header_size);
              }
            }
          }
        }
      } else {
        ++rep.versions;
        file_numbers.insert(h.file_number);
        if (h.type == FileType::fragmented && h.file_info) {
          MediaAddress m = h.file_info->location;
          FileMap map;
          if (guarded(m, "file-map", where, [&] { map = read_map(h); })) {
            finding(m, "file-map", FsckStatus::ok, where);
            mark(m, map.encoded_length(), "file-map");
            for (const auto& s : map.strips) check_content(s.location, s.valid_chars, where);
          }
        } else if (h.file_info) {
          check_content(h.file_info->location, h.file_info->length, where);
        }
      }
      if (!h.backup) return;
      size = h.backup->previous_version_header_size;
      at = h.backup->previous_version;
    }
  };

  auto walk_list = [&](MediaAddress at) {
    while (in_range(at) && seen_lists.insert(at.raw).second) {
      DirList list;
      if (!guarded(at, "dir-list", "dir list", [&] { list = read_dir_list(at); })) return;
      finding(at, "dir-list", FsckStatus::ok, "dir list");
      mark(at, list.encoded_length(), "dir-list");
      for (const auto& el : list.elements) walk_headers(el.header_location, el.header_size);
      at = list.prev_dir_list;
    }
  };

  // EOT chain, newest first.
  MediaAddress at = last_eot_addr_;
  std::optional<uint32_t> expect;
  while (in_range(at)) {
    Eot eot;
    std::string where = "transaction";
    if (!guarded(at, "eot", where, [&] {
          auto block = read_bytes(scheme_.from_linear(scheme_.linear_index(at)), bs);
          eot = decode_eot(block, at);
        })) {
      break;
    }
    where += " " + std::to_string(eot.trans_number);
    ++rep.chain_length;
    if (expect && eot.trans_number != *expect) {
      finding(at, "eot", FsckStatus::malformed, where, "expected transaction " + std::to_string(*expect));
    } else {
      finding(at, "eot", FsckStatus::ok, where);
    }
    mark(at, bs, "eot");
    if (!eot.current_dir_list.is_null()) dir_lists.push_back(eot.current_dir_list);
    if (eot.previous_eot.is_null()) {
      if (scheme_.linear_index(at) != 0) finding(at, "eot", FsckStatus::malformed, where, "chain ends above block 0");
      break;
    }
    if (eot.trans_number == 0) {
      finding(at, "eot", FsckStatus::malformed, where, "transaction 0 has a predecessor");
      break;
    }
    expect = eot.trans_number - 1;
    at = eot.previous_eot;
  }
  for (MediaAddress l : dir_lists) walk_list(l);

  rep.dirs = committed_list_.elements.empty() ? 1 : committed_list_.elements.size();
  {
    // Live non-directory files of the committed tree.
    std::set<uint32_t> live;
    for (const auto& el : committed_list_.elements) {
      try {
        FileHeader h = read_header(el.header_location, el.header_size);
        if (!h.file_info) continue;
        Directory d = decode_directory(read_bytes(h.file_info->location, h.file_info->length));
        for (const auto& e : d.entries) {
          if (e.type != FileType::directory && e.type != FileType::addname) live.insert(e.file_number);
        }
      } catch (const Error&) {
      }
    }
    rep.files = live.size();
  }

  const uint64_t eot_block = last_eot_addr_.is_null() ? 0 : scheme_.linear_index(last_eot_addr_);
  for (uint64_t b = 0; b < next_write_; ++b) {
    auto& role = rep.block_roles[b];
    if (dev_->state(b) == BlockState::destroyed) {
      role = "destroyed";
      ++rep.destroyed_blocks;
      continue;
    }
    if (!role.empty()) continue;
    bool in_orphans = mount_stats_.recovered && b >= mount_stats_.orphan_first && b < mount_stats_.orphan_end;
    if (b > eot_block && !in_orphans) {
      role = "pending";
    } else {
      role = "orphaned";
      ++rep.orphaned_blocks;
      finding(scheme_.from_linear(b), "block", FsckStatus::orphaned, "", "written but unreferenced");
    }
  }
  return rep;
}

}  // namespace cdfs
