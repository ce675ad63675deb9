#include <fnmatch.h>

#include <algorithm>

#include "cdfs/error.hpp"
#include "cdfs/volume.hpp"

namespace cdfs {

namespace {

constexpr unsigned kMaxLinkDepth = 64;

struct Token {
  enum Kind { name, down, up } kind;
  std::string text;
};

std::vector<Token> tokenize(std::string_view path, std::string_view downdir, std::string_view updir,
                            bool updir_is_dir) {
  std::vector<Token> out;
  std::string pending;
  auto flush = [&] {
    if (pending.empty()) return;
    if (updir_is_dir && pending == updir) {
      out.push_back({Token::up, {}});
    } else {
      out.push_back({Token::name, pending});
    }
    pending.clear();
  };
  size_t i = 0;
  while (i < path.size()) {
    std::string_view rest = path.substr(i);
    if (!downdir.empty() && rest.starts_with(downdir)) {
      flush();
      out.push_back({Token::down, {}});
      i += downdir.size();
    } else if (!updir_is_dir && !updir.empty() && rest.starts_with(updir)) {
      flush();
      out.push_back({Token::up, {}});
      i += updir.size();
    } else {
      pending += path[i++];
    }
  }
  flush();
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Entry helpers

DirEntry* Volume::find(uint32_t dirnum, std::string_view name) {
  auto& entries = contents(dirnum).entries;
  auto it = std::lower_bound(entries.begin(), entries.end(), name,
                             [](const DirEntry& e, std::string_view n) { return name_less(e.name, n); });
  if (it != entries.end() && it->name == name) return &*it;
  return nullptr;
}

DirEntry& Volume::require_entry(uint32_t dirnum, std::string_view name) {
  DirEntry* e = find(dirnum, name);
  if (!e) {
    fail(Errc::not_found, "no entry '" + printable(name) + "' in " + path_of_dir(dirnum));
  }
  return *e;
}

const DirEntry& Volume::primary_of(uint32_t dirnum, const DirEntry& e) {
  if (e.type != FileType::addname) return e;
  for (const auto& p : contents(dirnum).entries) {
    if (p.type != FileType::addname && p.file_number == e.file_number) return p;
  }
  fail(Errc::corrupt_image, "addname '" + printable(e.name) + "' has no primary entry");
}

void Volume::insert_entry(uint32_t dirnum, DirEntry e) {
  validate_name(e.name);
  auto& entries = contents(dirnum).entries;
  auto it = std::lower_bound(entries.begin(), entries.end(), e.name,
                             [](const DirEntry& x, const std::string& n) { return name_less(x.name, n); });
  if (it != entries.end() && it->name == e.name) {
    fail(Errc::already_exists, "'" + printable(e.name) + "' already exists in " + path_of_dir(dirnum));
  }
  entries.insert(it, std::move(e));
}

void Volume::erase_entry(uint32_t dirnum, std::string_view name) {
  auto& entries = contents(dirnum).entries;
  auto it = std::find_if(entries.begin(), entries.end(), [&](const DirEntry& e) { return e.name == name; });
  if (it != entries.end()) entries.erase(it);
}

void Volume::recount_addnames(uint32_t dirnum, uint32_t file_number) {
  auto& entries = contents(dirnum).entries;
  uint16_t n = 0;
  for (const auto& e : entries) {
    if (e.type == FileType::addname && e.file_number == file_number) ++n;
  }
  for (auto& e : entries) {
    if (e.type != FileType::addname && e.file_number == file_number) e.addname_count = n;
  }
}

std::string Volume::dir_name(uint32_t dirnum) {
  if (dirnum == kRootDirectory) return {};
  for (const auto& e : contents(node(dirnum).parent).entries) {
    if (e.type == FileType::directory && e.file_number == dirnum) return e.name;
  }
  fail(Errc::corrupt_image, "directory " + std::to_string(dirnum) + " is missing from its parent");
}

std::string Volume::backup_path(uint32_t dirnum, std::string_view name) {
  std::vector<std::string> parts;
  for (uint32_t d = dirnum; d != kRootDirectory; d = node(d).parent) parts.push_back(dir_name(d));
  std::string out;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    out += *it;
    out += static_cast<char>(kDownDelimiter);
  }
  out += name;
  return out;
}

void Volume::detach_subtree(uint32_t dirnum) {
  std::vector<uint32_t> doomed;
  for (const auto& [num, n] : dirs_) {
    for (uint32_t d = num; d != 0; d = dirs_.count(d) ? dirs_.at(d).parent : 0) {
      if (d == dirnum) {
        doomed.push_back(num);
        break;
      }
      if (d == kRootDirectory) break;
    }
  }
  for (uint32_t d : doomed) dirs_.erase(d);
}

std::vector<DirEntry> Volume::list_entries(uint32_t dirnum, std::string_view pattern) {
  std::lock_guard lock(mu_);
  const auto& entries = contents(dirnum).entries;
  if (pattern.empty()) return entries;
  std::string pat(pattern);
  std::vector<DirEntry> out;
  for (const auto& e : entries) {
    if (::fnmatch(pat.c_str(), e.name.c_str(), 0) == 0) out.push_back(e);
  }
  return out;
}

std::optional<DirEntry> Volume::lookup(uint32_t dirnum, std::string_view name) {
  std::lock_guard lock(mu_);
  if (DirEntry* e = find(dirnum, name)) return *e;
  return std::nullopt;
}

std::string Volume::path_of_dir(uint32_t dirnum, std::string_view delim, std::string_view replace) {
  std::lock_guard lock(mu_);
  node(dirnum);
  if (dirnum == kRootDirectory) return std::string(delim);
  std::vector<std::string> parts;
  for (uint32_t d = dirnum; d != kRootDirectory; d = node(d).parent) {
    std::string name = dir_name(d);
    if (!delim.empty()) {
      std::string fixed;
      for (size_t i = 0; i < name.size();) {
        if (std::string_view(name).substr(i).starts_with(delim)) {
          fixed += replace;
          i += delim.size();
        } else {
          fixed += name[i++];
        }
      }
      name = std::move(fixed);
    }
    parts.push_back(std::move(name));
  }
  std::string out;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    out += delim;
    out += *it;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Versions

std::vector<VersionInfo> Volume::versions_of(const DirEntry& e) {
  MediaAddress at = e.header_location;
  uint16_t size = e.header_size;
  if (e.type == FileType::directory) {
    const DirNode& n = node(e.file_number);
    at = n.header_location;
    size = n.header_size;
  }
  std::vector<VersionInfo> out;
  while (!at.is_null()) {
    VersionInfo v;
    v.header_location = at;
    v.header = read_header(at, size);
    v.header_size = static_cast<uint16_t>(v.header.encoded_length());
    v.version = v.header.file_info ? v.header.file_info->version_number : 0;
    if (!v.header.backup) {
      at = MediaAddress::null();
    } else {
      at = v.header.backup->previous_version;
      size = v.header.backup->previous_version_header_size;
    }
    out.push_back(std::move(v));
  }
  // Soft-link headers carry no version number; number them by age.
  for (size_t i = 0; i < out.size(); ++i) {
    if (!out[i].header.file_info) out[i].version = static_cast<uint32_t>(out.size() - i);
  }
  return out;
}

VersionInfo Volume::select_version(const DirEntry& e, uint32_t version) {
  auto all = versions_of(e);
  if (all.empty()) fail(Errc::no_such_version, "'" + printable(e.name) + "' has no written version yet");
  if (version == 0) return all.front();
  for (auto& v : all) {
    if (v.version == version) return v;
  }
  fail(Errc::no_such_version, "'" + printable(e.name) + "' has no version " + std::to_string(version));
}

std::vector<VersionInfo> Volume::history(uint32_t dirnum, std::string_view name) {
  std::lock_guard lock(mu_);
  DirEntry e = primary_of(dirnum, require_entry(dirnum, name));
  return versions_of(e);
}

Volume::NewVersion Volume::successor(const DirEntry& e, const FileHeader& prev) {
  NewVersion v;
  v.type = prev.type;
  v.file_number = prev.file_number;
  v.version = (prev.file_info ? prev.file_info->version_number : 0) + 1;
  v.creation_time = prev.file_info ? prev.file_info->creation_time : now();
  v.write_time = now();
  v.access = prev.access;
  v.site = opts_.site ? opts_.site : prev.site;
  v.properties = prev.properties;
  v.previous = e.header_location;
  v.previous_size = e.header_size;
  return v;
}

// Writes a header that reuses `prev`'s content (or link target) unchanged.
MediaAddress Volume::rewrite_header(uint32_t dirnum, std::string_view name, const FileHeader& prev,
                                    const NewVersion& v, DirEntry& entry) {
  FileHeader h = build_header(dirnum, name, v);
  h.file_info = prev.file_info;
  h.link = prev.link;
  if (h.file_info) h.file_info->version_number = v.version;
  MediaAddress at = write_group(encode_file_header(h), Payload{});
  ++files_written_;
  entry.header_location = at;
  entry.header_size = static_cast<uint16_t>(h.encoded_length());
  if (h.file_info) entry.file_version = v.version;
  return at;
}

// ---------------------------------------------------------------------------
// Mutations

uint32_t Volume::mkdir(uint32_t parent, std::string_view name) {
  std::lock_guard lock(mu_);
  validate_name(name);
  if (find(parent, name)) {
    fail(Errc::already_exists, "'" + printable(name) + "' already exists in " + path_of_dir(parent));
  }
  begin_mutation();
  Timestamp t = now();
  uint32_t num = next_free_++;
  DirNode n;
  n.number = num;
  n.parent = parent;
  n.modify_time = t;
  n.contents = Directory{};
  n.dirty = true;
  dirs_.emplace(num, std::move(n));
  DirEntry e;
  e.name = std::string(name);
  e.header_location = MediaAddress{0};
  e.modify_time = t;
  e.file_number = num;
  e.type = FileType::directory;
  insert_entry(parent, std::move(e));
  mark_dirty(parent);
  return num;
}

void Volume::delete_entry(uint32_t dirnum, std::string_view name) {
  std::lock_guard lock(mu_);
  std::string target(name);
  uint32_t where = dirnum;
  if (target.empty()) {
    if (dirnum == kRootDirectory) fail(Errc::root_protected, "the root directory may not be deleted");
    where = node(dirnum).parent;
    target = dir_name(dirnum);
  }
  DirEntry e = require_entry(where, target);
  begin_mutation();
  erase_entry(where, target);
  if (e.type == FileType::addname) {
    recount_addnames(where, e.file_number);
  } else {
    std::vector<std::string> alts;
    for (const auto& x : contents(where).entries) {
      if (x.type == FileType::addname && x.file_number == e.file_number) alts.push_back(x.name);
    }
    if (!alts.empty()) {
      // The first addname takes over as the primary name.
      DirEntry promoted = e;
      promoted.name = alts.front();
      erase_entry(where, alts.front());
      insert_entry(where, std::move(promoted));
      recount_addnames(where, e.file_number);
    } else if (e.type == FileType::directory) {
      detach_subtree(e.file_number);
    }
  }
  mark_dirty(where);
}

ResolvedEntry Volume::undelete_entry(uint32_t dirnum, std::string_view name, uint32_t version,
                                     bool assign_new_number) {
  std::lock_guard lock(mu_);
  validate_name(name);
  if (find(dirnum, name)) {
    fail(Errc::already_exists, "'" + printable(name) + "' is currently present in " + path_of_dir(dirnum));
  }
  // Search committed versions of the directory, newest first.
  std::optional<DirEntry> found;
  MediaAddress at = node(dirnum).header_location;
  uint16_t size = node(dirnum).header_size;
  while (!at.is_null() && !found) {
    FileHeader h = read_header(at, size);
    if (!h.file_info) break;
    Directory d = decode_directory(read_bytes(h.file_info->location, h.file_info->length));
    if (const DirEntry* e = find_entry(d.entries, name)) found = *e;
    if (!h.backup) break;
    at = h.backup->previous_version;
    size = h.backup->previous_version_header_size;
  }
  if (!found) {
    fail(Errc::not_found, "no earlier version of " + path_of_dir(dirnum) + " holds '" + printable(name) + "'");
  }
  DirEntry e = *found;
  e.addname_count = 0;

  if (e.type == FileType::addname) {
    bool has_primary = false;
    for (const auto& x : contents(dirnum).entries) {
      has_primary |= x.type != FileType::addname && x.file_number == e.file_number;
    }
    if (!has_primary) fail(Errc::not_found, "the primary of addname '" + printable(name) + "' is gone");
    begin_mutation();
    e.modify_time = now();
    insert_entry(dirnum, e);
    recount_addnames(dirnum, e.file_number);
    mark_dirty(dirnum);
    return ResolvedEntry{dirnum, e.file_number, e, 0, 0};
  }

  if (e.type == FileType::directory) {
    if (assign_new_number) fail(Errc::unsupported, "directories keep their number when undeleted");
    if (dirs_.count(e.file_number)) {
      fail(Errc::already_exists, "directory " + std::to_string(e.file_number) + " is live elsewhere");
    }
    if (version != 0) fail(Errc::unsupported, "directories are undeleted at their latest version");
    // Restore the subtree from the newest directory list that still holds it.
    std::optional<DirList> list;
    if (!last_eot_.current_dir_list.is_null()) list = committed_list_;
    while (list) {
      auto has = [&](uint32_t n) {
        return std::any_of(list->elements.begin(), list->elements.end(),
                           [n](const DirListElement& el) { return el.dir_number == n; });
      };
      if (has(e.file_number)) break;
      if (list->prev_dir_list.is_null()) {
        list.reset();
      } else {
        list = read_dir_list(list->prev_dir_list);
      }
    }
    if (!list) fail(Errc::not_found, "no directory list holds directory " + std::to_string(e.file_number));
    std::map<uint32_t, DirListElement> by_number;
    for (const auto& el : list->elements) by_number[el.dir_number] = el;
    begin_mutation();
    for (const auto& [num, el] : by_number) {
      bool inside = false;
      for (uint32_t d = num; by_number.count(d) && !inside; d = by_number[d].containing_dir) {
        inside = d == e.file_number;
        if (d == kRootDirectory) break;
      }
      if (!inside || dirs_.count(num)) continue;
      DirNode n;
      n.number = num;
      n.parent = num == e.file_number ? dirnum : el.containing_dir;
      n.header_location = el.header_location;
      n.header_size = el.header_size;
      n.modify_time = el.modify_time;
      n.contained_bytes = el.contained_bytes;
      dirs_.emplace(num, std::move(n));
    }
    insert_entry(dirnum, e);
    mark_dirty(dirnum);
    return ResolvedEntry{dirnum, e.file_number, e, 0, 0};
  }

  if (version != 0) {
    VersionInfo v = select_version(e, version);
    e.header_location = v.header_location;
    e.header_size = v.header_size;
    e.file_version = v.version;
    e.type = v.header.type;
    if (v.header.file_info) {
      e.file_size = v.header.type == FileType::fragmented ? mapped_bytes(read_map(v.header))
                                                          : v.header.file_info->length;
    }
  }
  begin_mutation();
  if (assign_new_number) {
    FileHeader prev = read_header(e.header_location, e.header_size);
    NewVersion v = successor(e, prev);
    v.file_number = next_free_++;
    e.file_number = v.file_number;
    rewrite_header(dirnum, name, prev, v, e);
  }
  e.modify_time = now();
  insert_entry(dirnum, e);
  mark_dirty(dirnum);
  return ResolvedEntry{dirnum, e.file_number, e, 0, 0};
}

void Volume::rename_entry(uint32_t dirnum, std::string_view old_name, std::string_view new_name) {
  std::lock_guard lock(mu_);
  validate_name(new_name);
  DirEntry e = require_entry(dirnum, old_name);
  if (old_name == new_name) return;
  if (find(dirnum, new_name)) {
    fail(Errc::already_exists, "'" + printable(new_name) + "' already exists in " + path_of_dir(dirnum));
  }
  begin_mutation();
  e.name = std::string(new_name);
  e.modify_time = now();
  if (e.type == FileType::directory) {
    mark_dirty(e.file_number);  // its header records the new pathname
  } else if (e.type != FileType::addname) {
    FileHeader prev = read_header(e.header_location, e.header_size);
    rewrite_header(dirnum, new_name, prev, successor(e, prev), e);
  }
  erase_entry(dirnum, old_name);
  insert_entry(dirnum, std::move(e));
  mark_dirty(dirnum);
}

void Volume::move_entry(uint32_t src_dir, std::string_view name, uint32_t dst_dir,
                        std::string_view new_name) {
  std::lock_guard lock(mu_);
  if (src_dir == dst_dir) return rename_entry(src_dir, name, new_name);
  validate_name(new_name);
  node(dst_dir);
  DirEntry e = require_entry(src_dir, name);
  if (e.type == FileType::addname) fail(Errc::cross_directory, "addnames are confined to their directory");
  if (e.addname_count > 0) {
    fail(Errc::cross_directory, "'" + printable(name) + "' has addnames, which cannot leave its directory");
  }
  if (find(dst_dir, new_name)) {
    fail(Errc::already_exists, "'" + printable(new_name) + "' already exists in " + path_of_dir(dst_dir));
  }
  if (e.type == FileType::directory) {
    for (uint32_t d = dst_dir;; d = node(d).parent) {
      if (d == e.file_number) fail(Errc::invalid_argument, "cannot move a directory inside itself");
      if (d == kRootDirectory) break;
    }
  }
  begin_mutation();
  e.name = std::string(new_name);
  e.modify_time = now();
  if (e.type == FileType::directory) {
    node(e.file_number).parent = dst_dir;
    mark_dirty(e.file_number);
  } else {
    FileHeader prev = read_header(e.header_location, e.header_size);
    rewrite_header(dst_dir, new_name, prev, successor(e, prev), e);
  }
  erase_entry(src_dir, name);
  insert_entry(dst_dir, std::move(e));
  mark_dirty(src_dir);
  mark_dirty(dst_dir);
}

void Volume::add_addname(uint32_t dirnum, std::string_view primary, std::string_view addname) {
  std::lock_guard lock(mu_);
  validate_name(addname);
  DirEntry p = require_entry(dirnum, primary);
  if (p.type == FileType::addname) fail(Errc::invalid_argument, "'" + printable(primary) + "' is itself an addname");
  if (find(dirnum, addname)) {
    fail(Errc::already_exists, "'" + printable(addname) + "' already exists in " + path_of_dir(dirnum));
  }
  begin_mutation();
  DirEntry a;
  a.name = std::string(addname);
  a.header_location = MediaAddress::null();
  a.modify_time = now();
  a.file_number = p.file_number;
  a.type = FileType::addname;
  insert_entry(dirnum, std::move(a));
  recount_addnames(dirnum, p.file_number);
  mark_dirty(dirnum);
}

void Volume::remove_addname(uint32_t dirnum, std::string_view addname) {
  std::lock_guard lock(mu_);
  DirEntry e = require_entry(dirnum, addname);
  if (e.type != FileType::addname) {
    if (e.addname_count == 0) {
      fail(Errc::orphaning_removal, "'" + printable(addname) + "' is the file's only name");
    }
    fail(Errc::invalid_argument, "'" + printable(addname) + "' is a primary name; delete it instead");
  }
  begin_mutation();
  erase_entry(dirnum, addname);
  recount_addnames(dirnum, e.file_number);
  mark_dirty(dirnum);
}

void Volume::make_link(uint32_t dirnum, std::string_view name, uint32_t target_dir,
                       std::string_view target, uint32_t target_version) {
  std::lock_guard lock(mu_);
  validate_name(name);
  if (find(dirnum, name)) {
    fail(Errc::already_exists, "'" + printable(name) + "' already exists in " + path_of_dir(dirnum));
  }
  if (target.empty()) fail(Errc::invalid_argument, "empty link target");
  for (const auto& tok : tokenize(target, "\xFE", "\xFD", false)) {
    if (tok.kind == Token::name && !is_valid_name(tok.text)) {
      fail(Errc::invalid_name, "bad component '" + printable(tok.text) + "' in link target");
    }
  }
  begin_mutation();
  Timestamp t = now();
  NewVersion v;
  v.type = FileType::soft_link;
  v.file_number = next_free_;
  v.creation_time = t;
  v.write_time = t;
  v.access = default_access();
  v.site = opts_.site;
  FileHeader h = build_header(dirnum, name, v);
  h.link = SoftLinkInfo{1, t, target_dir, target_version, std::string(target)};
  auto bytes = encode_file_header(h);
  MediaAddress at = write_group(bytes, Payload{});
  ++next_free_;
  ++files_written_;
  DirEntry e;
  e.name = std::string(name);
  e.header_location = at;
  e.modify_time = t;
  e.file_number = v.file_number;
  e.file_version = 1;
  e.type = FileType::soft_link;
  e.header_size = static_cast<uint16_t>(h.encoded_length());
  insert_entry(dirnum, std::move(e));
  mark_dirty(dirnum);
}

// ---------------------------------------------------------------------------
// Destruction

std::vector<std::pair<uint64_t, uint64_t>> Volume::owned_ranges(const VersionInfo& v) {
  const uint64_t bs = scheme_.block_size();
  std::vector<std::pair<uint64_t, uint64_t>> out;
  auto span_of = [&](MediaAddress at, uint64_t len) {
    if (len == 0) return;
    uint64_t first = scheme_.byte_position(at);
    out.emplace_back(first / bs, (first + len - 1) / bs);
  };
  span_of(v.header_location, v.header.encoded_length());
  if (!v.header.file_info) return out;
  const FileInfo& fi = *v.header.file_info;
  if (v.header.type == FileType::fragmented) {
    try {
      FileMap m = read_map(v.header);
      span_of(fi.location, m.encoded_length());
      for (const auto& s : m.strips) span_of(s.location, s.valid_chars);
    } catch (const Error&) {
      span_of(fi.location, kStripInfoSize);
    }
  } else {
    span_of(fi.location, fi.length);
  }
  return out;
}

void Volume::destroy(uint32_t dirnum, std::string_view name, uint32_t version) {
  std::lock_guard lock(mu_);
  uint32_t where = dirnum;
  std::string target(name);
  if (target.empty()) {
    if (dirnum == kRootDirectory) fail(Errc::root_protected, "the root directory may not be destroyed");
    where = node(dirnum).parent;
    target = dir_name(dirnum);
  }
  DirEntry e = primary_of(where, require_entry(where, target));
  if (e.type == FileType::directory && e.file_number == kRootDirectory) {
    fail(Errc::root_protected, "the root directory may not be destroyed");
  }
  if (e.type == FileType::directory && version != 0) {
    fail(Errc::unsupported, "directories are destroyed with all their versions (version 0)");
  }
  auto all = versions_of(e);
  std::vector<size_t> doomed;
  for (size_t i = 0; i < all.size(); ++i) {
    if (version == 0 || all[i].version == version) doomed.push_back(i);
  }
  if (version != 0 && doomed.empty()) {
    fail(Errc::no_such_version, "'" + printable(e.name) + "' has no version " + std::to_string(version));
  }
  const bool everything = doomed.size() == all.size();

  std::set<uint64_t> kill, keep;
  for (size_t i = 0; i < all.size(); ++i) {
    bool d = std::find(doomed.begin(), doomed.end(), i) != doomed.end();
    for (auto [lo, hi] : owned_ranges(all[i])) {
      for (uint64_t b = lo; b <= hi; ++b) (d ? kill : keep).insert(b);
    }
  }
  begin_mutation();

  if (everything) {
    erase_entry(where, e.name);
    std::vector<std::string> alts;
    for (const auto& x : contents(where).entries) {
      if (x.type == FileType::addname && x.file_number == e.file_number) alts.push_back(x.name);
    }
    for (const auto& a : alts) erase_entry(where, a);
    if (e.type == FileType::directory) detach_subtree(e.file_number);
  } else {
    size_t k = doomed.front();
    DirEntry updated = e;
    if (k == 0) {
      // Newest version goes: the entry falls back to its predecessor.
      const VersionInfo& p = all[1];
      updated.header_location = p.header_location;
      updated.header_size = p.header_size;
      updated.file_version = p.version;
      updated.type = p.header.type;
      updated.file_size = p.header.type == FileType::fragmented ? mapped_bytes(read_map(p.header))
                                                                : p.header.file_info->length;
    } else {
      // Rewrite the newer headers so the chain skips version k.
      MediaAddress prev_at = k + 1 < all.size() ? all[k + 1].header_location : MediaAddress::null();
      uint16_t prev_size = k + 1 < all.size() ? all[k + 1].header_size : 0;
      for (size_t j = k; j-- > 0;) {
        FileHeader h = all[j].header;
        h.location = block_address(next_write_);
        if (!h.backup) h.backup = BackupInfo{};
        h.backup->previous_version = prev_at;
        h.backup->previous_version_header_size = prev_size;
        h.backup->previous_eot = last_eot_addr_;
        prev_at = write_group(encode_file_header(h), Payload{});
        prev_size = static_cast<uint16_t>(h.encoded_length());
        ++files_written_;
      }
      updated.header_location = prev_at;
      updated.header_size = prev_size;
    }
    updated.modify_time = now();
    erase_entry(where, e.name);
    insert_entry(where, updated);
  }
  for (uint64_t b : kill) {
    if (keep.count(b)) continue;
    if (b < next_write_ && dev_->state(b) == BlockState::written) dev_->destroy_block(b);
  }
  mark_dirty(where);
}

// ---------------------------------------------------------------------------
// Resolution

ResolvedEntry Volume::directory_entry(uint32_t dirnum) {
  ResolvedEntry r;
  r.file_number = dirnum;
  if (dirnum == kRootDirectory) {
    r.containing_dir = 0;
    r.entry.name = "";
    r.entry.header_location = MediaAddress{0};
    r.entry.modify_time = node(dirnum).modify_time;
    r.entry.file_number = kRootDirectory;
    r.entry.type = FileType::directory;
    return r;
  }
  r.containing_dir = node(dirnum).parent;
  r.entry = require_entry(r.containing_dir, dir_name(dirnum));
  return r;
}

ResolvedEntry Volume::resolve_name(uint32_t dirnum, std::string_view name, unsigned& depth, bool follow) {
  const DirEntry& e = primary_of(dirnum, require_entry(dirnum, name));
  ResolvedEntry r{dirnum, e.file_number, e, depth, 0};
  if (follow && e.type == FileType::soft_link) return follow_link(r, depth);
  return r;
}

ResolvedEntry Volume::follow_link(const ResolvedEntry& link, unsigned& depth) {
  if (++depth > kMaxLinkDepth) {
    fail(Errc::link_depth, "more than " + std::to_string(kMaxLinkDepth) + " soft links traversed");
  }
  FileHeader h = read_header(link.entry.header_location, link.entry.header_size);
  if (!h.link) fail(Errc::corrupt_image, "soft link header without link info");
  const SoftLinkInfo& li = *h.link;
  if (!dirs_.count(li.target_dir)) {
    fail(Errc::not_found, "link target directory " + std::to_string(li.target_dir) + " does not exist");
  }
  ResolvedEntry r = walk(li.target_dir, li.target_name, "\xFE", "\xFD", false, true, depth);
  if (li.target_version != 0) r.version = li.target_version;
  r.via_link_depth = depth;
  return r;
}

ResolvedEntry Volume::walk(uint32_t start, std::string_view path, std::string_view downdir,
                           std::string_view updir, bool updir_is_dir, bool follow_final, unsigned& depth) {
  uint32_t cur = start;
  std::optional<std::string> pending;
  for (const auto& tok : tokenize(path, downdir, updir, updir_is_dir)) {
    switch (tok.kind) {
      case Token::name:
        pending = tok.text;
        break;
      case Token::down:
        if (pending) {
          ResolvedEntry r = resolve_name(cur, *pending, depth, true);
          if (r.entry.type != FileType::directory) {
            fail(Errc::not_a_directory, "'" + printable(*pending) + "' is not a directory");
          }
          cur = r.file_number;
          pending.reset();
        }
        break;
      case Token::up:
        if (pending) {
          cur = resolve_name(cur, *pending, depth, true).containing_dir;
          if (cur == 0) fail(Errc::above_root, "path climbs above the root directory");
          pending.reset();
        } else {
          if (cur == kRootDirectory) fail(Errc::above_root, "path climbs above the root directory");
          cur = node(cur).parent;
        }
        break;
    }
  }
  if (pending) return resolve_name(cur, *pending, depth, follow_final);
  ResolvedEntry r = directory_entry(cur);
  r.via_link_depth = depth;
  return r;
}

ResolvedEntry Volume::resolve_path(std::string_view path, uint32_t context, std::string_view downdir,
                                   std::string_view updir, bool updir_is_dir, bool follow_final) {
  std::lock_guard lock(mu_);
  node(context);
  unsigned depth = 0;
  if (!downdir.empty() && path.starts_with(downdir)) {
    context = kRootDirectory;
    path.remove_prefix(downdir.size());
  }
  return walk(context, path, downdir, updir, updir_is_dir, follow_final, depth);
}

ResolvedEntry Volume::resolve_link(const ResolvedEntry& link) {
  std::lock_guard lock(mu_);
  if (link.entry.type != FileType::soft_link) fail(Errc::invalid_argument, "entry is not a soft link");
  unsigned depth = link.via_link_depth;
  return follow_link(link, depth);
}

FileInfoView Volume::file_info(uint32_t dirnum, std::string_view name, uint32_t version, bool want_full) {
  std::lock_guard lock(mu_);
  const DirEntry& e = primary_of(dirnum, require_entry(dirnum, name));
  FileInfoView view{dirnum, e, std::nullopt, std::nullopt};
  if (!want_full && version == 0) return view;
  VersionInfo v = select_version(e, version);
  if (v.header.file_info && e.type != FileType::directory) {
    view.entry.header_location = v.header_location;
    view.entry.header_size = v.header_size;
    view.entry.file_version = v.version;
    view.entry.type = v.header.type;
  }
  if (v.header.type == FileType::fragmented) {
    view.map = read_map(v.header);
    view.entry.file_size = mapped_bytes(*view.map);
  } else if (v.header.file_info && e.type != FileType::directory) {
    view.entry.file_size = v.header.file_info->length;
  }
  if (want_full) {
    view.header = std::move(v.header);
  } else {
    view.map.reset();
  }
  return view;
}

}  // namespace cdfs
