#include <fcntl.h>
#include <grp.h>
#include <pwd.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include "cdfs/error.hpp"
#include "cdfs/volume.hpp"
#include "spool.hpp"

namespace cdfs {

namespace {

constexpr size_t kChunk = 1 << 20;

// Strip covering `pos` that reaches furthest, if any.
const FragmentDescriptor* covering(const FileMap& m, uint64_t pos) {
  const FragmentDescriptor* best = nullptr;
  for (const auto& s : m.strips) {
    if (s.ordinal > pos) break;
    uint64_t end = uint64_t{s.ordinal} + s.valid_chars;
    if (end > pos && (!best || end > uint64_t{best->ordinal} + best->valid_chars)) best = &s;
  }
  return best;
}

// Length of the mapped run starting at `pos` (0 if pos is unmapped).
uint64_t run_from(const FileMap& m, uint64_t pos, uint64_t limit) {
  uint64_t cur = pos;
  while (cur < limit) {
    const FragmentDescriptor* s = covering(m, cur);
    if (!s) break;
    cur = std::min<uint64_t>(limit, uint64_t{s->ordinal} + s->valid_chars);
  }
  return cur - pos;
}

// Length of the mapped run ending just before `pos`.
uint64_t run_before(const FileMap& m, uint64_t pos, uint64_t limit) {
  uint64_t cur = pos;
  while (cur > 0 && pos - cur < limit && covering(m, cur - 1)) --cur;
  return pos - cur;
}

void io_fail(const std::string& what) { fail(Errc::io_error, what + ": " + std::strerror(errno)); }

}  // namespace

// ---------------------------------------------------------------------------
// ReadStream

ReadStream::ReadStream(std::shared_ptr<BlockDevice> dev, AddressScheme scheme, FileHeader header,
                       std::optional<FileMap> map)
    : dev_(std::move(dev)), scheme_(std::move(scheme)), header_(std::move(header)), map_(std::move(map)) {
  if (!header_.file_info) fail(Errc::invalid_argument, "header has no file content");
  length_ = header_.file_info->length;
}

void ReadStream::copy_media(uint64_t media_pos, std::span<uint8_t> out) {
  const uint32_t bs = scheme_.block_size();
  size_t filled = 0;
  while (filled < out.size()) {
    uint64_t ord = media_pos / bs;
    size_t off = media_pos % bs;
    if (ord != cached_block_) {
      auto r = dev_->read_block(ord);
      if (r.unreadable()) fail(Errc::unreadable, "block " + std::to_string(ord) + " is destroyed");
      if (r.virgin()) fail(Errc::not_written, "block " + std::to_string(ord) + " was never written");
      cache_ = std::move(r.data);
      cached_block_ = ord;
    }
    size_t take = std::min<size_t>(bs - off, out.size() - filled);
    std::copy_n(cache_.begin() + static_cast<std::ptrdiff_t>(off), take, out.begin() + static_cast<std::ptrdiff_t>(filled));
    filled += take;
    media_pos += take;
  }
}

std::vector<uint8_t> ReadStream::read(size_t n) {
  size_t k = static_cast<size_t>(std::min<uint64_t>(n, length_ - pos_));
  std::vector<uint8_t> out(k);
  if (k == 0) return out;
  if (!map_) {
    copy_media(scheme_.byte_position(header_.file_info->location) + pos_, out);
  } else {
    // Map the whole range first so a hole fails the read before any copying.
    struct Segment {
      uint64_t media;
      uint64_t logical;
      uint64_t length;
    };
    std::vector<Segment> segs;
    uint64_t cur = pos_, end = pos_ + k;
    while (cur < end) {
      const FragmentDescriptor* s = covering(*map_, cur);
      if (!s) throw HoleError(cur);
      uint64_t seg_end = std::min<uint64_t>(end, uint64_t{s->ordinal} + s->valid_chars);
      segs.push_back({scheme_.byte_position(s->location) + (cur - s->ordinal), cur, seg_end - cur});
      cur = seg_end;
    }
    for (const auto& sg : segs) {
      copy_media(sg.media, std::span<uint8_t>(out.data() + (sg.logical - pos_), sg.length));
    }
  }
  pos_ += k;
  return out;
}

std::vector<uint8_t> ReadStream::read_all() { return read(static_cast<size_t>(length_ - pos_)); }

uint64_t ReadStream::seek(int64_t offset, Whence whence) {
  int64_t base = whence == Whence::start ? 0 : whence == Whence::current ? static_cast<int64_t>(pos_)
                                                                           : static_cast<int64_t>(length_);
  int64_t target = base + offset;
  if (target < 0 || static_cast<uint64_t>(target) > length_) {
    fail(Errc::out_of_range, "seek to " + std::to_string(target) + " outside [0, " + std::to_string(length_) + "]");
  }
  pos_ = static_cast<uint64_t>(target);
  return pos_;
}

// ---------------------------------------------------------------------------
// WriteStream

WriteStream::WriteStream(Volume* vol, uint32_t dirnum, std::string name, WriteOptions opts,
                         std::unique_ptr<Spool> spool)
    : vol_(vol), dirnum_(dirnum), name_(std::move(name)), opts_(std::move(opts)), spool_(std::move(spool)) {}

WriteStream::WriteStream(WriteStream&& other) noexcept
    : vol_(other.vol_), dirnum_(other.dirnum_), name_(std::move(other.name_)),
      opts_(std::move(other.opts_)), spool_(std::move(other.spool_)) {
  other.vol_ = nullptr;
}

WriteStream::~WriteStream() {
  try {
    abandon();
  } catch (...) {
  }
}

void WriteStream::write(std::span<const uint8_t> bytes) {
  if (!vol_) fail(Errc::invalid_argument, "write stream is closed");
  spool_->append(bytes);
}

uint64_t WriteStream::size() const { return spool_ ? spool_->size() : 0; }

MediaAddress WriteStream::close() {
  if (!vol_) fail(Errc::invalid_argument, "write stream is closed");
  Volume* v = vol_;
  MediaAddress at;
  try {
    at = v->finish_write(*this);
  } catch (...) {
    vol_ = nullptr;
    spool_.reset();
    throw;
  }
  vol_ = nullptr;
  spool_.reset();
  return at;
}

void WriteStream::abandon() {
  if (!vol_) return;
  std::lock_guard lock(vol_->mu_);
  vol_->writer_open_ = false;
  vol_ = nullptr;
  spool_.reset();
}

// ---------------------------------------------------------------------------
// Opening

Volume::Payload Volume::bytes_payload(std::span<const uint8_t> bytes) {
  auto offset = std::make_shared<size_t>(0);
  return {bytes.size(), false, [bytes, offset](std::span<uint8_t> out) {
            std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(*offset), out.size(), out.begin());
            *offset += out.size();
          }};
}

ReadStream Volume::stream_for(const VersionInfo& v) {
  std::optional<FileMap> map;
  if (v.header.type == FileType::fragmented) map = read_map(v.header);
  if (!v.header.file_info) fail(Errc::invalid_argument, "version has no file content");
  return ReadStream(dev_, scheme_, v.header, std::move(map));
}

ReadStream Volume::open_read(uint32_t dirnum, std::string_view name, uint32_t version) {
  std::lock_guard lock(mu_);
  unsigned depth = 0;
  ResolvedEntry r = resolve_name(dirnum, name, depth, true);
  if (r.entry.type == FileType::directory) fail(Errc::is_a_directory, "'" + printable(name) + "' is a directory");
  return stream_for(select_version(r.entry, version ? version : r.version));
}

std::vector<uint8_t> Volume::read_file(uint32_t dirnum, std::string_view name, uint32_t version) {
  return open_read(dirnum, name, version).read_all();
}

WriteStream Volume::open_write(uint32_t dirnum, std::string_view name, WriteOptions opts) {
  std::lock_guard lock(mu_);
  validate_name(name);
  node(dirnum);
  if (writer_open_) fail(Errc::stream_open, "only one write stream may be open");
  if (DirEntry* e = find(dirnum, name)) {
    const DirEntry& p = primary_of(dirnum, *e);
    if (p.type == FileType::directory) fail(Errc::is_a_directory, "'" + printable(name) + "' is a directory");
    if (p.type == FileType::soft_link) fail(Errc::invalid_argument, "'" + printable(name) + "' is a soft link");
  }
  auto spool = std::make_unique<Spool>(opts_.spool_dir);
  writer_open_ = true;
  return WriteStream(this, dirnum, std::string(name), std::move(opts), std::move(spool));
}

MediaAddress Volume::finish_write(WriteStream& s) {
  std::lock_guard lock(mu_);
  writer_open_ = false;
  if (s.spool_->size() > UINT32_MAX) fail(Errc::out_of_range, "file longer than 4 GiB");
  auto length = static_cast<uint32_t>(s.spool_->size());
  begin_mutation();
  NewVersion v;
  std::string entry_name = s.name_;
  if (DirEntry* e = find(s.dirnum_, s.name_)) {
    const DirEntry& p = primary_of(s.dirnum_, *e);
    entry_name = p.name;
    v = successor(p, read_header(p.header_location, p.header_size));
    v.type = FileType::file;
  } else {
    v.file_number = next_free_;
    v.access = default_access();
    v.site = opts_.site;
    v.write_time = now();
    v.creation_time = v.write_time;
  }
  if (s.opts_.write_time) v.write_time = *s.opts_.write_time;
  if (s.opts_.access) v.access = s.opts_.access;
  if (s.opts_.properties) v.properties = s.opts_.properties;
  if (v.version == 1) v.creation_time = v.write_time;
  s.spool_->rewind();
  Spool* spool = s.spool_.get();
  Payload p{length, s.opts_.align, [spool](std::span<uint8_t> out) { spool->read(out); }};
  return write_version(s.dirnum_, entry_name, v, p, length, length);
}

MediaAddress Volume::write_version(uint32_t dirnum, std::string_view name, const NewVersion& v,
                                   const Payload& payload, uint64_t valid_bytes, uint32_t logical_length) {
  FileHeader h = build_header(dirnum, name, v);
  h.file_info = FileInfo{};
  h.file_info->length = logical_length;
  h.file_info->write_time = v.write_time;
  h.file_info->creation_time = v.creation_time;
  h.file_info->version_number = v.version;
  h.file_info->location = content_address(h.encoded_length(), payload.align);
  MediaAddress at = write_group(encode_file_header(h), payload);
  ++files_written_;
  if (v.file_number == next_free_) ++next_free_;

  DirEntry e;
  if (DirEntry* old = find(dirnum, name)) {
    e = *old;
    erase_entry(dirnum, name);
  }
  e.name = std::string(name);
  e.header_location = at;
  e.modify_time = v.write_time;
  e.file_number = v.file_number;
  e.file_size = static_cast<uint32_t>(valid_bytes);
  e.file_version = v.version;
  e.type = v.type;
  e.header_size = static_cast<uint16_t>(h.encoded_length());
  insert_entry(dirnum, std::move(e));
  mark_dirty(dirnum);
  return at;
}

MediaAddress Volume::write_file(uint32_t dirnum, std::string_view name, std::span<const uint8_t> bytes,
                                WriteOptions opts) {
  auto s = open_write(dirnum, name, std::move(opts));
  s.write(bytes);
  return s.close();
}

// ---------------------------------------------------------------------------
// Native import and export

void Volume::import_file(const std::filesystem::path& native, uint32_t dirnum, std::string_view name,
                         bool start_on_next_block, bool preserve, std::optional<PropertyList> properties) {
  std::ifstream in(native, std::ios::binary);
  if (!in) io_fail("cannot read " + native.string());
  WriteOptions o;
  o.align = start_on_next_block;
  o.properties = std::move(properties);
  if (preserve) {
    struct stat st {};
    if (::stat(native.c_str(), &st) != 0) io_fail("cannot stat " + native.string());
    o.write_time = Timestamp::from_unix(st.st_mtime);
    AccessInfo a;
    if (const passwd* pw = ::getpwuid(st.st_uid)) a.owner = pw->pw_name;
    else a.owner = std::to_string(st.st_uid);
    if (const group* gr = ::getgrgid(st.st_gid)) a.group = gr->gr_name;
    else a.group = std::to_string(st.st_gid);
    a.owner.resize(std::min<size_t>(a.owner.size(), 32));
    a.group.resize(std::min<size_t>(a.group.size(), 32));
    a.access = posix_to_cdfs_access(st.st_mode & 0777);
    o.access = a;
  }
  auto s = open_write(dirnum, name, std::move(o));
  std::vector<uint8_t> buf(kChunk);
  while (in) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    auto got = static_cast<size_t>(in.gcount());
    if (got == 0) break;
    s.write(std::span<const uint8_t>(buf.data(), got));
  }
  if (in.bad()) io_fail("error reading " + native.string());
  s.close();
}

void Volume::export_file(uint32_t dirnum, std::string_view name, uint32_t version,
                         const std::filesystem::path& native, bool preserve) {
  ReadStream r = open_read(dirnum, name, version);
  if (r.fragmented()) {
    // Holes cannot be represented natively; refuse before creating the file.
    r.seek(0);
    uint64_t covered = mapped_bytes(read_map(r.header()));
    if (covered < r.size()) {
      FileMap m = read_map(r.header());
      uint64_t pos = 0;
      while (pos < r.size() && covering(m, pos)) pos += run_from(m, pos, r.size());
      throw HoleError(pos);
    }
  }
  std::ofstream out(native, std::ios::binary | std::ios::trunc);
  if (!out) io_fail("cannot write " + native.string());
  try {
    while (r.tell() < r.size()) {
      auto chunk = r.read(kChunk);
      out.write(reinterpret_cast<const char*>(chunk.data()), static_cast<std::streamsize>(chunk.size()));
    }
    out.close();
    if (!out) io_fail("error writing " + native.string());
  } catch (...) {
    out.close();
    std::error_code ec;
    std::filesystem::remove(native, ec);
    throw;
  }
  if (preserve) {
    const FileHeader& h = r.header();
    timespec times[2];
    times[0].tv_sec = static_cast<time_t>(h.file_info->write_time.to_unix());
    times[0].tv_nsec = 0;
    times[1] = times[0];
    ::utimensat(AT_FDCWD, native.c_str(), times, 0);
    if (h.access) {
      ::chmod(native.c_str(), cdfs_to_posix_access(h.access->access) & 0777);
      const passwd* pw = h.access->owner.empty() ? nullptr : ::getpwnam(h.access->owner.c_str());
      const group* gr = h.access->group.empty() ? nullptr : ::getgrnam(h.access->group.c_str());
      if (pw || gr) {
        // Ownership is restored only where the caller is allowed to.
        [[maybe_unused]] int rc = ::chown(native.c_str(), pw ? pw->pw_uid : static_cast<uid_t>(-1),
                                          gr ? gr->gr_gid : static_cast<gid_t>(-1));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Fragmented files

void Volume::convert_to_fragmented(uint32_t dirnum, std::string_view name) {
  std::lock_guard lock(mu_);
  DirEntry e = primary_of(dirnum, require_entry(dirnum, name));
  if (e.type == FileType::fragmented) fail(Errc::invalid_argument, "'" + printable(name) + "' is already fragmented");
  if (e.type != FileType::file) fail(Errc::invalid_argument, "'" + printable(name) + "' is not a regular file");
  VersionInfo cur = select_version(e, 0);
  const FileInfo& fi = *cur.header.file_info;
  FileMap map;
  if (fi.length > 0) map.strips.push_back(FragmentDescriptor{fi.location, fi.length, 0});
  begin_mutation();
  NewVersion v = successor(e, cur.header);
  v.type = FileType::fragmented;
  v.write_time = fi.write_time;
  auto bytes = encode_file_map(map);
  write_version(dirnum, e.name, v, bytes_payload(bytes), fi.length, fi.length);
}

void Volume::convert_to_contiguous(uint32_t dirnum, std::string_view name) {
  std::lock_guard lock(mu_);
  DirEntry e = primary_of(dirnum, require_entry(dirnum, name));
  if (e.type != FileType::fragmented) fail(Errc::invalid_argument, "'" + printable(name) + "' is not fragmented");
  VersionInfo cur = select_version(e, 0);
  FileMap map = read_map(cur.header);
  uint32_t length = cur.header.file_info->length;
  if (mapped_bytes(map) < length) {
    fail(Errc::unsupported, "'" + printable(name) + "' has holes and cannot be made contiguous");
  }
  auto data = stream_for(cur).read_all();
  begin_mutation();
  NewVersion v = successor(e, cur.header);
  v.type = FileType::file;
  write_version(dirnum, e.name, v, bytes_payload(data), length, length);
}

void Volume::patch(uint32_t dirnum, std::string_view name, uint64_t offset, std::span<const uint8_t> bytes) {
  std::lock_guard lock(mu_);
  if (bytes.empty()) fail(Errc::invalid_argument, "empty patch");
  DirEntry e = primary_of(dirnum, require_entry(dirnum, name));
  if (e.type != FileType::file && e.type != FileType::fragmented) {
    fail(Errc::invalid_argument, "'" + printable(name) + "' is not a regular file");
  }
  if (offset + bytes.size() > UINT32_MAX) fail(Errc::out_of_range, "patch beyond 4 GiB");
  VersionInfo cur = select_version(e, 0);
  const uint64_t length = cur.header.file_info->length;
  FileMap map;
  if (e.type == FileType::fragmented) {
    map = read_map(cur.header);
  } else if (length > 0) {
    map.strips.push_back(FragmentDescriptor{cur.header.file_info->location, static_cast<uint32_t>(length), 0});
  }
  if (offset < length && !covering(map, offset) && offset > 0 && !covering(map, offset - 1)) {
    fail(Errc::hole, "patch at offset " + std::to_string(offset) + " starts inside a hole");
  }

  // Pad the new strip to the minimum size with adjacent mapped bytes.
  uint64_t s = offset, t = offset + bytes.size();
  std::vector<uint8_t> strip(bytes.begin(), bytes.end());
  ReadStream src(dev_, scheme_, cur.header, map);
  if (t - s < kMinStripSize && t < length) {
    uint64_t take = std::min<uint64_t>(kMinStripSize - (t - s), run_from(map, t, length));
    if (take > 0) {
      src.seek(static_cast<int64_t>(t));
      auto right = src.read(static_cast<size_t>(take));
      strip.insert(strip.end(), right.begin(), right.end());
      t += take;
    }
  }
  if (t - s < kMinStripSize && s > 0) {
    uint64_t take = run_before(map, std::min(s, length), kMinStripSize - (t - s));
    if (s > length) take = 0;
    if (take > 0) {
      src.seek(static_cast<int64_t>(s - take));
      auto left = src.read(static_cast<size_t>(take));
      strip.insert(strip.begin(), left.begin(), left.end());
      s -= take;
    }
  }

  // Trim old strips to the parts outside [s, t).
  FileMap next;
  for (const auto& d : map.strips) {
    uint64_t a = d.ordinal, b = a + d.valid_chars;
    if (b <= s || a >= t) {
      next.strips.push_back(d);
      continue;
    }
    if (a < s) next.strips.push_back(FragmentDescriptor{d.location, static_cast<uint32_t>(s - a), d.ordinal});
    if (b > t) {
      next.strips.push_back(FragmentDescriptor{scheme_.add_bytes(d.location, t - a),
                                               static_cast<uint32_t>(b - t), static_cast<uint32_t>(t)});
    }
  }
  FragmentDescriptor fresh{MediaAddress{}, static_cast<uint32_t>(t - s), static_cast<uint32_t>(s)};
  next.strips.push_back(fresh);
  std::stable_sort(next.strips.begin(), next.strips.end(),
                   [](const FragmentDescriptor& x, const FragmentDescriptor& y) { return x.ordinal < y.ordinal; });

  begin_mutation();
  NewVersion v = successor(e, cur.header);
  v.type = FileType::fragmented;
  auto new_length = static_cast<uint32_t>(std::max(length, t));
  // The new strip follows the map inside the same write group.
  FileHeader probe = build_header(dirnum, e.name, v);
  probe.file_info = FileInfo{};
  MediaAddress map_at = content_address(probe.encoded_length(), false);
  MediaAddress strip_at = scheme_.add_bytes(map_at, even(next.encoded_length()));
  for (auto& d : next.strips) {
    if (d.location == MediaAddress{} && d.ordinal == fresh.ordinal && d.valid_chars == fresh.valid_chars) {
      d.location = strip_at;
    }
  }
  auto map_bytes = encode_file_map(next);
  std::vector<uint8_t> payload(map_bytes);
  payload.insert(payload.end(), strip.begin(), strip.end());
  write_version(dirnum, e.name, v, bytes_payload(payload), mapped_bytes(next), new_length);
}

}  // namespace cdfs
