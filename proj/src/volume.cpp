#include "cdfs/volume.hpp"

#include <algorithm>
#include <chrono>

#include "cdfs/error.hpp"
#include "spool.hpp"

namespace cdfs {

namespace {

Timestamp system_now() { return Timestamp::from_sys(std::chrono::system_clock::now()); }

uint64_t ceil_div(uint64_t a, uint64_t b) { return (a + b - 1) / b; }

}  // namespace

uint16_t posix_to_cdfs_access(uint32_t mode) {
  uint16_t out = 0;
  for (int shift = 0; shift <= 6; shift += 3) {
    uint32_t t = (mode >> shift) & 7;
    uint16_t c = static_cast<uint16_t>((t & 1) | ((t & 4) ? 2 : 0) | ((t & 2) ? 4 : 0));
    out = static_cast<uint16_t>(out | (c << shift));
  }
  return out;
}

uint32_t cdfs_to_posix_access(uint16_t access) {
  // The mapping swaps the read and write bits, so it is its own inverse.
  return posix_to_cdfs_access(access);
}

Volume::Volume(std::shared_ptr<BlockDevice> dev, VolumeOptions opts)
    : dev_(std::move(dev)), opts_(std::move(opts)) {
  if (!opts_.clock) opts_.clock = system_now;
  if (opts_.spool_dir.empty()) opts_.spool_dir = Spool::default_dir();
}

Volume::~Volume() = default;

Timestamp Volume::now() const { return opts_.clock(); }

// ---------------------------------------------------------------------------
// Lifecycle

std::unique_ptr<Volume> Volume::init(std::shared_ptr<BlockDevice> dev, VolumeOptions opts,
                                     std::optional<AddressScheme> scheme) {
  if (!dev) fail(Errc::invalid_argument, "no device");
  if (dev->written_prefix() != 0) fail(Errc::device_not_virgin, "device already holds data");
  AddressScheme s = scheme ? *scheme : dev->geometry().scheme;
  if (s.block_size() != dev->block_size()) {
    fail(Errc::geometry_mismatch, "address scheme block size differs from the device block size");
  }
  if (std::min(dev->capacity(), s.block_count()) < 2) {
    fail(Errc::geometry_mismatch, "a volume needs at least two addressable blocks");
  }
  std::unique_ptr<Volume> v(new Volume(std::move(dev), std::move(opts)));
  v->scheme_ = s;
  Timestamp t = v->now();
  Eot e;
  e.location = s.from_linear(0);
  e.filesystem_creation_time = t;
  e.trans_start_time = t;
  e.trans_end_time = t;
  e.next_free_file_number = kRootDirectory + 1;
  e.set_scheme(s);
  e.owner = v->opts_.owner;
  v->dev_->write_next(0, encode_eot(e));
  v->next_write_ = 1;
  v->load_mounted(e, e.location);
  return v;
}

std::unique_ptr<Volume> Volume::mount(std::shared_ptr<BlockDevice> dev, VolumeOptions opts) {
  if (!dev) fail(Errc::invalid_argument, "no device");
  std::unique_ptr<Volume> v(new Volume(std::move(dev), std::move(opts)));
  BlockDevice& d = *v->dev_;
  MountStats stats;
  const uint64_t p0 = d.probe_count();

  auto b0 = d.read_block(0);
  if (!b0.written()) fail(Errc::no_valid_eot, "block 0 holds no EOT");
  Eot first;
  try {
    first = decode_eot(b0.data, MediaAddress{0});
  } catch (const Error& e) {
    fail(Errc::no_valid_eot, std::string("block 0 is not a valid EOT: ") + e.what());
  }
  AddressScheme s = first.scheme();
  if (s.block_size() != d.block_size()) {
    fail(Errc::geometry_mismatch, "volume block size differs from the device block size");
  }
  v->scheme_ = s;
  const uint64_t usable = std::min(d.capacity(), s.block_count());

  uint64_t terminal = 0;
  std::vector<uint8_t> terminal_bytes;
  auto search = [&](uint64_t lo) {
    std::vector<uint8_t> last;
    uint64_t last_ord = ~uint64_t{0};
    auto fv = d.find_first_virgin(lo, usable, &last, &last_ord);
    terminal = fv ? *fv - 1 : usable - 1;
    terminal_bytes.clear();
    if (last_ord == terminal) terminal_bytes = std::move(last);
  };
  if (!first.next_eot.is_null()) {
    uint64_t k = s.linear_index(first.next_eot);
    if (k >= usable) fail(Errc::corrupt_image, "block 0 points beyond the usable media");
    terminal = k;
    if (k + 1 < usable) {
      auto r = d.read_block(k + 1);
      if (r.virgin()) {
        stats.premastered = true;
      } else {
        search(k + 2);
        if (terminal == k + 1 && r.written()) terminal_bytes = std::move(r.data);
      }
    }
  } else {
    search(1);
    if (terminal == 0) terminal_bytes = b0.data;
  }
  stats.locate_probes = d.probe_count() - p0;

  auto try_eot = [&](uint64_t ord, const std::vector<uint8_t>& bytes) -> std::optional<Eot> {
    try {
      return decode_eot(bytes, s.from_linear(ord));
    } catch (const Error&) {
      return std::nullopt;
    }
  };
  // Blocks fetched after the search; the dir list usually sits just before the EOT.
  std::map<uint64_t, BlockReadResult> cache;
  if (terminal_bytes.empty()) {
    uint64_t first = terminal > 1 ? terminal - 1 : terminal;
    auto run = d.read_run(first, terminal - first + 1);
    for (uint64_t i = 0; i < run.size(); ++i) cache[first + i] = std::move(run[i]);
    if (cache[terminal].written()) terminal_bytes = cache[terminal].data;
  } else {
    cache[terminal] = BlockReadResult{BlockReadResult::Kind::written, terminal_bytes};
  }
  auto gather = [&](MediaAddress at, size_t n) {
    const uint32_t bs = s.block_size();
    uint64_t pos = s.byte_position(at);
    uint64_t lo = pos / bs, hi = (pos + n - 1) / bs;
    uint64_t miss_lo = hi + 1, miss_hi = lo;
    for (uint64_t o = lo; o <= hi; ++o) {
      if (cache.count(o)) continue;
      miss_lo = std::min(miss_lo, o);
      miss_hi = std::max(miss_hi, o);
    }
    if (miss_lo <= miss_hi) {
      auto run = d.read_run(miss_lo, miss_hi - miss_lo + 1);
      for (uint64_t i = 0; i < run.size(); ++i) cache.try_emplace(miss_lo + i, std::move(run[i]));
    }
    std::vector<uint8_t> out;
    out.reserve(n);
    for (uint64_t o = lo; o <= hi; ++o) {
      const auto& r = cache.at(o);
      if (r.unreadable()) fail(Errc::unreadable, "block " + std::to_string(o) + " is destroyed");
      if (r.virgin()) fail(Errc::not_written, "block " + std::to_string(o) + " was never written");
      size_t off = o == lo ? pos % bs : 0;
      size_t take = std::min<size_t>(bs - off, n - out.size());
      out.insert(out.end(), r.data.begin() + static_cast<std::ptrdiff_t>(off),
                 r.data.begin() + static_cast<std::ptrdiff_t>(off + take));
    }
    return out;
  };
  std::optional<Eot> eot;
  uint64_t eot_ord = terminal;
  if (!terminal_bytes.empty()) eot = try_eot(terminal, terminal_bytes);
  if (!eot) {
    stats.recovered = true;
    for (uint64_t o = terminal; o-- > 0;) {
      auto r = o == 0 ? b0 : d.read_block(o);
      if (!r.written()) continue;
      if ((eot = try_eot(o, r.data))) {
        eot_ord = o;
        break;
      }
    }
    if (!eot) fail(Errc::no_valid_eot, "no valid EOT found on the media");
    stats.orphan_first = eot_ord + 1;
    stats.orphan_end = terminal + 1;
  }
  v->next_write_ = terminal + 1;
  if (!eot->current_dir_list.is_null()) {
    MediaAddress at = eot->current_dir_list;
    auto head = gather(at, kDirListHeaderSize);
    v->committed_list_ = decode_dir_list(gather(at, peek_dir_list_length(head)), at);
  }
  v->load_mounted(*eot, s.from_linear(eot_ord));
  stats.total_probes = d.probe_count() - p0;
  v->mount_stats_ = stats;
  return v;
}

void Volume::load_mounted(const Eot& eot, MediaAddress at) {
  scheme_ = eot.scheme();
  usable_ = std::min(dev_->capacity(), scheme_.block_count());
  last_eot_ = eot;
  last_eot_addr_ = at;
  next_free_ = eot.next_free_file_number;
  dirs_.clear();
  if (eot.current_dir_list.is_null()) {
    DirNode root;
    root.number = kRootDirectory;
    root.modify_time = eot.filesystem_creation_time;
    root.contents = Directory{};
    dirs_.emplace(kRootDirectory, std::move(root));
    return;
  }
  for (const auto& el : committed_list_.elements) {
    DirNode n;
    n.number = el.dir_number;
    n.parent = el.containing_dir;
    n.header_location = el.header_location;
    n.header_size = el.header_size;
    n.modify_time = el.modify_time;
    n.contained_bytes = el.contained_bytes;
    dirs_.emplace(n.number, std::move(n));
  }
  if (!dirs_.count(kRootDirectory)) fail(Errc::corrupt_image, "directory list has no root directory");
}

bool Volume::transaction_open() const {
  std::lock_guard lock(mu_);
  return trans_open_;
}

bool Volume::write_stream_open() const {
  std::lock_guard lock(mu_);
  return writer_open_;
}

DfReport Volume::df() const {
  auto u = dev_->usage();
  return DfReport{dev_->capacity(), usable_, u.written, u.virgin, u.destroyed};
}

std::vector<DirListElement> Volume::dir_list() {
  std::lock_guard lock(mu_);
  std::vector<DirListElement> out;
  for (const auto& [num, n] : dirs_) {
    out.push_back(DirListElement{num, n.header_location, n.parent, n.modify_time, n.contained_bytes,
                                 n.header_size});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Media access

MediaAddress Volume::block_address(uint64_t ordinal, uint64_t byte_offset) const {
  return scheme_.add_bytes(scheme_.from_linear(ordinal), byte_offset);
}

MediaAddress Volume::content_address(size_t head_length, bool align) const {
  uint64_t off = even(head_length);
  if (align) off = ceil_div(off, scheme_.block_size()) * scheme_.block_size();
  return block_address(next_write_, off);
}

std::vector<uint8_t> Volume::read_bytes(MediaAddress at, size_t n) {
  std::vector<uint8_t> out(n);
  const uint32_t bs = scheme_.block_size();
  uint64_t pos = scheme_.byte_position(at);
  size_t filled = 0;
  while (filled < n) {
    uint64_t ord = pos / bs;
    size_t off = pos % bs;
    auto r = dev_->read_block(ord);
    if (r.unreadable()) fail(Errc::unreadable, "block " + std::to_string(ord) + " is destroyed");
    if (r.virgin()) fail(Errc::not_written, "block " + std::to_string(ord) + " was never written");
    size_t take = std::min<size_t>(bs - off, n - filled);
    std::copy_n(r.data.begin() + static_cast<std::ptrdiff_t>(off), take, out.begin() + static_cast<std::ptrdiff_t>(filled));
    filled += take;
    pos += take;
  }
  return out;
}

FileHeader Volume::read_header(MediaAddress at, size_t size_hint) {
  auto bytes = read_bytes(at, std::max(size_hint, kFileHeaderBaseSize));
  size_t len = peek_file_header_length(bytes);
  if (len > bytes.size()) bytes = read_bytes(at, len);
  return decode_file_header(bytes, at);
}

FileMap Volume::read_map(const FileHeader& h) {
  if (!h.file_info) fail(Errc::corrupt_image, "fragmented file header without file info");
  MediaAddress at = h.file_info->location;
  auto info = read_bytes(at, kStripInfoSize);
  return decode_file_map(read_bytes(at, peek_file_map_length(info)));
}

DirList Volume::read_dir_list(MediaAddress at) {
  auto head = read_bytes(at, kDirListHeaderSize);
  return decode_dir_list(read_bytes(at, peek_dir_list_length(head)), at);
}

uint64_t Volume::group_blocks(size_t head_length, const Payload& payload) const {
  uint64_t bs = scheme_.block_size();
  uint64_t off = even(head_length);
  if (payload.align) off = ceil_div(off, bs) * bs;
  return std::max<uint64_t>(1, ceil_div(off + payload.length, bs));
}

MediaAddress Volume::write_group(std::span<const uint8_t> head, const Payload& payload) {
  const uint32_t bs = scheme_.block_size();
  uint64_t blocks = group_blocks(head.size(), payload);
  if (next_write_ + blocks > usable_) {
    fail(Errc::media_full, "media full: " + std::to_string(blocks) + " blocks needed, " +
                               std::to_string(usable_ - std::min(usable_, next_write_)) + " left");
  }
  MediaAddress start = block_address(next_write_);
  std::vector<uint8_t> buf(bs, 0);
  size_t used = 0;
  auto flush = [&] {
    dev_->write_next(next_write_, buf);
    ++next_write_;
    std::fill(buf.begin(), buf.end(), 0);
    used = 0;
  };
  auto put = [&](std::span<const uint8_t> bytes) {
    while (!bytes.empty()) {
      size_t take = std::min<size_t>(bs - used, bytes.size());
      std::copy_n(bytes.begin(), take, buf.begin() + static_cast<std::ptrdiff_t>(used));
      used += take;
      bytes = bytes.subspan(take);
      if (used == bs) flush();
    }
  };
  put(head);
  uint64_t off = even(head.size());
  if (payload.align) off = ceil_div(off, bs) * bs;
  std::vector<uint8_t> zeros(off - head.size(), 0);
  put(zeros);
  uint64_t remaining = payload.length;
  while (remaining > 0) {
    size_t take = static_cast<size_t>(std::min<uint64_t>(bs - used, remaining));
    payload.fill(std::span<uint8_t>(buf.data() + used, take));
    used += take;
    remaining -= take;
    if (used == bs) flush();
  }
  if (used > 0) flush();
  return start;
}

// ---------------------------------------------------------------------------
// Directory state

Volume::DirNode& Volume::node(uint32_t dirnum) {
  auto it = dirs_.find(dirnum);
  if (it == dirs_.end()) fail(Errc::not_found, "no directory number " + std::to_string(dirnum));
  return it->second;
}

const Volume::DirNode& Volume::node(uint32_t dirnum) const {
  auto it = dirs_.find(dirnum);
  if (it == dirs_.end()) fail(Errc::not_found, "no directory number " + std::to_string(dirnum));
  return it->second;
}

const FileHeader& Volume::dir_header(DirNode& n) {
  if (!n.header) n.header = read_header(n.header_location, n.header_size);
  return *n.header;
}

Directory& Volume::contents(uint32_t dirnum) {
  DirNode& n = node(dirnum);
  if (!n.contents) {
    if (n.header_location.is_null()) {
      n.contents = Directory{};
    } else {
      const FileHeader& h = dir_header(n);
      if (h.type != FileType::directory || !h.file_info) {
        fail(Errc::corrupt_image, "directory " + std::to_string(dirnum) + " has a non-directory header");
      }
      n.contents = decode_directory(read_bytes(h.file_info->location, h.file_info->length));
    }
  }
  return *n.contents;
}

bool Volume::is_directory(uint32_t dirnum) const {
  std::lock_guard lock(mu_);
  return dirs_.count(dirnum) != 0;
}

uint32_t Volume::parent_of(uint32_t dirnum) const {
  std::lock_guard lock(mu_);
  return node(dirnum).parent;
}

void Volume::mark_dirty(uint32_t dirnum) { node(dirnum).dirty = true; }

void Volume::begin_mutation() {
  if (writer_open_) fail(Errc::stream_open, "a write stream is open");
  if (!trans_open_) {
    trans_open_ = true;
    trans_start_ = now();
  }
}

uint32_t Volume::depth(uint32_t dirnum) const {
  uint32_t d = 0;
  for (uint32_t n = dirnum; n != kRootDirectory; n = node(n).parent) ++d;
  return d;
}

// ---------------------------------------------------------------------------
// Commit

MediaAddress Volume::commit() {
  std::lock_guard lock(mu_);
  if (writer_open_) fail(Errc::stream_open, "cannot commit while a write stream is open");
  if (!trans_open_) fail(Errc::no_transaction, "no open transaction");
  const Timestamp t = std::max(now(), trans_start_);

  // Rollups cover every dirty directory and all of its ancestors.
  std::set<uint32_t> roll;
  for (const auto& [num, n] : dirs_) {
    if (!n.dirty) continue;
    for (uint32_t d = num;; d = node(d).parent) {
      if (!roll.insert(d).second || d == kRootDirectory) break;
    }
  }
  std::vector<uint32_t> order(roll.begin(), roll.end());
  std::vector<uint32_t> depths(order.size());
  for (size_t i = 0; i < order.size(); ++i) depths[i] = depth(order[i]);
  std::vector<size_t> idx(order.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return depths[a] > depths[b]; });
  std::vector<uint32_t> deepest_first;
  for (size_t i : idx) deepest_first.push_back(order[i]);

  for (uint32_t num : deepest_first) {
    Directory& d = contents(num);
    DirNode& n = node(num);
    Timestamp m = n.dirty ? t : n.modify_time;
    uint64_t bytes = 0;
    for (const auto& e : d.entries) {
      if (e.type == FileType::directory) {
        auto it = dirs_.find(e.file_number);
        if (it == dirs_.end()) continue;
        m = std::max(m, it->second.modify_time);
        bytes += it->second.contained_bytes;
      } else {
        m = std::max(m, e.modify_time);
        if (e.type == FileType::file || e.type == FileType::fragmented) bytes += e.file_size;
      }
    }
    n.modify_time = m;
    n.contained_bytes = bytes;
  }

  // Space check before anything reaches the media.
  uint64_t need = 0;
  for (uint32_t num : deepest_first) {
    if (!node(num).dirty) continue;
    FileHeader h = directory_header(num, t);
    need += group_blocks(h.encoded_length(), Payload{contents(num).encoded_length(), false, {}});
  }
  need += group_blocks(kDirListHeaderSize + dirs_.size() * kDirListElementSize, Payload{});
  need += 1;
  if (next_write_ + need > usable_) fail(Errc::media_full, "media full: commit needs " + std::to_string(need) + " blocks");

  uint32_t dirs_written = 0;
  for (uint32_t num : deepest_first) {
    DirNode& n = node(num);
    if (!n.dirty) continue;
    Directory& d = contents(num);
    for (auto& e : d.entries) {
      if (e.type != FileType::directory) continue;
      auto it = dirs_.find(e.file_number);
      if (it == dirs_.end()) continue;
      DirNode& child = it->second;
      e.modify_time = child.modify_time;
      e.header_size = child.header_size;
      if (!child.header_location.is_null()) {
        const FileHeader& ch = dir_header(child);
        e.file_size = ch.file_info ? ch.file_info->length : 0;
        e.file_version = ch.file_info ? ch.file_info->version_number : 0;
      }
    }
    FileHeader h = directory_header(num, t);
    auto record = encode_directory(d);
    h.file_info->location = content_address(h.encoded_length(), false);
    h.file_info->length = static_cast<uint32_t>(record.size());
    auto head = encode_file_header(h);
    size_t offset = 0;
    Payload p{record.size(), false, [&record, &offset](std::span<uint8_t> out) {
                std::copy_n(record.begin() + static_cast<std::ptrdiff_t>(offset), out.size(), out.begin());
                offset += out.size();
              }};
    n.header_location = write_group(head, p);
    n.header_size = static_cast<uint16_t>(h.encoded_length());
    n.header = h;
    n.dirty = false;
    ++dirs_written;
  }

  DirList dl;
  dl.location = block_address(next_write_);
  dl.prev_dir_list = last_eot_.current_dir_list;
  for (const auto& [num, n] : dirs_) {
    dl.elements.push_back(DirListElement{num, n.header_location, n.parent, n.modify_time,
                                         n.contained_bytes, n.header_size});
  }
  write_group(encode_dir_list(dl), Payload{});

  Eot e = last_eot_;
  e.location = block_address(next_write_);
  e.current_dir_list = dl.location;
  e.previous_eot = last_eot_addr_;
  e.next_eot = MediaAddress::null();
  e.trans_number = last_eot_.trans_number + 1;
  e.trans_start_time = trans_start_;
  e.trans_end_time = t;
  e.files_written = files_written_;
  e.dirs_written = dirs_written;
  e.next_free_file_number = next_free_;
  write_group(encode_eot(e), Payload{});

  last_eot_ = e;
  last_eot_addr_ = e.location;
  committed_list_ = std::move(dl);
  trans_open_ = false;
  files_written_ = 0;
  return e.location;
}

FileHeader Volume::directory_header(uint32_t num, Timestamp t) {
  DirNode& n = node(num);
  std::optional<FileHeader> prev;
  if (n.header) {
    prev = n.header;
  } else if (!n.header_location.is_null()) {
    prev = dir_header(n);
  }
  NewVersion v;
  v.type = FileType::directory;
  v.file_number = num;
  v.write_time = t;
  v.creation_time = t;
  v.version = 1;
  if (prev) {
    if (prev->file_info) {
      v.creation_time = prev->file_info->creation_time;
      if (!n.header_location.is_null()) v.version = prev->file_info->version_number + 1;
    }
    v.access = prev->access;
    v.properties = prev->properties;
    v.site = prev->site;
  } else {
    v.access = default_access();
  }
  if (opts_.site) v.site = opts_.site;
  v.previous = n.header_location;
  v.previous_size = n.header_location.is_null() ? 0 : n.header_size;
  std::string name = num == kRootDirectory ? std::string() : dir_name(num);
  FileHeader h = build_header(num == kRootDirectory ? 0 : n.parent, name, v);
  h.file_info = FileInfo{};
  h.file_info->write_time = t;
  h.file_info->creation_time = v.creation_time;
  h.file_info->version_number = v.version;
  h.file_info->length = static_cast<uint32_t>(contents(num).encoded_length());
  return h;
}

AccessInfo Volume::default_access() const {
  AccessInfo a;
  a.owner = opts_.file_owner.empty() ? last_eot_.owner : opts_.file_owner;
  a.group = opts_.file_group;
  a.access = opts_.file_access;
  if (a.owner.size() > 32) a.owner.resize(32);
  if (a.group.size() > 32) a.group.resize(32);
  return a;
}

FileHeader Volume::build_header(uint32_t dirnum, std::string_view name, const NewVersion& v) {
  FileHeader h;
  h.location = block_address(next_write_);
  h.file_number = v.file_number;
  h.type = v.type;
  h.access = v.access;
  BackupInfo b;
  b.containing_dir = dirnum;
  b.previous_version = v.previous;
  b.previous_eot = last_eot_addr_;
  b.previous_version_header_size = v.previous_size;
  std::string path = dirnum == 0 ? std::string() : backup_path(dirnum, name);
  b.filename_offset = static_cast<uint16_t>(path.size() - name.size());
  b.pathname = std::move(path);
  h.backup = std::move(b);
  h.site = v.site;
  h.properties = v.properties;
  return h;
}

// ---------------------------------------------------------------------------
// Inspection

std::string Volume::dump(MediaAddress addr) {
  std::lock_guard lock(mu_);
  if (addr.is_null()) fail(Errc::invalid_argument, "cannot dump the null address");
  auto head = read_bytes(addr, 8);
  auto has = [&](const std::array<uint8_t, 8>& magic) { return std::equal(magic.begin(), magic.end(), head.begin()); };
  if (has(kEotMagic)) {
    auto fixed = read_bytes(addr, kEotFixedSize + 1);
    size_t len = fixed[10] | (size_t{fixed[11]} << 8);
    return render(decode_eot(read_bytes(addr, std::max(len, fixed.size())), addr), scheme_);
  }
  if (has(kDirListMagic)) return render(read_dir_list(addr), scheme_);
  if (has(kFileHeaderMagic)) {
    FileHeader h = read_header(addr, 0);
    std::string out = render(h, scheme_);
    if (h.type == FileType::directory && h.file_info) {
      out += render(decode_directory(read_bytes(h.file_info->location, h.file_info->length)), scheme_);
    } else if (h.type == FileType::fragmented) {
      out += render(read_map(h), scheme_);
    }
    return out;
  }
  fail(Errc::malformed, "no EOT, directory list or file header at " + scheme_.format(addr));
}

}  // namespace cdfs
