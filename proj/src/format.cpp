#include "cdfs/format.hpp"

#include <algorithm>
#include <cstdio>

#include "cdfs/error.hpp"
#include "endian.hpp"

namespace cdfs {

namespace {

using std::chrono::sys_days;
constexpr auto kEpoch = sys_days{std::chrono::year{1901} / 1 / 1};

bool has_magic(std::span<const uint8_t> bytes, const std::array<uint8_t, 8>& magic) {
  return bytes.size() >= magic.size() && std::equal(magic.begin(), magic.end(), bytes.begin());
}

void expect_magic(std::span<const uint8_t> bytes, const std::array<uint8_t, 8>& magic,
                  const char* what) {
  if (bytes.size() < magic.size()) fail(Errc::truncated, std::string(what) + " truncated");
  if (!has_magic(bytes, magic)) fail(Errc::bad_magic, std::string(what) + " has bad magic");
}

void expect_checksum(std::span<const uint8_t> record, const char* what) {
  if (!verify_checksum(record)) fail(Errc::bad_checksum, std::string(what) + " checksum mismatch");
}

void expect_location(MediaAddress found, std::optional<MediaAddress> expected, const char* what) {
  if (expected && found != *expected) {
    fail(Errc::self_ref_mismatch, std::string(what) + " self-reference does not match its address");
  }
}

void require(bool ok, Errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

std::vector<uint8_t> make_record(size_t length) { return std::vector<uint8_t>(even(length), 0); }

void check_text(const std::string& s, size_t width, const char* what) {
  require(s.size() <= width, Errc::invalid_argument,
          std::string(what) + " longer than " + std::to_string(width) + " bytes");
}

bool printable_ascii(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) {
    auto u = static_cast<unsigned char>(c);
    return u >= 0x20 && u < 0x7F;
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Timestamp

Timestamp Timestamp::from_civil(const CivilTime& c) {
  using namespace std::chrono;
  year_month_day ymd{year{c.year}, month{c.month}, day{c.day}};
  require(ymd.ok() && c.hour < 24 && c.minute < 60 && c.second < 60, Errc::invalid_argument,
          "invalid calendar time");
  auto days_since = (sys_days{ymd} - kEpoch).count();
  require(days_since >= 0, Errc::out_of_range, "time precedes 1901-01-01");
  return Timestamp{static_cast<uint64_t>(days_since) * 86400 + c.hour * 3600u + c.minute * 60u + c.second};
}

CivilTime Timestamp::to_civil() const {
  using namespace std::chrono;
  auto day_count = static_cast<int64_t>(seconds / 86400);
  auto rem = static_cast<unsigned>(seconds % 86400);
  year_month_day ymd{kEpoch + days{day_count}};
  return CivilTime{static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                   static_cast<unsigned>(ymd.day()), rem / 3600, rem / 60 % 60, rem % 60};
}

Timestamp Timestamp::from_unix(int64_t unix_seconds) {
  int64_t s = unix_seconds + kUnixEpochOffset;
  require(s >= 0, Errc::out_of_range, "time precedes 1901-01-01");
  return Timestamp{static_cast<uint64_t>(s)};
}

int64_t Timestamp::to_unix() const { return static_cast<int64_t>(seconds) - kUnixEpochOffset; }

Timestamp Timestamp::from_sys(std::chrono::system_clock::time_point tp) {
  return from_unix(std::chrono::duration_cast<std::chrono::seconds>(tp.time_since_epoch()).count());
}

std::chrono::system_clock::time_point Timestamp::to_sys() const {
  return std::chrono::system_clock::time_point{std::chrono::seconds{to_unix()}};
}

std::string Timestamp::to_string() const {
  auto c = to_civil();
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02u:%02u:%02uZ", c.year, c.month, c.day, c.hour,
                c.minute, c.second);
  return buf;
}

const char* file_type_name(FileType type) {
  switch (type) {
    case FileType::file: return "file";
    case FileType::directory: return "directory";
    case FileType::soft_link: return "soft-link";
    case FileType::fragmented: return "fragmented";
    case FileType::firm_link: return "firm-link";
    case FileType::addname: return "addname";
  }
  return "unknown";
}

bool is_known_file_type(uint16_t code) { return code >= 1 && code <= 6; }

// ---------------------------------------------------------------------------
// Checksums

uint16_t word_sum(std::span<const uint8_t> bytes) {
  uint32_t sum = 0;
  size_t i = 0;
  for (; i + 1 < bytes.size(); i += 2) sum += uint32_t{bytes[i]} | (uint32_t{bytes[i + 1]} << 8);
  if (i < bytes.size()) sum += bytes[i];
  return static_cast<uint16_t>(sum);
}

bool verify_checksum(std::span<const uint8_t> record) { return word_sum(record) == 0; }

void seal_checksum(std::span<uint8_t> record, size_t offset) {
  require(offset % 2 == 0 && offset + 2 <= record.size(), Errc::out_of_range,
          "checksum field offset out of range or odd");
  require(record[offset] == 0 && record[offset + 1] == 0, Errc::invalid_argument,
          "checksum field must be zero before sealing");
  auto value = static_cast<uint16_t>(0x10000u - word_sum(record));
  record[offset] = static_cast<uint8_t>(value);
  record[offset + 1] = static_cast<uint8_t>(value >> 8);
}

std::vector<uint8_t> checksum_seal(std::span<const uint8_t> record, size_t offset) {
  std::vector<uint8_t> out(record.begin(), record.end());
  seal_checksum(out, offset);
  return out;
}

// ---------------------------------------------------------------------------
// Names

bool is_valid_name(std::string_view name) {
  if (name.empty() || name.size() > kMaxNameLength) return false;
  return std::none_of(name.begin(), name.end(), [](char c) {
    auto u = static_cast<uint8_t>(c);
    return u == 0 || u == kDownDelimiter || u == kUpDelimiter;
  });
}

void validate_name(std::string_view name) {
  if (name.empty()) fail(Errc::invalid_name, "empty name");
  if (name.size() > kMaxNameLength) {
    fail(Errc::invalid_name, "name longer than 48 bytes: '" + printable(name) + "'");
  }
  if (!is_valid_name(name)) fail(Errc::invalid_name, "name contains a reserved byte");
}

bool name_less(std::string_view a, std::string_view b) {
  return std::lexicographical_compare(
      a.begin(), a.end(), b.begin(), b.end(),
      [](char x, char y) { return static_cast<uint8_t>(x) < static_cast<uint8_t>(y); });
}

const DirEntry* find_entry(std::span<const DirEntry> entries, std::string_view name) {
  auto it = std::lower_bound(entries.begin(), entries.end(), name,
                             [](const DirEntry& e, std::string_view n) { return name_less(e.name, n); });
  if (it != entries.end() && it->name == name) return &*it;
  return nullptr;
}

// ---------------------------------------------------------------------------
// EOT

AddressScheme Eot::scheme() const {
  require(used_pointerdefs >= 2 && used_pointerdefs <= kMaxPointerDefs, Errc::malformed,
          "EOT pointerdef count out of range");
  return AddressScheme(std::vector<PointerDef>(pointerdefs.begin(), pointerdefs.begin() + used_pointerdefs));
}

void Eot::set_scheme(const AddressScheme& scheme) {
  pointerdefs = {};
  auto e = scheme.entries();
  std::copy(e.begin(), e.end(), pointerdefs.begin());
  used_pointerdefs = static_cast<uint16_t>(e.size());
}

std::vector<uint8_t> encode_eot(const Eot& e) {
  require(e.owner.find('\0') == std::string::npos, Errc::invalid_argument, "owner name contains NUL");
  require(e.used_pointerdefs <= kMaxPointerDefs, Errc::invalid_argument, "too many pointerdefs");
  size_t length = e.encoded_length();
  require(length <= 0xFFFF, Errc::invalid_argument, "owner name too long");
  auto out = make_record(length);
  ByteWriter w(out);
  w.bytes(kEotMagic);
  w.u16(e.version);
  w.u16(static_cast<uint16_t>(length));
  w.u64(e.location.raw);
  w.u16(0);  // checksum
  w.u16(e.implementation_id);
  w.u64(e.current_dir_list.raw);
  w.u64(e.previous_eot.raw);
  w.u64(e.next_eot.raw);
  w.u64(e.filesystem_creation_time.seconds);
  w.u32(e.trans_number);
  w.u64(e.trans_start_time.seconds);
  w.u64(e.trans_end_time.seconds);
  w.u32(e.files_written);
  w.u32(e.dirs_written);
  w.u32(e.next_free_file_number);
  for (const auto& d : e.pointerdefs) {
    w.u32(d.modulo);
    w.u16(d.bits);
    w.u16(0);
  }
  w.u16(e.used_pointerdefs);
  w.bytes(e.encryption_standard);
  w.text(e.owner);
  w.u8(0);
  seal_checksum(out, kEotChecksumOffset);
  return out;
}

Eot decode_eot(std::span<const uint8_t> bytes, std::optional<MediaAddress> expected) {
  expect_magic(bytes, kEotMagic, "EOT");
  require(bytes.size() >= kEotFixedSize + 1, Errc::truncated, "EOT truncated");
  ByteReader r(bytes, 8);
  Eot e;
  e.version = r.u16();
  uint16_t length = r.u16();
  require(length >= kEotFixedSize + 1, Errc::malformed, "EOT length too small");
  require(length <= bytes.size(), Errc::truncated, "EOT truncated");
  expect_checksum(bytes.first(length), "EOT");
  e.location = MediaAddress{r.u64()};
  expect_location(e.location, expected, "EOT");
  r.u16();
  e.implementation_id = r.u16();
  e.current_dir_list = MediaAddress{r.u64()};
  e.previous_eot = MediaAddress{r.u64()};
  e.next_eot = MediaAddress{r.u64()};
  e.filesystem_creation_time = Timestamp{r.u64()};
  e.trans_number = r.u32();
  e.trans_start_time = Timestamp{r.u64()};
  e.trans_end_time = Timestamp{r.u64()};
  e.files_written = r.u32();
  e.dirs_written = r.u32();
  e.next_free_file_number = r.u32();
  for (auto& d : e.pointerdefs) {
    d.modulo = r.u32();
    d.bits = r.u16();
    r.u16();
  }
  e.used_pointerdefs = r.u16();
  require(e.used_pointerdefs <= kMaxPointerDefs, Errc::malformed, "EOT pointerdef count out of range");
  auto enc = r.bytes(32);
  std::copy(enc.begin(), enc.end(), e.encryption_standard.begin());
  auto owner = r.bytes(length - kEotFixedSize);
  require(owner.back() == 0, Errc::malformed, "EOT owner name not NUL-terminated");
  e.owner.assign(owner.begin(), owner.end() - 1);
  require(e.owner.find('\0') == std::string::npos, Errc::malformed, "EOT owner name has embedded NUL");
  return e;
}

// ---------------------------------------------------------------------------
// Directory list

std::vector<uint8_t> encode_dir_list(const DirList& d) {
  for (size_t i = 1; i < d.elements.size(); ++i) {
    require(d.elements[i - 1].dir_number < d.elements[i].dir_number, Errc::sort_violation,
            "directory list elements must ascend by directory number");
  }
  auto out = make_record(d.encoded_length());
  ByteWriter w(out);
  w.bytes(kDirListMagic);
  w.u16(d.version);
  w.u16(kDirListHeaderSize);
  w.u64(d.location.raw);
  w.u16(0);  // checksum
  w.u16(0);
  w.u64(d.prev_dir_list.raw);
  w.u32(static_cast<uint32_t>(d.elements.size()));
  for (const auto& el : d.elements) {
    w.u32(el.dir_number);
    w.u64(el.header_location.raw);
    w.u32(el.containing_dir);
    w.u64(el.modify_time.seconds);
    w.u64(el.contained_bytes);
    w.u16(el.header_size);
    w.u16(0);
  }
  seal_checksum(out, kDirListChecksumOffset);
  return out;
}

size_t peek_dir_list_length(std::span<const uint8_t> header) {
  expect_magic(header, kDirListMagic, "directory list");
  ByteReader r(header, 32);
  return kDirListHeaderSize + size_t{r.u32()} * kDirListElementSize;
}

DirList decode_dir_list(std::span<const uint8_t> bytes, std::optional<MediaAddress> expected) {
  expect_magic(bytes, kDirListMagic, "directory list");
  ByteReader r(bytes, 8);
  DirList d;
  d.version = r.u16();
  require(r.u16() == kDirListHeaderSize, Errc::malformed, "directory list header length");
  d.location = MediaAddress{r.u64()};
  r.u16();
  r.u16();
  d.prev_dir_list = MediaAddress{r.u64()};
  uint32_t count = r.u32();
  size_t total = kDirListHeaderSize + size_t{count} * kDirListElementSize;
  require(total <= bytes.size(), Errc::truncated, "directory list truncated");
  expect_checksum(bytes.first(total), "directory list");
  expect_location(d.location, expected, "directory list");
  d.elements.resize(count);
  for (auto& el : d.elements) {
    el.dir_number = r.u32();
    el.header_location = MediaAddress{r.u64()};
    el.containing_dir = r.u32();
    el.modify_time = Timestamp{r.u64()};
    el.contained_bytes = r.u64();
    el.header_size = r.u16();
    r.u16();
  }
  for (size_t i = 1; i < d.elements.size(); ++i) {
    require(d.elements[i - 1].dir_number < d.elements[i].dir_number, Errc::malformed,
            "directory list elements out of order");
  }
  return d;
}

// ---------------------------------------------------------------------------
// Directory

std::vector<uint8_t> encode_directory(const Directory& d) {
  for (size_t i = 0; i < d.entries.size(); ++i) {
    const auto& e = d.entries[i];
    validate_name(e.name);
    if (i > 0) {
      const auto& prev = d.entries[i - 1].name;
      if (prev == e.name) fail(Errc::duplicate_name, "duplicate directory entry '" + printable(e.name) + "'");
      require(name_less(prev, e.name), Errc::sort_violation, "directory entries must ascend by name");
    }
    require(is_known_file_type(static_cast<uint16_t>(e.type)) && e.type != FileType::firm_link,
            Errc::invalid_argument, "directory entry has an unwritable file type");
    require(e.type != FileType::directory || e.header_location.raw == 0, Errc::invalid_argument,
            "directory entries for directories carry location 0");
  }
  auto out = make_record(d.encoded_length());
  ByteWriter w(out);
  w.u32(d.version);
  w.u32(kDirectoryInfoSize);
  w.u32(static_cast<uint32_t>(d.entries.size()));
  w.u32(kDirEntrySize);
  for (const auto& e : d.entries) {
    w.padded(e.name, kMaxNameLength);
    w.u64(e.header_location.raw);
    w.u64(e.modify_time.seconds);
    w.u32(e.file_number);
    w.u32(e.file_size);
    w.u32(e.file_version);
    w.u16(static_cast<uint16_t>(e.type));
    w.u16(e.header_size);
    w.u16(e.addname_count);
    w.u16(0);
  }
  return out;
}

size_t peek_directory_length(std::span<const uint8_t> info) {
  ByteReader r(info, 8);
  return kDirectoryInfoSize + size_t{r.u32()} * kDirEntrySize;
}

Directory decode_directory(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  Directory d;
  d.version = r.u32();
  require(r.u32() == kDirectoryInfoSize, Errc::malformed, "directory info length");
  uint32_t count = r.u32();
  require(r.u32() == kDirEntrySize, Errc::malformed, "directory entry size");
  require(kDirectoryInfoSize + size_t{count} * kDirEntrySize <= bytes.size(), Errc::truncated,
          "directory truncated");
  d.entries.resize(count);
  for (auto& e : d.entries) {
    auto raw = r.bytes(kMaxNameLength);
    size_t n = 0;
    while (n < raw.size() && raw[n] != 0) ++n;
    require(std::all_of(raw.begin() + static_cast<std::ptrdiff_t>(n), raw.end(),
                        [](uint8_t b) { return b == 0; }),
            Errc::malformed, "directory entry name padding");
    e.name.assign(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(n));
    require(is_valid_name(e.name), Errc::malformed, "directory entry name invalid");
    e.header_location = MediaAddress{r.u64()};
    e.modify_time = Timestamp{r.u64()};
    e.file_number = r.u32();
    e.file_size = r.u32();
    e.file_version = r.u32();
    uint16_t type = r.u16();
    require(is_known_file_type(type), Errc::malformed, "directory entry file type");
    e.type = static_cast<FileType>(type);
    e.header_size = r.u16();
    e.addname_count = r.u16();
    r.u16();
  }
  for (size_t i = 1; i < d.entries.size(); ++i) {
    require(name_less(d.entries[i - 1].name, d.entries[i].name), Errc::malformed,
            "directory entries out of order");
  }
  return d;
}

// ---------------------------------------------------------------------------
// File header

namespace {

size_t section_length(const AccessInfo&) { return kAccessInfoSize; }
size_t section_length(const BackupInfo& b) { return kBackupInfoFixedSize + b.pathname.size(); }
size_t section_length(const FileInfo&) { return kFileInfoSize; }
size_t section_length(const SoftLinkInfo& l) { return kSoftLinkInfoFixedSize + l.target_name.size(); }
size_t section_length(const SiteInfo& s) { return kSiteInfoFixedSize + s.site_name.size(); }
size_t section_length(const PropertyList& p) {
  size_t n = kPropertyListInfoSize;
  for (const auto& [name, value] : p.entries) n += 4 + name.size() + value.size();
  return n;
}

template <typename T>
size_t optional_length(const std::optional<T>& s) {
  return s ? section_length(*s) : 0;
}

}  // namespace

size_t FileHeader::encoded_length() const {
  return kFileHeaderBaseSize + optional_length(access) + optional_length(backup) +
         optional_length(file_info) + optional_length(link) + optional_length(site) +
         optional_length(properties);
}

std::vector<uint8_t> encode_file_header(const FileHeader& h) {
  require(h.type != FileType::addname && h.type != FileType::firm_link &&
              is_known_file_type(static_cast<uint16_t>(h.type)),
          Errc::invalid_argument, "file header type cannot be written");
  bool is_link = h.type == FileType::soft_link;
  require(is_link == h.link.has_value(), Errc::invalid_argument,
          "soft-link info must be present exactly for soft links");
  require(!(is_link && h.file_info), Errc::invalid_argument, "soft links carry no file info");
  if (h.access) {
    check_text(h.access->owner, 32, "file owner");
    check_text(h.access->group, 32, "file group");
  }
  if (h.site) {
    check_text(h.site->opsys, 16, "opsys");
    check_text(h.site->opsys_version, 16, "opsys version");
  }
  if (h.backup) require(h.backup->pathname.size() <= 0xFFFF, Errc::invalid_argument, "pathname too long");
  if (h.properties) {
    require(h.properties->entries.size() <= 0xFFFF, Errc::invalid_argument, "too many properties");
    require(section_length(*h.properties) <= 0xFFFF, Errc::invalid_argument, "property list too long");
    for (const auto& [name, value] : h.properties->entries) {
      require(!name.empty() && printable_ascii(name) && printable_ascii(value), Errc::invalid_argument,
              "property names and values must be printable ASCII");
    }
  }
  size_t length = h.encoded_length();
  require(length <= 0xFFFF, Errc::invalid_argument, "file header longer than 65535 bytes");

  auto out = make_record(length);
  ByteWriter w(out);
  w.bytes(kFileHeaderMagic);
  w.u16(h.header_version);
  w.u16(kFileHeaderBaseSize);
  w.u16(0);  // checksum
  w.u16(static_cast<uint16_t>(length));
  w.u64(h.location.raw);
  w.u32(h.file_number);
  w.u16(static_cast<uint16_t>(h.type));

  // Offsets are assigned in the order the sections are laid out.
  size_t cursor = kFileHeaderBaseSize;
  auto place = [&cursor](size_t len) -> uint16_t {
    if (len == 0) return 0;
    auto at = static_cast<uint16_t>(cursor);
    cursor += len;
    return at;
  };
  w.u16(place(optional_length(h.access)));
  w.u16(place(optional_length(h.backup)));
  w.u16(place(optional_length(h.file_info) + optional_length(h.link)));
  w.u16(place(optional_length(h.site)));
  w.u16(place(optional_length(h.properties)));

  if (h.access) {
    w.u16(h.access->version);
    w.u16(kAccessInfoSize);
    w.padded(h.access->owner, 32);
    w.padded(h.access->group, 32);
    w.u16(h.access->access);
  }
  if (h.backup) {
    const auto& b = *h.backup;
    w.u16(b.version);
    w.u16(static_cast<uint16_t>(section_length(b)));
    w.u32(b.containing_dir);
    w.u64(b.previous_version.raw);
    w.u64(b.previous_eot.raw);
    w.u16(b.filename_offset);
    w.u16(b.previous_version_header_size);
    w.text(b.pathname);
  }
  if (h.file_info) {
    const auto& f = *h.file_info;
    w.u16(f.version);
    w.u16(kFileInfoSize);
    w.u64(f.location.raw);
    w.u32(f.length);
    w.u64(f.write_time.seconds);
    w.u64(f.creation_time.seconds);
    w.u32(f.version_number);
  }
  if (h.link) {
    const auto& l = *h.link;
    w.u16(l.version);
    w.u16(static_cast<uint16_t>(section_length(l)));
    w.u64(l.creation_time.seconds);
    w.u32(l.target_dir);
    w.u32(l.target_version);
    w.text(l.target_name);
  }
  if (h.site) {
    const auto& s = *h.site;
    w.u16(s.version);
    w.u16(static_cast<uint16_t>(section_length(s)));
    w.padded(s.opsys, 16);
    w.padded(s.opsys_version, 16);
    w.text(s.site_name);
  }
  if (h.properties) {
    const auto& p = *h.properties;
    w.u32(p.version);
    w.u16(static_cast<uint16_t>(section_length(p)));
    w.u16(static_cast<uint16_t>(p.entries.size()));
    for (const auto& [name, value] : p.entries) {
      w.u16(static_cast<uint16_t>(name.size()));
      w.u16(static_cast<uint16_t>(value.size()));
      w.text(name);
      w.text(value);
    }
  }
  seal_checksum(out, kFileHeaderChecksumOffset);
  return out;
}

size_t peek_file_header_length(std::span<const uint8_t> base) {
  expect_magic(base, kFileHeaderMagic, "file header");
  ByteReader r(base, 14);
  return r.u16();
}

FileHeader decode_file_header(std::span<const uint8_t> bytes, std::optional<MediaAddress> expected) {
  expect_magic(bytes, kFileHeaderMagic, "file header");
  require(bytes.size() >= kFileHeaderBaseSize, Errc::truncated, "file header truncated");
  ByteReader r(bytes, 8);
  FileHeader h;
  h.header_version = r.u16();
  require(r.u16() == kFileHeaderBaseSize, Errc::malformed, "file header base length");
  r.u16();
  uint16_t length = r.u16();
  require(length >= kFileHeaderBaseSize, Errc::malformed, "file header length too small");
  require(length <= bytes.size(), Errc::truncated, "file header truncated");
  auto record = bytes.first(length);
  expect_checksum(record, "file header");
  h.location = MediaAddress{r.u64()};
  expect_location(h.location, expected, "file header");
  h.file_number = r.u32();
  uint16_t type = r.u16();
  require(is_known_file_type(type) && type != static_cast<uint16_t>(FileType::addname),
          Errc::malformed, "file header type");
  h.type = static_cast<FileType>(type);

  std::array<uint16_t, 5> offsets{};
  for (auto& o : offsets) o = r.u16();
  // Each present section extends to the next present offset (or the end).
  std::array<size_t, 5> ends{};
  size_t last = kFileHeaderBaseSize - 1;
  for (size_t i = 0; i < offsets.size(); ++i) {
    if (!offsets[i]) continue;
    require(offsets[i] > last && offsets[i] < length, Errc::malformed, "file header section offsets");
    last = offsets[i];
  }
  for (size_t i = 0; i < offsets.size(); ++i) {
    if (!offsets[i]) continue;
    ends[i] = length;
    for (size_t j = i + 1; j < offsets.size(); ++j) {
      if (offsets[j]) {
        ends[i] = offsets[j];
        break;
      }
    }
  }
  auto open_section = [&](size_t i, size_t fixed) {
    ByteReader s(record.first(ends[i]), offsets[i]);
    s.u16();  // version, re-read by caller
    size_t declared = s.u16();
    require(declared >= fixed && offsets[i] + declared <= ends[i], Errc::malformed,
            "file header section overlaps its neighbour");
    s.seek(offsets[i]);
    return std::pair{ByteReader(record.first(offsets[i] + declared), offsets[i]), declared};
  };

  if (offsets[0]) {
    auto [s, len] = open_section(0, kAccessInfoSize);
    AccessInfo a;
    a.version = s.u16();
    s.u16();
    a.owner = s.padded(32);
    a.group = s.padded(32);
    a.access = s.u16();
    h.access = a;
  }
  if (offsets[1]) {
    auto [s, len] = open_section(1, kBackupInfoFixedSize);
    BackupInfo b;
    b.version = s.u16();
    s.u16();
    b.containing_dir = s.u32();
    b.previous_version = MediaAddress{s.u64()};
    b.previous_eot = MediaAddress{s.u64()};
    b.filename_offset = s.u16();
    b.previous_version_header_size = s.u16();
    b.pathname = s.text(len - kBackupInfoFixedSize);
    h.backup = b;
  }
  if (offsets[2]) {
    if (h.type == FileType::soft_link) {
      auto [s, len] = open_section(2, kSoftLinkInfoFixedSize);
      SoftLinkInfo l;
      l.version = s.u16();
      s.u16();
      l.creation_time = Timestamp{s.u64()};
      l.target_dir = s.u32();
      l.target_version = s.u32();
      l.target_name = s.text(len - kSoftLinkInfoFixedSize);
      h.link = l;
    } else {
      auto [s, len] = open_section(2, kFileInfoSize);
      FileInfo f;
      f.version = s.u16();
      s.u16();
      f.location = MediaAddress{s.u64()};
      f.length = s.u32();
      f.write_time = Timestamp{s.u64()};
      f.creation_time = Timestamp{s.u64()};
      f.version_number = s.u32();
      h.file_info = f;
    }
  }
  require(h.type != FileType::soft_link || h.link, Errc::malformed, "soft link without link info");
  if (offsets[3]) {
    auto [s, len] = open_section(3, kSiteInfoFixedSize);
    SiteInfo si;
    si.version = s.u16();
    s.u16();
    si.opsys = s.padded(16);
    si.opsys_version = s.padded(16);
    si.site_name = s.text(len - kSiteInfoFixedSize);
    h.site = si;
  }
  if (offsets[4]) {
    require(offsets[4] + kPropertyListInfoSize <= ends[4], Errc::malformed, "property list truncated");
    ByteReader s(record.first(ends[4]), offsets[4]);
    PropertyList p;
    p.version = s.u32();
    size_t declared = s.u16();
    require(declared >= kPropertyListInfoSize && offsets[4] + declared <= ends[4], Errc::malformed,
            "property list overlaps its neighbour");
    uint16_t count = s.u16();
    ByteReader body(record.first(offsets[4] + declared), s.position());
    for (uint16_t i = 0; i < count; ++i) {
      uint16_t nlen = body.u16();
      uint16_t vlen = body.u16();
      std::string name = body.text(nlen);
      std::string value = body.text(vlen);
      p.entries.emplace_back(std::move(name), std::move(value));
    }
    h.properties = std::move(p);
  }
  return h;
}

// ---------------------------------------------------------------------------
// File map

std::vector<uint8_t> encode_file_map(const FileMap& m) {
  for (size_t i = 0; i < m.strips.size(); ++i) {
    require(m.strips[i].valid_chars >= 1, Errc::invalid_argument, "zero-length strip");
    if (i > 0) {
      require(m.strips[i - 1].ordinal <= m.strips[i].ordinal, Errc::sort_violation,
              "fragment descriptors must ascend by ordinal");
    }
  }
  auto out = make_record(m.encoded_length());
  ByteWriter w(out);
  w.u32(m.version);
  w.u32(kStripInfoSize);
  w.u32(static_cast<uint32_t>(m.strips.size()));
  for (const auto& s : m.strips) {
    w.u64(s.location.raw);
    w.u32(s.valid_chars);
    w.u32(s.ordinal);
  }
  return out;
}

size_t peek_file_map_length(std::span<const uint8_t> info) {
  ByteReader r(info, 8);
  return kStripInfoSize + size_t{r.u32()} * kFragmentDescriptorSize;
}

uint64_t mapped_bytes(const FileMap& m) {
  uint64_t total = 0, reach = 0;
  for (const auto& s : m.strips) {
    uint64_t a = s.ordinal, b = uint64_t{s.ordinal} + s.valid_chars;
    if (b <= reach) continue;
    total += b - std::max(a, reach);
    reach = b;
  }
  return total;
}

FileMap decode_file_map(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  FileMap m;
  m.version = r.u32();
  require(r.u32() == kStripInfoSize, Errc::malformed, "strip info length");
  uint32_t count = r.u32();
  require(kStripInfoSize + size_t{count} * kFragmentDescriptorSize <= bytes.size(), Errc::truncated,
          "file map truncated");
  m.strips.resize(count);
  for (auto& s : m.strips) {
    s.location = MediaAddress{r.u64()};
    s.valid_chars = r.u32();
    s.ordinal = r.u32();
    require(s.valid_chars >= 1, Errc::malformed, "zero-length strip");
  }
  for (size_t i = 1; i < m.strips.size(); ++i) {
    require(m.strips[i - 1].ordinal <= m.strips[i].ordinal, Errc::malformed,
            "fragment descriptors out of order");
  }
  return m;
}

}  // namespace cdfs
