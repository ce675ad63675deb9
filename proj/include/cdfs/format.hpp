#pragma once

// On-media record layouts. Every multi-byte integer is stored low-byte first
// and records are packed: the only padding is the explicit pad fields.

#include <array>
#include <chrono>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cdfs/address.hpp"

namespace cdfs {

inline constexpr std::array<uint8_t, 8> kEotMagic = {0x9F, 0x02, 'C', 'D', 'F', 'S', 0xAD, 0x00};
inline constexpr std::array<uint8_t, 8> kDirListMagic = {0x9F, 0x01, 'C', 'D', 'F', 'S', 0xA8, 0x00};
inline constexpr std::array<uint8_t, 8> kFileHeaderMagic = {0x9F, 0x01, 'C', 'D', 'F', 'S', 0xAD, 0x00};

inline constexpr uint8_t kDownDelimiter = 0xFE;  // octal 0376
inline constexpr uint8_t kUpDelimiter = 0xFD;    // octal 0375
inline constexpr size_t kMaxNameLength = 48;
inline constexpr uint32_t kRootDirectory = 1;

// Fixed serialized sizes.
inline constexpr size_t kEotFixedSize = 250;
inline constexpr size_t kEotChecksumOffset = 20;
inline constexpr size_t kDirListHeaderSize = 36;
inline constexpr size_t kDirListChecksumOffset = 20;
inline constexpr size_t kDirListElementSize = 36;
inline constexpr size_t kDirectoryInfoSize = 16;
inline constexpr size_t kDirEntrySize = 84;
inline constexpr size_t kFileHeaderBaseSize = 40;
inline constexpr size_t kFileHeaderChecksumOffset = 12;
inline constexpr size_t kAccessInfoSize = 70;
inline constexpr size_t kBackupInfoFixedSize = 28;
inline constexpr size_t kFileInfoSize = 36;
inline constexpr size_t kSoftLinkInfoFixedSize = 20;
inline constexpr size_t kSiteInfoFixedSize = 36;
inline constexpr size_t kPropertyListInfoSize = 8;
inline constexpr size_t kStripInfoSize = 12;
inline constexpr size_t kFragmentDescriptorSize = 16;

// ---------------------------------------------------------------------------
// Timestamps: whole seconds since 1901-01-01T00:00:00 GMT, no leap seconds.

struct CivilTime {
  int year = 1901;
  unsigned month = 1, day = 1;
  unsigned hour = 0, minute = 0, second = 0;
  bool operator==(const CivilTime&) const = default;
};

struct Timestamp {
  uint64_t seconds = 0;

  static Timestamp from_civil(const CivilTime& civil);
  CivilTime to_civil() const;
  static Timestamp from_unix(int64_t unix_seconds);
  int64_t to_unix() const;
  static Timestamp from_sys(std::chrono::system_clock::time_point tp);
  std::chrono::system_clock::time_point to_sys() const;
  std::string to_string() const;  // "YYYY-MM-DDTHH:MM:SSZ"

  auto operator<=>(const Timestamp&) const = default;
};

inline constexpr int64_t kUnixEpochOffset = 2177452800;  // 25202 days

enum class FileType : uint16_t {
  file = 1,
  directory = 2,
  soft_link = 3,
  fragmented = 4,
  firm_link = 5,  // recognized, never written
  addname = 6,
};

const char* file_type_name(FileType type);
bool is_known_file_type(uint16_t code);

// ---------------------------------------------------------------------------
// Checksums: a record summed as LE 16-bit words (zero-extended to even
// length) must total 0 mod 65536.

uint16_t word_sum(std::span<const uint8_t> bytes);
bool verify_checksum(std::span<const uint8_t> record);
// Fills the (currently zero) 16-bit field at `checksum_offset` in place.
void seal_checksum(std::span<uint8_t> record, size_t checksum_offset);
std::vector<uint8_t> checksum_seal(std::span<const uint8_t> record, size_t checksum_offset);

// ---------------------------------------------------------------------------
// End-Of-Transaction

struct Eot {
  uint16_t version = 1;
  MediaAddress location;
  uint16_t implementation_id = 1;
  MediaAddress current_dir_list = MediaAddress::null();
  MediaAddress previous_eot = MediaAddress::null();
  MediaAddress next_eot = MediaAddress::null();
  Timestamp filesystem_creation_time;
  uint32_t trans_number = 0;
  Timestamp trans_start_time;
  Timestamp trans_end_time;
  uint32_t files_written = 0;
  uint32_t dirs_written = 0;
  uint32_t next_free_file_number = 2;
  std::array<PointerDef, kMaxPointerDefs> pointerdefs{};
  uint16_t used_pointerdefs = 0;
  std::array<uint8_t, 32> encryption_standard{};
  std::string owner;

  AddressScheme scheme() const;
  void set_scheme(const AddressScheme& scheme);
  size_t encoded_length() const { return kEotFixedSize + owner.size() + 1; }

  bool operator==(const Eot&) const = default;
};

// ---------------------------------------------------------------------------
// Directory List

struct DirListElement {
  uint32_t dir_number = 0;
  MediaAddress header_location;
  uint32_t containing_dir = 0;
  Timestamp modify_time;
  uint64_t contained_bytes = 0;
  uint16_t header_size = 0;

  bool operator==(const DirListElement&) const = default;
};

struct DirList {
  uint16_t version = 1;
  MediaAddress location;
  MediaAddress prev_dir_list = MediaAddress::null();
  std::vector<DirListElement> elements;  // ascending dir_number

  size_t encoded_length() const { return kDirListHeaderSize + elements.size() * kDirListElementSize; }
  bool operator==(const DirList&) const = default;
};

// ---------------------------------------------------------------------------
// Directory

struct DirEntry {
  std::string name;  // 1..48 bytes, none of 0x00 0xFE 0xFD
  MediaAddress header_location;
  Timestamp modify_time;
  uint32_t file_number = 0;
  uint32_t file_size = 0;
  uint32_t file_version = 0;
  FileType type = FileType::file;
  uint16_t header_size = 0;
  uint16_t addname_count = 0;

  bool operator==(const DirEntry&) const = default;
};

struct Directory {
  uint32_t version = 1;
  std::vector<DirEntry> entries;  // ascending by name bytes

  size_t encoded_length() const { return kDirectoryInfoSize + entries.size() * kDirEntrySize; }
  bool operator==(const Directory&) const = default;
};

bool is_valid_name(std::string_view name);
void validate_name(std::string_view name);
// Byte-wise ordering used for directory arrays.
bool name_less(std::string_view a, std::string_view b);

// ---------------------------------------------------------------------------
// File header and its optional sections

struct AccessInfo {
  uint16_t version = 1;
  std::string owner;  // <= 32 bytes
  std::string group;  // <= 32 bytes
  uint16_t access = 0;

  bool operator==(const AccessInfo&) const = default;
};

struct BackupInfo {
  uint16_t version = 1;
  uint32_t containing_dir = 0;
  MediaAddress previous_version = MediaAddress::null();
  MediaAddress previous_eot = MediaAddress::null();
  uint16_t filename_offset = 0;
  uint16_t previous_version_header_size = 0;
  std::string pathname;  // components joined by kDownDelimiter

  bool operator==(const BackupInfo&) const = default;
};

struct FileInfo {
  uint16_t version = 1;
  MediaAddress location;
  uint32_t length = 0;
  Timestamp write_time;
  Timestamp creation_time;
  uint32_t version_number = 1;

  bool operator==(const FileInfo&) const = default;
};

struct SoftLinkInfo {
  uint16_t version = 1;
  Timestamp creation_time;
  uint32_t target_dir = kRootDirectory;
  uint32_t target_version = 0;
  std::string target_name;  // names with kDownDelimiter / kUpDelimiter

  bool operator==(const SoftLinkInfo&) const = default;
};

struct SiteInfo {
  uint16_t version = 1;
  std::string opsys;          // <= 16 bytes
  std::string opsys_version;  // <= 16 bytes
  std::string site_name;

  bool operator==(const SiteInfo&) const = default;
};

struct PropertyList {
  uint32_t version = 1;
  std::vector<std::pair<std::string, std::string>> entries;  // empty value = flag

  bool operator==(const PropertyList&) const = default;
};

struct FileHeader {
  uint16_t header_version = 1;
  MediaAddress location;
  uint32_t file_number = 0;
  FileType type = FileType::file;
  std::optional<AccessInfo> access;
  std::optional<BackupInfo> backup;
  std::optional<FileInfo> file_info;     // absent for soft links
  std::optional<SoftLinkInfo> link;      // occupies the file-info slot
  std::optional<SiteInfo> site;
  std::optional<PropertyList> properties;

  // Total serialized length (fileheader_length), before even-padding.
  size_t encoded_length() const;
  bool operator==(const FileHeader&) const = default;
};

// ---------------------------------------------------------------------------
// File map for fragmented files

struct FragmentDescriptor {
  MediaAddress location;   // first byte of the strip
  uint32_t valid_chars = 0;
  uint32_t ordinal = 0;    // logical byte offset of the strip

  bool operator==(const FragmentDescriptor&) const = default;
};

struct FileMap {
  uint32_t version = 1;
  std::vector<FragmentDescriptor> strips;  // ascending ordinal

  size_t encoded_length() const { return kStripInfoSize + strips.size() * kFragmentDescriptorSize; }
  bool operator==(const FileMap&) const = default;
};

// ---------------------------------------------------------------------------
// Codecs. Encoders return even-length byte sequences (odd records carry one
// zero pad byte). Decoders validate magic, then checksum, then the
// self-reference (when `expected` is given), throwing cdfs::Error with
// bad_magic / bad_checksum / self_ref_mismatch / truncated / malformed.

std::vector<uint8_t> encode_eot(const Eot& eot);
Eot decode_eot(std::span<const uint8_t> bytes, std::optional<MediaAddress> expected = {});

std::vector<uint8_t> encode_dir_list(const DirList& list);
DirList decode_dir_list(std::span<const uint8_t> bytes, std::optional<MediaAddress> expected = {});
// Total length announced by a dir-list header (needs kDirListHeaderSize bytes).
size_t peek_dir_list_length(std::span<const uint8_t> header);

std::vector<uint8_t> encode_directory(const Directory& dir);
Directory decode_directory(std::span<const uint8_t> bytes);
size_t peek_directory_length(std::span<const uint8_t> info);

std::vector<uint8_t> encode_file_header(const FileHeader& header);
FileHeader decode_file_header(std::span<const uint8_t> bytes,
                              std::optional<MediaAddress> expected = {});
size_t peek_file_header_length(std::span<const uint8_t> base);

std::vector<uint8_t> encode_file_map(const FileMap& map);
FileMap decode_file_map(std::span<const uint8_t> bytes);
size_t peek_file_map_length(std::span<const uint8_t> info);
// Logical bytes covered by at least one strip.
uint64_t mapped_bytes(const FileMap& map);

inline size_t even(size_t n) { return n + (n & 1); }

// Entry lookup over a sorted entry array.
const DirEntry* find_entry(std::span<const DirEntry> entries, std::string_view name);

// ---------------------------------------------------------------------------
// "name = value" structure dumps.

std::string render(const Eot& eot, const AddressScheme& scheme);
std::string render(const DirList& list, const AddressScheme& scheme);
std::string render(const Directory& dir, const AddressScheme& scheme);
std::string render(const FileHeader& header, const AddressScheme& scheme);
std::string render(const FileMap& map, const AddressScheme& scheme);
// Printable form of a name or link target; delimiter bytes become <down>/<up>.
std::string printable(std::string_view bytes);

}  // namespace cdfs
