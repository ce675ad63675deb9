#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cdfs/device.hpp"
#include "cdfs/format.hpp"

namespace cdfs {

class Spool;
class Volume;

using Clock = std::function<Timestamp()>;

struct VolumeOptions {
  std::string owner;              // recorded in the EOT at init
  std::optional<SiteInfo> site;   // stamped into every header written this session
  Clock clock;                    // defaults to the system clock
  std::filesystem::path spool_dir;  // defaults to $CDFS_SPOOL_DIR, then the temp dir
  std::string file_owner;         // AccessInfo defaults for new files
  std::string file_group;
  uint16_t file_access = 0664;    // CDFS bit layout (see posix_to_cdfs_access)
};

struct MountStats {
  uint64_t locate_probes = 0;  // block 0, search and virgin checks
  uint64_t total_probes = 0;   // including the terminal EOT and the dir list
  bool premastered = false;
  bool recovered = false;
  uint64_t orphan_first = 0;   // [orphan_first, orphan_end) when recovered
  uint64_t orphan_end = 0;
};

struct ResolvedEntry {
  uint32_t containing_dir = 0;
  uint32_t file_number = 0;
  DirEntry entry;
  unsigned via_link_depth = 0;
  uint32_t version = 0;  // 0 = newest; set by links carrying a target version
};

struct FileInfoView {
  uint32_t containing_dir = 0;
  DirEntry entry;
  std::optional<FileHeader> header;  // full view only
  std::optional<FileMap> map;        // full view of a fragmented file
};

struct VersionInfo {
  uint32_t version = 0;
  MediaAddress header_location;
  uint16_t header_size = 0;
  FileHeader header;
};

struct DfReport {
  uint64_t capacity = 0;
  uint64_t usable = 0;
  uint64_t written = 0;
  uint64_t virgin = 0;
  uint64_t destroyed = 0;
};

struct WriteOptions {
  bool align = false;  // content starts at offset 0 of a block
  std::optional<Timestamp> write_time;
  std::optional<AccessInfo> access;
  std::optional<PropertyList> properties;
};

// Permission bits: POSIX orders each triple as r=4 w=2 x=1, CDFS as w=4 r=2 x=1.
uint16_t posix_to_cdfs_access(uint32_t mode);
uint32_t cdfs_to_posix_access(uint16_t access);

enum class FsckStatus { ok, bad_magic, bad_checksum, self_ref_mismatch, unreadable, orphaned, malformed };
const char* fsck_status_name(FsckStatus status);

struct FsckFinding {
  MediaAddress address;
  uint64_t block = 0;
  std::string kind;  // eot, dir-list, directory, fileheader, file-map, content, block
  FsckStatus status = FsckStatus::ok;
  std::string where;  // path or structure that references the address
  std::string detail;
};

struct FsckReport {
  std::vector<FsckFinding> findings;
  std::vector<std::string> block_roles;  // one per block in [0, next_write)
  uint64_t chain_length = 0;
  uint64_t files = 0;
  uint64_t dirs = 0;
  uint64_t versions = 0;
  uint64_t destroyed_blocks = 0;
  uint64_t orphaned_blocks = 0;

  // Every reachable record decoded and passed its checks. Destroyed
  // (unreadable) and orphaned blocks do not make a volume unclean.
  bool clean() const;
  size_t count(FsckStatus status) const;
  std::string render(bool verbose) const;
};

struct CompactOptions {
  bool premastered = false;  // block 0 points at the single transaction's EOT
};

// Sequential reader over one version of a file. Reads only immutable blocks,
// so it is unaffected by later updates and may outlive nothing but the device.
class ReadStream {
 public:
  ReadStream(std::shared_ptr<BlockDevice> dev, AddressScheme scheme, FileHeader header,
             std::optional<FileMap> map);

  uint64_t size() const { return length_; }
  uint64_t tell() const { return pos_; }
  const FileHeader& header() const { return header_; }
  bool fragmented() const { return map_.has_value(); }

  std::vector<uint8_t> read(size_t n);
  std::vector<uint8_t> read_all();
  enum class Whence { start, current, end };
  uint64_t seek(int64_t offset, Whence whence = Whence::start);

 private:
  void copy_media(uint64_t media_pos, std::span<uint8_t> out);

  std::shared_ptr<BlockDevice> dev_;
  AddressScheme scheme_;
  FileHeader header_;
  std::optional<FileMap> map_;
  uint64_t length_ = 0;
  uint64_t pos_ = 0;
  uint64_t cached_block_ = ~uint64_t{0};
  std::vector<uint8_t> cache_;
};

// Spools bytes natively; nothing reaches the media until close().
class WriteStream {
 public:
  WriteStream(WriteStream&&) noexcept;
  WriteStream& operator=(WriteStream&&) = delete;
  ~WriteStream();

  void write(std::span<const uint8_t> bytes);
  uint64_t size() const;
  // Emits header and content; returns the new header's location.
  MediaAddress close();
  // Discards the spool without touching the media.
  void abandon();
  bool is_open() const { return vol_ != nullptr; }

 private:
  friend class Volume;
  WriteStream(Volume* vol, uint32_t dirnum, std::string name, WriteOptions opts,
              std::unique_ptr<Spool> spool);

  Volume* vol_;
  uint32_t dirnum_;
  std::string name_;
  WriteOptions opts_;
  std::unique_ptr<Spool> spool_;
};

// A mounted CDFS volume. One mutator at a time; all public members lock an
// internal mutex, so sharing a Volume between threads is safe but serial.
class Volume {
 public:
  static std::unique_ptr<Volume> init(std::shared_ptr<BlockDevice> dev, VolumeOptions opts = {},
                                      std::optional<AddressScheme> scheme = {});
  static std::unique_ptr<Volume> mount(std::shared_ptr<BlockDevice> dev, VolumeOptions opts = {});
  ~Volume();

  // ---- lifecycle
  MediaAddress commit();
  bool transaction_open() const;
  const Eot& last_eot() const { return last_eot_; }
  MediaAddress last_eot_address() const { return last_eot_addr_; }
  uint64_t next_write() const { return next_write_; }
  uint64_t usable_blocks() const { return usable_; }
  uint32_t next_free_file_number() const { return next_free_; }
  const AddressScheme& scheme() const { return scheme_; }
  BlockDevice& device() { return *dev_; }
  std::shared_ptr<BlockDevice> device_handle() { return dev_; }
  const MountStats& mount_stats() const { return mount_stats_; }
  const VolumeOptions& options() const { return opts_; }
  // Live directories as the next commit would record them.
  std::vector<DirListElement> dir_list();
  DfReport df() const;
  FsckReport fsck();
  std::string dump(MediaAddress addr);
  static std::unique_ptr<Volume> compact(Volume& src, std::shared_ptr<BlockDevice> dst,
                                         VolumeOptions opts = {}, CompactOptions copts = {});

  // ---- namespace
  uint32_t mkdir(uint32_t parent, std::string_view name);
  void delete_entry(uint32_t dirnum, std::string_view name);
  ResolvedEntry undelete_entry(uint32_t dirnum, std::string_view name, uint32_t version,
                               bool assign_new_number);
  void rename_entry(uint32_t dirnum, std::string_view old_name, std::string_view new_name);
  void move_entry(uint32_t src_dir, std::string_view name, uint32_t dst_dir, std::string_view new_name);
  std::vector<DirEntry> list_entries(uint32_t dirnum, std::string_view pattern = {});
  std::optional<DirEntry> lookup(uint32_t dirnum, std::string_view name);
  bool is_directory(uint32_t dirnum) const;
  uint32_t parent_of(uint32_t dirnum) const;
  std::string path_of_dir(uint32_t dirnum, std::string_view delim = "/", std::string_view replace = "\\");
  ResolvedEntry resolve_path(std::string_view path, uint32_t context = kRootDirectory,
                             std::string_view downdir = "/", std::string_view updir = "..",
                             bool updir_is_dir = false, bool follow_final = true);
  ResolvedEntry resolve_link(const ResolvedEntry& link);
  FileInfoView file_info(uint32_t dirnum, std::string_view name, uint32_t version, bool want_full);
  void add_addname(uint32_t dirnum, std::string_view primary, std::string_view addname);
  void remove_addname(uint32_t dirnum, std::string_view addname);
  void make_link(uint32_t dirnum, std::string_view name, uint32_t target_dir, std::string_view target,
                 uint32_t target_version = 0);
  void destroy(uint32_t dirnum, std::string_view name, uint32_t version);
  // Newest first.
  std::vector<VersionInfo> history(uint32_t dirnum, std::string_view name);

  // ---- file content
  ReadStream open_read(uint32_t dirnum, std::string_view name, uint32_t version = 0);
  WriteStream open_write(uint32_t dirnum, std::string_view name, WriteOptions opts = {});
  bool write_stream_open() const;
  MediaAddress write_file(uint32_t dirnum, std::string_view name, std::span<const uint8_t> bytes,
                          WriteOptions opts = {});
  std::vector<uint8_t> read_file(uint32_t dirnum, std::string_view name, uint32_t version = 0);
  void import_file(const std::filesystem::path& native, uint32_t dirnum, std::string_view name,
                   bool start_on_next_block, bool preserve,
                   std::optional<PropertyList> properties = {});
  void export_file(uint32_t dirnum, std::string_view name, uint32_t version,
                   const std::filesystem::path& native, bool preserve);
  void convert_to_fragmented(uint32_t dirnum, std::string_view name);
  void convert_to_contiguous(uint32_t dirnum, std::string_view name);
  void patch(uint32_t dirnum, std::string_view name, uint64_t offset, std::span<const uint8_t> bytes);

  static constexpr size_t kMinStripSize = 4096;

 private:
  friend class WriteStream;
  struct DirNode {
    uint32_t number = 0;
    uint32_t parent = 0;
    MediaAddress header_location = MediaAddress::null();  // committed header
    uint16_t header_size = 0;
    Timestamp modify_time;
    uint64_t contained_bytes = 0;
    std::optional<Directory> contents;
    std::optional<FileHeader> header;
    bool dirty = false;
  };
  // Content that follows a header inside one write group.
  struct Payload {
    uint64_t length = 0;
    bool align = false;
    std::function<void(std::span<uint8_t>)> fill;  // called with consecutive chunks
  };
  struct NewVersion {
    FileType type = FileType::file;
    uint32_t file_number = 0;
    uint32_t version = 1;
    Timestamp creation_time;
    Timestamp write_time;
    std::optional<AccessInfo> access;
    std::optional<SiteInfo> site;
    std::optional<PropertyList> properties;
    MediaAddress previous = MediaAddress::null();
    uint16_t previous_size = 0;
  };

  Volume(std::shared_ptr<BlockDevice> dev, VolumeOptions opts);
  void load_mounted(const Eot& eot, MediaAddress at);

  // media access
  Timestamp now() const;
  MediaAddress block_address(uint64_t ordinal, uint64_t byte_offset = 0) const;
  std::vector<uint8_t> read_bytes(MediaAddress at, size_t n);
  FileHeader read_header(MediaAddress at, size_t size_hint);
  FileMap read_map(const FileHeader& h);
  DirList read_dir_list(MediaAddress at);
  uint64_t group_blocks(size_t head_length, const Payload& payload) const;
  MediaAddress write_group(std::span<const uint8_t> head, const Payload& payload);
  std::vector<std::pair<uint64_t, uint64_t>> owned_ranges(const VersionInfo& v);

  // directory state
  DirNode& node(uint32_t dirnum);
  const DirNode& node(uint32_t dirnum) const;
  Directory& contents(uint32_t dirnum);
  void mark_dirty(uint32_t dirnum);
  void begin_mutation();
  DirEntry* find(uint32_t dirnum, std::string_view name);
  DirEntry& require_entry(uint32_t dirnum, std::string_view name);
  const DirEntry& primary_of(uint32_t dirnum, const DirEntry& e);
  void insert_entry(uint32_t dirnum, DirEntry e);
  void erase_entry(uint32_t dirnum, std::string_view name);
  void recount_addnames(uint32_t dirnum, uint32_t file_number);
  std::string backup_path(uint32_t dirnum, std::string_view name);
  void detach_subtree(uint32_t dirnum);
  uint32_t depth(uint32_t dirnum) const;

  // headers and versions
  MediaAddress content_address(size_t head_length, bool align) const;
  const FileHeader& dir_header(DirNode& n);
  FileHeader directory_header(uint32_t num, Timestamp t);
  AccessInfo default_access() const;
  std::string dir_name(uint32_t dirnum);
  FileHeader build_header(uint32_t dirnum, std::string_view name, const NewVersion& v);
  NewVersion successor(const DirEntry& e, const FileHeader& prev);
  MediaAddress rewrite_header(uint32_t dirnum, std::string_view name, const FileHeader& prev,
                              const NewVersion& v, DirEntry& entry);
  MediaAddress write_version(uint32_t dirnum, std::string_view name, const NewVersion& v,
                             const Payload& payload, uint64_t valid_bytes, uint32_t logical_length);
  std::vector<VersionInfo> versions_of(const DirEntry& e);
  VersionInfo select_version(const DirEntry& e, uint32_t version);
  ReadStream stream_for(const VersionInfo& v);
  ResolvedEntry resolve_name(uint32_t dirnum, std::string_view name, unsigned& depth, bool follow);
  ResolvedEntry follow_link(const ResolvedEntry& link, unsigned& depth);
  ResolvedEntry walk(uint32_t start, std::string_view path, std::string_view downdir,
                     std::string_view updir, bool updir_is_dir, bool follow_final, unsigned& depth);
  ResolvedEntry directory_entry(uint32_t dirnum);
  MediaAddress finish_write(WriteStream& s);
  static Payload bytes_payload(std::span<const uint8_t> bytes);

  std::shared_ptr<BlockDevice> dev_;
  VolumeOptions opts_;
  mutable std::recursive_mutex mu_;
  AddressScheme scheme_;
  uint64_t usable_ = 0;
  Eot last_eot_;
  MediaAddress last_eot_addr_;
  DirList committed_list_;  // the list named by last_eot_ (empty before the first commit)
  std::map<uint32_t, DirNode> dirs_;
  uint64_t next_write_ = 0;
  uint32_t next_free_ = 2;
  bool trans_open_ = false;
  Timestamp trans_start_;
  uint32_t files_written_ = 0;
  bool writer_open_ = false;
  MountStats mount_stats_;
};

}  // namespace cdfs
