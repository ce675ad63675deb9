#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "cdfs/address.hpp"

namespace cdfs {

struct DeviceGeometry {
  uint32_t block_size = 0;
  uint64_t capacity_blocks = 0;
  AddressScheme scheme;

  // Audio scheme with the given capacity.
  static DeviceGeometry audio(uint64_t capacity_blocks, uint32_t block_size = 2048);
  void validate() const;
  bool operator==(const DeviceGeometry&) const = default;
};

enum class BlockState : uint8_t { virgin = 0, written = 1, destroyed = 2 };

struct BlockReadResult {
  enum class Kind { written, virgin, unreadable };
  Kind kind = Kind::virgin;
  std::vector<uint8_t> data;  // block_size bytes when written

  bool written() const { return kind == Kind::written; }
  bool virgin() const { return kind == Kind::virgin; }
  bool unreadable() const { return kind == Kind::unreadable; }
};

struct BlockUsage {
  uint64_t written = 0;
  uint64_t virgin = 0;
  uint64_t destroyed = 0;
};

// Write-once block device. Blocks are written strictly in ascending order;
// every read_block counts as one probe (seek) on the session counter.
//
// Thread-safe: all operations serialize on an internal mutex.
class BlockDevice {
 public:
  explicit BlockDevice(DeviceGeometry geometry);
  virtual ~BlockDevice() = default;
  BlockDevice(const BlockDevice&) = delete;
  BlockDevice& operator=(const BlockDevice&) = delete;

  const DeviceGeometry& geometry() const { return geometry_; }
  uint32_t block_size() const { return geometry_.block_size; }
  uint64_t capacity() const { return geometry_.capacity_blocks; }

  BlockReadResult read_block(uint64_t ordinal);
  BlockReadResult read_block(MediaAddress addr) { return read_block(to_ordinal(addr)); }
  // Consecutive blocks in one sequential transfer: a single probe.
  std::vector<BlockReadResult> read_run(uint64_t first, uint64_t count);

  // `content` may be shorter than a block; the rest is zero-filled.
  void write_next(uint64_t ordinal, std::span<const uint8_t> content);
  void write_next(MediaAddress addr, std::span<const uint8_t> content) {
    write_next(to_ordinal(addr), content);
  }

  void destroy_block(uint64_t ordinal);
  void destroy_block(MediaAddress addr) { destroy_block(to_ordinal(addr)); }

  // Smallest virgin ordinal in [lo, hi), assuming written blocks precede
  // virgin ones there. Binary search over read probes; when `last_written`
  // is given it receives the content of the highest written block probed.
  std::optional<uint64_t> find_first_virgin(uint64_t lo, uint64_t hi,
                                            std::vector<uint8_t>* last_written = nullptr,
                                            uint64_t* last_written_ordinal = nullptr);

  // Bookkeeping queries; these do not move the head and are not probes.
  BlockState state(uint64_t ordinal) const;
  uint64_t written_prefix() const;
  BlockUsage usage() const;

  uint64_t probe_count() const { return probes_.load(); }
  void reset_probe_count() { probes_.store(0); }

 protected:
  // Called once by subclasses after their storage is ready.
  void adopt_states(std::vector<uint8_t> states);

  virtual void load_data(uint64_t ordinal, std::span<uint8_t> out) = 0;
  // Fills a block that was virgin until now.
  virtual void store_data(uint64_t ordinal, std::span<const uint8_t> data) = 0;
  virtual void zero_data(uint64_t ordinal) = 0;
  virtual void store_state(uint64_t ordinal, BlockState state) = 0;

  uint64_t to_ordinal(MediaAddress addr) const;
  std::vector<uint8_t> states_;

 private:
  BlockReadResult load_locked(uint64_t ordinal);

  DeviceGeometry geometry_;
  mutable std::mutex mu_;
  std::atomic<uint64_t> probes_{0};
  uint64_t prefix_ = 0;
};

// File-backed DRAW simulator. Image layout:
//   0..7    magic "CDSIM\0\0\1"
//   8..11   block size (LE32)
//   12..19  capacity in blocks (LE64)
//   20..21  used pointerdef count (LE16)
//   22..149 16 x (modulo LE32, bits LE16, pad LE16)
//   150..   one state byte per block, then block data
// Data is written sparse: the file is sized up front and never-written
// regions read back as zero.
class SimDevice final : public BlockDevice {
 public:
  static constexpr size_t kHeaderSize = 150;

  // Opens `path`; creates a fully virgin image when it does not exist and
  // `geometry` is supplied.
  static std::unique_ptr<SimDevice> open_or_create(const std::filesystem::path& path,
                                                   const std::optional<DeviceGeometry>& geometry = {});
  ~SimDevice() override;

  const std::filesystem::path& path() const { return path_; }
  static uint64_t image_size(const DeviceGeometry& geometry);

 protected:
  void load_data(uint64_t ordinal, std::span<uint8_t> out) override;
  void store_data(uint64_t ordinal, std::span<const uint8_t> data) override;
  void zero_data(uint64_t ordinal) override;
  void store_state(uint64_t ordinal, BlockState state) override;

 private:
  SimDevice(std::filesystem::path path, int fd, DeviceGeometry geometry);
  uint64_t data_offset(uint64_t ordinal) const;

  std::filesystem::path path_;
  int fd_ = -1;
};

// Volatile device used for scratch volumes and tests.
class MemoryDevice final : public BlockDevice {
 public:
  explicit MemoryDevice(DeviceGeometry geometry);

  // Copy holding only blocks [0, keep_blocks) of this device's history.
  std::unique_ptr<MemoryDevice> truncated_copy(uint64_t keep_blocks) const;

 protected:
  void load_data(uint64_t ordinal, std::span<uint8_t> out) override;
  void store_data(uint64_t ordinal, std::span<const uint8_t> data) override;
  void zero_data(uint64_t ordinal) override;
  void store_state(uint64_t, BlockState) override {}

 private:
  std::unordered_map<uint64_t, std::vector<uint8_t>> blocks_;
};

}  // namespace cdfs
