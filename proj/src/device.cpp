#include "cdfs/device.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstring>

#include "cdfs/error.hpp"
#include "endian.hpp"

namespace cdfs {

namespace {

constexpr std::array<uint8_t, 8> kSimMagic = {'C', 'D', 'S', 'I', 'M', 0, 0, 1};

[[noreturn]] void io_fail(const std::string& what) {
  fail(Errc::io_error, what + ": " + std::strerror(errno));
}

void pread_all(int fd, uint8_t* buf, size_t len, uint64_t off) {
  while (len > 0) {
    ssize_t n = ::pread(fd, buf, len, static_cast<off_t>(off));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) io_fail("read from image");
    buf += n;
    len -= static_cast<size_t>(n);
    off += static_cast<uint64_t>(n);
  }
}

void pwrite_all(int fd, const uint8_t* buf, size_t len, uint64_t off) {
  while (len > 0) {
    ssize_t n = ::pwrite(fd, buf, len, static_cast<off_t>(off));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) io_fail("write to image");
    buf += n;
    len -= static_cast<size_t>(n);
    off += static_cast<uint64_t>(n);
  }
}

bool all_zero(std::span<const uint8_t> bytes) {
  return std::all_of(bytes.begin(), bytes.end(), [](uint8_t b) { return b == 0; });
}

}  // namespace

DeviceGeometry DeviceGeometry::audio(uint64_t capacity_blocks, uint32_t block_size) {
  return DeviceGeometry{block_size, capacity_blocks, AddressScheme::audio(block_size)};
}

void DeviceGeometry::validate() const {
  if (scheme.entries().empty()) fail(Errc::invalid_argument, "geometry has no address scheme");
  if (block_size != scheme.block_size()) {
    fail(Errc::invalid_argument, "block size must equal the offset field modulo");
  }
  if (capacity_blocks < 2) fail(Errc::invalid_argument, "capacity must be at least 2 blocks");
}

// ---------------------------------------------------------------------------
// BlockDevice

BlockDevice::BlockDevice(DeviceGeometry geometry) : geometry_(std::move(geometry)) {
  geometry_.validate();
}

void BlockDevice::adopt_states(std::vector<uint8_t> states) {
  states_ = std::move(states);
  prefix_ = 0;
  while (prefix_ < states_.size() && states_[prefix_] != static_cast<uint8_t>(BlockState::virgin)) {
    ++prefix_;
  }
  for (uint64_t i = prefix_; i < states_.size(); ++i) {
    if (states_[i] > 2) fail(Errc::corrupt_image, "invalid block state byte");
    if (states_[i] != 0) fail(Errc::corrupt_image, "written blocks are not a contiguous prefix");
  }
}

uint64_t BlockDevice::to_ordinal(MediaAddress addr) const {
  if (addr.is_null()) fail(Errc::invalid_argument, "null address");
  return geometry_.scheme.linear_index(addr);
}

BlockReadResult BlockDevice::read_block(uint64_t ordinal) {
  std::lock_guard lock(mu_);
  if (ordinal >= capacity()) fail(Errc::out_of_range, "read beyond capacity");
  probes_.fetch_add(1);
  return load_locked(ordinal);
}

std::vector<BlockReadResult> BlockDevice::read_run(uint64_t first, uint64_t count) {
  std::lock_guard lock(mu_);
  if (first >= capacity() || count > capacity() - first) fail(Errc::out_of_range, "read beyond capacity");
  std::vector<BlockReadResult> out;
  if (count == 0) return out;
  probes_.fetch_add(1);
  out.reserve(count);
  for (uint64_t o = first; o < first + count; ++o) out.push_back(load_locked(o));
  return out;
}

BlockReadResult BlockDevice::load_locked(uint64_t ordinal) {
  BlockReadResult result;
  switch (static_cast<BlockState>(states_[ordinal])) {
    case BlockState::virgin:
      result.kind = BlockReadResult::Kind::virgin;
      break;
    case BlockState::destroyed:
      result.kind = BlockReadResult::Kind::unreadable;
      break;
    case BlockState::written:
      result.kind = BlockReadResult::Kind::written;
      result.data.resize(block_size());
      load_data(ordinal, result.data);
      break;
  }
  return result;
}

void BlockDevice::write_next(uint64_t ordinal, std::span<const uint8_t> content) {
  std::lock_guard lock(mu_);
  if (ordinal >= capacity()) fail(Errc::media_full, "write beyond end of media");
  if (content.size() > block_size()) fail(Errc::invalid_argument, "content larger than a block");
  if (states_[ordinal] != static_cast<uint8_t>(BlockState::virgin)) {
    fail(Errc::already_written, "block " + std::to_string(ordinal) + " is already written");
  }
  if (ordinal != prefix_) {
    fail(Errc::non_sequential_write, "block " + std::to_string(ordinal) +
                                         " is not the first virgin block (" +
                                         std::to_string(prefix_) + ")");
  }
  // State first: an interrupted write leaves a torn written block, never a
  // virgin block holding stale bytes.
  states_[ordinal] = static_cast<uint8_t>(BlockState::written);
  store_state(ordinal, BlockState::written);
  std::vector<uint8_t> padded;
  if (content.size() < block_size()) {
    padded.assign(content.begin(), content.end());
    padded.resize(block_size(), 0);
    content = padded;
  }
  store_data(ordinal, content);
  ++prefix_;
}

void BlockDevice::destroy_block(uint64_t ordinal) {
  std::lock_guard lock(mu_);
  if (ordinal >= capacity()) fail(Errc::out_of_range, "destroy beyond capacity");
  if (states_[ordinal] != static_cast<uint8_t>(BlockState::written)) {
    fail(Errc::not_written, "block " + std::to_string(ordinal) + " is not a written block");
  }
  zero_data(ordinal);
  states_[ordinal] = static_cast<uint8_t>(BlockState::destroyed);
  store_state(ordinal, BlockState::destroyed);
}

std::optional<uint64_t> BlockDevice::find_first_virgin(uint64_t lo, uint64_t hi,
                                                       std::vector<uint8_t>* last_written,
                                                       uint64_t* last_written_ordinal) {
  hi = std::min(hi, capacity());
  const uint64_t end = hi;
  while (lo < hi) {
    uint64_t mid = lo + (hi - lo) / 2;
    auto r = read_block(mid);
    if (r.virgin()) {
      hi = mid;
    } else {
      if (last_written) {
        if (r.written()) {
          *last_written = std::move(r.data);
        } else {
          last_written->clear();
        }
      }
      if (last_written_ordinal) *last_written_ordinal = mid;
      lo = mid + 1;
    }
  }
  if (lo >= end) return std::nullopt;
  return lo;
}

BlockState BlockDevice::state(uint64_t ordinal) const {
  std::lock_guard lock(mu_);
  if (ordinal >= capacity()) fail(Errc::out_of_range, "state query beyond capacity");
  return static_cast<BlockState>(states_[ordinal]);
}

uint64_t BlockDevice::written_prefix() const {
  std::lock_guard lock(mu_);
  return prefix_;
}

BlockUsage BlockDevice::usage() const {
  std::lock_guard lock(mu_);
  BlockUsage u;
  for (uint8_t s : states_) {
    switch (static_cast<BlockState>(s)) {
      case BlockState::virgin: ++u.virgin; break;
      case BlockState::written: ++u.written; break;
      case BlockState::destroyed: ++u.destroyed; break;
    }
  }
  return u;
}

// ---------------------------------------------------------------------------
// SimDevice

uint64_t SimDevice::image_size(const DeviceGeometry& g) {
  return kHeaderSize + g.capacity_blocks * (1 + uint64_t{g.block_size});
}

SimDevice::SimDevice(std::filesystem::path path, int fd, DeviceGeometry geometry)
    : BlockDevice(std::move(geometry)), path_(std::move(path)), fd_(fd) {}

SimDevice::~SimDevice() {
  if (fd_ >= 0) ::close(fd_);
}

uint64_t SimDevice::data_offset(uint64_t ordinal) const {
  return kHeaderSize + capacity() + ordinal * block_size();
}

std::unique_ptr<SimDevice> SimDevice::open_or_create(const std::filesystem::path& path,
                                                     const std::optional<DeviceGeometry>& geometry) {
  std::error_code ec;
  bool exists = std::filesystem::exists(path, ec);
  if (!exists) {
    if (!geometry) fail(Errc::not_found, "image " + path.string() + " does not exist");
    geometry->validate();
    const auto& entries = geometry->scheme.entries();
    std::array<uint8_t, kHeaderSize> header{};
    ByteWriter w(header);
    w.bytes(kSimMagic);
    w.u32(geometry->block_size);
    w.u64(geometry->capacity_blocks);
    w.u16(static_cast<uint16_t>(entries.size()));
    for (size_t i = 0; i < kMaxPointerDefs; ++i) {
      PointerDef d = i < entries.size() ? entries[i] : PointerDef{};
      w.u32(d.modulo);
      w.u16(d.bits);
      w.u16(0);
    }
    int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_EXCL, 0644);
    if (fd < 0) io_fail("create " + path.string());
    std::unique_ptr<SimDevice> dev(new SimDevice(path, fd, *geometry));
    pwrite_all(fd, header.data(), header.size(), 0);
    if (::ftruncate(fd, static_cast<off_t>(image_size(*geometry))) != 0) io_fail("size image");
    dev->adopt_states(std::vector<uint8_t>(geometry->capacity_blocks, 0));
    return dev;
  }

  int fd = ::open(path.c_str(), O_RDWR);
  if (fd < 0) io_fail("open " + path.string());
  std::unique_ptr<SimDevice> dev;
  try {
    std::array<uint8_t, kHeaderSize> header{};
    off_t size = ::lseek(fd, 0, SEEK_END);
    if (size < static_cast<off_t>(kHeaderSize)) fail(Errc::corrupt_image, "image too short");
    pread_all(fd, header.data(), header.size(), 0);
    ByteReader r(header);
    auto magic = r.bytes(8);
    if (!std::equal(magic.begin(), magic.end(), kSimMagic.begin())) {
      fail(Errc::corrupt_image, "bad simulator image magic");
    }
    DeviceGeometry g;
    g.block_size = r.u32();
    g.capacity_blocks = r.u64();
    uint16_t used = r.u16();
    if (used < 2 || used > kMaxPointerDefs) fail(Errc::corrupt_image, "bad pointerdef count");
    std::vector<PointerDef> defs;
    for (size_t i = 0; i < kMaxPointerDefs; ++i) {
      PointerDef d{r.u32(), r.u16()};
      r.u16();
      if (i < used) defs.push_back(d);
    }
    try {
      g.scheme = AddressScheme(std::move(defs));
      g.validate();
    } catch (const Error& e) {
      fail(Errc::corrupt_image, std::string("bad image geometry: ") + e.what());
    }
    if (g.capacity_blocks > (uint64_t{1} << 40) ||
        static_cast<uint64_t>(size) != image_size(g)) {
      fail(Errc::corrupt_image, "image length does not match its geometry");
    }
    if (geometry && !(*geometry == g)) {
      fail(Errc::geometry_mismatch, "existing image has a different geometry");
    }
    dev.reset(new SimDevice(path, fd, g));
    std::vector<uint8_t> states(g.capacity_blocks);
    pread_all(fd, states.data(), states.size(), kHeaderSize);
    dev->adopt_states(std::move(states));
  } catch (...) {
    if (!dev) ::close(fd);  // otherwise the device owns it
    throw;
  }
  return dev;
}

void SimDevice::load_data(uint64_t ordinal, std::span<uint8_t> out) {
  pread_all(fd_, out.data(), out.size(), data_offset(ordinal));
}

void SimDevice::store_data(uint64_t ordinal, std::span<const uint8_t> data) {
  // Only called for blocks that were virgin, whose bytes are already zero in
  // the sparse file.
  if (all_zero(data)) return;
  pwrite_all(fd_, data.data(), data.size(), data_offset(ordinal));
}

void SimDevice::zero_data(uint64_t ordinal) {
  std::vector<uint8_t> zeros(block_size(), 0);
  pwrite_all(fd_, zeros.data(), zeros.size(), data_offset(ordinal));
}

void SimDevice::store_state(uint64_t ordinal, BlockState state) {
  auto b = static_cast<uint8_t>(state);
  pwrite_all(fd_, &b, 1, kHeaderSize + ordinal);
}

// ---------------------------------------------------------------------------
// MemoryDevice

MemoryDevice::MemoryDevice(DeviceGeometry geometry) : BlockDevice(std::move(geometry)) {
  adopt_states(std::vector<uint8_t>(capacity(), 0));
}

std::unique_ptr<MemoryDevice> MemoryDevice::truncated_copy(uint64_t keep_blocks) const {
  auto copy = std::make_unique<MemoryDevice>(geometry());
  std::vector<uint8_t> states = states_;
  for (uint64_t i = keep_blocks; i < states.size(); ++i) states[i] = 0;
  for (const auto& [ordinal, data] : blocks_) {
    if (ordinal < keep_blocks) copy->blocks_.emplace(ordinal, data);
  }
  copy->adopt_states(std::move(states));
  return copy;
}

void MemoryDevice::load_data(uint64_t ordinal, std::span<uint8_t> out) {
  auto it = blocks_.find(ordinal);
  if (it == blocks_.end()) {
    std::fill(out.begin(), out.end(), 0);
  } else {
    std::copy(it->second.begin(), it->second.end(), out.begin());
  }
}

void MemoryDevice::zero_data(uint64_t ordinal) { blocks_.erase(ordinal); }

void MemoryDevice::store_data(uint64_t ordinal, std::span<const uint8_t> data) {
  if (all_zero(data)) {
    blocks_.erase(ordinal);
  } else {
    blocks_[ordinal].assign(data.begin(), data.end());
  }
}

}  // namespace cdfs
