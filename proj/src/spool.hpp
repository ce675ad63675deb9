#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <span>

namespace cdfs {

// Anonymous native temporary file holding write-stream bytes until close.
class Spool {
 public:
  explicit Spool(const std::filesystem::path& dir);
  ~Spool();
  Spool(const Spool&) = delete;
  Spool& operator=(const Spool&) = delete;

  void append(std::span<const uint8_t> bytes);
  uint64_t size() const { return size_; }
  void rewind();
  // Fills `out` completely from the current read position.
  void read(std::span<uint8_t> out);

  static std::filesystem::path default_dir();

 private:
  std::FILE* file_ = nullptr;
  uint64_t size_ = 0;
};

}  // namespace cdfs
