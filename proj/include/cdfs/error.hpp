#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cdfs {

// Numeric values are part of the C API (cdfs_status = 1 + value).
enum class Errc : int {
  invalid_argument = 0,
  not_found,
  already_exists,
  invalid_name,
  not_a_directory,
  is_a_directory,
  corrupt_image,
  geometry_mismatch,
  out_of_range,
  non_sequential_write,
  already_written,
  not_written,
  media_full,
  device_not_virgin,
  io_error,
  bad_magic,
  bad_checksum,
  self_ref_mismatch,
  truncated,
  malformed,
  sort_violation,
  duplicate_name,
  no_transaction,
  stream_open,
  no_such_version,
  hole,
  link_depth,
  above_root,
  root_protected,
  unreadable,
  unsupported,
  no_valid_eot,
  cross_directory,
  orphaning_removal,
};

inline constexpr int kErrcCount = static_cast<int>(Errc::orphaning_removal) + 1;

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Raised when a read touches a logical byte no fragment maps.
class HoleError : public Error {
 public:
  explicit HoleError(uint64_t offset);
  uint64_t offset() const noexcept { return offset_; }

 private:
  uint64_t offset_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

}  // namespace cdfs
