#include "cdfs/error.hpp"

#include <array>

namespace cdfs {

namespace {
constexpr std::array<std::string_view, kErrcCount> kNames = {
    "invalid argument",
    "not found",
    "already exists",
    "invalid name",
    "not a directory",
    "is a directory",
    "corrupt image",
    "geometry mismatch",
    "out of range",
    "non-sequential write",
    "block already written",
    "block not written",
    "media full",
    "device not virgin",
    "i/o error",
    "bad magic",
    "bad checksum",
    "self-reference mismatch",
    "truncated record",
    "malformed record",
    "sort violation",
    "duplicate name",
    "no open transaction",
    "write stream open",
    "no such version",
    "hole in fragmented file",
    "link depth exceeded",
    "step above root",
    "root directory protected",
    "unreadable block",
    "unsupported",
    "no valid end-of-transaction",
    "cross-directory addname",
    "would leave file without a name",
};
}  // namespace

std::string_view errc_name(Errc code) {
  auto i = static_cast<size_t>(code);
  return i < kNames.size() ? kNames[i] : "unknown error";
}

HoleError::HoleError(uint64_t offset)
    : Error(Errc::hole, "unmapped byte at logical offset " + std::to_string(offset)),
      offset_(offset) {}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace cdfs
