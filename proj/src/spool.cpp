#include "spool.hpp"

#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <string>

#include "cdfs/error.hpp"

namespace cdfs {

std::filesystem::path Spool::default_dir() {
  if (const char* env = std::getenv("CDFS_SPOOL_DIR"); env && *env) return env;
  return std::filesystem::temp_directory_path();
}

Spool::Spool(const std::filesystem::path& dir) {
  std::string pattern = ((dir.empty() ? default_dir() : dir) / "cdfs-spool-XXXXXX").string();
  int fd = ::mkstemp(pattern.data());
  if (fd < 0) fail(Errc::io_error, "cannot create spool file in " + pattern + ": " + std::strerror(errno));
  ::unlink(pattern.c_str());
  file_ = ::fdopen(fd, "w+b");
  if (!file_) {
    ::close(fd);
    fail(Errc::io_error, "cannot open spool file");
  }
}

Spool::~Spool() {
  if (file_) std::fclose(file_);
}

void Spool::append(std::span<const uint8_t> bytes) {
  if (bytes.empty()) return;
  if (std::fwrite(bytes.data(), 1, bytes.size(), file_) != bytes.size()) {
    fail(Errc::io_error, "spool write failed");
  }
  size_ += bytes.size();
}

void Spool::rewind() {
  std::fflush(file_);
  std::rewind(file_);
}

void Spool::read(std::span<uint8_t> out) {
  if (std::fread(out.data(), 1, out.size(), file_) != out.size()) fail(Errc::io_error, "spool read failed");
}

}  // namespace cdfs
