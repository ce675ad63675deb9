#include <fcntl.h>
#include <sys/stat.h>

#include <fstream>

#include "../support.hpp"
#include "doctest.h"

using namespace cdfs;
using namespace testing_support;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::invalid_argument;
}

std::vector<uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::vector<uint8_t>& data) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

struct Fixture {
  TempDir tmp;
  std::shared_ptr<MemoryDevice> dev = memory(8192);
  std::unique_ptr<Volume> v = Volume::init(dev, options());
};

}  // namespace

TEST_CASE("write streams") {
  Fixture f;
  {
    auto w = f.v->open_write(kRootDirectory, "f");
    w.write({});
    for (int i = 0; i < 3; ++i) w.write(std::vector<uint8_t>(1000, 'a'));
    CHECK(w.size() == 3000);
    CHECK(code_of([&] { f.v->open_write(kRootDirectory, "g"); }) == Errc::stream_open);
    w.close();
  }
  CHECK(f.v->lookup(kRootDirectory, "f")->file_size == 3000);
  {
    auto w = f.v->open_write(kRootDirectory, "dropped");
    w.write(bytes("x"));
    w.abandon();
  }
  CHECK_FALSE(f.v->lookup(kRootDirectory, "dropped"));
  CHECK_FALSE(f.v->write_stream_open());
}

TEST_CASE("a closed file is visible before commit and versions chain") {
  Fixture f;
  f.v->write_file(kRootDirectory, "f", std::vector<uint8_t>(100, 1));
  CHECK(f.v->read_file(kRootDirectory, "f").size() == 100);
  f.v->write_file(kRootDirectory, "f", std::vector<uint8_t>(50, 2));
  CHECK(f.v->lookup(kRootDirectory, "f")->file_version == 2);
  CHECK(f.v->read_file(kRootDirectory, "f", 1) == std::vector<uint8_t>(100, 1));
  auto h = f.v->history(kRootDirectory, "f");
  REQUIRE(h.size() == 2);
  CHECK(h[0].version == 2);
  CHECK(h[0].header.backup->previous_version == h[1].header_location);
}

TEST_CASE("read streams are snapshots") {
  Fixture f;
  f.v->write_file(kRootDirectory, "f", bytes("old contents"));
  f.v->commit();
  auto s = f.v->open_read(kRootDirectory, "f");
  f.v->write_file(kRootDirectory, "f", bytes("new"));
  f.v->commit();
  CHECK(s.read_all() == bytes("old contents"));
  CHECK(f.v->read_file(kRootDirectory, "f") == bytes("new"));
}

TEST_CASE("seek") {
  Fixture f;
  f.v->write_file(kRootDirectory, "f", bytes("abcdef"));
  auto s = f.v->open_read(kRootDirectory, "f");
  CHECK(s.seek(0) == 0);
  s.seek(-1, ReadStream::Whence::end);
  CHECK(s.read(1) == bytes("f"));
  CHECK_THROWS_AS(s.seek(7), Error);
  s.seek(2);
  s.seek(1, ReadStream::Whence::current);
  CHECK(s.read(10) == bytes("def"));
}

TEST_CASE("reading through a link") {
  Fixture f;
  f.v->write_file(kRootDirectory, "target", bytes("t"));
  f.v->make_link(kRootDirectory, "ln", kRootDirectory, "target");
  CHECK(f.v->open_read(kRootDirectory, "ln").read_all() == bytes("t"));
  CHECK(code_of([&] { f.v->open_read(kRootDirectory, "nothere"); }) == Errc::not_found);
}

TEST_CASE("import and export") {
  Fixture f;
  std::mt19937_64 rng(10);
  for (size_t n : {size_t{0}, size_t{1}, size_t{2047}, size_t{2048}, size_t{3 << 20}}) {
    auto data = random_bytes(rng, n);
    auto in = f.tmp / "in.bin";
    auto out = f.tmp / "out.bin";
    spit(in, data);
    f.v->import_file(in, kRootDirectory, "blob", false, false);
    f.v->export_file(kRootDirectory, "blob", 0, out, false);
    CHECK(slurp(out) == data);
  }
  f.v->commit();
}

TEST_CASE("aligned import starts on a block boundary") {
  Fixture f;
  auto in = f.tmp / "a.bin";
  spit(in, std::vector<uint8_t>(5000, 9));
  f.v->import_file(in, kRootDirectory, "aligned", true, false);
  auto info = f.v->file_info(kRootDirectory, "aligned", 0, true);
  CHECK(f.v->scheme().offset(info.header->file_info->location) == 0);
  f.v->import_file(in, kRootDirectory, "packed", false, false);
  info = f.v->file_info(kRootDirectory, "packed", 0, true);
  CHECK(f.v->scheme().offset(info.header->file_info->location) != 0);
}

TEST_CASE("preserving import and export") {
  Fixture f;
  auto in = f.tmp / "p.bin";
  spit(in, bytes("keep my times"));
  struct timespec times[2] = {{1000000000, 0}, {1234567890, 0}};
  REQUIRE(utimensat(AT_FDCWD, in.c_str(), times, 0) == 0);
  chmod(in.c_str(), 0640);
  f.v->import_file(in, kRootDirectory, "p", false, true);
  auto info = f.v->file_info(kRootDirectory, "p", 0, true);
  CHECK(info.header->file_info->write_time == Timestamp::from_unix(1234567890));
  CHECK(cdfs_to_posix_access(info.header->access->access) == 0640);
  auto out = f.tmp / "p.out";
  f.v->export_file(kRootDirectory, "p", 0, out, true);
  struct stat st {};
  REQUIRE(stat(out.c_str(), &st) == 0);
  CHECK(st.st_mtime == 1234567890);
  CHECK((st.st_mode & 0777) == 0640);
}

TEST_CASE("exporting older versions") {
  Fixture f;
  f.v->write_file(kRootDirectory, "f", bytes("first"));
  f.v->write_file(kRootDirectory, "f", bytes("second"));
  auto out = f.tmp / "x";
  f.v->export_file(kRootDirectory, "f", 1, out, false);
  CHECK(slurp(out) == bytes("first"));
  f.v->export_file(kRootDirectory, "f", 0, out, false);
  CHECK(slurp(out) == bytes("second"));
  CHECK(code_of([&] { f.v->export_file(kRootDirectory, "f", 3, out, false); }) == Errc::no_such_version);
}

TEST_CASE("permission bit mapping") {
  for (uint32_t mode = 0; mode < 01000; ++mode) CHECK(cdfs_to_posix_access(posix_to_cdfs_access(mode)) == mode);
  CHECK(posix_to_cdfs_access(0400) == 0200);
  CHECK(posix_to_cdfs_access(0200) == 0400);
}

TEST_CASE("fragmenting reuses the content") {
  Fixture f;
  std::mt19937_64 rng(11);
  auto data = random_bytes(rng, 1 << 20);
  f.v->write_file(kRootDirectory, "big", data);
  auto before = f.v->file_info(kRootDirectory, "big", 0, true).header->file_info->location;
  uint64_t blocks = f.dev->written_prefix();
  f.v->convert_to_fragmented(kRootDirectory, "big");
  CHECK(f.dev->written_prefix() - blocks < 2);
  auto info = f.v->file_info(kRootDirectory, "big", 0, true);
  CHECK(info.entry.type == FileType::fragmented);
  REQUIRE(info.map);
  REQUIRE(info.map->strips.size() == 1);
  CHECK(info.map->strips[0].location == before);
  CHECK(f.v->read_file(kRootDirectory, "big") == data);
  CHECK(code_of([&] { f.v->convert_to_fragmented(kRootDirectory, "big"); }) == Errc::invalid_argument);
}

TEST_CASE("patching") {
  Fixture f;
  std::mt19937_64 rng(12);
  auto data = random_bytes(rng, 1000000);
  f.v->write_file(kRootDirectory, "big", data);
  f.v->convert_to_fragmented(kRootDirectory, "big");
  uint64_t before = f.dev->written_prefix();
  f.v->patch(kRootDirectory, "big", 500000, bytes("Z"));
  CHECK(f.dev->written_prefix() - before <= 3 + Volume::kMinStripSize / 2048);
  data[500000] = 'Z';
  CHECK(f.v->read_file(kRootDirectory, "big") == data);
  auto map = *f.v->file_info(kRootDirectory, "big", 0, true).map;
  CHECK(map.strips.size() == 3);
  for (const auto& s : map.strips) {
    if (s.ordinal != 0 && s.ordinal + s.valid_chars != data.size()) CHECK(s.valid_chars >= Volume::kMinStripSize);
  }

  f.v->patch(kRootDirectory, "big", data.size(), bytes("tail"));
  CHECK(f.v->open_read(kRootDirectory, "big").size() == data.size() + 4);

  // Patching a contiguous file converts it first.
  f.v->write_file(kRootDirectory, "small", bytes("hello world"));
  f.v->patch(kRootDirectory, "small", 6, bytes("there"));
  CHECK(f.v->read_file(kRootDirectory, "small") == bytes("hello there"));
  CHECK(code_of([&] { f.v->patch(kRootDirectory, "small", 0, {}); }) == Errc::invalid_argument);
}

TEST_CASE("holes") {
  Fixture f;
  f.v->write_file(kRootDirectory, "h", std::vector<uint8_t>(100, 'a'));
  f.v->patch(kRootDirectory, "h", 10000, bytes("far"));
  auto s = f.v->open_read(kRootDirectory, "h");
  CHECK(s.size() == 10003);
  s.seek(50);
  try {
    s.read(200);
    FAIL("expected a hole");
  } catch (const HoleError& e) {
    CHECK(e.offset() == 100);
  }
  s.seek(10000);
  CHECK(s.read(3) == bytes("far"));
  CHECK(code_of([&] { f.v->patch(kRootDirectory, "h", 5000, bytes("x")); }) == Errc::hole);
  // A patch that starts where the mapped bytes end fills the hole from its start.
  CHECK_NOTHROW(f.v->patch(kRootDirectory, "h", 100, bytes("b")));
  CHECK(code_of([&] { f.v->export_file(kRootDirectory, "h", 0, f.tmp / "h.out", false); }) == Errc::hole);
  CHECK_FALSE(std::filesystem::exists(f.tmp / "h.out"));
  CHECK(code_of([&] { f.v->convert_to_contiguous(kRootDirectory, "h"); }) == Errc::unsupported);
}

TEST_CASE("a fully mapped fragmented file can return to contiguous storage") {
  Fixture f;
  f.v->write_file(kRootDirectory, "c", bytes("0123456789"));
  f.v->patch(kRootDirectory, "c", 3, bytes("x"));
  f.v->convert_to_contiguous(kRootDirectory, "c");
  CHECK(f.v->lookup(kRootDirectory, "c")->type == FileType::file);
  CHECK(f.v->read_file(kRootDirectory, "c") == bytes("012x456789"));
}

TEST_CASE("patch sequences match the shadow oracle") {
  Fixture f;
  std::mt19937_64 rng(13);
  auto data = random_bytes(rng, 200000);
  f.v->write_file(kRootDirectory, "p", data);
  f.v->convert_to_fragmented(kRootDirectory, "p");
  oracle::ShadowOracle shadow(data);
  for (int i = 0; i < 150; ++i) {
    uint64_t off = rng() % (shadow.size() + 3000);
    auto chunk = random_bytes(rng, 1 + rng() % 3000);
    bool hole = shadow.patch(off, chunk) == oracle::ShadowOracle::Outcome::hole;
    if (hole) {
      CHECK(code_of([&] { f.v->patch(kRootDirectory, "p", off, chunk); }) == Errc::hole);
    } else {
      f.v->patch(kRootDirectory, "p", off, chunk);
    }
    auto map = *f.v->file_info(kRootDirectory, "p", 0, true).map;
    CHECK(std::is_sorted(map.strips.begin(), map.strips.end(),
                         [](const auto& a, const auto& b) { return a.ordinal < b.ordinal; }));
    CHECK(mapped_bytes(map) == shadow.mapped_count());
  }
  auto s = f.v->open_read(kRootDirectory, "p");
  for (uint64_t pos = 0; pos < shadow.size(); pos += 7919) {
    auto want = shadow.read(pos, 7919);
    s.seek(static_cast<int64_t>(pos));
    if (want.hole) {
      CHECK_THROWS_AS(s.read(7919), HoleError);
    } else {
      CHECK(s.read(7919) == want.bytes);
    }
  }
}
