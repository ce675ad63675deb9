#include <fstream>

#include "../support.hpp"
#include "doctest.h"

using namespace cdfs;
using namespace testing_support;

namespace {

// Walks every block address in order by counting through the fields.
uint64_t enumerate_index(const std::vector<uint64_t>& target, const std::vector<uint32_t>& moduli) {
  std::vector<uint64_t> f(moduli.size(), 0);
  for (uint64_t n = 0;; ++n) {
    if (f == target) return n;
    for (size_t i = moduli.size(); i-- > 0;) {
      if (++f[i] < moduli[i]) break;
      f[i] = 0;
    }
  }
}

}  // namespace

TEST_CASE("audio scheme linear index agrees with enumeration") {
  auto s = AddressScheme::audio();
  const std::vector<uint32_t> moduli = {70, 60, 75};
  auto at = [&](uint64_t m, uint64_t sec, uint64_t b) {
    std::vector<uint64_t> f = {m, sec, b, 0};
    return s.encode(f);
  };
  CHECK(s.linear_index(at(0, 0, 0)) == 0);
  CHECK(s.linear_index(at(0, 1, 0)) == 75);
  CHECK(s.linear_index(at(1, 0, 0)) == 4500);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    std::vector<uint64_t> f = {rng() % 3, rng() % 60, rng() % 75};
    CHECK(s.linear_index(at(f[0], f[1], f[2])) == enumerate_index(f, moduli));
  }
}

TEST_CASE("advance carries through block and second fields") {
  auto s = AddressScheme::audio();
  const uint64_t cap = s.block_count();
  CHECK(s.format(s.advance(s.parse_address("000.000.074"), 1, cap)) == "000.001.000:0");
  CHECK(s.format(s.advance(s.parse_address("000.059.074"), 1, cap)) == "001.000.000:0");
  MediaAddress x = s.from_linear(123, 77);
  CHECK(s.advance(x, 0, cap) == s.from_linear(123));
  CHECK(s.linear_index(s.from_linear(314999)) == 314999);
  CHECK(s.offset(s.add_bytes(s.from_linear(3, 2000), 100)) == 52);
  CHECK(s.linear_index(s.add_bytes(s.from_linear(3, 2000), 100)) == 4);
}

TEST_CASE("scheme parsing round trips through describe") {
  auto s = AddressScheme::parse("70:16,60:16,75:16,2048:16");
  CHECK(s.block_size() == 2048);
  CHECK(s.block_count() == 70u * 60u * 75u);
  CHECK(AddressScheme::parse(s.describe()) == s);
  CHECK_THROWS_AS(AddressScheme::parse("nonsense"), Error);
}

TEST_CASE("write-once block rules") {
  auto dev = memory(16);
  CHECK(dev->read_block(3).virgin());
  dev->write_next(0, bytes("hello"));
  auto r = dev->read_block(0);
  REQUIRE(r.written());
  CHECK(r.data.size() == 2048);
  CHECK(std::string(r.data.begin(), r.data.begin() + 5) == "hello");
  try {
    dev->write_next(2, bytes("x"));
    FAIL("expected non-sequential error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::non_sequential_write);
  }
  try {
    dev->write_next(0, bytes("x"));
    FAIL("expected already-written error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::already_written);
  }
  dev->write_next(1, bytes("y"));
  dev->destroy_block(0);
  CHECK(dev->read_block(0).unreadable());
  CHECK(dev->state(0) == BlockState::destroyed);
  CHECK_THROWS_AS(dev->destroy_block(5), Error);
  auto u = dev->usage();
  CHECK(u.written == 1);
  CHECK(u.destroyed == 1);
  CHECK(u.virgin == 14);
}

TEST_CASE("first virgin search matches a linear scan") {
  auto dev = memory(16);
  CHECK(dev->find_first_virgin(0, 16) == 0u);
  for (uint64_t b = 0; b < 7; ++b) dev->write_next(b, bytes("b"));
  CHECK(dev->find_first_virgin(0, 16) == 7u);

  std::mt19937_64 rng(2);
  auto big = memory(5000);
  uint64_t written = 0;
  for (int trial = 0; trial < 30; ++trial) {
    uint64_t target = std::min<uint64_t>(5000, written + rng() % 300);
    while (written < target) big->write_next(written++, bytes("z"));
    uint64_t scan = 0;
    while (scan < 5000 && big->state(scan) != BlockState::virgin) ++scan;
    auto found = big->find_first_virgin(0, 5000);
    CHECK((found ? *found : 5000) == scan);
  }
}

TEST_CASE("first virgin search on a 262144-block device stays within 20 probes") {
  auto dev = memory(262144);
  for (uint64_t b = 0; b < 1234; ++b) dev->write_next(b, bytes("z"));
  dev->reset_probe_count();
  CHECK(dev->find_first_virgin(0, 262144) == 1234u);
  CHECK(dev->probe_count() <= 20);
}

TEST_CASE("run reads count as one probe") {
  auto dev = memory(16);
  for (uint64_t b = 0; b < 4; ++b) dev->write_next(b, bytes("r"));
  dev->reset_probe_count();
  auto run = dev->read_run(2, 4);
  CHECK(dev->probe_count() == 1);
  REQUIRE(run.size() == 4);
  CHECK(run[1].written());
  CHECK(run[2].virgin());
}

TEST_CASE("simulator image layout and reopen") {
  TempDir tmp;
  auto path = tmp / "d.img";
  auto g = DeviceGeometry::audio(16);
  {
    auto dev = SimDevice::open_or_create(path, g);
    CHECK(std::filesystem::file_size(path) == SimDevice::kHeaderSize + 16 * 2049);
    CHECK(dev->usage().virgin == 16);
    dev->write_next(0, bytes("persist"));
    dev->write_next(1, bytes("gone"));
    dev->destroy_block(1);
  }
  auto dev = SimDevice::open_or_create(path);
  CHECK(dev->geometry() == g);
  auto r = dev->read_block(0);
  REQUIRE(r.written());
  CHECK(std::string(r.data.begin(), r.data.begin() + 7) == "persist");
  CHECK(dev->read_block(1).unreadable());
  CHECK(dev->written_prefix() == 2);
  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(SimDevice::kHeaderSize + 16 + 2048));
  std::vector<char> destroyed(2048);
  in.read(destroyed.data(), 2048);
  CHECK(std::all_of(destroyed.begin(), destroyed.end(), [](char c) { return c == 0; }));
}

TEST_CASE("simulator rejects foreign files") {
  TempDir tmp;
  auto path = tmp / "junk.img";
  std::ofstream(path) << std::string(4096, 'x');
  try {
    SimDevice::open_or_create(path);
    FAIL("expected corrupt image");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::corrupt_image);
  }
}

TEST_CASE("truncated copies forget later blocks") {
  auto dev = memory(8);
  for (uint64_t b = 0; b < 5; ++b) dev->write_next(b, bytes(std::to_string(b)));
  auto copy = dev->truncated_copy(3);
  CHECK(copy->written_prefix() == 3);
  CHECK(copy->read_block(2).written());
  CHECK(copy->read_block(3).virgin());
  copy->write_next(3, bytes("new"));
}
