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

void two_files(Volume& v) {
  std::mt19937_64 rng(1);
  v.write_file(kRootDirectory, "life.c", random_bytes(rng, 3000));
  v.write_file(kRootDirectory, "wheel.c", random_bytes(rng, 1000));
  v.commit();
}

}  // namespace

TEST_CASE("init writes one EOT at block 0") {
  auto dev = memory(16);
  auto v = Volume::init(dev, options());
  CHECK(dev->written_prefix() == 1);
  Eot e = decode_eot(dev->read_block(0).data, MediaAddress{0});
  CHECK(e.location == MediaAddress{0});
  CHECK(e.trans_number == 0);
  CHECK(e.owner == "tester");
  CHECK(v->list_entries(kRootDirectory).empty());
  CHECK(v->is_directory(kRootDirectory));
  CHECK(code_of([&] { Volume::init(dev, options()); }) == Errc::device_not_virgin);
}

TEST_CASE("mount of a fresh volume") {
  auto dev = memory(16);
  Volume::init(dev, options());
  auto v = Volume::mount(dev, options());
  CHECK(v->last_eot_address() == MediaAddress{0});
  CHECK(v->next_write() == 1);
  CHECK(v->list_entries(kRootDirectory).empty());
}

TEST_CASE("two-file occupancy and mount") {
  auto dev = memory(16);
  auto v = Volume::init(dev, options());
  two_files(*v);
  auto r = v->fsck();
  CHECK(r.block_roles == std::vector<std::string>{"eot", "header", "content", "header", "directory", "dir-list", "eot"});
  CHECK(r.clean());
  CHECK(r.chain_length == 2);
  dev->reset_probe_count();
  auto m = Volume::mount(dev, options());
  CHECK(m->scheme().linear_index(m->last_eot_address()) == 6);
  CHECK(dev->probe_count() <= 20);
  auto names = m->list_entries(kRootDirectory);
  REQUIRE(names.size() == 2);
  CHECK(names[0].name == "life.c");
  CHECK(names[1].name == "wheel.c");
}

TEST_CASE("commit without changes is refused") {
  auto dev = memory(16);
  auto v = Volume::init(dev, options());
  CHECK_FALSE(v->transaction_open());
  CHECK(code_of([&] { v->commit(); }) == Errc::no_transaction);
}

TEST_CASE("second transaction leaves the first untouched") {
  auto dev = memory(32);
  auto v = Volume::init(dev, options());
  two_files(*v);
  std::vector<std::vector<uint8_t>> snap;
  for (uint64_t b = 0; b < 7; ++b) snap.push_back(dev->read_block(b).data);
  v->write_file(kRootDirectory, "life.c", bytes("rewritten"));
  v->commit();
  for (uint64_t b = 0; b < 7; ++b) CHECK(dev->read_block(b).data == snap[b]);
  CHECK(v->scheme().linear_index(v->last_eot().previous_eot) == 6);
  CHECK(v->fsck().chain_length == 3);
}

TEST_CASE("premastered volumes mount in two probes") {
  auto src_dev = memory(64);
  auto src = Volume::init(src_dev, options());
  two_files(*src);
  auto dst = memory(64);
  Volume::compact(*src, dst, options(), CompactOptions{true}).reset();
  dst->reset_probe_count();
  auto m = Volume::mount(dst, options());
  CHECK(m->mount_stats().premastered);
  CHECK(m->mount_stats().locate_probes == 2);
  CHECK(m->read_file(kRootDirectory, "wheel.c") == src->read_file(kRootDirectory, "wheel.c"));
  // Appending after premastering falls back to the search.
  m->write_file(kRootDirectory, "later", bytes("x"));
  m->commit();
  auto again = Volume::mount(dst, options());
  CHECK_FALSE(again->mount_stats().premastered);
  CHECK(again->read_file(kRootDirectory, "later") == bytes("x"));
}

TEST_CASE("recovery from a torn transaction") {
  auto dev = memory(64);
  auto v = Volume::init(dev, options());
  two_files(*v);
  v->write_file(kRootDirectory, "third", bytes("lost"));
  v->mkdir(kRootDirectory, "dir");
  v->commit();
  const uint64_t end = dev->written_prefix();
  for (uint64_t k = 8; k < end; ++k) {
    auto copy = std::shared_ptr<BlockDevice>(dev->truncated_copy(k));
    auto m = Volume::mount(copy, options());
    CHECK(m->mount_stats().recovered);
    CHECK(m->scheme().linear_index(m->last_eot_address()) == 6);
    CHECK(m->list_entries(kRootDirectory).size() == 2);
    auto r = m->fsck();
    CHECK(r.clean());
    CHECK(r.orphaned_blocks == k - 7);
  }
}

TEST_CASE("a corrupt final EOT falls back to the previous one") {
  auto dev = memory(64);
  auto v = Volume::init(dev, options());
  two_files(*v);
  v->write_file(kRootDirectory, "extra", bytes("e"));
  v->commit();
  const uint64_t last = dev->written_prefix() - 1;
  auto copy = std::shared_ptr<MemoryDevice>(dev->truncated_copy(last));
  auto block = dev->read_block(last).data;
  block[30] ^= 0x55;
  copy->write_next(last, block);
  auto m = Volume::mount(copy, options());
  CHECK(m->mount_stats().recovered);
  CHECK(m->scheme().linear_index(m->last_eot_address()) == 6);
  CHECK_FALSE(m->lookup(kRootDirectory, "extra"));
}

TEST_CASE("an invalid block 0 is unrecoverable") {
  auto dev = memory(8);
  dev->write_next(0, bytes("not an eot"));
  CHECK(code_of([&] { Volume::mount(dev, options()); }) == Errc::no_valid_eot);
  auto empty = memory(8);
  CHECK(code_of([&] { Volume::mount(empty, options()); }) == Errc::no_valid_eot);
}

TEST_CASE("media full keeps the committed state") {
  auto dev = memory(12);
  auto v = Volume::init(dev, options());
  v->write_file(kRootDirectory, "small", bytes("ok"));
  v->commit();
  std::vector<uint8_t> big(40000, 'b');
  CHECK(code_of([&] { v->write_file(kRootDirectory, "big", big); }) == Errc::media_full);
  auto m = Volume::mount(dev, options());
  CHECK(m->read_file(kRootDirectory, "small") == bytes("ok"));
  CHECK_FALSE(m->lookup(kRootDirectory, "big"));
}

TEST_CASE("fsck reports destroyed content without failing") {
  auto dev = memory(64);
  auto v = Volume::init(dev, options());
  two_files(*v);
  v->destroy(kRootDirectory, "life.c", 0);
  v->commit();
  auto m = Volume::mount(dev, options());
  auto r = m->fsck();
  CHECK(r.clean());
  CHECK(r.count(FsckStatus::unreadable) > 0);
  CHECK(r.destroyed_blocks > 0);
  CHECK(r.render(false).find("clean") != std::string::npos);
  CHECK(m->read_file(kRootDirectory, "wheel.c").size() == 1000);
}

TEST_CASE("fsck flags a damaged header") {
  auto dev = memory(64);
  auto v = Volume::init(dev, options());
  two_files(*v);
  // Rebuild the image with one flipped byte inside life.c's header.
  auto copy = memory(64);
  for (uint64_t b = 0; b < dev->written_prefix(); ++b) {
    auto data = dev->read_block(b).data;
    if (b == 1) data[20] ^= 1;
    copy->write_next(b, data);
  }
  auto m = Volume::mount(copy, options());
  auto r = m->fsck();
  CHECK_FALSE(r.clean());
  CHECK(r.count(FsckStatus::bad_checksum) >= 1);
}

TEST_CASE("compaction keeps the newest versions only") {
  auto dev = memory(8192);
  auto v = Volume::init(dev, options());
  std::mt19937_64 rng(3);
  std::vector<uint8_t> last;
  for (int i = 0; i < 10; ++i) {
    last = random_bytes(rng, 1 << 20);
    v->write_file(kRootDirectory, "movie", last);
    v->commit();
  }
  v->write_file(kRootDirectory, "gone", bytes("bye"));
  v->commit();
  v->delete_entry(kRootDirectory, "gone");
  v->commit();
  auto dst = memory(8192);
  auto c = Volume::compact(*v, dst, options());
  CHECK(c->history(kRootDirectory, "movie").size() == 1);
  CHECK(c->read_file(kRootDirectory, "movie") == last);
  CHECK_FALSE(c->lookup(kRootDirectory, "gone"));
  CHECK(c->lookup(kRootDirectory, "movie")->file_number == v->lookup(kRootDirectory, "movie")->file_number);
  CHECK(dst->written_prefix() < dev->written_prefix());

  auto fresh = Volume::init(memory(16), options());
  auto empty_dst = memory(16);
  auto e = Volume::compact(*fresh, empty_dst, options());
  CHECK(e->list_entries(kRootDirectory).empty());
}

TEST_CASE("df counts block states") {
  auto dev = memory(16);
  auto v = Volume::init(dev, options());
  auto d = v->df();
  CHECK(d.written == 1);
  CHECK(d.virgin == 15);
  CHECK(d.capacity == 16);
}

TEST_CASE("dump renders records") {
  auto dev = memory(16);
  auto v = Volume::init(dev, options());
  two_files(*v);
  auto text = v->dump(v->last_eot_address());
  CHECK(text.find("trans_number") != std::string::npos);
  CHECK_FALSE(v->dump(v->scheme().from_linear(1)).empty());
}

TEST_CASE("every committed record passes the reference word-sum") {
  auto dev = memory(256);
  auto v = Volume::init(dev, options());
  two_files(*v);
  uint32_t d = v->mkdir(kRootDirectory, "src");
  v->write_file(d, "x.c", bytes("int x;"));
  v->make_link(kRootDirectory, "lx", d, "x.c");
  v->commit();
  auto m = Volume::mount(dev, options());
  auto a = audit_checksums(*m);
  CHECK(a.failures.empty());
  CHECK(a.checked >= 8);
}
