#include <algorithm>

#include "cdfs/error.hpp"
#include "cdfs/volume.hpp"

namespace cdfs {

namespace {

constexpr size_t kChunk = 1 << 20;

struct Run {
  uint64_t start;
  uint64_t length;
};

// Maximal runs of mapped logical bytes.
std::vector<Run> mapped_runs(const FileMap& map) {
  std::vector<Run> runs;
  auto strips = map.strips;
  std::sort(strips.begin(), strips.end(),
            [](const FragmentDescriptor& a, const FragmentDescriptor& b) { return a.ordinal < b.ordinal; });
  for (const auto& s : strips) {
    if (s.valid_chars == 0) continue;
    uint64_t a = s.ordinal, b = a + s.valid_chars;
    if (!runs.empty() && a <= runs.back().start + runs.back().length) {
      runs.back().length = std::max(runs.back().start + runs.back().length, b) - runs.back().start;
    } else {
      runs.push_back({a, b - a});
    }
  }
  return runs;
}

// Serves a byte prefix, then the given logical ranges of a stream, chunk by chunk.
struct StreamFill {
  std::vector<uint8_t> prefix;
  size_t prefix_pos = 0;
  std::shared_ptr<ReadStream> src;
  std::vector<Run> runs;
  size_t run = 0;
  uint64_t run_pos = 0;
  std::vector<uint8_t> buf;
  size_t buf_pos = 0;

  void operator()(std::span<uint8_t> out) {
    size_t filled = 0;
    while (filled < out.size()) {
      if (prefix_pos < prefix.size()) {
        size_t take = std::min(prefix.size() - prefix_pos, out.size() - filled);
        std::copy_n(prefix.begin() + static_cast<std::ptrdiff_t>(prefix_pos), take, out.begin() + static_cast<std::ptrdiff_t>(filled));
        prefix_pos += take;
        filled += take;
        continue;
      }
      if (buf_pos == buf.size()) {
        while (run < runs.size() && run_pos == runs[run].length) {
          ++run;
          run_pos = 0;
        }
        if (run == runs.size()) fail(Errc::corrupt_image, "source file shorter than its map");
        src->seek(static_cast<int64_t>(runs[run].start + run_pos));
        buf = src->read(static_cast<size_t>(std::min<uint64_t>(kChunk, runs[run].length - run_pos)));
        run_pos += buf.size();
        buf_pos = 0;
      }
      size_t take = std::min(buf.size() - buf_pos, out.size() - filled);
      std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(buf_pos), take, out.begin() + static_cast<std::ptrdiff_t>(filled));
      buf_pos += take;
      filled += take;
    }
  }
};

}  // namespace

std::unique_ptr<Volume> Volume::compact(Volume& src, std::shared_ptr<BlockDevice> dst, VolumeOptions opts,
                                        CompactOptions copts) {
  std::lock_guard src_lock(src.mu_);
  if (!dst) fail(Errc::invalid_argument, "no destination device");
  if (src.writer_open_) fail(Errc::stream_open, "source has an open write stream");
  if (dst->written_prefix() != 0) fail(Errc::device_not_virgin, "destination already holds data");
  if (dst->block_size() != src.scheme_.block_size()) {
    fail(Errc::geometry_mismatch, "destination block size differs from the source");
  }
  if (opts.owner.empty()) opts.owner = src.last_eot_.owner;
  if (!opts.clock) opts.clock = src.opts_.clock;

  std::shared_ptr<BlockDevice> target = dst;
  if (copts.premastered) target = std::make_shared<MemoryDevice>(dst->geometry());
  std::unique_ptr<Volume> out = init(target, opts, src.scheme_);
  Volume& v = *out;
  std::unique_lock dst_lock(v.mu_);
  v.begin_mutation();

  auto seed = [&](uint32_t num) {
    DirNode& s = src.node(num);
    std::optional<FileHeader> h = s.header;
    if (!h && !s.header_location.is_null()) h = src.dir_header(s);
    v.node(num).header = h;
  };
  seed(kRootDirectory);

  std::function<void(uint32_t)> copy_dir = [&](uint32_t num) {
    std::vector<DirEntry> entries = src.contents(num).entries;
    for (const auto& e : entries) {
      if (e.type == FileType::addname) continue;
      if (e.type == FileType::directory) {
        DirNode n;
        n.number = e.file_number;
        n.parent = num;
        n.modify_time = e.modify_time;
        n.contents = Directory{};
        n.dirty = true;
        v.dirs_.emplace(e.file_number, std::move(n));
        seed(e.file_number);
        DirEntry d = e;
        d.header_location = MediaAddress{0};
        d.addname_count = 0;
        v.insert_entry(num, std::move(d));
        copy_dir(e.file_number);
        continue;
      }
      FileHeader h = src.read_header(e.header_location, e.header_size);
      NewVersion nv;
      nv.type = h.type;
      nv.file_number = h.file_number;
      nv.version = 1;
      nv.access = h.access;
      nv.site = h.site;
      nv.properties = h.properties;
      if (h.type == FileType::soft_link) {
        nv.write_time = e.modify_time;
        DirEntry d = e;
        d.addname_count = 0;
        v.rewrite_header(num, e.name, h, nv, d);
        d.file_version = 1;
        v.insert_entry(num, std::move(d));
        continue;
      }
      if (!h.file_info) fail(Errc::corrupt_image, "file '" + printable(e.name) + "' has no file info");
      nv.write_time = h.file_info->write_time;
      nv.creation_time = h.file_info->creation_time;
      const uint32_t length = h.file_info->length;
      auto stream = std::make_shared<ReadStream>(src.stream_for(VersionInfo{1, e.header_location, e.header_size, h}));
      StreamFill fill;
      fill.src = stream;
      uint64_t valid = length;
      if (h.type == FileType::fragmented) {
        FileMap old = src.read_map(h);
        fill.runs = mapped_runs(old);
        FileHeader probe = v.build_header(num, e.name, nv);
        probe.file_info = FileInfo{};
        MediaAddress at = v.scheme_.add_bytes(v.content_address(probe.encoded_length(), false),
                                              even(kStripInfoSize + fill.runs.size() * kFragmentDescriptorSize));
        FileMap map;
        valid = 0;
        for (const auto& r : fill.runs) {
          map.strips.push_back({at, static_cast<uint32_t>(r.length), static_cast<uint32_t>(r.start)});
          at = v.scheme_.add_bytes(at, r.length);
          valid += r.length;
        }
        fill.prefix = encode_file_map(map);
      } else if (length > 0) {
        fill.runs.push_back({0, length});
      }
      Payload p{fill.prefix.size() + valid, false, std::move(fill)};
      v.write_version(num, e.name, nv, p, valid, length);
    }
    for (const auto& e : entries) {
      if (e.type != FileType::addname) continue;
      DirEntry a = e;
      v.insert_entry(num, std::move(a));
      v.recount_addnames(num, e.file_number);
    }
  };
  copy_dir(kRootDirectory);

  v.next_free_ = std::max(v.next_free_, src.next_free_);
  v.mark_dirty(kRootDirectory);
  MediaAddress eot = v.commit();
  dst_lock.unlock();
  if (!copts.premastered) return out;

  // Copy the scratch image over, pointing block 0 at the single transaction's EOT.
  for (uint64_t b = 0; b < v.next_write_; ++b) {
    auto r = target->read_block(b);
    if (b == 0) {
      Eot first = decode_eot(r.data, v.scheme_.from_linear(0));
      first.next_eot = eot;
      dst->write_next(b, encode_eot(first));
    } else {
      dst->write_next(b, r.data);
    }
  }
  out.reset();
  return mount(dst, std::move(opts));
}

}  // namespace cdfs
