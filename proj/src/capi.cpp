#include "cdfs/cdfs.h"

#include <sys/utsname.h>

#include <cstdlib>
#include <cstring>
#include <new>

#include "cdfs/error.hpp"
#include "cdfs/volume.hpp"

struct cdfs_volume {
  std::unique_ptr<cdfs::Volume> vol;
};

struct cdfs_reader {
  cdfs::ReadStream stream;
};

struct cdfs_writer {
  cdfs::WriteStream stream;
};

namespace {

using namespace cdfs;

thread_local std::string g_last_error;

template <class F>
cdfs_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return CDFS_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return 1 + static_cast<int>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return CDFS_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CDFS_E_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) fail(Errc::invalid_argument, std::string(what) + " is NULL");
}

std::string clip(std::string s, size_t n) {
  if (s.size() > n) s.resize(n);
  return s;
}

VolumeOptions options(const char* owner, const char* site) {
  VolumeOptions o;
  if (owner) o.owner = owner;
  if (site) {
    SiteInfo s;
    utsname u{};
    if (::uname(&u) == 0) {
      s.opsys = clip(u.sysname, 16);
      s.opsys_version = clip(u.release, 16);
    }
    s.site_name = site;
    o.site = s;
  }
  return o;
}

int64_t unix_time(Timestamp t) { return t.to_unix(); }

void fill_entry(const DirEntry& e, cdfs_entry* out) {
  std::memset(out, 0, sizeof(*out));
  std::memcpy(out->name, e.name.data(), std::min(e.name.size(), sizeof(out->name) - 1));
  out->file_number = e.file_number;
  out->file_size = e.file_size;
  out->file_version = e.file_version;
  out->type = static_cast<int>(e.type);
  out->addname_count = e.addname_count;
  out->modify_time = unix_time(e.modify_time);
  out->header_address = e.header_location.raw;
}

char* dup_text(const std::string& s) {
  auto* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

template <class T>
T* dup_array(const std::vector<T>& v) {
  auto* p = static_cast<T*>(std::malloc(std::max<size_t>(1, v.size()) * sizeof(T)));
  if (!p) throw std::bad_alloc();
  std::copy(v.begin(), v.end(), p);
  return p;
}

Volume& vol(cdfs_volume* v) {
  require(v, "volume");
  return *v->vol;
}

uint32_t dir_of(Volume& v, std::string_view path) {
  ResolvedEntry r = v.resolve_path(path);
  if (r.entry.type != FileType::directory) fail(Errc::not_a_directory, "'" + std::string(path) + "' is not a directory");
  return r.file_number;
}

struct Located {
  uint32_t dir;
  std::string name;
};

// Splits off the final name component and resolves the directory holding it.
Located locate(Volume& v, const char* path) {
  require(path, "path");
  std::string_view p = path;
  while (p.size() > 1 && p.ends_with('/')) p.remove_suffix(1);
  size_t last = 0;
  for (size_t i = 0; i < p.size();) {
    if (p[i] == '/') {
      last = ++i;
    } else if (p.substr(i).starts_with("..")) {
      i += 2;
      last = i;
    } else {
      ++i;
    }
  }
  std::string name(p.substr(last));
  if (name.empty()) fail(Errc::invalid_argument, "'" + std::string(path) + "' does not name an entry");
  return {dir_of(v, p.substr(0, last)), name};
}

// Slash syntax to the on-media delimiter encoding.
std::string link_target(std::string_view path) {
  std::string out;
  for (size_t i = 0; i < path.size();) {
    if (path[i] == '/') {
      out += static_cast<char>(kDownDelimiter);
      ++i;
    } else if (path.substr(i).starts_with("..")) {
      out += static_cast<char>(kUpDelimiter);
      i += 2;
    } else {
      out += path[i++];
    }
  }
  return out;
}

}  // namespace

extern "C" {

const char* cdfs_last_error(void) { return g_last_error.c_str(); }

const char* cdfs_status_string(cdfs_status status) {
  if (status == CDFS_OK) return "ok";
  if (status == CDFS_E_INTERNAL) return "internal error";
  if (status < 1 || status > kErrcCount) return "unknown status";
  return errc_name(static_cast<Errc>(status - 1)).data();
}

void cdfs_free(void* p) { std::free(p); }

cdfs_status cdfs_init(const char* image, uint64_t capacity_blocks, uint32_t block_size, const char* scheme,
                      const char* owner, const char* site, cdfs_volume** out) {
  return guard([&] {
    require(image, "image");
    require(out, "out");
    DeviceGeometry g;
    if (scheme && *scheme) {
      g.scheme = AddressScheme::parse(scheme);
      g.block_size = block_size ? block_size : g.scheme.block_size();
      g.capacity_blocks = capacity_blocks;
    } else {
      g = DeviceGeometry::audio(capacity_blocks, block_size ? block_size : 2048);
    }
    g.validate();
    if (std::filesystem::exists(image)) fail(Errc::already_exists, std::string("image ") + image + " already exists");
    std::shared_ptr<BlockDevice> dev = SimDevice::open_or_create(image, g);
    auto v = std::make_unique<cdfs_volume>();
    v->vol = Volume::init(dev, options(owner, site));
    *out = v.release();
  });
}

cdfs_status cdfs_mount(const char* image, const char* site, cdfs_volume** out) {
  return guard([&] {
    require(image, "image");
    require(out, "out");
    if (!std::filesystem::exists(image)) fail(Errc::not_found, std::string("no image ") + image);
    std::shared_ptr<BlockDevice> dev = SimDevice::open_or_create(image);
    auto v = std::make_unique<cdfs_volume>();
    v->vol = Volume::mount(dev, options(nullptr, site));
    *out = v.release();
  });
}

void cdfs_close(cdfs_volume* v) { delete v; }

cdfs_status cdfs_commit(cdfs_volume* v) {
  return guard([&] { vol(v).commit(); });
}

int cdfs_transaction_open(cdfs_volume* v) { return v && v->vol->transaction_open() ? 1 : 0; }

cdfs_status cdfs_get_info(cdfs_volume* v, cdfs_info* out) {
  return guard([&] {
    Volume& x = vol(v);
    require(out, "out");
    *out = cdfs_info{};
    out->trans_number = x.last_eot().trans_number;
    out->last_eot_address = x.last_eot_address().raw;
    out->next_write = x.next_write();
    out->next_free_file_number = x.next_free_file_number();
    out->block_size = x.scheme().block_size();
    const MountStats& m = x.mount_stats();
    out->locate_probes = m.locate_probes;
    out->total_probes = m.total_probes;
    out->premastered = m.premastered;
    out->recovered = m.recovered;
  });
}

cdfs_status cdfs_get_df(cdfs_volume* v, cdfs_df* out) {
  return guard([&] {
    require(out, "out");
    DfReport d = vol(v).df();
    *out = cdfs_df{d.capacity, d.usable, d.written, d.virgin, d.destroyed};
  });
}

cdfs_status cdfs_stat(cdfs_volume* v, const char* path, int follow_links, cdfs_entry* out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    ResolvedEntry r = vol(v).resolve_path(path, kRootDirectory, "/", "..", false, follow_links != 0);
    fill_entry(r.entry, out);
  });
}

cdfs_status cdfs_list(cdfs_volume* v, const char* dir_path, const char* pattern, cdfs_entry** entries,
                      size_t* count) {
  return guard([&] {
    require(entries, "entries");
    require(count, "count");
    Volume& x = vol(v);
    auto list = x.list_entries(dir_of(x, dir_path ? dir_path : "/"), pattern ? pattern : "");
    std::vector<cdfs_entry> out(list.size());
    for (size_t i = 0; i < list.size(); ++i) fill_entry(list[i], &out[i]);
    *entries = dup_array(out);
    *count = out.size();
  });
}

cdfs_status cdfs_mkdir(cdfs_volume* v, const char* path) {
  return guard([&] {
    Located l = locate(vol(v), path);
    vol(v).mkdir(l.dir, l.name);
  });
}

cdfs_status cdfs_remove(cdfs_volume* v, const char* path) {
  return guard([&] {
    Located l = locate(vol(v), path);
    vol(v).delete_entry(l.dir, l.name);
  });
}

cdfs_status cdfs_move(cdfs_volume* v, const char* old_path, const char* new_path) {
  return guard([&] {
    Located a = locate(vol(v), old_path);
    Located b = locate(vol(v), new_path);
    if (a.dir == b.dir) {
      vol(v).rename_entry(a.dir, a.name, b.name);
    } else {
      vol(v).move_entry(a.dir, a.name, b.dir, b.name);
    }
  });
}

cdfs_status cdfs_undelete(cdfs_volume* v, const char* dir_path, const char* name, uint32_t version,
                          int new_number) {
  return guard([&] {
    require(name, "name");
    Volume& x = vol(v);
    x.undelete_entry(dir_of(x, dir_path ? dir_path : "/"), name, version, new_number != 0);
  });
}

cdfs_status cdfs_symlink(cdfs_volume* v, const char* target, const char* link_path, uint32_t version) {
  return guard([&] {
    require(target, "target");
    Located l = locate(vol(v), link_path);
    std::string_view t = target;
    uint32_t target_dir = l.dir;
    if (t.starts_with('/')) {
      target_dir = kRootDirectory;
      t.remove_prefix(1);
    }
    vol(v).make_link(l.dir, l.name, target_dir, link_target(t), version);
  });
}

cdfs_status cdfs_addname(cdfs_volume* v, const char* primary_path, const char* name) {
  return guard([&] {
    require(name, "name");
    Located l = locate(vol(v), primary_path);
    vol(v).add_addname(l.dir, l.name, name);
  });
}

cdfs_status cdfs_remove_addname(cdfs_volume* v, const char* path) {
  return guard([&] {
    Located l = locate(vol(v), path);
    vol(v).remove_addname(l.dir, l.name);
  });
}

cdfs_status cdfs_history(cdfs_volume* v, const char* path, cdfs_version** versions, size_t* count) {
  return guard([&] {
    require(versions, "versions");
    require(count, "count");
    Located l = locate(vol(v), path);
    std::vector<cdfs_version> out;
    for (const auto& h : vol(v).history(l.dir, l.name)) {
      cdfs_version c{};
      c.version = h.version;
      c.type = static_cast<int>(h.header.type);
      c.header_address = h.header_location.raw;
      if (h.header.file_info) {
        c.length = h.header.file_info->length;
        c.write_time = unix_time(h.header.file_info->write_time);
        c.creation_time = unix_time(h.header.file_info->creation_time);
      } else if (h.header.link) {
        c.length = static_cast<uint32_t>(h.header.link->target_name.size());
        c.write_time = c.creation_time = unix_time(h.header.link->creation_time);
      }
      out.push_back(c);
    }
    *versions = dup_array(out);
    *count = out.size();
  });
}

cdfs_status cdfs_destroy(cdfs_volume* v, const char* path, uint32_t version) {
  return guard([&] {
    Located l = locate(vol(v), path);
    vol(v).destroy(l.dir, l.name, version);
  });
}

cdfs_status cdfs_import(cdfs_volume* v, const char* native, const char* path, int align, int preserve,
                        const char* const* props, size_t nprops) {
  return guard([&] {
    require(native, "native path");
    Located l = locate(vol(v), path);
    std::optional<PropertyList> pl;
    if (nprops > 0) {
      require(props, "props");
      pl.emplace();
      for (size_t i = 0; i < nprops; ++i) {
        require(props[i], "property");
        std::string_view kv = props[i];
        size_t eq = kv.find('=');
        if (eq == 0) fail(Errc::invalid_argument, "property with an empty key");
        if (eq == std::string_view::npos) pl->entries.emplace_back(std::string(kv), std::string());
        else pl->entries.emplace_back(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
      }
    }
    vol(v).import_file(native, l.dir, l.name, align != 0, preserve != 0, std::move(pl));
  });
}

cdfs_status cdfs_export(cdfs_volume* v, const char* path, uint32_t version, const char* native, int preserve) {
  return guard([&] {
    require(native, "native path");
    Located l = locate(vol(v), path);
    vol(v).export_file(l.dir, l.name, version, native, preserve != 0);
  });
}

cdfs_status cdfs_fragment(cdfs_volume* v, const char* path) {
  return guard([&] {
    Located l = locate(vol(v), path);
    vol(v).convert_to_fragmented(l.dir, l.name);
  });
}

cdfs_status cdfs_unfragment(cdfs_volume* v, const char* path) {
  return guard([&] {
    Located l = locate(vol(v), path);
    vol(v).convert_to_contiguous(l.dir, l.name);
  });
}

cdfs_status cdfs_patch(cdfs_volume* v, const char* path, uint64_t offset, const void* data, size_t n) {
  return guard([&] {
    if (n) require(data, "data");
    Located l = locate(vol(v), path);
    vol(v).patch(l.dir, l.name, offset, std::span<const uint8_t>(static_cast<const uint8_t*>(data), n));
  });
}

cdfs_status cdfs_open_read(cdfs_volume* v, const char* path, uint32_t version, cdfs_reader** out) {
  return guard([&] {
    require(out, "out");
    Located l = locate(vol(v), path);
    *out = new cdfs_reader{vol(v).open_read(l.dir, l.name, version)};
  });
}

cdfs_status cdfs_read(cdfs_reader* r, void* buf, size_t n, size_t* got) {
  return guard([&] {
    require(r, "reader");
    require(got, "got");
    if (n) require(buf, "buffer");
    auto bytes = r->stream.read(n);
    std::memcpy(buf, bytes.data(), bytes.size());
    *got = bytes.size();
  });
}

cdfs_status cdfs_seek(cdfs_reader* r, int64_t offset, int whence, uint64_t* pos) {
  return guard([&] {
    require(r, "reader");
    ReadStream::Whence w = whence == CDFS_SEEK_CUR ? ReadStream::Whence::current
                           : whence == CDFS_SEEK_END ? ReadStream::Whence::end
                                                     : ReadStream::Whence::start;
    uint64_t p = r->stream.seek(offset, w);
    if (pos) *pos = p;
  });
}

uint64_t cdfs_reader_size(cdfs_reader* r) { return r ? r->stream.size() : 0; }

void cdfs_reader_close(cdfs_reader* r) { delete r; }

cdfs_status cdfs_open_write(cdfs_volume* v, const char* path, cdfs_writer** out) {
  return guard([&] {
    require(out, "out");
    Located l = locate(vol(v), path);
    *out = new cdfs_writer{vol(v).open_write(l.dir, l.name)};
  });
}

cdfs_status cdfs_write(cdfs_writer* w, const void* data, size_t n) {
  return guard([&] {
    require(w, "writer");
    if (n) require(data, "data");
    w->stream.write(std::span<const uint8_t>(static_cast<const uint8_t*>(data), n));
  });
}

cdfs_status cdfs_writer_close(cdfs_writer* w) {
  cdfs_status s = guard([&] {
    require(w, "writer");
    w->stream.close();
  });
  delete w;
  return s;
}

void cdfs_writer_abandon(cdfs_writer* w) { delete w; }

cdfs_status cdfs_fsck(cdfs_volume* v, int verbose, char** report, int* clean) {
  return guard([&] {
    FsckReport r = vol(v).fsck();
    if (report) *report = dup_text(r.render(verbose != 0));
    if (clean) *clean = r.clean() ? 1 : 0;
  });
}

cdfs_status cdfs_dump(cdfs_volume* v, const char* address, char** text) {
  return guard([&] {
    require(address, "address");
    require(text, "text");
    Volume& x = vol(v);
    MediaAddress at = std::string_view(address) == "last-eot" ? x.last_eot_address()
                                                              : x.scheme().parse_address(address);
    *text = dup_text(x.dump(at));
  });
}

cdfs_status cdfs_format_address(cdfs_volume* v, uint64_t address, char** text) {
  return guard([&] {
    require(text, "text");
    *text = dup_text(vol(v).scheme().format(MediaAddress{address}));
  });
}

cdfs_status cdfs_compact(cdfs_volume* v, const char* dst_image, int premastered) {
  return guard([&] {
    require(dst_image, "destination image");
    Volume& x = vol(v);
    if (std::filesystem::exists(dst_image)) {
      fail(Errc::already_exists, std::string("image ") + dst_image + " already exists");
    }
    std::shared_ptr<BlockDevice> dst = SimDevice::open_or_create(dst_image, x.device().geometry());
    try {
      VolumeOptions o = x.options();
      o.owner.clear();
      Volume::compact(x, dst, o, CompactOptions{premastered != 0});
    } catch (...) {
      dst.reset();
      std::error_code ec;
      std::filesystem::remove(dst_image, ec);
      throw;
    }
  });
}

}  // extern "C"
