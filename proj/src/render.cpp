#include <cstdio>
#include <sstream>

#include "cdfs/format.hpp"

namespace cdfs {

namespace {

class Lines {
 public:
  explicit Lines(const AddressScheme& scheme) : scheme_(scheme) {}

  template <typename T>
  void put(const std::string& name, const T& value) {
    out_ << indent_ << name << " = " << value << '\n';
  }
  void addr(const std::string& name, MediaAddress a) { put(name, scheme_.format(a)); }
  void time(const std::string& name, Timestamp t) {
    put(name, std::to_string(t.seconds) + " (" + t.to_string() + ")");
  }
  void text(const std::string& name, std::string_view s) { put(name, "\"" + printable(s) + "\""); }
  void nest(const std::string& prefix) { indent_ = prefix; }
  std::string str() const { return out_.str(); }

 private:
  const AddressScheme& scheme_;
  std::ostringstream out_;
  std::string indent_;
};


std::string octal(uint16_t v) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "0%03o", v);
  return buf;
}

}  // namespace

std::string printable(std::string_view bytes) {
  std::string out;
  for (char c : bytes) {
    auto u = static_cast<uint8_t>(c);
    if (u == kDownDelimiter) {
      out += "<down>";
    } else if (u == kUpDelimiter) {
      out += "<up>";
    } else if (u < 0x20 || u >= 0x7F) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02X", u);
      out += buf;
    } else {
      out += c;
    }
  }
  return out;
}

std::string render(const Eot& e, const AddressScheme& scheme) {
  Lines l(scheme);
  l.put("record", "eot");
  l.put("eot_version", e.version);
  l.put("eot_length", e.encoded_length());
  l.addr("eot_location", e.location);
  l.put("implementation_id", e.implementation_id);
  l.addr("current_dir_list", e.current_dir_list);
  l.addr("previous_eot_location", e.previous_eot);
  l.addr("next_eot_location", e.next_eot);
  l.time("filesystem_creation_time", e.filesystem_creation_time);
  l.put("trans_number", e.trans_number);
  l.time("trans_start_time", e.trans_start_time);
  l.time("trans_end_time", e.trans_end_time);
  l.put("files_written_on_trans", e.files_written);
  l.put("dirs_written_on_trans", e.dirs_written);
  l.put("next_free_file_number", e.next_free_file_number);
  l.put("number_of_used_pointerdefs", e.used_pointerdefs);
  for (size_t i = 0; i < e.used_pointerdefs && i < e.pointerdefs.size(); ++i) {
    l.put("pointerdef[" + std::to_string(i) + "]",
          std::to_string(e.pointerdefs[i].modulo) + ":" + std::to_string(e.pointerdefs[i].bits));
  }
  l.text("owners_name", e.owner);
  return l.str();
}

std::string render(const DirList& d, const AddressScheme& scheme) {
  Lines l(scheme);
  l.put("record", "dir_list");
  l.put("dir_list_version", d.version);
  l.addr("dir_list_loc", d.location);
  l.addr("prev_dir_list", d.prev_dir_list);
  l.put("dir_list_entry_count", d.elements.size());
  for (size_t i = 0; i < d.elements.size(); ++i) {
    const auto& el = d.elements[i];
    l.nest("element[" + std::to_string(i) + "].");
    l.put("dir_number", el.dir_number);
    l.addr("header_location", el.header_location);
    l.put("containing_dir", el.containing_dir);
    l.time("modify_time", el.modify_time);
    l.put("contained_bytes", el.contained_bytes);
    l.put("header_size", el.header_size);
  }
  return l.str();
}

std::string render(const Directory& d, const AddressScheme& scheme) {
  Lines l(scheme);
  l.put("record", "directory");
  l.put("directory_info_version", d.version);
  l.put("directory_entries", d.entries.size());
  for (size_t i = 0; i < d.entries.size(); ++i) {
    const auto& e = d.entries[i];
    l.nest("entry[" + std::to_string(i) + "].");
    l.text("file_name", e.name);
    if (e.type == FileType::directory) {
      l.put("header_location", "0");
    } else {
      l.addr("header_location", e.header_location);
    }
    l.time("modify_time", e.modify_time);
    l.put("file_number", e.file_number);
    l.put("file_size", e.file_size);
    l.put("file_version", e.file_version);
    l.put("file_type", file_type_name(e.type));
    l.put("header_size", e.header_size);
    l.put("addname_count", e.addname_count);
  }
  return l.str();
}

std::string render(const FileHeader& h, const AddressScheme& scheme) {
  Lines l(scheme);
  l.put("record", "fileheader");
  l.put("header_version", h.header_version);
  l.put("fileheader_length", h.encoded_length());
  l.addr("fileheader_location", h.location);
  l.put("file_number", h.file_number);
  l.put("file_type", file_type_name(h.type));
  if (h.access) {
    l.nest("access.");
    l.text("file_owner", h.access->owner);
    l.text("file_group", h.access->group);
    l.put("file_access", octal(h.access->access));
  }
  if (h.backup) {
    l.nest("backup.");
    l.put("containing_directory_number", h.backup->containing_dir);
    l.addr("previous_version_location", h.backup->previous_version);
    l.addr("previous_eot_location", h.backup->previous_eot);
    l.put("filename_offset", h.backup->filename_offset);
    l.put("previous_version_header_size", h.backup->previous_version_header_size);
    l.text("backup_pathname", h.backup->pathname);
  }
  if (h.file_info) {
    l.nest("file_info.");
    l.addr("file_location", h.file_info->location);
    l.put("file_length", h.file_info->length);
    l.time("write_time", h.file_info->write_time);
    l.time("creation_time", h.file_info->creation_time);
    l.put("file_version_number", h.file_info->version_number);
  }
  if (h.link) {
    l.nest("soft_link.");
    l.time("creation_time", h.link->creation_time);
    l.put("target_dir", h.link->target_dir);
    l.put("target_version", h.link->target_version);
    l.text("target_name", h.link->target_name);
  }
  if (h.site) {
    l.nest("site.");
    l.text("opsys", h.site->opsys);
    l.text("opsys_version", h.site->opsys_version);
    l.text("site_name", h.site->site_name);
  }
  if (h.properties) {
    l.nest("properties.");
    l.put("entries", h.properties->entries.size());
    for (const auto& [name, value] : h.properties->entries) {
      if (value.empty()) {
        l.put(name, "(flag)");
      } else {
        l.text(name, value);
      }
    }
  }
  return l.str();
}

std::string render(const FileMap& m, const AddressScheme& scheme) {
  Lines l(scheme);
  l.put("record", "file_map");
  l.put("strip_info_version", m.version);
  l.put("strip_count", m.strips.size());
  for (size_t i = 0; i < m.strips.size(); ++i) {
    l.nest("strip[" + std::to_string(i) + "].");
    l.addr("loc", m.strips[i].location);
    l.put("valid_chars", m.strips[i].valid_chars);
    l.put("ordinal", m.strips[i].ordinal);
  }
  return l.str();
}

}  // namespace cdfs
