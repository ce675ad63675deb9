// Command-line front end over the C API.

#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cdfs/cdfs.h"

namespace {

struct OpError {
  std::string message;
};

void check(cdfs_status s) {
  if (s != CDFS_OK) {
    std::string msg = cdfs_last_error();
    throw OpError{msg.empty() ? cdfs_status_string(s) : msg};
  }
}

struct Text {
  char* p = nullptr;
  ~Text() { cdfs_free(p); }
};

std::string iso_time(int64_t t) {
  std::time_t tt = static_cast<std::time_t>(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const char* type_name(int type) {
  switch (type) {
    case CDFS_TYPE_FILE: return "file";
    case CDFS_TYPE_DIRECTORY: return "dir";
    case CDFS_TYPE_SOFT_LINK: return "link";
    case CDFS_TYPE_FRAGMENTED: return "frag";
    case CDFS_TYPE_ADDNAME: return "addname";
  }
  return "?";
}

std::string address(cdfs_volume* v, uint64_t raw) {
  Text t;
  check(cdfs_format_address(v, raw, &t.p));
  return t.p;
}

std::vector<cdfs_entry> list(cdfs_volume* v, const std::string& dir) {
  cdfs_entry* e = nullptr;
  size_t n = 0;
  check(cdfs_list(v, dir.c_str(), nullptr, &e, &n));
  std::vector<cdfs_entry> out(e, e + n);
  cdfs_free(e);
  return out;
}

void print_entry(cdfs_volume* v, const cdfs_entry& e, bool longform) {
  if (!longform) {
    std::cout << e.name << (e.type == CDFS_TYPE_DIRECTORY ? "/" : "") << "\n";
    return;
  }
  char line[160];
  std::snprintf(line, sizeof line, "%-7s %8u v%-4u %10u %s %s ", type_name(e.type), e.file_number, e.file_version,
                e.file_size, iso_time(e.modify_time).c_str(),
                e.type == CDFS_TYPE_ADDNAME || e.type == CDFS_TYPE_DIRECTORY ? "-" : address(v, e.header_address).c_str());
  std::cout << line << e.name << "\n";
}

void tree(cdfs_volume* v, const std::string& dir, const std::string& indent) {
  for (const auto& e : list(v, dir)) {
    std::cout << indent << e.name << (e.type == CDFS_TYPE_DIRECTORY ? "/" : "") << "\n";
    if (e.type == CDFS_TYPE_DIRECTORY) tree(v, dir + (dir.ends_with('/') ? "" : "/") + e.name, indent + "  ");
  }
}

// Shell-like word splitting: whitespace separates, quotes group, backslash escapes.
std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> words;
  std::string cur;
  bool in_word = false;
  char quote = 0;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quote) {
      if (c == quote) quote = 0;
      else if (c == '\\' && quote == '"' && i + 1 < line.size()) cur += line[++i];
      else cur += c;
    } else if (c == '"' || c == '\'') {
      quote = c;
      in_word = true;
    } else if (c == '\\' && i + 1 < line.size()) {
      cur += line[++i];
      in_word = true;
    } else if (c == ' ' || c == '\t') {
      if (in_word) words.push_back(cur);
      cur.clear();
      in_word = false;
    } else if (c == '#' && !in_word) {
      break;
    } else {
      cur += c;
      in_word = true;
    }
  }
  if (quote) throw CLI::ValidationError("unterminated quote in: " + line);
  if (in_word) words.push_back(cur);
  return words;
}

struct Session {
  std::string image;
  std::string site;
  cdfs_volume* vol = nullptr;
  ~Session() { cdfs_close(vol); }
};

// A parsed command: `run` executes against a mounted volume.
struct Command {
  std::function<void(cdfs_volume*)> run;
  bool mutates = false;
};

// Registers every volume command on `app`; the chosen one lands in `cmd`.
void add_commands(CLI::App& app, Command& cmd, bool in_script) {
  auto on = [&cmd](CLI::App* sub, bool mutates, std::function<void(cdfs_volume*)> fn) {
    sub->callback([&cmd, mutates, fn] { cmd = {fn, mutates}; });
  };

  {
    auto* s = app.add_subcommand("ls", "List a directory or describe an entry");
    auto path = std::make_shared<std::string>("/");
    auto longform = std::make_shared<bool>(false);
    s->add_option("path", *path);
    s->add_flag("-l,--long", *longform);
    on(s, false, [=](cdfs_volume* v) {
      cdfs_entry e{};
      check(cdfs_stat(v, path->c_str(), 1, &e));
      if (e.type == CDFS_TYPE_DIRECTORY) {
        for (const auto& x : list(v, *path)) print_entry(v, x, *longform);
      } else {
        check(cdfs_stat(v, path->c_str(), 0, &e));
        print_entry(v, e, *longform);
      }
    });
  }
  {
    auto* s = app.add_subcommand("tree", "Print the directory tree");
    on(s, false, [](cdfs_volume* v) {
      std::cout << "/\n";
      tree(v, "/", "  ");
    });
  }
  {
    auto* s = app.add_subcommand("put", "Copy a native file onto the volume");
    auto native = std::make_shared<std::string>();
    auto path = std::make_shared<std::string>();
    auto align = std::make_shared<bool>(false);
    auto preserve = std::make_shared<bool>(false);
    auto props = std::make_shared<std::vector<std::string>>();
    s->add_option("native", *native)->required();
    s->add_option("cdpath", *path)->required();
    s->add_flag("--align", *align, "Start the content on a block boundary");
    s->add_flag("--preserve", *preserve, "Keep the native modify time, owner and mode");
    s->add_option("--prop", *props, "Property KEY=VALUE (or a bare KEY flag)");
    on(s, true, [=](cdfs_volume* v) {
      std::vector<const char*> p;
      for (const auto& x : *props) p.push_back(x.c_str());
      check(cdfs_import(v, native->c_str(), path->c_str(), *align, *preserve, p.data(), p.size()));
    });
  }
  {
    auto* s = app.add_subcommand("get", "Copy a file version to a native file");
    auto path = std::make_shared<std::string>();
    auto native = std::make_shared<std::string>();
    auto version = std::make_shared<uint32_t>(0);
    auto preserve = std::make_shared<bool>(false);
    s->add_option("cdpath", *path)->required();
    s->add_option("native", *native)->required();
    s->add_option("--version", *version, "Version number (0 = newest)");
    s->add_flag("--preserve", *preserve);
    on(s, false, [=](cdfs_volume* v) {
      check(cdfs_export(v, path->c_str(), *version, native->c_str(), *preserve));
    });
  }
  {
    auto* s = app.add_subcommand("cat", "Write a file version to standard output");
    auto path = std::make_shared<std::string>();
    auto version = std::make_shared<uint32_t>(0);
    s->add_option("cdpath", *path)->required();
    s->add_option("--version", *version);
    on(s, false, [=](cdfs_volume* v) {
      cdfs_reader* r = nullptr;
      check(cdfs_open_read(v, path->c_str(), *version, &r));
      std::unique_ptr<cdfs_reader, void (*)(cdfs_reader*)> guard(r, cdfs_reader_close);
      std::vector<char> buf(1 << 16);
      for (;;) {
        size_t got = 0;
        check(cdfs_read(r, buf.data(), buf.size(), &got));
        if (got == 0) break;
        std::cout.write(buf.data(), static_cast<std::streamsize>(got));
      }
      std::cout.flush();
    });
  }
  {
    auto* s = app.add_subcommand("mkdir", "Create a directory");
    auto path = std::make_shared<std::string>();
    s->add_option("path", *path)->required();
    on(s, true, [=](cdfs_volume* v) { check(cdfs_mkdir(v, path->c_str())); });
  }
  {
    auto* s = app.add_subcommand("rm", "Delete a name (history is kept)");
    auto path = std::make_shared<std::string>();
    s->add_option("path", *path)->required();
    on(s, true, [=](cdfs_volume* v) { check(cdfs_remove(v, path->c_str())); });
  }
  {
    auto* s = app.add_subcommand("mv", "Rename or move an entry");
    auto from = std::make_shared<std::string>();
    auto to = std::make_shared<std::string>();
    s->add_option("old", *from)->required();
    s->add_option("new", *to)->required();
    on(s, true, [=](cdfs_volume* v) { check(cdfs_move(v, from->c_str(), to->c_str())); });
  }
  {
    auto* s = app.add_subcommand("undelete", "Restore a deleted name");
    auto dir = std::make_shared<std::string>();
    auto name = std::make_shared<std::string>();
    auto version = std::make_shared<uint32_t>(0);
    auto fresh = std::make_shared<bool>(false);
    s->add_option("dirpath", *dir)->required();
    s->add_option("name", *name)->required();
    s->add_option("--version", *version);
    s->add_flag("--new-number", *fresh, "Give the restored file a new file number");
    on(s, true, [=](cdfs_volume* v) {
      check(cdfs_undelete(v, dir->c_str(), name->c_str(), *version, *fresh));
    });
  }
  {
    auto* s = app.add_subcommand("ln", "Create a soft link");
    auto target = std::make_shared<std::string>();
    auto path = std::make_shared<std::string>();
    auto version = std::make_shared<uint32_t>(0);
    s->add_option("target", *target)->required();
    s->add_option("linkpath", *path)->required();
    s->add_option("--version", *version, "Pin the link to one version of the target");
    on(s, true, [=](cdfs_volume* v) { check(cdfs_symlink(v, target->c_str(), path->c_str(), *version)); });
  }
  {
    auto* s = app.add_subcommand("addname", "Give a file an additional name");
    auto primary = std::make_shared<std::string>();
    auto name = std::make_shared<std::string>();
    s->add_option("primarypath", *primary)->required();
    s->add_option("name", *name)->required();
    on(s, true, [=](cdfs_volume* v) { check(cdfs_addname(v, primary->c_str(), name->c_str())); });
  }
  {
    auto* s = app.add_subcommand("history", "List every version of a file");
    auto path = std::make_shared<std::string>();
    s->add_option("cdpath", *path)->required();
    on(s, false, [=](cdfs_volume* v) {
      cdfs_version* h = nullptr;
      size_t n = 0;
      check(cdfs_history(v, path->c_str(), &h, &n));
      std::unique_ptr<void, void (*)(void*)> guard(h, cdfs_free);
      for (size_t i = 0; i < n; ++i) {
        char line[160];
        std::snprintf(line, sizeof line, "version %u %s length %u written %s created %s header %s", h[i].version,
                      type_name(h[i].type), h[i].length, iso_time(h[i].write_time).c_str(),
                      iso_time(h[i].creation_time).c_str(), address(v, h[i].header_address).c_str());
        std::cout << line << "\n";
      }
    });
  }
  {
    auto* s = app.add_subcommand("destroy", "Physically destroy a version (0 = all)");
    auto path = std::make_shared<std::string>();
    auto version = std::make_shared<uint32_t>(0);
    s->add_option("cdpath", *path)->required();
    s->add_option("--version", *version);
    on(s, true, [=](cdfs_volume* v) { check(cdfs_destroy(v, path->c_str(), *version)); });
  }
  {
    auto* s = app.add_subcommand("fsck", "Check every reachable structure");
    auto verbose = std::make_shared<bool>(false);
    s->add_flag("-v,--verbose", *verbose);
    on(s, false, [=](cdfs_volume* v) {
      Text t;
      int clean = 0;
      check(cdfs_fsck(v, *verbose, &t.p, &clean));
      std::cout << t.p;
      if (!clean) throw OpError{"volume has damaged structures"};
    });
  }
  {
    auto* s = app.add_subcommand("dump", "Decode the record at an address");
    auto where = std::make_shared<std::string>();
    s->add_option("address", *where, "Dotted address, block ordinal, or last-eot")->required();
    on(s, false, [=](cdfs_volume* v) {
      Text t;
      check(cdfs_dump(v, where->c_str(), &t.p));
      std::cout << t.p;
    });
  }
  {
    auto* s = app.add_subcommand("df", "Block usage");
    on(s, false, [](cdfs_volume* v) {
      cdfs_df d{};
      check(cdfs_get_df(v, &d));
      std::cout << "capacity = " << d.capacity << "\nusable = " << d.usable << "\nwritten = " << d.written
                << "\nvirgin = " << d.virgin << "\ndestroyed = " << d.destroyed << "\n";
    });
  }
  {
    auto* s = app.add_subcommand("info", "Volume and mount details");
    on(s, false, [](cdfs_volume* v) {
      cdfs_info i{};
      check(cdfs_get_info(v, &i));
      std::cout << "trans_number = " << i.trans_number << "\nlast_eot = " << address(v, i.last_eot_address)
                << "\nnext_write = " << i.next_write << "\nnext_free_file_number = " << i.next_free_file_number
                << "\nblock_size = " << i.block_size << "\nlocate_probes = " << i.locate_probes
                << "\ntotal_probes = " << i.total_probes << "\npremastered = " << i.premastered
                << "\nrecovered = " << i.recovered << "\n";
    });
  }
  {
    auto* s = app.add_subcommand("fragment", "Convert a file to fragmented form");
    auto path = std::make_shared<std::string>();
    s->add_option("cdpath", *path)->required();
    on(s, true, [=](cdfs_volume* v) { check(cdfs_fragment(v, path->c_str())); });
  }
  {
    auto* s = app.add_subcommand("patch", "Overwrite bytes of a file in place");
    auto path = std::make_shared<std::string>();
    auto offset = std::make_shared<uint64_t>(0);
    auto data = std::make_shared<std::string>();
    auto from = std::make_shared<std::string>();
    s->add_option("cdpath", *path)->required();
    s->add_option("offset", *offset)->required();
    auto* d = s->add_option("--data", *data, "Literal bytes");
    auto* f = s->add_option("--from", *from, "Native file holding the bytes");
    d->excludes(f);
    on(s, true, [=](cdfs_volume* v) {
      std::string bytes = *data;
      if (!from->empty()) {
        std::ifstream in(*from, std::ios::binary);
        if (!in) throw OpError{"cannot read " + *from};
        std::ostringstream ss;
        ss << in.rdbuf();
        bytes = ss.str();
      }
      if (bytes.empty()) throw CLI::ValidationError("patch needs --data or --from");
      check(cdfs_patch(v, path->c_str(), *offset, bytes.data(), bytes.size()));
    });
  }
  if (!in_script) {
    auto* s = app.add_subcommand("compact", "Copy the live tree to a new image");
    auto dst = std::make_shared<std::string>();
    auto pre = std::make_shared<bool>(false);
    s->add_option("dst", *dst)->required();
    s->add_flag("--premastered", *pre, "Point block 0 at the final EOT");
    on(s, false, [=](cdfs_volume* v) { check(cdfs_compact(v, dst->c_str(), *pre)); });
  }
  app.require_subcommand(1);
}

int usage_error(const std::string& what) {
  std::cerr << "cdfs: " << what << "\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CDFS volume tool", "cdfs"};
  Session session;
  app.add_option("--site", session.site, "Site name stamped into written headers");
  app.add_option("image", session.image, "Simulator image")->required();

  Command cmd;
  add_commands(app, cmd, false);

  uint64_t capacity = 0;
  uint32_t block_size = 2048;
  std::string scheme, owner;
  auto* init = app.add_subcommand("init", "Create a blank image and volume");
  init->add_option("--capacity-blocks", capacity)->required();
  init->add_option("--block-size", block_size);
  init->add_option("--scheme", scheme, "Address scheme m0:b0,m1:b1,...");
  init->add_option("--owner", owner);
  bool is_init = false;
  init->callback([&] { is_init = true; });

  std::string script;
  auto* sc = app.add_subcommand("script", "Run many commands as one transaction");
  sc->add_option("file", script)->required();
  bool is_script = false;
  sc->callback([&] { is_script = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return usage_error(e.what());
  }

  const char* site = session.site.empty() ? nullptr : session.site.c_str();
  try {
    if (is_init) {
      check(cdfs_init(session.image.c_str(), capacity, block_size, scheme.empty() ? nullptr : scheme.c_str(),
                      owner.c_str(), site, &session.vol));
      return 0;
    }

    // Parse the whole script before mounting so usage errors touch nothing.
    std::vector<Command> steps;
    if (is_script) {
      std::ifstream in(script);
      if (!in) throw OpError{"cannot read script " + script};
      std::string line;
      int lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        std::vector<std::string> words;
        try {
          words = split_words(line);
        } catch (const CLI::ParseError& e) {
          return usage_error(script + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (words.empty()) continue;
        CLI::App sub{"", "cdfs"};
        Command step;
        add_commands(sub, step, true);
        std::vector<std::string> rev(words.rbegin(), words.rend());
        try {
          sub.parse(rev);
        } catch (const CLI::ParseError& e) {
          return usage_error(script + ":" + std::to_string(lineno) + ": " + e.what());
        }
        steps.push_back(std::move(step));
      }
    } else {
      steps.push_back(cmd);
    }

    check(cdfs_mount(session.image.c_str(), site, &session.vol));
    bool mutated = false;
    for (auto& s : steps) {
      s.run(session.vol);
      mutated |= s.mutates;
    }
    if (mutated && cdfs_transaction_open(session.vol)) check(cdfs_commit(session.vol));
  } catch (const OpError& e) {
    std::cout.flush();
    std::cerr << "cdfs: " << e.message << "\n";
    return 1;
  } catch (const CLI::ParseError& e) {
    return usage_error(e.what());
  }
  return 0;
}
