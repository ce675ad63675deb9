#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

struct Cli {
  fs::path dir;
  std::string image;

  Cli() {
    std::string tmpl = (fs::temp_directory_path() / "cdfs-cli-XXXXXX").string();
    dir = mkdtemp(tmpl.data());
    image = (dir / "v.img").string();
  }
  ~Cli() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }

  // Runs the tool with stdout captured and stderr folded in.
  Run operator()(const std::string& args) const {
    std::string cmd = "'" CDFS_CLI "' '" + image + "' " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    std::array<char, 4096> buf;
    size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    int st = pclose(p);
    r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
  }

  std::string file(const std::string& name, const std::string& content) const {
    auto p = dir / name;
    std::ofstream(p, std::ios::binary) << content;
    return p.string();
  }
};

bool has(const Run& r, const std::string& s) { return r.out.find(s) != std::string::npos; }

}  // namespace

TEST_CASE("cli init and df") {
  Cli cli;
  REQUIRE(cli("init --capacity-blocks 16").status == 0);
  auto df = cli("df");
  CHECK(df.status == 0);
  CHECK(has(df, "written = 1"));
  CHECK(has(df, "virgin = 15"));
}

TEST_CASE("cli script reproduces the two-file layout") {
  Cli cli;
  REQUIRE(cli("init --capacity-blocks 16").status == 0);
  auto life = cli.file("life.c", std::string(3000, 'l'));
  auto wheel = cli.file("wheel.c", std::string(1000, 'w'));
  auto script = cli.file("s.txt", "put " + life + " /life.c\nput " + wheel + " /wheel.c\n");
  REQUIRE(cli("script " + script).status == 0);
  CHECK(has(cli("df"), "written = 7"));
  auto ls = cli("ls /");
  CHECK(has(ls, "life.c"));
  CHECK(has(ls, "wheel.c"));
  CHECK(cli("fsck").status == 0);
}

TEST_CASE("cli history after two puts") {
  Cli cli;
  REQUIRE(cli("init --capacity-blocks 64").status == 0);
  auto a = cli.file("a", "first");
  auto b = cli.file("b", "second!");
  REQUIRE(cli("put " + a + " /life.c").status == 0);
  REQUIRE(cli("put " + b + " /life.c").status == 0);
  auto h = cli("history /life.c");
  CHECK(h.status == 0);
  auto v2 = h.out.find("version 2");
  auto v1 = h.out.find("version 1");
  CHECK(v2 != std::string::npos);
  CHECK(v1 != std::string::npos);
  CHECK(v2 < v1);
  CHECK(cli("cat /life.c --version 1").out == "first");
  CHECK(cli("cat /life.c").out == "second!");
}

TEST_CASE("cli exit codes") {
  Cli cli;
  REQUIRE(cli("init --capacity-blocks 64").status == 0);
  CHECK(cli("frobnicate").status == 2);
  CHECK(cli("ls --bogus-flag /").status == 2);
  auto missing = cli("cat /nothere");
  CHECK(missing.status == 1);
  CHECK(missing.out.rfind("cdfs: ", 0) == 0);
  CHECK(cli("mkdir /d").status == 0);
  CHECK(cli("mkdir /d").status == 1);
}

TEST_CASE("cli namespace commands") {
  Cli cli;
  REQUIRE(cli("init --capacity-blocks 128").status == 0);
  auto f = cli.file("f", "payload");
  REQUIRE(cli("mkdir /src").status == 0);
  REQUIRE(cli("mkdir /src/lib").status == 0);
  REQUIRE(cli("put " + f + " /src/lib/x.c").status == 0);
  REQUIRE(cli("ln ../lib/x.c /src/lib/up").status == 0);
  CHECK(cli("cat /src/lib/up").out == "payload");
  REQUIRE(cli("mv /src/lib/x.c /src/x.c").status == 0);
  CHECK(cli("cat /src/x.c").out == "payload");
  REQUIRE(cli("addname /src/x.c y.c").status == 0);
  CHECK(cli("cat /src/y.c").out == "payload");
  CHECK(cli("mv /src/x.c /src/lib/x.c").status == 1);
  REQUIRE(cli("rm /src/x.c").status == 0);
  CHECK(cli("cat /src/x.c").status == 1);
  REQUIRE(cli("undelete /src x.c").status == 0);
  CHECK(cli("cat /src/x.c").out == "payload");
  auto tree = cli("tree");
  CHECK(has(tree, "lib"));
  auto out = (cli.dir / "got").string();
  REQUIRE(cli("get /src/x.c " + out).status == 0);
  std::ifstream in(out);
  CHECK(std::string((std::istreambuf_iterator<char>(in)), {}) == "payload");
  CHECK(has(cli("dump last-eot"), "trans_number"));
  REQUIRE(cli("destroy /src/x.c").status == 0);
  auto fsck = cli("fsck");
  CHECK(fsck.status == 0);
  CHECK(has(fsck, "unreadable"));
}

TEST_CASE("cli fragment, patch and compact") {
  Cli cli;
  REQUIRE(cli("init --capacity-blocks 256").status == 0);
  auto f = cli.file("f", std::string(10000, 'a'));
  REQUIRE(cli("put " + f + " /big").status == 0);
  REQUIRE(cli("fragment /big").status == 0);
  REQUIRE(cli("patch /big 5000 --data ZZZ").status == 0);
  auto body = cli("cat /big").out;
  REQUIRE(body.size() == 10000);
  CHECK(body.substr(4999, 5) == "aZZZa");
  auto dst = (cli.dir / "c.img").string();
  REQUIRE(cli("compact " + dst).status == 0);
  std::string cmd = "'" CDFS_CLI "' '" + dst + "' cat /big";
  FILE* p = popen(cmd.c_str(), "r");
  std::string got;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) got.append(buf, n);
  pclose(p);
  CHECK(got == body);
}

TEST_CASE("a failing script commits nothing") {
  Cli cli;
  REQUIRE(cli("init --capacity-blocks 64").status == 0);
  auto f = cli.file("f", "x");
  auto script = cli.file("s.txt", "put " + f + " /ok\ncat /missing\n");
  CHECK(cli("script " + script).status == 1);
  CHECK(cli("cat /ok").status == 1);
  CHECK(cli("ls /").out.empty());
  CHECK(cli("fsck").status == 0);
}
