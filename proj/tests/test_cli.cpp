#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "heal/checkpoint.hpp"
#include "httplib.h"
#include "test_support.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

// Runs the CLI with stderr folded into stdout.
Result heal_cli(const std::string& args) {
  const std::string cmd = std::string(HEAL_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path workdir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("heal_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "pool.csv") << heal::test::cluster_csv(50, 9);
  return dir;
}

void write_config(const fs::path& path, const std::string& output, const std::string& extra = "") {
  std::ofstream(path) << R"({"name": "cli", "dataset": {"path": "pool.csv"},
    "strategies": ["random", "heal_diverse"], "seeds": [0, 1],
    "acquisition": {"batch_size": 10, "n_init": 10, "label_budget": 50},
    "model": {"members": 3, "dim": 200, "bandwidth": 0.8},
    "record_wall_time": false, "output": ")" + output + "\"" + extra + "}";
}

std::map<std::string, std::string> metric_files(const fs::path& out) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(out))
    if (e.is_regular_file() && e.path().filename() != "manifest.json" && e.path().extension() != ".ckpt")
      files[fs::relative(e.path(), out).string()] = heal::read_file(e.path());
  return files;
}

}  // namespace

TEST_CASE("run writes outputs") {
  const auto dir = workdir("run");
  write_config(dir / "run.json", "out");
  const auto r = heal_cli("run " + (dir / "run.json").string() + " --workers 2");
  CHECK(r.code == 0);
  CHECK(r.output.find("heal_diverse seed=1 complete labeled=50") != std::string::npos);
  CHECK(fs::exists(dir / "out" / "manifest.json"));
  CHECK(fs::exists(dir / "out" / "curves" / "random-seed0.csv"));
  CHECK(fs::exists(dir / "out" / "pairwise.csv"));

  const auto p = heal_cli("pairwise " + (dir / "out").string());
  CHECK(p.code == 0);
  CHECK(p.output == heal::read_file(dir / "out" / "pairwise.csv"));
}

TEST_CASE("bad configs name the key") {
  const auto dir = workdir("bad");
  write_config(dir / "bad.json", "out", R"(, "modle": {})");
  auto r = heal_cli("run " + (dir / "bad.json").string());
  CHECK(r.code != 0);
  CHECK(r.output.find("'modle'") != std::string::npos);

  std::ofstream(dir / "bad2.json") << R"({"dataset": {"path": "pool.csv"}, "acquisition": {"gamma": 2}})";
  r = heal_cli("run " + (dir / "bad2.json").string());
  CHECK(r.code != 0);
  CHECK(r.output.find("gamma") != std::string::npos);

  r = heal_cli("run " + (dir / "missing.json").string());
  CHECK(r.code != 0);
  CHECK(heal_cli("frobnicate").code != 0);
}

TEST_CASE("resume completes only the remaining rounds") {
  const auto dir = workdir("resume");
  write_config(dir / "full.json", "full");
  write_config(dir / "part.json", "part");
  REQUIRE(heal_cli("run " + (dir / "full.json").string()).code == 0);

  auto r = heal_cli("run " + (dir / "part.json").string() + " --stop-after 2");
  CHECK(r.code == 0);
  CHECK(r.output.find("incomplete labeled=30") != std::string::npos);
  r = heal_cli("run " + (dir / "part.json").string() + " --resume");
  CHECK(r.code == 0);
  CHECK(r.output.find("incomplete") == std::string::npos);
  CHECK(metric_files(dir / "full") == metric_files(dir / "part"));
}

TEST_CASE("entropy-hist tables") {
  const auto dir = workdir("hist");
  std::ofstream(dir / "hist.json") << R"({"seeds": [2], "dim": 400, "bins": 8,
    "data": {"train_per_class": 30, "test_per_class": 20}, "output": "hist.txt"})";
  const auto a = heal_cli("entropy-hist " + (dir / "hist.json").string());
  CHECK(a.code == 0);
  for (const char* mode : {"none", "combined", "isolated"})
    CHECK(a.output.find(std::string("# prior_mode=") + mode) != std::string::npos);
  CHECK(heal::read_file(dir / "hist.txt") == a.output);
  const auto b = heal_cli("entropy-hist " + (dir / "hist.json").string() + " --workers 1");
  CHECK(a.output == b.output);

  std::ofstream(dir / "bad.json") << R"({"seeds": [2], "dims": 400})";
  const auto bad = heal_cli("entropy-hist " + (dir / "bad.json").string());
  CHECK(bad.code != 0);
  CHECK(bad.output.find("'dims'") != std::string::npos);
}

TEST_CASE("serve startup failures") {
  const auto dir = workdir("serve");
  std::ofstream(dir / "file") << "x";
  auto r = heal_cli("serve --address 127.0.0.1:0 --state-dir " + (dir / "file" / "state").string());
  CHECK(r.code != 0);
  CHECK(r.output.find("state directory") != std::string::npos);

  httplib::Server blocker;
  const int port = blocker.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  r = heal_cli("serve --address 127.0.0.1:" + std::to_string(port) + " --state-dir " + (dir / "state").string());
  CHECK(r.code != 0);
  CHECK(r.output.find("cannot bind") != std::string::npos);

  r = heal_cli("serve --address nonsense");
  CHECK(r.code != 0);
}
