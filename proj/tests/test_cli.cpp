#define DOCTEST_CONFIG_IMPLEMENT
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

std::string g_bin;  // path to the owgr executable, from argv[1]
fs::path g_dir;     // scratch directory shared by the cases below

int run(const std::string& args, const std::string& stderr_file = "") {
  std::string cmd = g_bin + " " + args + " >/dev/null";
  cmd += stderr_file.empty() ? " 2>/dev/null" : " 2>" + stderr_file;
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << text;
}

}  // namespace

TEST_CASE("usage errors exit 1 with a machine-parsable prefix") {
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("gen") == 1);  // --config is required
  CHECK(run("run --frob 3") == 1);
  CHECK(run("sweep --config nope.toml --jobs 0") == 1);

  const fs::path err = g_dir / "stderr.txt";
  CHECK(run("gen", err.string()) == 1);
  CHECK(slurp(err).rfind("owgr-error:", 0) == 0);
}

TEST_CASE("gen is deterministic and run produces report files") {
  write(g_dir / "data.toml", "seed = 3\nper_class_per_context = 3\n");
  CHECK(run("gen --config " + (g_dir / "data.toml").string() + " --out " +
            (g_dir / "d").string()) == 0);
  CHECK(fs::exists(g_dir / "d" / "manifest.json"));
  CHECK(fs::exists(g_dir / "d" / "samples.f32"));
  CHECK(fs::exists(g_dir / "d" / "labels.csv"));

  CHECK(run("gen --config " + (g_dir / "data.toml").string() + " --out " +
            (g_dir / "d2").string()) == 0);
  CHECK(slurp(g_dir / "d" / "samples.f32") ==
        slurp(g_dir / "d2" / "samples.f32"));
  CHECK(slurp(g_dir / "d" / "labels.csv") == slurp(g_dir / "d2" / "labels.csv"));

  write(g_dir / "run.toml", "dataset = \"" + (g_dir / "d").string() +
                                "\"\nnum_tasks = 2\n[train]\nmax_epochs = 4\n"
                                "probe_epochs = 2\n");
  const std::string run_cmd = "run --config " + (g_dir / "run.toml").string() +
                              " --case new-user --method lwf --seed 0 --out " +
                              (g_dir / "r").string();
  CHECK(run(run_cmd) == 0);
  CHECK(fs::exists(g_dir / "r" / "report.json"));
  CHECK(fs::exists(g_dir / "r" / "results.csv"));

  // idempotence: identical invocation, identical bytes
  const std::string before = slurp(g_dir / "r" / "results.csv");
  CHECK(run(run_cmd) == 0);
  CHECK(slurp(g_dir / "r" / "results.csv") == before);

  CHECK(run("run --config " + (g_dir / "run.toml").string() +
            " --case new-user --method telepathy --seed 0") == 1);
}

TEST_CASE("sweep output is independent of --jobs and survives a kill") {
  write(g_dir / "sweep.toml",
        "case = \"new_context\"\nswept_param = \"num_tasks\"\n"
        "values = [2, 3]\nmethods = [\"finetune\", \"lwf\"]\n"
        "seeds = [0, 1]\ndataset = \"" +
            (g_dir / "d").string() +
            "\"\n[train]\nmax_epochs = 4\nprobe_epochs = 2\n");
  const std::string base =
      "sweep --config " + (g_dir / "sweep.toml").string();
  CHECK(run(base + " --out " + (g_dir / "s1").string() + " --jobs 4") == 0);
  CHECK(run(base + " --out " + (g_dir / "s2").string() + " --jobs 1") == 0);
  const std::string expect = slurp(g_dir / "s1" / "results.csv");
  CHECK(!expect.empty());
  CHECK(slurp(g_dir / "s2" / "results.csv") == expect);
  CHECK(slurp(g_dir / "s1" / "summary.csv") ==
        slurp(g_dir / "s2" / "summary.csv"));

  // interrupt mid-sweep, then resume with the same --out
  const std::string killed = "timeout -s KILL 2 " + g_bin + " " + base +
                             " --out " + (g_dir / "s3").string() +
                             " --jobs 1 >/dev/null 2>&1";
  std::system(killed.c_str());
  CHECK(run(base + " --out " + (g_dir / "s3").string() + " --jobs 2") == 0);
  CHECK(slurp(g_dir / "s3" / "results.csv") == expect);
}

TEST_CASE("report emits the requested formats and rejects unknown ones") {
  const std::string results = (g_dir / "s1" / "results.csv").string();
  CHECK(run("report --config " + results + " --out " +
            (g_dir / "rep").string() + " --format csv") == 0);
  CHECK(fs::exists(g_dir / "rep" / "summary.csv"));
  CHECK(run("report --config " + results + " --out " +
            (g_dir / "rep").string() + " --format json") == 0);
  CHECK(fs::exists(g_dir / "rep" / "summary.json"));
  CHECK(run("report --config " + results + " --out " +
            (g_dir / "rep").string() + " --format svg") == 0);
  CHECK(fs::exists(g_dir / "rep" / "boxplot_A.svg"));
  CHECK(fs::exists(g_dir / "rep" / "boxplot_F.svg"));
  CHECK(run("report --config " + results + " --out " +
            (g_dir / "rep").string() + " --format pdf") == 1);
  CHECK(run("report --config " + (g_dir / "absent.csv").string() +
            " --out " + (g_dir / "rep").string() + " --format csv") == 2);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: test_cli <path-to-owgr>\n");
    return 1;
  }
  g_bin = argv[1];
  g_dir = fs::temp_directory_path() / "owgr_cli_test";
  fs::remove_all(g_dir);
  fs::create_directories(g_dir);

  doctest::Context ctx;
  ctx.applyCommandLine(1, argv);
  return ctx.run();
}
