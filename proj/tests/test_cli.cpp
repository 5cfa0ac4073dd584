#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "batchmine/binary_io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string command = std::string(BATCHMINE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int raw = std::system(command.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json summary(const fs::path& path) { return nlohmann::json::parse(slurp(path)); }

fs::path fresh(const std::string& name) {
  const auto dir = testsupport::scratch("cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("pipeline output is identical across runs and worker counts") {
  const auto dir = fresh("pipeline");
  const auto corpus = (dir / "demo.corpus").string();
  REQUIRE(run("synth --clusters 64 --cluster-size 8 --dim 32 --intra 0.8 --noise 0.5 --seed 3 --task-id demo --out " +
              corpus) == 0);
  const std::string common = " --corpus " + corpus + " --p 0 --m 10 --K 8 --batch-size 64 --epochs 2 --h 5 --seed 7";
  REQUIRE(run("pipeline" + common + " --workers 1 --diagnose --out-dir " + (dir / "a").string()) == 0);
  REQUIRE(run("pipeline" + common + " --workers 3 --out-dir " + (dir / "b").string()) == 0);
  const auto manifest = slurp(dir / "a" / "manifest.txt");
  CHECK(!manifest.empty());
  CHECK(manifest == slurp(dir / "b" / "manifest.txt"));
  CHECK(slurp(dir / "a" / "plan.manifest") == slurp(dir / "b" / "plan.manifest"));
  CHECK(fs::exists(dir / "a" / "diagnostics" / "demo.report.txt"));
  CHECK(fs::exists(dir / "a" / "diagnostics" / "demo.report.jsonl"));

  const auto s = summary(dir / "a" / "run_summary.json");
  CHECK(s["command"] == "pipeline");
  CHECK(s["status"] == 0);
  CHECK(s["seed"] == 7);
  CHECK(s["artifacts"].contains((dir / "a" / "manifest.txt").string()));
  CHECK(s["results"]["negative_shortfalls"] == 0);
  CHECK(s["timings_s"].is_object());
}

TEST_CASE("stage commands reproduce the pipeline") {
  const auto dir = fresh("stages");
  const auto corpus = (dir / "demo.corpus").string();
  REQUIRE(run("synth --clusters 16 --cluster-size 8 --dim 32 --intra 0.8 --seed 1 --task-id demo --out " + corpus) == 0);
  const std::string seed = " --seed 5";
  REQUIRE(run("rank --corpus " + corpus + " --p 0 --m 8 --out " + (dir / "demo.slice").string() + seed) == 0);
  REQUIRE(run("graph --slice " + (dir / "demo.slice").string() + " --out " + (dir / "demo.graph").string() + seed) ==
          0);
  REQUIRE(run("partition --graph " + (dir / "demo.graph").string() + " --K 8 --batch-size 32 --task-id demo --out " +
              (dir / "demo.assign").string() + seed) == 0);
  REQUIRE(run("plan --assignment " + (dir / "demo.assign").string() +
              " --K 8 --batch-size 32 --task-id demo --out " + (dir / "plan.manifest").string() + seed) == 0);
  REQUIRE(run("pipeline --corpus " + corpus + " --p 0 --m 8 --K 8 --batch-size 32 --h 0 --out-dir " +
              (dir / "pipe").string() + seed) == 0);
  CHECK(slurp(dir / "plan.manifest") == slurp(dir / "pipe" / "plan.manifest"));
  CHECK(slurp(dir / "demo.assign") == slurp(dir / "pipe" / "demo.assign"));
}

TEST_CASE("config files supply defaults") {
  const auto dir = fresh("config");
  const auto corpus = (dir / "demo.corpus").string();
  REQUIRE(run("synth --clusters 16 --cluster-size 8 --dim 32 --seed 1 --task-id demo --out " + corpus) == 0);
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "# shared settings\nK=8\nbatch-size=32\np=0\nm=8\nh=2\nseed=4\n";
  }
  REQUIRE(run("pipeline --config " + (dir / "run.cfg").string() + " --corpus " + corpus + " --out-dir " +
              (dir / "a").string()) == 0);
  REQUIRE(run("pipeline --corpus " + corpus + " --K 8 --batch-size 32 --p 0 --m 8 --h 2 --seed 4 --out-dir " +
              (dir / "b").string()) == 0);
  CHECK(slurp(dir / "a" / "manifest.txt") == slurp(dir / "b" / "manifest.txt"));

  std::ofstream(dir / "bad.cfg") << "no-such-key=1\n";
  CHECK(run("pipeline --config " + (dir / "bad.cfg").string() + " --corpus " + corpus + " --out-dir " +
            (dir / "c").string()) == 1);
}

TEST_CASE("exit codes and error summaries") {
  const auto dir = fresh("errors");
  const auto corpus = (dir / "demo.corpus").string();
  REQUIRE(run("synth --clusters 8 --cluster-size 8 --dim 16 --seed 1 --task-id demo --out " + corpus) == 0);
  CHECK(run("pipeline --corpus " + corpus + " --K 7 --batch-size 32 --m 8 --p 0 --out-dir " + (dir / "bad").string()) ==
        1);
  const auto s = summary(dir / "bad" / "run_summary.json");
  CHECK(s["status"] == 1);
  CHECK(s["error"].get<std::string>().find("batch_size") != std::string::npos);
  CHECK(run("rank --corpus " + (dir / "missing.corpus").string() + " --out " + (dir / "x.slice").string()) == 2);
  CHECK(run("pipeline --bogus-flag") == 1);
  CHECK(run("") == 1);
}
