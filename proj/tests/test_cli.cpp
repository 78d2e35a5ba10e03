#include <catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code;
  std::string out;
};

CmdResult run_cmd(const std::string& cmd) {
  std::string full = cmd + " 2>/dev/null";
  FILE* pipe = popen(full.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string bin() { return DISA_BIN; }

fs::path work_dir() {
  auto dir = fs::temp_directory_path() / "disa_cli_tests";
  fs::create_directories(dir);
  return dir;
}

std::string fixture_path(const std::string& name) {
  return std::string(FIXTURES_DIR) + "/" + name;
}

}  // namespace

TEST_CASE("asm + run on the smallest program") {
  auto dir = work_dir();
  auto src = dir / "tiny.dasm";
  {
    std::ofstream f(src);
    f << "movi r0, 7\nout r0\nhalt\n";
  }
  auto img = dir / "tiny.disa";
  auto r = run_cmd(bin() + " asm " + src.string() + " -o " + img.string());
  REQUIRE(r.exit_code == 0);
  auto run = run_cmd(bin() + " run " + img.string());
  REQUIRE(run.exit_code == 0);
  REQUIRE(run.out == "7\n");

  auto run_json = run_cmd(bin() + " run " + img.string() + " --json");
  auto j = nlohmann::json::parse(run_json.out);
  REQUIRE(j.at("termination") == "halt");
  REQUIRE(j.at("output") == std::vector<int64_t>{7});
}

TEST_CASE("dasm round-trips through asm") {
  auto dir = work_dir();
  auto img = dir / "fix.disa";
  REQUIRE(run_cmd(bin() + " asm " + fixture_path("jumptable_dispatch.dasm") + " -o " +
                  img.string())
              .exit_code == 0);
  auto text = run_cmd(bin() + " dasm " + img.string());
  REQUIRE(text.exit_code == 0);
  REQUIRE(text.out.find(".jumptable") != std::string::npos);

  auto re_src = dir / "fix_round.dasm";
  {
    std::ofstream f(re_src);
    f << text.out;
  }
  auto img2 = dir / "fix_round.disa";
  REQUIRE(run_cmd(bin() + " asm " + re_src.string() + " -o " + img2.string()).exit_code == 0);
  auto verify = run_cmd(bin() + " verify " + img.string() + " " + img2.string() +
                        " --inputs random:30:5");
  REQUIRE(verify.exit_code == 0);
}

TEST_CASE("transform is deterministic and verify accepts the variant") {
  auto dir = work_dir();
  auto img = dir / "base.disa";
  REQUIRE(run_cmd(bin() + " asm " + fixture_path("ten_blocks.dasm") + " -o " + img.string())
              .exit_code == 0);
  auto spec = dir / "pipeline.json";
  {
    std::ofstream f(spec);
    f << R"({"master_seed": 12345, "stages": [
             {"plugin": "bilr", "config": {}},
             {"plugin": "stack_pad", "config": {"max_pad_words": 8}},
             {"plugin": "global_shuffle", "config": {}},
             {"plugin": "heap_pad", "config": {}}]})";
  }
  auto v1 = dir / "v1.disa";
  auto v2 = dir / "v2.disa";
  auto r1 = run_cmd(bin() + " transform " + img.string() + " --pipeline " + spec.string() +
                    " -o " + v1.string() + " --json");
  auto r2 = run_cmd(bin() + " transform " + img.string() + " --pipeline " + spec.string() +
                    " -o " + v2.string() + " --json");
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  auto j1 = nlohmann::json::parse(r1.out);
  auto j2 = nlohmann::json::parse(r2.out);
  REQUIRE(j1.at("digest") == j2.at("digest"));
  REQUIRE(j1.at("stages").size() == 4);

  // byte-identical outputs on disk
  auto b1 = run_cmd("cmp -s " + v1.string() + " " + v2.string() + "; echo $?");
  REQUIRE(b1.out == "0\n");

  auto verify = run_cmd(bin() + " verify " + img.string() + " " + v1.string() +
                        " --inputs random:50:1");
  REQUIRE(verify.exit_code == 0);
}

TEST_CASE("verify exits 3 on a corrupted image") {
  auto dir = work_dir();
  auto a = dir / "a.disa";
  REQUIRE(run_cmd(bin() + " asm " + fixture_path("loop_sum.dasm") + " -o " + a.string())
              .exit_code == 0);
  // corrupt: change the movi constant in a copy, then verify
  auto src = testutil::load_fixture("loop_sum.dasm");
  auto pos = src.find("movi r1, 12");
  REQUIRE(pos != std::string::npos);
  src.replace(pos, 11, "movi r1, 11");
  auto bad_src = dir / "bad.dasm";
  {
    std::ofstream f(bad_src);
    f << src;
  }
  auto b = dir / "b.disa";
  REQUIRE(run_cmd(bin() + " asm " + bad_src.string() + " -o " + b.string()).exit_code == 0);
  auto verify = run_cmd(bin() + " verify " + a.string() + " " + b.string() +
                        " --inputs random:50:7 --json");
  REQUIRE(verify.exit_code == 3);
  auto j = nlohmann::json::parse(verify.out);
  REQUIRE(j.at("equivalent") == false);
  REQUIRE(j.at("divergences").size() > 0);
}

TEST_CASE("cli exit codes") {
  REQUIRE(run_cmd(bin() + " frobnicate").exit_code == 2);       // usage
  REQUIRE(run_cmd(bin() + " run /nonexistent.disa").exit_code == 1);  // operational
  REQUIRE(run_cmd(bin() + " asm /nonexistent.dasm -o /tmp/x.disa").exit_code == 1);
}

TEST_CASE("sim subcommand emits deterministic json") {
  auto dir = work_dir();
  auto cfg = dir / "sim.json";
  {
    std::ofstream f(cfg);
    f << R"({"arrival": {"kind": "poisson", "rate_per_sec": 2.0},
             "generation_time": {"kind": "fixed", "seconds": 1.0},
             "policy": {"target_pool_size": 4, "max_deploys_per_variant": 1,
                        "generator_parallelism": 1,
                        "on_empty": "reuse_least_deployed"},
             "horizon_seconds": 500,
             "rng_seed": 7})";
  }
  auto r1 = run_cmd(bin() + " sim --config " + cfg.string());
  auto r2 = run_cmd(bin() + " sim --config " + cfg.string());
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r1.out == r2.out);
  auto j = nlohmann::json::parse(r1.out);
  REQUIRE(j.at("requests").get<uint64_t>() > 500);
  REQUIRE(j.at("repeat_serve_probability").get<double>() > 0.3);
}

TEST_CASE("asm rejects malformed sources with a nonzero exit") {
  auto dir = work_dir();
  auto bad = dir / "empty.dasm";
  {
    std::ofstream f(bad);
    f << "; nothing here\n";
  }
  REQUIRE(run_cmd(bin() + " asm " + bad.string() + " -o " + (dir / "x.disa").string())
              .exit_code == 1);
}
