#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

// Exercises the installed binary end to end: exit codes, artifacts on
// disk, and rerun determinism. M2R_CLI_PATH points at the built tool.

namespace {

namespace fs = std::filesystem;

const std::string kCli = M2R_CLI_PATH;
const fs::path kDir = "/tmp/m2r_cli_test";

int run(const std::string& args, const std::string& log = "out.log") {
  const std::string cmd =
      kCli + " " + args + " > " + (kDir / log).string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workspace {
  Workspace() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
    std::ofstream cfg(kDir / "world.cfg");
    cfg << "image_size = 16\nfovea_size = 8\nseed = 3\n";
  }
  ~Workspace() { fs::remove_all(kDir); }
  fs::path operator/(const std::string& name) const { return kDir / name; }
};

}  // namespace

TEST_CASE("usage and help exit codes") {
  Workspace ws;
  CHECK(run("--help") == 0);
  const std::string help = slurp(ws / "out.log");
  CHECK(help.find("simulate") != std::string::npos);
  CHECK(help.find("calibrate") != std::string::npos);
  CHECK(run("") == 2);                       // missing subcommand
  CHECK(run("simulate") == 2);               // missing required --out
  CHECK(run("frobnicate --out x") == 2);     // unknown subcommand
  CHECK(run("simulate --out x --no-such-flag 1") == 2);
}

TEST_CASE("simulate writes episodes, pairs and manifests deterministically") {
  Workspace ws;
  const std::string base = "simulate --config " + (ws / "world.cfg").string() +
                           " --episodes 12 --pairs-out " +
                           (ws / "pairs.txt").string() + " --pairs-n 40 --out ";
  REQUIRE(run(base + (ws / "eps.bin").string()) == 0);
  CHECK(fs::exists(ws / "eps.bin"));
  CHECK(fs::exists(ws / "eps.bin.manifest"));
  CHECK(fs::exists(ws / "pairs.txt"));
  CHECK(fs::exists(ws / "pairs.txt.manifest"));

  REQUIRE(run(base + (ws / "eps2.bin").string()) == 0);
  CHECK(slurp(ws / "eps.bin") == slurp(ws / "eps2.bin"));

  // a different seed changes the data
  REQUIRE(run(base + (ws / "eps3.bin").string() + " --seed 99") == 0);
  CHECK(slurp(ws / "eps.bin") != slurp(ws / "eps3.bin"));

  // unwritable output path is an I/O failure
  CHECK(run("simulate --out /no/such/dir/eps.bin") == 3);
}

TEST_CASE("calibrate fits maps and reports errors") {
  Workspace ws;
  REQUIRE(run("simulate --config " + (ws / "world.cfg").string() +
              " --episodes 3 --pairs-out " + (ws / "pairs.txt").string() +
              " --pairs-n 200 --out " + (ws / "eps.bin").string()) == 0);
  REQUIRE(run("calibrate --pairs " + (ws / "pairs.txt").string() + " --out " +
              (ws / "maps.txt").string() + " --report " +
              (ws / "calrep.csv").string()) == 0);
  CHECK(fs::exists(ws / "maps.txt"));
  const std::string rep = slurp(ws / "calrep.csv");
  CHECK(rep.rfind("metric,x,y,z,total\nbefore,", 0) == 0);
  CHECK(rep.find("\nafter,") != std::string::npos);

  CHECK(run("calibrate --pairs /no/such/pairs.txt --out " +
            (ws / "m.txt").string()) == 3);
  CHECK(run("calibrate --pairs " + (ws / "pairs.txt").string() +
            " --project-so3 maybe --out " + (ws / "m.txt").string()) == 4);
}

TEST_CASE("annotate validates existing labels") {
  Workspace ws;
  REQUIRE(run("simulate --config " + (ws / "world.cfg").string() +
              " --episodes 6 --out " + (ws / "eps.bin").string()) == 0);
  REQUIRE(run("annotate --demos " + (ws / "eps.bin").string() + " --out " +
              (ws / "ann.bin").string()) == 0);
  const std::string log = slurp(ws / "out.log");
  CHECK(log.find("already labeled") != std::string::npos);
  // annotated output reloads cleanly
  CHECK(run("stats " + (ws / "ann.bin").string()) == 0);
}

TEST_CASE("stats prints the per-subtask table") {
  Workspace ws;
  REQUIRE(run("simulate --config " + (ws / "world.cfg").string() +
              " --episodes 12 --out " + (ws / "eps.bin").string()) == 0);
  REQUIRE(run("stats " + (ws / "eps.bin").string()) == 0);
  const std::string out = slurp(ws / "out.log");
  CHECK(out.rfind("subtask,count,minutes\n", 0) == 0);
  CHECK(out.find("GraspBottle,") != std::string::npos);
  CHECK(run("stats /no/such/file.bin") == 3);
  // truncated input is a data error, not an I/O error
  std::ofstream(ws / "trunc.bin") << slurp(ws / "eps.bin").substr(0, 100);
  CHECK(run("stats " + (ws / "trunc.bin").string()) == 4);
}

TEST_CASE("evaluate and report run the expert loop") {
  Workspace ws;
  const std::string cfg = " --config " + (ws / "world.cfg").string();
  REQUIRE(run("evaluate --variant expert --trials 3" + cfg + " --out " +
              (ws / "res.csv").string()) == 0);
  const std::string res = slurp(ws / "res.csv");
  CHECK(res.rfind("variant,trial,success,failure,grasp_bottle,grasp_cap,rotate\n",
                  0) == 0);

  // reruns with the same seed are byte identical
  REQUIRE(run("evaluate --variant expert --trials 3" + cfg + " --out " +
              (ws / "res2.csv").string()) == 0);
  CHECK(slurp(ws / "res2.csv") == res);

  CHECK(run("evaluate --variant bogus --trials 1" + cfg + " --out " +
            (ws / "bad.csv").string()) == 4);
  CHECK(run("evaluate --variant da-force --trials 1" + cfg + " --out " +
            (ws / "bad.csv").string()) == 4);  // missing --models

  // expert rows use a variant name report cannot ingest; rewrite the label
  std::string rows = res;
  size_t pos = 0;
  while ((pos = rows.find("expert", pos)) != std::string::npos)
    rows.replace(pos, 6, "da-force");
  std::ofstream(ws / "res_da.csv") << rows;
  REQUIRE(run("report --results " + (ws / "res_da.csv").string() + " --out " +
              (ws / "curve.csv").string() + " --failures " +
              (ws / "fails.csv").string()) == 0);
  CHECK(slurp(ws / "curve.csv")
            .rfind("variant,trial,success,accumulative_success_rate,failure\n",
                   0) == 0);
  CHECK(slurp(ws / "fails.csv").rfind("variant,failure,count\n", 0) == 0);
  CHECK(run("report --results /no/such/res.csv --out " +
            (ws / "c.csv").string()) == 3);
}
