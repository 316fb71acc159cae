// End-to-end checks of the installed CLI binary. The binary path arrives
// via the SCANSSC_CLI_BIN environment variable (set by ctest).

#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

std::string cli_bin() {
  const char* env = std::getenv("SCANSSC_CLI_BIN");
  REQUIRE_MESSAGE(env != nullptr, "SCANSSC_CLI_BIN must point at the CLI binary");
  return env;
}

int run(const std::string& args) {
  const std::string cmd = cli_bin() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("scanssc_cli_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("masks subcommand writes the documented patterns") {
  TempDir tmp;
  const std::string out = tmp.file("mask.txt");
  CHECK(run("masks --axis dep --length 4 --margin 0 --out " + out) == 0);
  CHECK(slurp(out) == ".###\n..##\n...#\n....\n");

  CHECK(run("masks --axis wid --length 4 --margin 0 --out " + out) == 0);
  CHECK(slurp(out) == "..##\n#.##\n##.#\n##..\n");

  // flipped height equals the depth pattern at margin 0
  const std::string flipped = tmp.file("fh.txt");
  const std::string dep = tmp.file("dep.txt");
  CHECK(run("masks --axis hgt --length 5 --margin 0 --flip --out " + flipped) == 0);
  CHECK(run("masks --axis dep --length 5 --margin 0 --out " + dep) == 0);
  CHECK(slurp(flipped) == slurp(dep));

  CHECK(run("masks --axis dep --length 3 --margin 0 --pgm --out " + out) == 0);
  CHECK(slurp(out + ".pgm").substr(0, 3) == "P2\n");

  CHECK(run("masks --axis bad --length 4 --out " + out) == 2);
  CHECK(run("masks --axis dep --out " + out) == 2);  // missing required flag
}

TEST_CASE("synth produces byte-identical files for one seed") {
  TempDir tmp;
  const std::string a = tmp.file("a.sscg"), b = tmp.file("b.sscg");
  CHECK(run("synth --preset corridor --dims 8,8,4 --seed 9 --out " + a) == 0);
  CHECK(run("synth --preset corridor --dims 8,8,4 --seed 9 --out " + b) == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(run("synth --preset blocks --dims 1,1,1 --seed 1 --out " + a) == 0);
  CHECK(run("synth --preset nope --dims 4,4,2 --seed 1 --out " + a) == 2);
}

TEST_CASE("train-toy runs, is deterministic, and honors step count 0") {
  TempDir tmp;
  const std::string gt = tmp.file("scene.sscg");
  REQUIRE(run("synth --preset corridor --dims 8,8,4 --seed 4 --out " + gt) == 0);

  const std::string common =
      " --gt " + gt + " --set target_dims=8,8,4 --set proposal_dims=4,4,2 --set channels=4"
      " --set steps=4";
  CHECK(run("train-toy" + common + " --out " + tmp.file("r1")) == 0);
  CHECK(run("train-toy" + common + " --out " + tmp.file("r2")) == 0);
  CHECK(slurp(tmp.file("r1/loss_log.jsonl")) == slurp(tmp.file("r2/loss_log.jsonl")));
  CHECK(slurp(tmp.file("r1/final_logits.sscl")) == slurp(tmp.file("r2/final_logits.sscl")));

  // lambda_scan = 0 changes the trajectory
  CHECK(run("train-toy" + common + " --set lambda_scan=0 --out " + tmp.file("r3")) == 0);
  CHECK(slurp(tmp.file("r1/loss_log.jsonl")) != slurp(tmp.file("r3/loss_log.jsonl")));

  // step count 0 emits the initial state only
  CHECK(run("train-toy" + common + " --set steps=0 --out " + tmp.file("r0")) == 0);
  const std::string log = slurp(tmp.file("r0/loss_log.jsonl"));
  CHECK(std::count(log.begin(), log.end(), '\n') == 1);

  CHECK(run("train-toy --gt " + gt + " --out " + tmp.file("rx") + " --set steps=-1") == 2);

  // a blown-up learning rate produces a non-finite loss and exit code 3
  CHECK(run("train-toy" + common + " --set learning_rate=1e9 --out " + tmp.file("boom")) == 3);
}

TEST_CASE("gradcheck exit codes") {
  CHECK(run("gradcheck --module scan-loss --set target_dims=2,2,2 --set proposal_dims=2,2,2"
            " --set channels=2 --set num_classes=3") == 0);
  CHECK(run("gradcheck --module fixture-bad") == 4);
  CHECK(run("gradcheck --module bogus") == 2);
}

TEST_CASE("analyze emits reports and rejects mismatched dims") {
  TempDir tmp;
  const std::string gt = tmp.file("gt.sscg"), other = tmp.file("other.sscg");
  REQUIRE(run("synth --preset corridor --dims 8,8,4 --seed 2 --out " + gt) == 0);
  REQUIRE(run("synth --preset corridor --dims 8,4,4 --seed 2 --out " + other) == 0);

  const std::string out = tmp.file("an");
  CHECK(run("analyze --pred " + gt + " --gt " + gt + " --bins 8,8,4 --out " + out) == 0);
  const std::string csv = slurp(out + "/segments_dep.csv");
  CHECK(csv.find("segment,recall,iou,miou") == 0);
  CHECK(csv.find("(4)") != std::string::npos);
  // pred == gt: only 1.000 or null cells
  for (const std::string& token : {std::string("0.000"), std::string("0.5")})
    CHECK(csv.find(token) == std::string::npos);

  CHECK(run("analyze --pred " + other + " --gt " + gt + " --out " + out) == 2);
  CHECK(run("analyze --gt " + gt + " --out " + out) == 2);  // neither pred nor logits

  // one bin per axis repeats the global metrics
  const std::string global = tmp.file("global");
  CHECK(run("analyze --pred " + gt + " --gt " + gt + " --bins 1,1,1 --out " + global) == 0);
  for (const char* axis : {"dep", "wid", "hgt"}) {
    const std::string csv = slurp(global + "/bins_" + axis + ".csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);  // header + one bin
    CHECK(csv.find("0,1,1,1,") != std::string::npos);      // perfect global row
  }
}

TEST_CASE("short axes get bin reports but no four-segment table") {
  TempDir tmp;
  const std::string gt = tmp.file("gt.sscg");
  REQUIRE(run("synth --preset corridor --dims 8,8,2 --seed 1 --out " + gt) == 0);
  const std::string out = tmp.file("an");
  CHECK(run("analyze --pred " + gt + " --gt " + gt + " --bins 8,8,2 --out " + out) == 0);
  CHECK(fs::exists(out + "/bins_hgt.csv"));
  CHECK(fs::exists(out + "/segments_dep.csv"));
  CHECK_FALSE(fs::exists(out + "/segments_hgt.csv"));  // height extent 2 < 4
}

TEST_CASE("analyze accepts logits in place of a prediction grid") {
  TempDir tmp;
  const std::string gt = tmp.file("gt.sscg");
  REQUIRE(run("synth --preset corridor --dims 8,8,4 --seed 12 --out " + gt) == 0);
  const std::string rundir = tmp.file("run");
  REQUIRE(run("train-toy --gt " + gt + " --set target_dims=8,8,4 --set proposal_dims=4,4,2"
              " --set channels=4 --set steps=2 --out " + rundir) == 0);
  const std::string out = tmp.file("an_logits");
  CHECK(run("analyze --logits " + rundir + "/final_logits.sscl --gt " + gt +
            " --bins 8,8,4 --out " + out) == 0);
  CHECK(fs::exists(out + "/metrics.json"));
}

TEST_CASE("oracle suites and replay through the CLI") {
  TempDir tmp;
  CHECK(run("oracle --suite masks --trials 20 --seed 3") == 0);
  CHECK(run("oracle --suite fusion --trials 5 --seed 3") == 0);
  CHECK(run("oracle --suite bogus --trials 5") == 2);
  CHECK(run("oracle") == 2);

  const std::string repro = tmp.file("r.json");
  {
    std::ofstream f(repro);
    f << "{\"suite\":\"cumavg\",\"trial_seed\":42,\"deviation\":0,\"tolerance\":0}\n";
  }
  CHECK(run("oracle --replay " + repro) == 0);
}

TEST_CASE("convert bridges binary and csv voxel listings") {
  TempDir tmp;
  const std::string gt = tmp.file("g.sscg");
  REQUIRE(run("synth --preset blocks --dims 4,4,2 --seed 6 --out " + gt) == 0);
  const std::string csv = tmp.file("g.csv"), back = tmp.file("b.sscg");
  CHECK(run("convert --in " + gt + " --out " + csv) == 0);
  CHECK(run("convert --in " + csv + " --out " + back) == 0);
  CHECK(slurp(gt) == slurp(back));
  CHECK(run("convert --in " + gt + " --out " + tmp.file("g.wat")) == 2);
}

TEST_CASE("unknown subcommands exit with usage") {
  CHECK(run("definitely-not-a-command") == 2);
  CHECK(run("") == 2);
}
