#include <doctest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

// End-to-end checks of the installed binary: every invocation here is a real
// child process, so exit codes, streams, and file side effects are the same
// ones a shell user sees.

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::string kCli = GNCDE_CLI_PATH;
const std::string kData = GNCDE_DATA_DIR;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("gncde_cli_" + std::to_string(getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path base = work_dir() / ("run_" + std::to_string(counter++));
  const std::string cmd =
      kCli + " " + args + " > " + base.string() + ".out 2> " + base.string() + ".err";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(base.string() + ".out");
  r.err = slurp(base.string() + ".err");
  return r;
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::string write_file(const std::string& name, const std::string& content) {
  const fs::path path = work_dir() / name;
  std::ofstream out(path);
  out << content;
  return path.string();
}

std::string g4() { return kData + "/g4.json"; }

const std::string kMicroFlags =
    " --epochs 1 --d-h 4 --d-z 4 --hidden-width 4 --substeps 1 --batch-size 8";

/// A 10-series dataset on the 4-vertex graph, simulated once and shared.
const std::string& micro_dataset() {
  static const std::string path = [] {
    const std::string p = (work_dir() / "micro.ds").string();
    const RunResult r = run_cli("simulate --graph " + g4() + " --series 10 --seed 5 --out " + p);
    REQUIRE(r.code == 0);
    return p;
  }();
  return path;
}

}  // namespace

TEST_CASE("no subcommand is a usage error") {
  const RunResult r = run_cli("");
  CHECK(r.code == 2);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("misspelled subcommands suggest the nearest one") {
  const RunResult r = run_cli("simulte --graph x");
  CHECK(r.code == 2);
  CHECK(r.err.find("simulate") != std::string::npos);
}

TEST_CASE("help exits cleanly and lists the verbs") {
  const RunResult r = run_cli("--help");
  CHECK(r.code == 0);
  for (const char* verb : {"inspect", "simulate", "dataset", "export-csv", "train", "eval", "grid"}) {
    CHECK(r.out.find(verb) != std::string::npos);
  }
}

TEST_CASE("inspect prints the routing weights of the fixture graph") {
  const RunResult r = run_cli("inspect --graph " + g4());
  CHECK(r.code == 0);
  CHECK(r.out.find("0.3000") != std::string::npos);
  CHECK(r.out.find("0.7000") != std::string::npos);
  CHECK(r.out.find("edge") != std::string::npos);
}

TEST_CASE("invalid graphs are rejected with the validation exit code") {
  const std::string bad =
      write_file("bad_graph.json", R"({"n_vertices": 2, "adjacency": [[0, -1], [0, 0]]})");
  const RunResult r = run_cli("inspect --graph " + bad);
  CHECK(r.code == 3);
  CHECK_FALSE(r.err.empty());

  const std::string missing = (work_dir() / "no_such_file.json").string();
  CHECK(run_cli("inspect --graph " + missing).code == 3);
}

TEST_CASE("simulate writes a dataset, a manifest, and verifiable provenance") {
  const std::string ds = (work_dir() / "sim3.ds").string();
  const RunResult r =
      run_cli("simulate --graph " + g4() + " --series 3 --seed 9 --out " + ds);
  CHECK(r.code == 0);
  REQUIRE(fs::exists(ds));
  REQUIRE(fs::exists(ds + ".manifest.json"));

  const json manifest = json::parse(slurp(ds + ".manifest.json"));
  CHECK(manifest.at("command") == "simulate");
  CHECK(manifest.at("output") == ds);
  CHECK(manifest.at("n_series") == 3);
  CHECK(manifest.contains("versions"));

  const RunResult info = run_cli("dataset --in " + ds + " --verify");
  CHECK(info.code == 0);
  CHECK(info.out.find("\"n_samples\": 3") != std::string::npos);
  CHECK(info.out.find("matches bitwise") != std::string::npos);

  const RunResult csv = run_cli("export-csv --in " + ds);
  CHECK(csv.code == 0);
  const auto rows = lines_of(csv.out);
  REQUIRE(rows.size() == 1 + 3 * 49);  // header + 49 points per series
  CHECK(rows[0] == "series,t,v0,v1,v2,v3");
  CHECK(rows[1].rfind("0,0,", 0) == 0);
}

TEST_CASE("series too short to window are a validation error") {
  const std::string ds = (work_dir() / "short.ds").string();
  const RunResult r =
      run_cli("simulate --graph " + g4() + " --series 2 --steps 10 --out " + ds);
  CHECK(r.code == 3);
  CHECK_FALSE(fs::exists(ds));
}

TEST_CASE("train writes metrics, a checkpoint, and a manifest") {
  const std::string ck = (work_dir() / "micro.ckpt").string();
  const std::string metrics = (work_dir() / "micro.metrics").string();
  const RunResult r = run_cli("train --data " + micro_dataset() + kMicroFlags + " --seed 3" +
                              " --checkpoint " + ck + " --metrics " + metrics);
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(ck));
  REQUIRE(fs::exists(ck + ".manifest.json"));
  REQUIRE(fs::exists(metrics));

  // stdout carries exactly the metric log that was written to disk
  CHECK(r.out == slurp(metrics));
  const auto rows = lines_of(r.out);
  REQUIRE(rows.size() == 2);  // one train and one val record for the epoch
  const json first = json::parse(rows[0]);
  CHECK(first.at("epoch") == 0);
  CHECK(first.at("split") == "train");
  CHECK(json::parse(rows[1]).at("split") == "val");
  CHECK(r.err.find("test mae") != std::string::npos);

  const json manifest = json::parse(slurp(ck + ".manifest.json"));
  CHECK(manifest.at("command") == "train");
  CHECK(manifest.at("model").at("d_h") == 4);
  CHECK(manifest.at("train").at("epochs") == 1);
}

TEST_CASE("eval reports every requested split as JSON lines") {
  const std::string ck = (work_dir() / "eval.ckpt").string();
  REQUIRE(run_cli("train --data " + micro_dataset() + kMicroFlags + " --checkpoint " + ck)
              .code == 0);

  const RunResult r = run_cli("eval --checkpoint " + ck + " --data " + micro_dataset() +
                              " --split all");
  REQUIRE(r.code == 0);
  const auto rows = lines_of(r.out);
  REQUIRE(rows.size() == 3);
  const std::vector<std::string> want = {"train", "val", "test"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json line = json::parse(rows[i]);
    CHECK(line.at("split") == want[i]);
    CHECK(line.at("mae").is_number());
    CHECK(line.at("n_samples").is_number_integer());
  }

  const RunResult one = run_cli("eval --checkpoint " + ck + " --data " + micro_dataset());
  CHECK(one.code == 0);
  CHECK(count_lines(one.out) == 1);
  CHECK(json::parse(one.out).at("split") == "test");
}

TEST_CASE("a resumed run lands exactly where the uninterrupted one does") {
  const std::string full = (work_dir() / "full.ckpt").string();
  const std::string half = (work_dir() / "half.ckpt").string();
  const std::string resumed = (work_dir() / "resumed.ckpt").string();
  const std::string base =
      "train --data " + micro_dataset() + " --d-h 4 --d-z 4 --hidden-width 4" +
      " --substeps 1 --batch-size 8 --seed 4";

  REQUIRE(run_cli(base + " --epochs 2 --checkpoint " + full).code == 0);
  REQUIRE(run_cli(base + " --epochs 1 --checkpoint " + half).code == 0);
  const RunResult tail =
      run_cli("train --data " + micro_dataset() + " --resume " + half + " --epochs 2" +
              " --checkpoint " + resumed);
  REQUIRE(tail.code == 0);
  const auto rows = lines_of(tail.out);
  REQUIRE(rows.size() == 2);  // only the second epoch ran
  CHECK(json::parse(rows[0]).at("epoch") == 1);

  const std::string eval_full =
      run_cli("eval --checkpoint " + full + " --data " + micro_dataset() + " --split all").out;
  const std::string eval_resumed =
      run_cli("eval --checkpoint " + resumed + " --data " + micro_dataset() + " --split all").out;
  CHECK(eval_full == eval_resumed);

  // the checkpoint owns the architecture; model flags cannot rewrite it
  const RunResult bad =
      run_cli("train --data " + micro_dataset() + " --resume " + half + " --d-h 8");
  CHECK(bad.code == 3);
  CHECK(bad.err.find("resumed") != std::string::npos);
}

TEST_CASE("config files sit between defaults and flags") {
  const std::string config = write_file("train_config.json", R"({
    "model": {"d_h": 4, "d_z": 4, "hidden_width": 4, "substeps": 1},
    "train": {"epochs": 2, "batch_size": 8}
  })");

  // the file alone trains two epochs
  const RunResult from_file =
      run_cli("train --data " + micro_dataset() + " --config " + config);
  REQUIRE(from_file.code == 0);
  CHECK(count_lines(from_file.out) == 4);

  // an explicit flag overrides the file
  const RunResult with_flag =
      run_cli("train --data " + micro_dataset() + " --config " + config + " --epochs 1");
  REQUIRE(with_flag.code == 0);
  CHECK(count_lines(with_flag.out) == 2);
}

TEST_CASE("unknown config keys and sections are rejected") {
  const std::string bad_key = write_file("bad_key.json", R"({"train": {"epocs": 2}})");
  const RunResult r1 = run_cli("train --data " + micro_dataset() + " --config " + bad_key);
  CHECK(r1.code == 3);
  CHECK(r1.err.find("epocs") != std::string::npos);

  const std::string bad_section = write_file("bad_section.json", R"({"trian": {}})");
  const RunResult r2 = run_cli("train --data " + micro_dataset() + " --config " + bad_section);
  CHECK(r2.code == 3);
}

TEST_CASE("the grid emits the fixed CSV schema for all five variants") {
  const RunResult r = run_cli("grid --graph " + g4() + " --series 8 --seeds 1" + kMicroFlags);
  REQUIRE(r.code == 0);
  const auto rows = lines_of(r.out);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == "inner,outer,mae,n_params,epochs_to_threshold,seed");
  const std::vector<std::string> want = {"identity,identity,", "identity,informed,",
                                         "informed,identity,", "agc,identity,", "agc,informed,"};
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(rows[i + 1].rfind(want[i], 0) == 0);
    CHECK(rows[i + 1].back() == '0');  // seed column
  }
  CHECK(r.err.find("[grid] inner=identity outer=identity") != std::string::npos);
}
