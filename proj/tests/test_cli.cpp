#include "doctest.h"
#include "json.hpp"

#include "leapattn/checkpoint.hpp"
#include "leapattn/model.hpp"
#include "leapattn/tasks.hpp"

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace leapattn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(LEAPATTN_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.out += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "leapattn_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string data_file(const std::string& name) {
  return std::string(LEAPATTN_DATA_DIR) + "/" + name;
}

const char* kTinyTrainConfig = R"({
  "task": {"kind": "copy", "min_len": 3, "max_len": 5, "vocab": 6},
  "model": {"d_model": 16, "heads": 2, "enc_layers": 1, "dec_layers": 1, "ffn_dim": 32,
            "dec_self": "cos_leap", "dropout": 0.0, "max_positions": 32},
  "train": {"batch": 4, "steps": 20, "lr": 0.002, "warmup": 5},
  "train_samples": 16,
  "dev_samples": 4
})";

}  // namespace

TEST_CASE("unknown verify suite exits 2 with usage text") {
  const RunResult r = run_cli("verify --suite bogus");
  CHECK(r.code == 2);
}

TEST_CASE("no subcommand exits 2") { CHECK(run_cli("").code == 2); }

TEST_CASE("verify metrics emits a JSON summary to stdout and disk") {
  const fs::path dir = fresh_dir("verify");
  write_text(dir / "cfg.json", "{\"rcp_inputs\": \"" + data_file("lra_rcp_inputs.csv") + "\"}");

  const RunResult r =
      run_cli("verify --suite metrics --config " + (dir / "cfg.json").string() + " --out " +
              (dir / "out").string());
  CHECK(r.code == 0);

  const json parsed = json::parse(r.out);
  CHECK(parsed.at("ok").get<bool>());
  CHECK(parsed.at("seed").get<int>() == 17);
  REQUIRE(parsed.at("suites").size() == 1);
  CHECK(parsed.at("suites")[0].at("name").get<std::string>() == "metrics");
  CHECK(parsed.at("suites")[0].at("failures").get<int>() == 0);

  const json on_disk = json::parse(read_text(dir / "out" / "verify_summary.json"));
  CHECK(on_disk.at("ok").get<bool>());
}

TEST_CASE("train writes artifacts and reruns byte-identically") {
  const fs::path dir = fresh_dir("train");
  write_text(dir / "cfg.json", kTinyTrainConfig);

  const std::string base = "train --config " + (dir / "cfg.json").string() + " --out ";
  const RunResult first = run_cli(base + (dir / "a").string());
  CHECK(first.code == 0);

  const json summary = json::parse(first.out);
  CHECK(summary.at("seed").get<int>() == 17);
  CHECK_FALSE(summary.at("diverged").get<bool>());
  CHECK(summary.at("steps_run").get<int>() == 20);

  const RunResult second =
      run_cli("train --config " + (dir / "cfg.json").string() + " --out " + (dir / "b").string());
  CHECK(second.code == 0);
  CHECK(read_text(dir / "a" / "losses.csv") == read_text(dir / "b" / "losses.csv"));
  CHECK(read_text(dir / "a" / "checkpoint.bin") == read_text(dir / "b" / "checkpoint.bin"));

  // a different seed changes the loss trajectory
  const RunResult third = run_cli(base + (dir / "c").string() + " --seed 23");
  CHECK(third.code == 0);
  CHECK(read_text(dir / "a" / "losses.csv") != read_text(dir / "c" / "losses.csv"));

  const std::string losses = read_text(dir / "a" / "losses.csv");
  CHECK(losses.rfind("# seed=17\nstep,loss\n", 0) == 0);
  CHECK(json::parse(read_text(dir / "a" / "train_summary.json")).at("task") == "copy");
}

TEST_CASE("train rejects missing config, unknown keys, and undersized vocab") {
  const fs::path dir = fresh_dir("train_bad");
  CHECK(run_cli("train --config " + (dir / "absent.json").string()).code == 2);
  CHECK(run_cli("train").code == 2);  // --config is required

  write_text(dir / "unknown.json", R"({"task": {"kind": "copy"}, "mystery": 1})");
  CHECK(run_cli("train --config " + (dir / "unknown.json").string()).code == 2);

  write_text(dir / "vocab.json",
             R"({"task": {"kind": "copy", "vocab": 30}, "model": {"vocab_size": 8}})");
  CHECK(run_cli("train --config " + (dir / "vocab.json").string()).code == 2);
}

TEST_CASE("simulate emits sound traces and k<=0 equals offline greedy decoding") {
  const fs::path dir = fresh_dir("simulate");
  write_text(dir / "train.json", kTinyTrainConfig);
  REQUIRE(run_cli("train --config " + (dir / "train.json").string() + " --out " +
                  (dir / "run").string())
              .code == 0);
  const std::string ckpt = (dir / "run" / "checkpoint").string();

  write_text(dir / "sim.json", R"({
    "checkpoint": ")" + ckpt + R"(",
    "k": 0, "pre_decision_ratio": 1,
    "task": {"kind": "copy", "min_len": 3, "max_len": 5, "vocab": 6, "seed": 99},
    "samples": 3
  })");
  const RunResult r = run_cli("simulate --config " + (dir / "sim.json").string() + " --out " +
                              (dir / "out").string());
  CHECK(r.code == 0);
  CHECK(json::parse(r.out).at("samples").get<int>() == 3);

  // offline reference: same checkpoint, same samples, full-source greedy decode
  Model m = load_checkpoint(ckpt);
  TaskSpec spec;
  spec.min_len = 3;
  spec.max_len = 5;
  spec.vocab = 6;
  spec.seed = 99;
  const std::vector<Sample> samples = generate_task(spec, 3);

  std::istringstream hyp_lines(read_text(dir / "out" / "hypotheses.txt"));
  std::string line;
  for (const Sample& s : samples) {
    REQUIRE(std::getline(hyp_lines, line));
    std::mt19937_64 rng(0);
    const Tensor enc_out = encode(m, s.src, false, rng);
    const std::vector<int> offline = greedy_decode(m, enc_out, 11);
    std::ostringstream expect;
    for (std::size_t t = 0; t < offline.size(); ++t) expect << (t ? " " : "") << offline[t];
    CHECK(line == expect.str());
  }

  // every trace line parses; WRITE actions carry tokens, READ actions do not
  std::istringstream trace_lines(read_text(dir / "out" / "traces.jsonl"));
  int actions = 0;
  while (std::getline(trace_lines, line)) {
    const json j = json::parse(line);
    if (j.contains("action")) {
      ++actions;
      if (j.at("action") == "WRITE") CHECK_FALSE(j.at("token").is_null());
      if (j.at("action") == "READ") CHECK(j.at("token").is_null());
    }
  }
  CHECK(actions > 0);
}

TEST_CASE("simulate rejects missing checkpoints and empty test sets") {
  const fs::path dir = fresh_dir("simulate_bad");
  write_text(dir / "missing.json",
             R"({"checkpoint": "/nowhere/ckpt", "task": {"kind": "copy"}, "samples": 2})");
  CHECK(run_cli("simulate --config " + (dir / "missing.json").string()).code == 2);

  write_text(dir / "train.json", kTinyTrainConfig);
  REQUIRE(run_cli("train --config " + (dir / "train.json").string() + " --out " +
                  (dir / "run").string())
              .code == 0);
  write_text(dir / "empty.json", R"({
    "checkpoint": ")" + (dir / "run" / "checkpoint").string() + R"(",
    "task": {"kind": "copy"}, "samples": 0
  })");
  CHECK(run_cli("simulate --config " + (dir / "empty.json").string()).code == 2);
}

TEST_CASE("bench emits a CSV grid and a well-formed SVG scatter") {
  const fs::path dir = fresh_dir("bench");
  write_text(dir / "cfg.json", R"({"d_model": 16, "heads": 2, "reps": 5})");
  const RunResult r = run_cli("bench --scheme softmax,none --seq-lens 8,16 --config " +
                              (dir / "cfg.json").string() + " --out " + (dir / "out").string());
  CHECK(r.code == 0);

  const std::string csv = read_text(dir / "out" / "bench.csv");
  CHECK(csv.rfind("# seed=17\nscheme,seq_len,itr_per_sec,peak_floats,reps\n", 0) == 0);
  int rows = 0;
  std::istringstream lines(csv);
  std::string line;
  while (std::getline(lines, line))
    if (!line.empty() && line[0] != '#' && line.rfind("scheme,", 0) != 0) ++rows;
  CHECK(rows == 4);  // 2 schemes x 2 lengths

  const std::string svg = read_text(dir / "out" / "bench_scatter.svg");
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("<circle") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("rcp reproduces the bundled report and rejects bad inputs") {
  const fs::path dir = fresh_dir("rcp");
  write_text(dir / "cfg.json", "{\"rcp_inputs\": \"" + data_file("lra_rcp_inputs.csv") + "\"}");
  const RunResult r = run_cli("rcp --config " + (dir / "cfg.json").string());
  CHECK(r.code == 0);

  double leap15 = 0.0, softmax = 0.0;
  std::istringstream lines(r.out);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("leapformer_1.5,", 0) == 0) leap15 = std::stod(line.substr(15));
    if (line.rfind("softmax,", 0) == 0) softmax = std::stod(line.substr(8));
  }
  CHECK(softmax == doctest::Approx(1.0));
  CHECK(leap15 == doctest::Approx(5.20).epsilon(0.004));

  write_text(dir / "nobase.csv", "scheme,avg_acc,thrpt_1k,thrpt_2k,thrpt_4k\na,50,2,2,2\nb,49,1,1,1\n");
  write_text(dir / "nobase.json", "{\"rcp_inputs\": \"" + (dir / "nobase.csv").string() + "\"}");
  CHECK(run_cli("rcp --config " + (dir / "nobase.json").string()).code == 2);

  write_text(dir / "malformed.csv", "scheme,avg_acc\nsoftmax,50\n");
  write_text(dir / "malformed.json",
             "{\"rcp_inputs\": \"" + (dir / "malformed.csv").string() + "\"}");
  CHECK(run_cli("rcp --config " + (dir / "malformed.json").string()).code == 2);
}

TEST_CASE("reweight dumps sigma triplets and rejects rope") {
  const RunResult r = run_cli("reweight --scheme cos_fixed --seq-lens 4");
  CHECK(r.code == 0);
  CHECK(r.out.rfind("# seed=17\ni,j,sigma\n", 0) == 0);
  int rows = 0;
  std::istringstream lines(r.out);
  std::string line;
  while (std::getline(lines, line))
    if (!line.empty() && std::isdigit(static_cast<unsigned char>(line[0]))) ++rows;
  CHECK(rows == 16);

  CHECK(run_cli("reweight --scheme rope --seq-lens 4").code == 2);
}
