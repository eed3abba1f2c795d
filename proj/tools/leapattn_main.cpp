#include "CLI11.hpp"
#include "json.hpp"

#include "leapattn/attention.hpp"
#include "leapattn/bench.hpp"
#include "leapattn/checkpoint.hpp"
#include "leapattn/metrics.hpp"
#include "leapattn/model.hpp"
#include "leapattn/report.hpp"
#include "leapattn/streaming.hpp"
#include "leapattn/tasks.hpp"
#include "leapattn/train.hpp"
#include "leapattn/verify.hpp"

#include <climits>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace leapattn;

namespace {

/// Errors in how the tool was invoked or configured; mapped to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr const char* kDefaultRcpInputs = "data/lra_rcp_inputs.csv";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path.string());
  out << content;
}

json load_config(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError("config " + path + " is not valid JSON: " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + " must be a JSON object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw UsageError(where + ": unknown key \"" + item.key() + "\"");
}

TaskSpec parse_task(const json& j) {
  check_keys(j, {"kind", "min_len", "max_len", "vocab", "seed", "text_path", "chunk"}, "task");
  TaskSpec spec;
  if (j.contains("kind")) spec.kind = task_from_string(j.at("kind").get<std::string>());
  if (j.contains("min_len")) spec.min_len = j.at("min_len").get<int>();
  if (j.contains("max_len")) spec.max_len = j.at("max_len").get<int>();
  if (j.contains("vocab")) spec.vocab = j.at("vocab").get<int>();
  if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("text_path")) spec.text_path = j.at("text_path").get<std::string>();
  if (j.contains("chunk")) spec.chunk = j.at("chunk").get<int>();
  spec.validate();
  return spec;
}

TrainConfig parse_train(const json& j) {
  check_keys(j,
             {"batch", "steps", "lr", "warmup", "clip", "seed", "eval_every", "early_stop_acc",
              "eval_samples"},
             "train");
  TrainConfig tc;
  if (j.contains("batch")) tc.batch = j.at("batch").get<int>();
  if (j.contains("steps")) tc.steps = j.at("steps").get<int>();
  if (j.contains("lr")) tc.lr = j.at("lr").get<double>();
  if (j.contains("warmup")) tc.warmup = j.at("warmup").get<int>();
  if (j.contains("clip")) tc.clip = j.at("clip").get<double>();
  if (j.contains("seed")) tc.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("eval_every")) tc.eval_every = j.at("eval_every").get<int>();
  if (j.contains("early_stop_acc")) tc.early_stop_acc = j.at("early_stop_acc").get<double>();
  if (j.contains("eval_samples")) tc.eval_samples = j.at("eval_samples").get<int>();
  tc.validate();
  return tc;
}

ReweightScheme scheme_instance(SchemeKind kind, int d, int n, std::mt19937_64& rng) {
  switch (kind) {
    case SchemeKind::softmax:
      return ReweightScheme::softmax();
    case SchemeKind::none:
      return ReweightScheme::none();
    case SchemeKind::cos_fixed:
      return ReweightScheme::cos_fixed();
    case SchemeKind::cos_leap:
      return ReweightScheme::cos_leap(LeapModule::init(d, 2, rng), LeapModule::init(d, 2, rng));
    case SchemeKind::rope:
      return ReweightScheme::rope(10000.0);
    case SchemeKind::step_length:
      return ReweightScheme::step_length();
    case SchemeKind::max_length:
      return ReweightScheme::max_length(n);
    case SchemeKind::stepping_max_length:
      return ReweightScheme::stepping_max_length(4);
  }
  throw std::invalid_argument("unhandled scheme kind");
}

std::string seed_comment(std::uint64_t seed) {
  std::ostringstream ss;
  ss << "# seed=" << seed << "\n";
  return ss.str();
}

// ---------------------------------------------------------------------------
// verify

int cmd_verify(const std::string& suite, std::uint64_t seed, const std::string& out_dir,
               const std::string& config_path) {
  std::string fixture_path = kDefaultRcpInputs;
  if (!config_path.empty()) {
    const json cfg = load_config(config_path);
    check_keys(cfg, {"rcp_inputs"}, "verify config");
    if (cfg.contains("rcp_inputs")) fixture_path = cfg.at("rcp_inputs").get<std::string>();
  }

  std::vector<SuiteResult> suites;
  const bool all = suite == "all";
  if (all || suite == "equivalence") suites.push_back(verify_equivalence(seed));
  if (all || suite == "gradients") suites.push_back(verify_gradients(seed));
  if (all || suite == "streaming") suites.push_back(verify_streaming(seed));
  if (all || suite == "metrics") suites.push_back(verify_metrics(read_file(fixture_path), seed));

  const std::string summary = suites_to_json(suites, seed);
  std::cout << summary;
  if (!out_dir.empty()) write_file(fs::path(out_dir) / "verify_summary.json", summary);

  for (const SuiteResult& s : suites)
    if (!s.ok()) return 1;
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed_override,
              const std::string& out_dir) {
  const json cfg = load_config(config_path);
  check_keys(cfg, {"task", "model", "train", "train_samples", "dev_samples", "metric"}, "config");

  TaskSpec task = cfg.contains("task") ? parse_task(cfg.at("task")) : TaskSpec{};
  TrainConfig tc = cfg.contains("train") ? parse_train(cfg.at("train")) : TrainConfig{};

  json model_json = cfg.contains("model") ? cfg.at("model") : json::object();
  TransformerConfig mc;
  try {
    mc = config_from_json(model_json);
  } catch (const std::exception& e) {
    throw UsageError(std::string("model config: ") + e.what());
  }
  if (!model_json.contains("vocab_size")) mc.vocab_size = model_vocab(task);
  if (mc.vocab_size < model_vocab(task))
    throw UsageError("model.vocab_size smaller than the task alphabet");
  if (task.kind == TaskKind::parity && mc.n_classes == 0) mc.n_classes = 2;

  if (seed_override) {
    tc.seed = *seed_override;
    task.seed = *seed_override;
  }
  const int train_samples = cfg.value("train_samples", 256);
  const int dev_samples = cfg.value("dev_samples", 64);
  if (train_samples <= 0 || dev_samples <= 0) throw UsageError("sample counts must be positive");
  const EvalMetric metric = metric_from_string(cfg.value("metric", "sequence_accuracy"));

  mc.validate();
  std::mt19937_64 init_rng(tc.seed);
  Model m = build_model(mc, init_rng);

  const std::vector<Sample> data = generate_task(task, train_samples);
  TaskSpec dev_spec = task;
  dev_spec.seed = task.seed ^ 0x5bf03635ULL;
  const std::vector<Sample> dev = generate_task(dev_spec, dev_samples);

  const TrainResult result = train(m, data, task, tc, &dev);

  std::ostringstream losses;
  losses << seed_comment(tc.seed) << "step,loss\n";
  losses.precision(17);
  for (std::size_t i = 0; i < result.losses.size(); ++i)
    losses << (i + 1) << "," << result.losses[i] << "\n";

  const fs::path out(out_dir);
  write_file(out / "losses.csv", losses.str());
  save_checkpoint(m, (out / "checkpoint").string());

  json summary;
  summary["seed"] = tc.seed;
  summary["task"] = task_to_string(task.kind);
  summary["diverged"] = result.diverged;
  summary["steps_run"] = result.steps_run;
  summary["best_dev_acc"] = result.best_dev_acc;
  if (!result.diverged) {
    summary["dev"] = {{"metric", metric_to_string(metric)},
                      {"value", evaluate(m, dev, task, metric)}};
  }
  const std::string text = summary.dump(2) + "\n";
  std::cout << text;
  write_file(out / "train_summary.json", text);
  return result.diverged ? 1 : 0;
}

// ---------------------------------------------------------------------------
// bench

int cmd_bench(const std::vector<std::string>& schemes, const std::vector<int>& seq_lens,
              std::uint64_t seed, const std::string& out_dir, const std::string& config_path) {
  int d_model = 64, heads = 2, reps = 5;
  json quality;
  if (!config_path.empty()) {
    const json cfg = load_config(config_path);
    check_keys(cfg, {"d_model", "heads", "reps", "quality"}, "bench config");
    d_model = cfg.value("d_model", d_model);
    heads = cfg.value("heads", heads);
    reps = cfg.value("reps", reps);
    if (cfg.contains("quality")) quality = cfg.at("quality");
  }
  if (schemes.empty() || seq_lens.empty()) throw UsageError("bench needs schemes and seq-lens");

  std::vector<BenchResult> rows;
  for (const std::string& name : schemes) {
    const SchemeKind kind = scheme_from_string(name);
    for (const BenchResult& r : measure_throughput(kind, seq_lens, d_model, heads, reps))
      rows.push_back(r);
  }

  CompareReport quality_report;
  quality_report.metric = metric_to_string(EvalMetric::sequence_accuracy);
  for (const std::string& name : schemes) {
    CompareRow row;
    row.label = name;
    row.mean = quality.is_object() && quality.contains(name) ? quality.at(name).get<double>() : 0.0;
    quality_report.rows.push_back(row);
  }
  const TradeoffReport tradeoff = tradeoff_report(rows, quality_report);
  const std::string y_label =
      quality.is_object() ? "quality (seed mean)" : "quality (not provided)";

  const fs::path out(out_dir);
  write_file(out / "bench.csv", seed_comment(seed) + bench_to_csv(rows));
  write_file(out / "bench_scatter.svg", scatter_svg(tradeoff, "throughput (itr/sec)", y_label));
  write_file(out / "tradeoff.csv", seed_comment(seed) + tradeoff.to_csv());

  json summary;
  summary["seed"] = seed;
  summary["d_model"] = d_model;
  summary["heads"] = heads;
  summary["reps"] = reps;
  summary["rows"] = rows.size();
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const std::string& config_path, std::optional<std::uint64_t> seed_override,
                 const std::string& out_dir) {
  const json cfg = load_config(config_path);
  check_keys(cfg, {"checkpoint", "k", "pre_decision_ratio", "max_len", "task", "test_path",
                   "samples"},
             "simulate config");
  if (!cfg.contains("checkpoint")) throw UsageError("simulate config needs \"checkpoint\"");
  const std::string ckpt = cfg.at("checkpoint").get<std::string>();
  if (!fs::exists(ckpt + ".json") || !fs::exists(ckpt + ".bin"))
    throw UsageError("checkpoint not found: " + ckpt);

  const int k_raw = cfg.value("k", 1);
  const int r = cfg.value("pre_decision_ratio", 1);
  const int max_len = cfg.value("max_len", 0);
  // k <= 0 means wait for the whole source (offline decoding).
  const int k = k_raw <= 0 ? INT_MAX / 2 : k_raw;
  const WaitKSchedule sched(k, r);

  std::vector<Sample> samples;
  if (cfg.contains("test_path")) {
    try {
      samples = samples_from_jsonl(read_file(cfg.at("test_path").get<std::string>()));
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      throw UsageError(std::string("test set: ") + e.what());
    }
  } else if (cfg.contains("task")) {
    samples = generate_task(parse_task(cfg.at("task")), cfg.value("samples", 16));
  }
  if (samples.empty()) throw UsageError("empty test set");

  Model m = load_checkpoint(ckpt);
  std::uint64_t seed = seed_override.value_or(17);

  std::ostringstream traces;
  std::ostringstream hyps;
  int truncated = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SimulatedDecode dec = simulate_simultaneous(m, samples[i].src, sched, max_len);
    if (!trace_satisfies_schedule(dec.trace, sched, dec.trace.total_frames))
      throw std::runtime_error("trace violates the wait-k schedule");
    json meta;
    meta["sample"] = i;
    meta["k"] = k_raw;
    meta["pre_decision_ratio"] = r;
    meta["total_frames"] = dec.trace.total_frames;
    meta["truncated"] = dec.trace.truncated;
    traces << meta.dump() << "\n" << dec.trace.to_jsonl();
    truncated += dec.trace.truncated ? 1 : 0;
    for (std::size_t t = 0; t < dec.tokens.size(); ++t)
      hyps << (t ? " " : "") << dec.tokens[t];
    hyps << "\n";
  }

  const fs::path out(out_dir);
  write_file(out / "traces.jsonl", traces.str());
  write_file(out / "hypotheses.txt", hyps.str());

  json summary;
  summary["seed"] = seed;
  summary["k"] = k_raw;
  summary["pre_decision_ratio"] = r;
  summary["samples"] = samples.size();
  summary["truncated"] = truncated;
  const std::string text = summary.dump(2) + "\n";
  std::cout << text;
  write_file(out / "simulate_summary.json", text);
  return 0;
}

// ---------------------------------------------------------------------------
// rcp

int cmd_rcp(const std::string& config_path, std::uint64_t seed, const std::string& out_dir) {
  std::string inputs_path = kDefaultRcpInputs;
  std::string baseline = "softmax";
  if (!config_path.empty()) {
    const json cfg = load_config(config_path);
    check_keys(cfg, {"rcp_inputs", "baseline"}, "rcp config");
    if (cfg.contains("rcp_inputs")) inputs_path = cfg.at("rcp_inputs").get<std::string>();
    if (cfg.contains("baseline")) baseline = cfg.at("baseline").get<std::string>();
  }

  std::vector<MechanismRecord> records;
  std::vector<RcpRow> rows;
  try {
    records = parse_mechanism_csv(read_file(inputs_path));
    rows = rcp_report(records, baseline);
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("rcp inputs: ") + e.what());
  }

  std::ostringstream csv;
  csv << seed_comment(seed) << "# baseline=" << baseline << "\n" << rcp_rows_to_csv(rows);
  std::cout << csv.str();
  if (!out_dir.empty()) write_file(fs::path(out_dir) / "rcp_report.csv", csv.str());
  return 0;
}

// ---------------------------------------------------------------------------
// reweight

int cmd_reweight(const std::string& scheme_name, const std::vector<int>& seq_lens,
                 std::uint64_t seed, const std::string& out_dir) {
  const SchemeKind kind = scheme_from_string(scheme_name);
  const int n = seq_lens.empty() ? 16 : seq_lens.front();
  if (n < 1) throw UsageError("sequence length must be >= 1");
  const int d = 8;

  std::mt19937_64 rng(seed);
  Tensor q = uniform_tensor({n, d}, -1.0, 1.0, rng);
  Tensor k = uniform_tensor({n, d}, -1.0, 1.0, rng);
  Tensor v = uniform_tensor({n, d}, -1.0, 1.0, rng);
  const AttentionInputs in = AttentionInputs::make(q, k, v, false);
  const ReweightScheme scheme = scheme_instance(kind, d, n, rng);

  Tensor sigma;
  try {
    sigma = reweight_matrix_dump(in, scheme);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  std::ostringstream csv;
  csv << seed_comment(seed) << "i,j,sigma\n";
  csv.precision(17);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) csv << i << "," << j << "," << sigma.at(i, j) << "\n";
  std::cout << csv.str();
  if (!out_dir.empty())
    write_file(fs::path(out_dir) / ("reweight_" + scheme_name + ".csv"), csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linear-attention kernels, verification suites, and benchmark harness"};
  app.require_subcommand(0, 1);

  std::uint64_t seed = 17;
  std::string config_path;
  std::string out_dir = "out";
  std::string suite = "all";
  std::vector<std::string> schemes = {"softmax", "none", "cos_fixed", "cos_leap", "rope"};
  std::vector<int> seq_lens = {128, 256};
  std::string one_scheme = "cos_fixed";
  bool seed_given = false;

  CLI::App* verify = app.add_subcommand("verify", "run a property suite and emit a JSON summary");
  verify->add_option("--suite", suite, "equivalence|gradients|streaming|metrics|all")
      ->check(CLI::IsMember({"equivalence", "gradients", "streaming", "metrics", "all"}));
  verify->add_option("--seed", seed, "RNG seed");
  verify->add_option("--out", out_dir, "output directory")->default_val("");
  verify->add_option("--config", config_path, "JSON config with optional rcp_inputs path");

  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
  train_cmd->add_option("--config", config_path, "JSON config (task/model/train)")->required();
  train_cmd->add_option("--seed", seed, "overrides config seeds")
      ->each([&](const std::string&) { seed_given = true; });
  train_cmd->add_option("--out", out_dir, "output directory");

  CLI::App* bench = app.add_subcommand("bench", "throughput/memory benchmark grid");
  bench->add_option("--scheme", schemes, "comma-separated scheme names")->delimiter(',');
  bench->add_option("--seq-lens", seq_lens, "comma-separated sequence lengths")->delimiter(',');
  bench->add_option("--seed", seed, "RNG seed");
  bench->add_option("--out", out_dir, "output directory");
  bench->add_option("--config", config_path, "JSON config (d_model/heads/reps/quality)");

  CLI::App* simulate = app.add_subcommand("simulate", "wait-k simultaneous decoding");
  simulate->add_option("--config", config_path, "JSON config (checkpoint/k/test set)")->required();
  simulate->add_option("--seed", seed, "echoed into outputs")
      ->each([&](const std::string&) { seed_given = true; });
  simulate->add_option("--out", out_dir, "output directory");

  CLI::App* rcp_cmd = app.add_subcommand("rcp", "relative composite performance report");
  rcp_cmd->add_option("--config", config_path, "JSON config (rcp_inputs/baseline)");
  rcp_cmd->add_option("--seed", seed, "echoed into outputs");
  rcp_cmd->add_option("--out", out_dir, "output directory")->default_val("");

  CLI::App* reweight = app.add_subcommand("reweight", "dump a re-weighting matrix as CSV");
  reweight->add_option("--scheme", one_scheme, "scheme name");
  reweight->add_option("--seq-lens", seq_lens, "sequence length (first value used)")
      ->delimiter(',');
  reweight->add_option("--seed", seed, "RNG seed");
  reweight->add_option("--out", out_dir, "output directory")->default_val("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 2;
  }

  try {
    const std::optional<std::uint64_t> seed_override =
        seed_given ? std::optional<std::uint64_t>(seed) : std::nullopt;
    if (app.got_subcommand(verify)) return cmd_verify(suite, seed, out_dir, config_path);
    if (app.got_subcommand(train_cmd)) return cmd_train(config_path, seed_override, out_dir);
    if (app.got_subcommand(bench)) return cmd_bench(schemes, seq_lens, seed, out_dir, config_path);
    if (app.got_subcommand(simulate)) return cmd_simulate(config_path, seed_override, out_dir);
    if (app.got_subcommand(rcp_cmd)) return cmd_rcp(config_path, seed, out_dir);
    if (app.got_subcommand(reweight)) return cmd_reweight(one_scheme, seq_lens, seed, out_dir);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
