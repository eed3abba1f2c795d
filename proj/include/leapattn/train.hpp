#pragma once

#include "leapattn/model.hpp"
#include "leapattn/tasks.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace leapattn {

struct TrainConfig {
  int batch = 8;
  int steps = 300;
  double lr = 1e-3;
  int warmup = 100;     // linear warmup, then linear decay to zero
  double clip = 1.0;    // global-norm clip; <= 0 disables
  std::uint64_t seed = 17;
  int eval_every = 0;           // 0: no mid-training eval
  double early_stop_acc = -1.0;  // stop when dev sequence accuracy reaches this
  int eval_samples = 32;

  void validate() const;
};

struct TrainResult {
  std::vector<double> losses;  // one entry per optimizer step taken
  bool diverged = false;
  int steps_run = 0;
  double best_dev_acc = -1.0;  // only when eval_every > 0
};

/// Adam (beta 0.9/0.999, eps 1e-8) over mean cross-entropy. Deterministic
/// given tc.seed. Divergence (non-finite loss) aborts with the partial curve.
TrainResult train(Model& m, const std::vector<Sample>& data, const TaskSpec& task,
                  const TrainConfig& tc, const std::vector<Sample>* dev = nullptr);

enum class EvalMetric { token_accuracy, sequence_accuracy, perplexity };

EvalMetric metric_from_string(const std::string& name);
std::string metric_to_string(EvalMetric metric);

/// token_accuracy: teacher-forced argmax rate. sequence_accuracy: greedy
/// decode exact-match rate (argmax label rate for classifiers).
/// perplexity: exp(mean token cross-entropy).
double evaluate(const Model& m, const std::vector<Sample>& data, const TaskSpec& task,
                EvalMetric metric);

struct SchemeVariant {
  std::string label;
  TransformerConfig cfg;
};

struct CompareRow {
  std::string label;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_seed;
};

struct CompareReport {
  std::string metric;
  std::vector<CompareRow> rows;
  std::string to_csv() const;
  const CompareRow* find(const std::string& label) const;
};

/// Trains every variant under identical data, budgets, and seeds; reports
/// the dev metric per variant (mean and sample std over seeds).
CompareReport compare_schemes(const TaskSpec& task, const std::vector<SchemeVariant>& variants,
                              const TrainConfig& tc, const std::vector<std::uint64_t>& seeds,
                              EvalMetric metric, int train_samples = 256, int dev_samples = 64);

}  // namespace leapattn
