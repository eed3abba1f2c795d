#pragma once

#include "leapattn/attention.hpp"
#include "leapattn/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace leapattn {

struct BenchResult {
  std::string scheme;
  int seq_len = 0;
  double itr_per_sec = 0.0;  // == repetitions / wall_seconds
  std::int64_t analytic_peak_floats = 0;
  double wall_seconds = 0.0;
  int repetitions = 0;
};

/// Times forward+backward of the per-head attention kernel at each sequence
/// length: reps >= 5 timed repetitions after one discarded warmup, median
/// reported. Weights and inputs are random but seeded.
std::vector<BenchResult> measure_throughput(SchemeKind scheme, const std::vector<int>& seq_lens,
                                            int d_model, int heads, int reps);

/// Closed-form count of live floats at the attention bottleneck, per head
/// times heads: quadratic schemes hold the N x N score matrix; linear
/// schemes hold per-branch d x d accumulators and branch feature maps. Both
/// include the N x d projections. Deterministic, hardware-independent.
std::int64_t analytic_memory(SchemeKind scheme, int seq_len, int d_model, int heads);

/// `scheme,seq_len,itr_per_sec,peak_floats,reps` rows.
std::string bench_to_csv(const std::vector<BenchResult>& results);

struct TradeoffPoint {
  std::string scheme;
  double throughput = 0.0;  // x: itr/sec at each scheme's largest length
  double quality = 0.0;     // y: the quality report's seed-mean
  double memory = 0.0;      // size: analytic peak floats
};

struct TradeoffReport {
  std::vector<TradeoffPoint> points;
  std::string to_csv() const;
};

/// Joins bench rows with a quality report by scheme label. The two scheme
/// sets must match exactly.
TradeoffReport tradeoff_report(const std::vector<BenchResult>& bench,
                               const CompareReport& quality);

}  // namespace leapattn
