#include "leapattn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace leapattn {

namespace {

int branch_count(SchemeKind kind) {
  return kind == SchemeKind::cos_fixed || kind == SchemeKind::cos_leap ? 2 : 1;
}

/// One benchmark iteration: per-head forward of the chosen kernel plus a
/// full backward sweep. Heads run sequentially; each head's graph is freed
/// before the next to keep the peak at one head.
void run_iteration(SchemeKind kind, int n, int head_dim, int heads, std::mt19937_64& rng) {
  for (int h = 0; h < heads; ++h) {
    Tensor q = uniform_tensor({n, head_dim}, -1.0, 1.0, rng, true);
    Tensor k = uniform_tensor({n, head_dim}, -1.0, 1.0, rng, true);
    Tensor v = uniform_tensor({n, head_dim}, -1.0, 1.0, rng, true);
    const AttentionInputs in = AttentionInputs::make(q, k, v, true);
    Tensor out;
    if (kind == SchemeKind::softmax) {
      out = softmax_attention(in);
    } else if (kind == SchemeKind::cos_leap) {
      std::mt19937_64 leap_rng(7);
      out = linear_attention(in, ReweightScheme::cos_leap(LeapModule::init(head_dim, 4, leap_rng),
                                                          LeapModule::init(head_dim, 4, leap_rng)));
    } else if (kind == SchemeKind::max_length) {
      out = linear_attention(in, ReweightScheme::max_length(n));
    } else if (kind == SchemeKind::stepping_max_length) {
      out = linear_attention(in, ReweightScheme::stepping_max_length(4));
    } else if (kind == SchemeKind::rope) {
      out = linear_attention(in, ReweightScheme::rope());
    } else if (kind == SchemeKind::cos_fixed) {
      out = linear_attention(in, ReweightScheme::cos_fixed());
    } else if (kind == SchemeKind::step_length) {
      out = linear_attention(in, ReweightScheme::step_length());
    } else {
      out = linear_attention(in, ReweightScheme::none());
    }
    backward(sum_all(out));
  }
}

}  // namespace

std::vector<BenchResult> measure_throughput(SchemeKind scheme, const std::vector<int>& seq_lens,
                                            int d_model, int heads, int reps) {
  if (reps < 5) throw std::invalid_argument("measure_throughput: need at least 5 repetitions");
  if (seq_lens.empty()) throw std::invalid_argument("measure_throughput: no sequence lengths");
  if (heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("measure_throughput: heads must divide d_model");
  const int head_dim = d_model / heads;
  using clock = std::chrono::steady_clock;

  std::vector<BenchResult> out;
  for (int n : seq_lens) {
    std::mt19937_64 rng(99);
    run_iteration(scheme, n, head_dim, heads, rng);  // warmup, discarded
    std::vector<double> times;
    times.reserve(reps);
    for (int r = 0; r < reps; ++r) {
      const auto t0 = clock::now();
      run_iteration(scheme, n, head_dim, heads, rng);
      times.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    const double median =
        reps % 2 == 1 ? times[reps / 2] : 0.5 * (times[reps / 2 - 1] + times[reps / 2]);
    BenchResult res;
    res.scheme = scheme_to_string(scheme);
    res.seq_len = n;
    res.repetitions = reps;
    res.wall_seconds = median * reps;
    res.itr_per_sec = reps / res.wall_seconds;
    res.analytic_peak_floats = analytic_memory(scheme, n, d_model, heads);
    out.push_back(std::move(res));
  }
  return out;
}

std::int64_t analytic_memory(SchemeKind scheme, int seq_len, int d_model, int heads) {
  const std::int64_t n = seq_len;
  const std::int64_t d = d_model / heads;
  const std::int64_t projections = 4 * n * d;  // Q, K, V, out per head
  std::int64_t per_head;
  if (scheme == SchemeKind::softmax) {
    per_head = n * n + projections;  // the score matrix dominates
  } else {
    const std::int64_t b = branch_count(scheme);
    // per-branch accumulator (d x d) and running sums (d), plus the branch
    // feature maps of Q and K
    per_head = b * (d * d + d) + b * 2 * n * d + projections;
  }
  return heads * per_head;
}

std::string bench_to_csv(const std::vector<BenchResult>& results) {
  std::ostringstream out;
  out << "scheme,seq_len,itr_per_sec,peak_floats,reps\n";
  out.precision(9);
  for (const BenchResult& r : results)
    out << r.scheme << ',' << r.seq_len << ',' << r.itr_per_sec << ',' << r.analytic_peak_floats
        << ',' << r.repetitions << '\n';
  return out.str();
}

std::string TradeoffReport::to_csv() const {
  std::ostringstream out;
  out << "scheme,throughput,quality,memory\n";
  out.precision(9);
  for (const TradeoffPoint& p : points)
    out << p.scheme << ',' << p.throughput << ',' << p.quality << ',' << p.memory << '\n';
  return out.str();
}

TradeoffReport tradeoff_report(const std::vector<BenchResult>& bench,
                               const CompareReport& quality) {
  // keep one bench row per scheme: the largest sequence length measured
  std::map<std::string, const BenchResult*> widest;
  for (const BenchResult& b : bench) {
    auto [it, inserted] = widest.try_emplace(b.scheme, &b);
    if (!inserted && b.seq_len > it->second->seq_len) it->second = &b;
  }
  std::set<std::string> quality_schemes;
  for (const CompareRow& row : quality.rows) quality_schemes.insert(row.label);
  std::set<std::string> bench_schemes;
  for (const auto& [name, ptr] : widest) bench_schemes.insert(name);
  if (bench_schemes != quality_schemes)
    throw std::invalid_argument("tradeoff_report: bench and quality scheme sets differ");

  TradeoffReport report;
  for (const auto& [name, b] : widest) {
    const CompareRow* row = quality.find(name);
    report.points.push_back(
        {name, b->itr_per_sec, row->mean, static_cast<double>(b->analytic_peak_floats)});
  }
  return report;
}

}  // namespace leapattn
