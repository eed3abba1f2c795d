#pragma once

#include <string>
#include <vector>

namespace leapattn {

/// One efficient-vs-baseline comparison. Throughputs are iterations/sec,
/// accuracies are percentages, memories are float counts (any consistent
/// unit works; only the ratio enters the metric).
struct RcpInputs {
  double ef_thrpt = 0.0;
  double sft_thrpt = 0.0;
  double ef_acc = 0.0;
  double sft_acc = 0.0;
  double std_bench = 0.0;
  double ef_mem = 1.0;
  double sft_mem = 1.0;

  void validate() const;
};

/// Relative composite performance: throughput gain discounted by the
/// accuracy gap measured in benchmark standard deviations,
/// (ef/sft) / (1 + (sft_acc - ef_acc)/std_bench). A non-positive
/// denominator (accuracy ahead of baseline by more than one std) is
/// rejected rather than extrapolated.
double rcp(const RcpInputs& in);

/// rcp with the reward split between throughput and memory ratios:
/// (w_thrpt*(ef_thrpt/sft_thrpt) + w_mem*(sft_mem/ef_mem)) / same denominator.
double rcp_mem(const RcpInputs& in, double w_thrpt = 0.5, double w_mem = 0.5);

/// Sample (n-1) standard deviation; needs at least two values.
double sample_std(const std::vector<double>& values);

/// A published benchmark row: averaged accuracy and training throughput at
/// three sequence lengths, with an optional memory figure.
struct MechanismRecord {
  std::string scheme;
  double avg_acc = 0.0;
  double thrpt_1k = 0.0;
  double thrpt_2k = 0.0;
  double thrpt_4k = 0.0;
  double mem = 0.0;  // 0 = not provided
};

/// Parses `scheme,avg_acc,thrpt_1k,thrpt_2k,thrpt_4k[,mem]` rows; '#' lines
/// and blank lines are skipped; a header row is required.
std::vector<MechanismRecord> parse_mechanism_csv(const std::string& text);

struct RcpRow {
  std::string scheme;
  double rcp_value = 0.0;
  double rcp_mem_value = 0.0;
  bool has_mem = false;
};

/// Scores every record against the named baseline row at the 4k sequence
/// length, with std_bench the sample std over all rows' accuracies.
/// Throws if the baseline row is missing.
std::vector<RcpRow> rcp_report(const std::vector<MechanismRecord>& records,
                               const std::string& baseline);

/// `scheme,rcp,rcp_mem` rows; the memory column is empty when not provided.
std::string rcp_rows_to_csv(const std::vector<RcpRow>& rows);

}  // namespace leapattn
