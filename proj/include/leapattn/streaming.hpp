#pragma once

#include "leapattn/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace leapattn {

/// Running accumulators for incremental linear attention: per branch b,
/// M_b = sum_j phi_b(k_j)^T v_j (d x e) and z_b = sum_j phi_b(k_j) (d).
/// Cos schemes carry two branches; none/rope carry one. Append and decode
/// touch O(d*e) numbers regardless of tokens_seen.
struct DecodeState {
  SchemeKind kind = SchemeKind::none;
  int d = 0;
  int e = 0;
  double rope_theta = 10000.0;
  std::vector<double> m_cos;  // d*e
  std::vector<double> z_cos;  // d
  std::vector<double> m_sin;  // d*e, cos schemes only
  std::vector<double> z_sin;
  int tokens_seen = 0;
  /// Multiply-accumulate tally; lets tests assert per-step cost is flat.
  mutable std::uint64_t ops = 0;

  bool two_branch() const;
};

/// Zeroed state for a scheme. The scheme fixes the branch structure and the
/// rope angle base; softmax has no streaming factorization and is rejected.
DecodeState state_init(const ReweightScheme& scheme, int d, int e);

/// Folds one key/value row into the state. p_k is the token's proportion
/// (ignored by none/rope). k_pos is the key's 0-based position for rope;
/// the default -1 means tokens_seen (natural self-attention order).
void state_append(DecodeState& s, const std::vector<double>& k_vec,
                  const std::vector<double>& v_vec, double p_k, int k_pos = -1);

/// Attention output for one query against everything appended so far.
/// q_pos is the query's 0-based position for rope; -1 means tokens_seen-1.
std::vector<double> state_decode(const DecodeState& s, const std::vector<double>& q_vec,
                                 double p_q, int q_pos = -1, bool* floored = nullptr);

struct WaitKSchedule {
  int k = 1;
  int predecision_ratio = 1;

  WaitKSchedule(int k_, int r_);
};

/// Source blocks that must be read before emitting target token i (1-based):
/// min(k + i - 1, total_blocks). One block is predecision_ratio frames.
int waitk_reads_required(int i, const WaitKSchedule& sched, int total_blocks);

struct StreamAction {
  enum class Kind { read, write };
  Kind kind = Kind::read;
  int units = 0;  // read: frames consumed; write: tokens emitted
  std::optional<int> token;
  int step = 0;
};

struct StreamTrace {
  std::vector<StreamAction> actions;
  bool truncated = false;
  int total_frames = 0;

  std::string to_jsonl() const;
};

/// Cumulative frames read before the i-th write match the wait-k formula
/// (clamped to total_frames) for every write in the trace.
bool trace_satisfies_schedule(const StreamTrace& trace, const WaitKSchedule& sched,
                              int total_frames);

enum class EncUpdateMode { unidirectional_append, bidirectional_recompute };

/// Extends (append) or rebuilds (recompute) a cross-attention source state.
/// Append mode folds only the new rows in; recompute mode expects the full
/// re-encoded source and resets the state first.
void cross_attention_stream_update(EncUpdateMode mode, DecodeState& s,
                                   const std::vector<std::vector<double>>& k_rows,
                                   const std::vector<std::vector<double>>& v_rows,
                                   const std::vector<double>& p_k);

struct SimulatedDecode {
  StreamTrace trace;
  std::vector<int> tokens;  // emitted targets, end token excluded
};

/// Simultaneous greedy decoding under a wait-k schedule. Reads batches of
/// source frames per the schedule, re-encodes only what has been read (so
/// unread frames cannot influence any emitted token), and writes argmax
/// tokens until the end token or the length guard. max_len <= 0 selects the
/// default guard: the schedule-implied minimum plus 10.
SimulatedDecode simulate_simultaneous(const Model& m, const std::vector<int>& source_frames,
                                      const WaitKSchedule& sched, int max_len = 0);

}  // namespace leapattn
