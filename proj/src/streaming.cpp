#include "leapattn/streaming.hpp"

#include "json.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace leapattn {

namespace {

constexpr double kHalfPi = 1.5707963267948966;

bool is_cos_kind(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::cos_fixed:
    case SchemeKind::cos_leap:
    case SchemeKind::step_length:
    case SchemeKind::max_length:
    case SchemeKind::stepping_max_length:
      return true;
    default:
      return false;
  }
}

std::vector<double> plain_relu_vec(const std::vector<double>& x) {
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

void rotate_in_place(std::vector<double>& x, double theta_base, int pos) {
  const int d = static_cast<int>(x.size());
  for (int t = 0; t < d / 2; ++t) {
    const double angle = pos * std::pow(theta_base, -2.0 * t / d);
    const double c = std::cos(angle), s = std::sin(angle);
    const double x0 = x[2 * t], x1 = x[2 * t + 1];
    x[2 * t] = x0 * c - x1 * s;
    x[2 * t + 1] = x0 * s + x1 * c;
  }
}

void fold_branch(DecodeState& s, const std::vector<double>& phi, const std::vector<double>& v,
                 std::vector<double>& m, std::vector<double>& z) {
  for (int p = 0; p < s.d; ++p) {
    z[p] += phi[p];
    double* mrow = m.data() + static_cast<size_t>(p) * s.e;
    for (int q = 0; q < s.e; ++q) mrow[q] += phi[p] * v[q];
  }
  s.ops += static_cast<std::uint64_t>(s.d) * s.e + s.d;
}

void read_branch(const DecodeState& s, const std::vector<double>& phi, const std::vector<double>& m,
                 const std::vector<double>& z, std::vector<double>& num, double& den) {
  for (int p = 0; p < s.d; ++p) {
    den += phi[p] * z[p];
    const double* mrow = m.data() + static_cast<size_t>(p) * s.e;
    for (int q = 0; q < s.e; ++q) num[q] += phi[p] * mrow[q];
  }
  s.ops += static_cast<std::uint64_t>(s.d) * s.e + s.d;
}

}  // namespace

bool DecodeState::two_branch() const { return is_cos_kind(kind); }

DecodeState state_init(const ReweightScheme& scheme, int d, int e) {
  if (scheme.kind == SchemeKind::softmax)
    throw std::invalid_argument("state_init: softmax has no streaming factorization");
  if (d < 1 || e < 1) throw std::invalid_argument("state_init: dimensions must be positive");
  if (scheme.kind == SchemeKind::rope && d % 2 != 0)
    throw std::invalid_argument("state_init: rope needs an even key width");
  DecodeState s;
  s.kind = scheme.kind;
  s.d = d;
  s.e = e;
  s.rope_theta = scheme.rope_theta;
  s.m_cos.assign(static_cast<size_t>(d) * e, 0.0);
  s.z_cos.assign(d, 0.0);
  if (s.two_branch()) {
    s.m_sin.assign(static_cast<size_t>(d) * e, 0.0);
    s.z_sin.assign(d, 0.0);
  }
  return s;
}

void state_append(DecodeState& s, const std::vector<double>& k_vec,
                  const std::vector<double>& v_vec, double p_k, int k_pos) {
  if (static_cast<int>(k_vec.size()) != s.d || static_cast<int>(v_vec.size()) != s.e)
    throw std::invalid_argument("state_append: row widths do not match the state");
  std::vector<double> phi = plain_relu_vec(k_vec);
  if (s.kind == SchemeKind::rope) {
    rotate_in_place(phi, s.rope_theta, k_pos < 0 ? s.tokens_seen : k_pos);
    fold_branch(s, phi, v_vec, s.m_cos, s.z_cos);
  } else if (s.two_branch()) {
    if (!(p_k >= 0.0 && p_k <= 1.0))
      throw std::invalid_argument("state_append: proportion outside [0,1]");
    const double c = std::cos(kHalfPi * p_k), sn = std::sin(kHalfPi * p_k);
    std::vector<double> scaled(s.d);
    for (int p = 0; p < s.d; ++p) scaled[p] = c * phi[p];
    fold_branch(s, scaled, v_vec, s.m_cos, s.z_cos);
    for (int p = 0; p < s.d; ++p) scaled[p] = sn * phi[p];
    fold_branch(s, scaled, v_vec, s.m_sin, s.z_sin);
  } else {
    fold_branch(s, phi, v_vec, s.m_cos, s.z_cos);
  }
  s.tokens_seen += 1;
}

std::vector<double> state_decode(const DecodeState& s, const std::vector<double>& q_vec,
                                 double p_q, int q_pos, bool* floored) {
  if (static_cast<int>(q_vec.size()) != s.d)
    throw std::invalid_argument("state_decode: query width does not match the state");
  if (floored) *floored = false;
  std::vector<double> phi = plain_relu_vec(q_vec);
  std::vector<double> num(s.e, 0.0);
  double den = 0.0;
  if (s.kind == SchemeKind::rope) {
    rotate_in_place(phi, s.rope_theta, q_pos < 0 ? s.tokens_seen - 1 : q_pos);
    read_branch(s, phi, s.m_cos, s.z_cos, num, den);
  } else if (s.two_branch()) {
    if (!(p_q >= 0.0 && p_q <= 1.0))
      throw std::invalid_argument("state_decode: proportion outside [0,1]");
    const double c = std::cos(kHalfPi * p_q), sn = std::sin(kHalfPi * p_q);
    std::vector<double> scaled(s.d);
    for (int p = 0; p < s.d; ++p) scaled[p] = c * phi[p];
    read_branch(s, scaled, s.m_cos, s.z_cos, num, den);
    for (int p = 0; p < s.d; ++p) scaled[p] = sn * phi[p];
    read_branch(s, scaled, s.m_sin, s.z_sin, num, den);
  } else {
    read_branch(s, phi, s.m_cos, s.z_cos, num, den);
  }
  if (den < kDenomFloor) {
    if (floored) *floored = true;
    return std::vector<double>(s.e, 0.0);
  }
  for (double& x : num) x /= den;
  return num;
}

WaitKSchedule::WaitKSchedule(int k_, int r_) : k(k_), predecision_ratio(r_) {
  if (k < 1) throw std::invalid_argument("WaitKSchedule: k must be >= 1");
  if (predecision_ratio < 1) throw std::invalid_argument("WaitKSchedule: ratio must be >= 1");
}

int waitk_reads_required(int i, const WaitKSchedule& sched, int total_blocks) {
  if (i < 1) throw std::invalid_argument("waitk_reads_required: index is 1-based");
  const long long need = static_cast<long long>(sched.k) + i - 1;
  return static_cast<int>(std::min<long long>(need, total_blocks));
}

std::string StreamTrace::to_jsonl() const {
  std::ostringstream os;
  for (const auto& a : actions) {
    nlohmann::json line;
    line["action"] = a.kind == StreamAction::Kind::read ? "READ" : "WRITE";
    line["units"] = a.units;
    line["token"] = a.token ? nlohmann::json(*a.token) : nlohmann::json(nullptr);
    line["step"] = a.step;
    os << line.dump() << "\n";
  }
  return os.str();
}

bool trace_satisfies_schedule(const StreamTrace& trace, const WaitKSchedule& sched,
                              int total_frames) {
  const int r = sched.predecision_ratio;
  const int total_blocks = (total_frames + r - 1) / r;
  auto frames_for = [&](int blocks) { return std::min(blocks * r, total_frames); };
  int frames_read = 0;
  int writes = 0;
  for (const auto& a : trace.actions) {
    if (a.kind == StreamAction::Kind::read) {
      frames_read += a.units;
    } else {
      writes += 1;
      if (frames_read != frames_for(waitk_reads_required(writes, sched, total_blocks)))
        return false;
    }
  }
  return frames_read <= total_frames;
}

void cross_attention_stream_update(EncUpdateMode mode, DecodeState& s,
                                   const std::vector<std::vector<double>>& k_rows,
                                   const std::vector<std::vector<double>>& v_rows,
                                   const std::vector<double>& p_k) {
  if (k_rows.empty()) throw std::invalid_argument("cross_attention_stream_update: no frames");
  if (k_rows.size() != v_rows.size() || k_rows.size() != p_k.size())
    throw std::invalid_argument("cross_attention_stream_update: row/proportion count mismatch");
  if (mode == EncUpdateMode::bidirectional_recompute) {
    std::fill(s.m_cos.begin(), s.m_cos.end(), 0.0);
    std::fill(s.z_cos.begin(), s.z_cos.end(), 0.0);
    std::fill(s.m_sin.begin(), s.m_sin.end(), 0.0);
    std::fill(s.z_sin.begin(), s.z_sin.end(), 0.0);
    s.tokens_seen = 0;
  }
  for (size_t i = 0; i < k_rows.size(); ++i) state_append(s, k_rows[i], v_rows[i], p_k[i]);
}


SimulatedDecode simulate_simultaneous(const Model& m, const std::vector<int>& source_frames,
                                      const WaitKSchedule& sched, int max_len) {
  if (source_frames.empty()) throw std::invalid_argument("simulate_simultaneous: empty source");
  if (m.enc.empty() || m.dec.empty())
    throw std::invalid_argument("simulate_simultaneous: needs an encoder-decoder model");

  const int total_frames = static_cast<int>(source_frames.size());
  const int total_blocks =
      (total_frames + sched.predecision_ratio - 1) / sched.predecision_ratio;
  // Writes needed before the schedule has requested every block, plus slack.
  const int schedule_min = std::max(1, total_blocks - sched.k + 1);
  if (max_len <= 0) max_len = schedule_min + 10;

  std::mt19937_64 eval_rng(0);  // eval mode, never consulted
  SimulatedDecode result;
  result.trace.total_frames = total_frames;

  int frames_read = 0;
  Tensor enc_out;
  std::vector<int> prefix = {kBosId};
  for (int i = 1; i <= max_len; ++i) {
    const int need_blocks = waitk_reads_required(i, sched, total_blocks);
    const int need_frames = std::min(need_blocks * sched.predecision_ratio, total_frames);
    if (need_frames > frames_read) {
      result.trace.actions.push_back({StreamAction::Kind::read, need_frames - frames_read,
                                      std::nullopt,
                                      static_cast<int>(result.trace.actions.size())});
      frames_read = need_frames;
      // Only the frames read so far ever reach the encoder, so no emitted
      // token can depend on the unread remainder.
      const std::vector<int> seen(source_frames.begin(), source_frames.begin() + frames_read);
      enc_out = encode(m, seen, false, eval_rng);
    }
    const Tensor logits = decoder_logits(m, enc_out, prefix, false, eval_rng);
    const int row = logits.extent(0) - 1;
    int best = 0;
    for (int j = 1; j < logits.extent(1); ++j)
      if (logits.at(row, j) > logits.at(row, best)) best = j;
    result.trace.actions.push_back({StreamAction::Kind::write, 1, best,
                                    static_cast<int>(result.trace.actions.size())});
    if (best == kEosId) return result;
    result.tokens.push_back(best);
    prefix.push_back(best);
  }
  result.trace.truncated = true;
  return result;
}

}  // namespace leapattn
