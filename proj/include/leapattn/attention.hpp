#pragma once

#include "leapattn/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace leapattn {

/// Normalization sums below this floor mean the feature map zeroed a row
/// (or re-weights cancelled it); such rows yield zeros and get flagged.
inline constexpr double kDenomFloor = 1e-6;

/// Kernel selector. `softmax` is the quadratic baseline; every other kind is a
/// re-weighting applied to the linear (feature-mapped) kernel.
enum class SchemeKind {
  softmax,
  none,
  cos_fixed,
  cos_leap,
  rope,
  step_length,
  max_length,
  stepping_max_length,
};

std::string scheme_to_string(SchemeKind kind);
SchemeKind scheme_from_string(const std::string& name);
/// The seven linear-kernel kinds (everything except softmax).
const std::vector<SchemeKind>& all_reweight_kinds();

/// Two-layer bottleneck mapping a per-head token vector to a proportion:
/// sigmoid(relu(x.W1 + b1).W2 + b2). One instance is shared by all heads of
/// an attention block.
struct LeapModule {
  Tensor w1;  // d x (d/f)
  Tensor b1;  // d/f
  Tensor w2;  // (d/f) x 1
  Tensor b2;  // 1
  int downsample_factor = 1;

  static LeapModule init(int d, int f, std::mt19937_64& rng, bool trainable = true);
  /// Zero output layer: every proportion is exactly sigmoid(0) = 0.5.
  static LeapModule collapsed(int d, int f);
  int64_t param_count() const;
};

/// Per-token placement values in [0,1].
struct ProportionVector {
  Tensor values;  // rank-1
  explicit ProportionVector(Tensor v);
  int size() const { return values.extent(0); }
  double at(int i) const { return values.at(i); }
};

enum class ProportionMode { exact, step_length, max_length, stepping_max_length };

/// exact: i/N for i=1..N. step_length: the value each position holds when it
/// was frozen during incremental decoding (always 1). max_length: i/L, L >= N
/// required. stepping_max_length: i/(delta*ceil(i/delta)).
ProportionVector fixed_proportions(int n, ProportionMode mode, int max_len = 0, int delta = 1);

/// Proportions for a token matrix, differentiable through the module weights.
ProportionVector leap_forward(const LeapModule& m, const Tensor& x);

/// cos(pi/2 * p) and sin(pi/2 * p); both nonnegative on [0,1].
std::pair<Tensor, Tensor> cos_branch_factors(const ProportionVector& p);

struct ReweightScheme {
  SchemeKind kind = SchemeKind::none;
  std::optional<LeapModule> leap_q;
  std::optional<LeapModule> leap_k;
  bool leap_on_q = true;  // a disabled side falls back to exact proportions
  bool leap_on_k = true;
  /// Off-spec escape hatch: per-head modules instead of one shared pair.
  bool per_head_leap = false;
  std::vector<LeapModule> leap_q_heads;
  std::vector<LeapModule> leap_k_heads;
  double rope_theta = 10000.0;
  int max_len = 0;
  int step_delta = 1;

  static ReweightScheme softmax();
  static ReweightScheme none();
  static ReweightScheme cos_fixed();
  static ReweightScheme cos_leap(LeapModule q, LeapModule k);
  static ReweightScheme rope(double theta = 10000.0);
  static ReweightScheme step_length();
  static ReweightScheme max_length(int L);
  static ReweightScheme stepping_max_length(int delta);
};

struct AttentionInputs {
  Tensor q;  // N1 x d
  Tensor k;  // N2 x d
  Tensor v;  // N2 x e
  bool causal = false;
  double scale = 1.0;  // 1/sqrt(d), applied by the softmax kernel only

  static AttentionInputs make(Tensor q, Tensor k, Tensor v, bool causal);
  void validate() const;
};

/// Exact quadratic attention: softmax(scale * Q.K^T) V with optional causal
/// masking.
Tensor softmax_attention(const AttentionInputs& in);

/// Elementwise ReLU feature map applied to queries and keys before the
/// kernel factorization.
Tensor feature_map(const Tensor& x);

/// Brute-force ground truth on plain doubles, no autodiff: forms every
/// pairwise score phi(Q_i).phi(K_j) * sigma(i,j), normalizes rows by their
/// sum (floored), multiplies into V. Rejects kind=softmax.
Tensor quadratic_reweighted_oracle(const AttentionInputs& in, const ReweightScheme& scheme,
                                   std::vector<std::uint8_t>* flags = nullptr);

/// Raw (unnormalized) score matrix of the oracle, row-major N1 x N2.
std::vector<double> oracle_score_matrix(const AttentionInputs& in, const ReweightScheme& scheme);

/// Reordered linear kernel, O(N d e). Cos schemes run two accumulator
/// branches (cos- and sin-weighted) recombined by the angle-difference
/// identity; causal inputs use prefix sums. Differentiable.
Tensor linear_attention(const AttentionInputs& in, const ReweightScheme& scheme,
                        std::vector<std::uint8_t>* flags = nullptr);

/// Rotation-based re-weighting: rotates feature-mapped queries and keys by
/// per-position angles, then runs the plain linear kernel.
Tensor rope_linear_attention(const AttentionInputs& in, double theta_base,
                             std::vector<std::uint8_t>* flags = nullptr);

/// Projection weights for one attention block. The optional LeaP modules
/// live in the block's ReweightScheme, not here.
struct AttentionBlockWeights {
  Tensor wq, bq;  // d_model x d_model, d_model
  Tensor wk, bk;
  Tensor wv, bv;
  Tensor wo, bo;

  static AttentionBlockWeights init(int d_model, std::mt19937_64& rng, bool trainable = true);
  int64_t param_count() const;
};

/// Per-head projection, chosen kernel, concat, output projection.
/// Self-attention passes the same tensor for x_q and x_kv.
Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionBlockWeights& w,
                            int heads, const ReweightScheme& scheme, bool causal);

/// sigma(i,j) for every pair, for heat-map inspection. Rejects rope, whose
/// re-weight is a rotation acting inside the feature space rather than a
/// scalar per pair.
Tensor reweight_matrix_dump(const AttentionInputs& in, const ReweightScheme& scheme);

/// Parameter count of one bottleneck module with input width d.
int64_t leap_module_param_count(int d, int f);

struct LeapOverhead {
  int64_t count = 0;
  double fraction = 0.0;
};

/// Q+K module pair per block, `blocks` blocks, per-head width d_model/heads.
/// fraction is relative to base_params (the model census without LeaP).
LeapOverhead leap_param_overhead(int d_model, int heads, int blocks, int f, int64_t base_params);

}  // namespace leapattn
