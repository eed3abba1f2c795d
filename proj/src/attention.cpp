#include "leapattn/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace leapattn {

namespace {

constexpr double kHalfPi = 1.5707963267948966;

double plain_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Exact-mode proportions for 1-based positions: i/n.
std::vector<double> exact_proportions(int n) {
  std::vector<double> p(n);
  for (int i = 0; i < n; ++i) p[i] = static_cast<double>(i + 1) / n;
  return p;
}

std::vector<double> mode_proportions(int n, ProportionMode mode, int max_len, int delta) {
  switch (mode) {
    case ProportionMode::exact:
      return exact_proportions(n);
    case ProportionMode::step_length: {
      // During incremental decoding each position i arrives when the running
      // length is exactly i, so its frozen placement is i/i = 1.
      return std::vector<double>(n, 1.0);
    }
    case ProportionMode::max_length: {
      if (max_len < n)
        throw std::invalid_argument("fixed_proportions: max_length " + std::to_string(max_len) +
                                    " shorter than sequence " + std::to_string(n));
      std::vector<double> p(n);
      for (int i = 0; i < n; ++i) p[i] = static_cast<double>(i + 1) / max_len;
      return p;
    }
    case ProportionMode::stepping_max_length: {
      if (delta < 1) throw std::invalid_argument("fixed_proportions: step delta must be >= 1");
      std::vector<double> p(n);
      for (int i = 0; i < n; ++i) {
        const int pos = i + 1;
        const int ceiling = delta * ((pos + delta - 1) / delta);
        p[i] = static_cast<double>(pos) / ceiling;
      }
      return p;
    }
  }
  throw std::logic_error("fixed_proportions: unreachable");
}

ProportionMode mode_for_kind(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::cos_fixed: return ProportionMode::exact;
    case SchemeKind::step_length: return ProportionMode::step_length;
    case SchemeKind::max_length: return ProportionMode::max_length;
    case SchemeKind::stepping_max_length: return ProportionMode::stepping_max_length;
    default: throw std::logic_error("mode_for_kind: not a fixed-proportion scheme");
  }
}

// Hand-rolled LeaP forward on raw buffers; keeps the oracle free of the
// autodiff route.
std::vector<double> plain_leap(const LeapModule& m, const std::vector<double>& x, int n, int d) {
  const int dk = m.w1.extent(1);
  const auto& w1 = m.w1.values();
  const auto& b1 = m.b1.values();
  const auto& w2 = m.w2.values();
  const double b2 = m.b2.at(0);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    double acc = b2;
    for (int h = 0; h < dk; ++h) {
      double pre = b1[h];
      for (int p = 0; p < d; ++p) pre += x[static_cast<size_t>(i) * d + p] * w1[static_cast<size_t>(p) * dk + h];
      if (pre > 0.0) acc += pre * w2[h];
    }
    out[i] = plain_sigmoid(acc);
  }
  return out;
}

// Plain-double proportions for one side of the oracle. Queries and keys use
// their own lengths, so cross-attention shapes work unchanged.
std::vector<double> oracle_proportions(const ReweightScheme& scheme, bool query_side,
                                       const std::vector<double>& x, int n, int d) {
  if (scheme.kind == SchemeKind::cos_leap) {
    const bool on = query_side ? scheme.leap_on_q : scheme.leap_on_k;
    const auto& mod = query_side ? scheme.leap_q : scheme.leap_k;
    if (on) {
      if (!mod) throw std::invalid_argument("cos_leap scheme is missing its LeaP module");
      return plain_leap(*mod, x, n, d);
    }
    return exact_proportions(n);
  }
  return mode_proportions(n, mode_for_kind(scheme.kind), scheme.max_len, scheme.step_delta);
}

std::vector<double> plain_relu(const std::vector<double>& x) {
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

// Tensor-route proportions (differentiable when LeaP is involved).
std::pair<ProportionVector, ProportionVector> scheme_proportions(const ReweightScheme& scheme,
                                                                 const Tensor& q, const Tensor& k) {
  const int n1 = q.extent(0), n2 = k.extent(0);
  if (scheme.kind == SchemeKind::cos_leap) {
    auto side = [&](bool on, const std::optional<LeapModule>& mod, const Tensor& x, int n) {
      if (!on) return fixed_proportions(n, ProportionMode::exact);
      if (!mod) throw std::invalid_argument("cos_leap scheme is missing its LeaP module");
      return leap_forward(*mod, x);
    };
    return {side(scheme.leap_on_q, scheme.leap_q, q, n1), side(scheme.leap_on_k, scheme.leap_k, k, n2)};
  }
  const ProportionMode mode = mode_for_kind(scheme.kind);
  return {fixed_proportions(n1, mode, scheme.max_len, scheme.step_delta),
          fixed_proportions(n2, mode, scheme.max_len, scheme.step_delta)};
}

Tensor as_vector(const Tensor& column) {
  return reshape(column, {column.extent(0)});
}

// num/den assembly for one (A_q, A_k) branch pair.
void accumulate_branch(const Tensor& aq, const Tensor& ak, const Tensor& v, bool causal,
                       Tensor& num, Tensor& den) {
  Tensor bn, bd;
  if (causal) {
    bn = causal_numerator(aq, ak, v);
    bd = causal_denominator(aq, ak);
  } else {
    bn = matmul(aq, matmul(transpose(ak), v));
    const int d = ak.extent(1);
    bd = as_vector(matmul(aq, reshape(col_sums(ak), {d, 1})));
  }
  num = num.defined() ? add(num, bn) : bn;
  den = den.defined() ? add(den, bd) : bd;
}

Tensor linear_kernel_single(const Tensor& phi_q, const Tensor& phi_k, const Tensor& v, bool causal,
                            std::vector<std::uint8_t>* flags) {
  Tensor num, den;
  accumulate_branch(phi_q, phi_k, v, causal, num, den);
  return div_rows_floored(num, den, kDenomFloor, flags);
}

}  // namespace

std::string scheme_to_string(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::softmax: return "softmax";
    case SchemeKind::none: return "none";
    case SchemeKind::cos_fixed: return "cos_fixed";
    case SchemeKind::cos_leap: return "cos_leap";
    case SchemeKind::rope: return "rope";
    case SchemeKind::step_length: return "step_length";
    case SchemeKind::max_length: return "max_length";
    case SchemeKind::stepping_max_length: return "stepping_max_length";
  }
  throw std::logic_error("scheme_to_string: unreachable");
}

SchemeKind scheme_from_string(const std::string& name) {
  for (SchemeKind kind : {SchemeKind::softmax, SchemeKind::none, SchemeKind::cos_fixed,
                          SchemeKind::cos_leap, SchemeKind::rope, SchemeKind::step_length,
                          SchemeKind::max_length, SchemeKind::stepping_max_length})
    if (scheme_to_string(kind) == name) return kind;
  throw std::invalid_argument("unknown scheme: " + name);
}

const std::vector<SchemeKind>& all_reweight_kinds() {
  static const std::vector<SchemeKind> kinds = {
      SchemeKind::none,       SchemeKind::cos_fixed,  SchemeKind::cos_leap,
      SchemeKind::rope,       SchemeKind::step_length, SchemeKind::max_length,
      SchemeKind::stepping_max_length};
  return kinds;
}

LeapModule LeapModule::init(int d, int f, std::mt19937_64& rng, bool trainable) {
  if (f < 1 || d % f != 0)
    throw std::invalid_argument("LeapModule: downsample factor " + std::to_string(f) +
                                " must divide width " + std::to_string(d));
  const int dk = d / f;
  LeapModule m;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(dk));
  m.w1 = uniform_tensor({d, dk}, -s1, s1, rng, trainable);
  m.b1 = Tensor::zeros({dk}, trainable);
  m.w2 = uniform_tensor({dk, 1}, -s2, s2, rng, trainable);
  m.b2 = Tensor::zeros({1}, trainable);
  m.downsample_factor = f;
  return m;
}

LeapModule LeapModule::collapsed(int d, int f) {
  std::mt19937_64 rng(0);
  LeapModule m = init(d, f, rng, false);
  m.w2 = Tensor::zeros({d / f, 1});
  m.b2 = Tensor::zeros({1});
  return m;
}

int64_t LeapModule::param_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size();
}

ProportionVector::ProportionVector(Tensor v) : values(std::move(v)) {
  if (values.rank() != 1) throw std::invalid_argument("ProportionVector: values must be rank-1");
  for (double p : values.values())
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("ProportionVector: value " + std::to_string(p) + " outside [0,1]");
}

ProportionVector fixed_proportions(int n, ProportionMode mode, int max_len, int delta) {
  if (n < 1) throw std::invalid_argument("fixed_proportions: length must be >= 1");
  return ProportionVector(Tensor::from({n}, mode_proportions(n, mode, max_len, delta)));
}

ProportionVector leap_forward(const LeapModule& m, const Tensor& x) {
  if (x.rank() != 2 || x.extent(1) != m.w1.extent(0))
    throw std::invalid_argument("leap_forward: input shape " + shape_str(x.shape()) +
                                " does not match module width " + std::to_string(m.w1.extent(0)));
  Tensor hidden = relu(add_rowwise(matmul(x, m.w1), m.b1));
  Tensor logit = add_rowwise(matmul(hidden, m.w2), m.b2);
  return ProportionVector(as_vector(sigmoid(logit)));
}

std::pair<Tensor, Tensor> cos_branch_factors(const ProportionVector& p) {
  Tensor angle = affine(p.values, kHalfPi, 0.0);
  return {cos_op(angle), sin_op(angle)};
}

namespace {
ReweightScheme scheme_of_kind(SchemeKind kind) {
  ReweightScheme s;
  s.kind = kind;
  return s;
}
}  // namespace

ReweightScheme ReweightScheme::softmax() { return scheme_of_kind(SchemeKind::softmax); }
ReweightScheme ReweightScheme::none() { return scheme_of_kind(SchemeKind::none); }
ReweightScheme ReweightScheme::cos_fixed() { return scheme_of_kind(SchemeKind::cos_fixed); }

ReweightScheme ReweightScheme::cos_leap(LeapModule q, LeapModule k) {
  ReweightScheme s;
  s.kind = SchemeKind::cos_leap;
  s.leap_q = std::move(q);
  s.leap_k = std::move(k);
  return s;
}

ReweightScheme ReweightScheme::rope(double theta) {
  ReweightScheme s;
  s.kind = SchemeKind::rope;
  s.rope_theta = theta;
  return s;
}

ReweightScheme ReweightScheme::step_length() { return scheme_of_kind(SchemeKind::step_length); }

ReweightScheme ReweightScheme::max_length(int L) {
  ReweightScheme s;
  s.kind = SchemeKind::max_length;
  s.max_len = L;
  return s;
}

ReweightScheme ReweightScheme::stepping_max_length(int delta) {
  ReweightScheme s;
  s.kind = SchemeKind::stepping_max_length;
  s.step_delta = delta;
  return s;
}

AttentionInputs AttentionInputs::make(Tensor q, Tensor k, Tensor v, bool causal) {
  AttentionInputs in;
  in.q = std::move(q);
  in.k = std::move(k);
  in.v = std::move(v);
  in.causal = causal;
  in.scale = 1.0 / std::sqrt(static_cast<double>(in.q.extent(1)));
  in.validate();
  return in;
}

void AttentionInputs::validate() const {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw std::invalid_argument("AttentionInputs: Q, K, V must be rank-2");
  if (q.extent(1) != k.extent(1))
    throw std::invalid_argument("AttentionInputs: Q width " + shape_str(q.shape()) +
                                " vs K width " + shape_str(k.shape()));
  if (k.extent(0) != v.extent(0))
    throw std::invalid_argument("AttentionInputs: K rows " + shape_str(k.shape()) +
                                " vs V rows " + shape_str(v.shape()));
  if (causal && q.extent(0) != k.extent(0))
    throw std::invalid_argument("AttentionInputs: causal attention needs N1 == N2");
  if (!(scale > 0.0)) throw std::invalid_argument("AttentionInputs: scale must be positive");
}

Tensor softmax_attention(const AttentionInputs& in) {
  in.validate();
  Tensor scores = matmul(affine(in.q, in.scale, 0.0), transpose(in.k));
  return matmul(softmax_rows(scores, in.causal), in.v);
}

Tensor feature_map(const Tensor& x) { return relu(x); }

std::vector<double> oracle_score_matrix(const AttentionInputs& in, const ReweightScheme& scheme) {
  in.validate();
  if (scheme.kind == SchemeKind::softmax)
    throw std::invalid_argument("oracle_score_matrix: softmax has no re-weighted factorization");
  const int n1 = in.q.extent(0), n2 = in.k.extent(0), d = in.q.extent(1);
  const std::vector<double> phi_q = plain_relu(in.q.values());
  const std::vector<double> phi_k = plain_relu(in.k.values());
  std::vector<double> scores(static_cast<size_t>(n1) * n2, 0.0);

  if (scheme.kind == SchemeKind::rope) {
    if (d % 2 != 0) throw std::invalid_argument("rope requires an even feature width");
    const int pairs = d / 2;
    std::vector<double> inv_freq(pairs);
    for (int t = 0; t < pairs; ++t) inv_freq[t] = std::pow(scheme.rope_theta, -2.0 * t / d);
    for (int i = 0; i < n1; ++i) {
      const int jmax = in.causal ? i + 1 : n2;
      for (int j = 0; j < jmax; ++j) {
        double s = 0.0;
        for (int t = 0; t < pairs; ++t) {
          const double a = (j - i) * inv_freq[t];
          const double c = std::cos(a), sn = std::sin(a);
          const double k0 = phi_k[static_cast<size_t>(j) * d + 2 * t];
          const double k1 = phi_k[static_cast<size_t>(j) * d + 2 * t + 1];
          const double q0 = phi_q[static_cast<size_t>(i) * d + 2 * t];
          const double q1 = phi_q[static_cast<size_t>(i) * d + 2 * t + 1];
          s += q0 * (c * k0 - sn * k1) + q1 * (sn * k0 + c * k1);
        }
        scores[static_cast<size_t>(i) * n2 + j] = s;
      }
    }
    return scores;
  }

  std::vector<double> pq, pk;
  const bool reweighted = scheme.kind != SchemeKind::none;
  if (reweighted) {
    pq = oracle_proportions(scheme, true, in.q.values(), n1, d);
    pk = oracle_proportions(scheme, false, in.k.values(), n2, d);
  }
  for (int i = 0; i < n1; ++i) {
    const int jmax = in.causal ? i + 1 : n2;
    for (int j = 0; j < jmax; ++j) {
      double dot = 0.0;
      for (int p = 0; p < d; ++p)
        dot += phi_q[static_cast<size_t>(i) * d + p] * phi_k[static_cast<size_t>(j) * d + p];
      const double sigma = reweighted ? std::cos(kHalfPi * (pq[i] - pk[j])) : 1.0;
      scores[static_cast<size_t>(i) * n2 + j] = dot * sigma;
    }
  }
  return scores;
}

Tensor quadratic_reweighted_oracle(const AttentionInputs& in, const ReweightScheme& scheme,
                                   std::vector<std::uint8_t>* flags) {
  const std::vector<double> scores = oracle_score_matrix(in, scheme);
  const int n1 = in.q.extent(0), n2 = in.k.extent(0), e = in.v.extent(1);
  const auto& vv = in.v.values();
  std::vector<double> out(static_cast<size_t>(n1) * e, 0.0);
  if (flags) flags->assign(n1, 0);
  for (int i = 0; i < n1; ++i) {
    double z = 0.0;
    for (int j = 0; j < n2; ++j) z += scores[static_cast<size_t>(i) * n2 + j];
    if (z < kDenomFloor) {
      if (flags) (*flags)[i] = 1;
      continue;
    }
    double* orow = out.data() + static_cast<size_t>(i) * e;
    for (int j = 0; j < n2; ++j) {
      const double w = scores[static_cast<size_t>(i) * n2 + j] / z;
      if (w == 0.0) continue;
      const double* vrow = vv.data() + static_cast<size_t>(j) * e;
      for (int q = 0; q < e; ++q) orow[q] += w * vrow[q];
    }
  }
  return Tensor::from({n1, e}, std::move(out));
}

Tensor linear_attention(const AttentionInputs& in, const ReweightScheme& scheme,
                        std::vector<std::uint8_t>* flags) {
  in.validate();
  switch (scheme.kind) {
    case SchemeKind::softmax:
      throw std::invalid_argument("linear_attention: softmax is not a linear kernel");
    case SchemeKind::rope:
      return rope_linear_attention(in, scheme.rope_theta, flags);
    case SchemeKind::none:
      return linear_kernel_single(feature_map(in.q), feature_map(in.k), in.v, in.causal, flags);
    default:
      break;
  }
  Tensor phi_q = feature_map(in.q);
  Tensor phi_k = feature_map(in.k);
  auto [pq, pk] = scheme_proportions(scheme, in.q, in.k);
  auto [cq, sq] = cos_branch_factors(pq);
  auto [ck, sk] = cos_branch_factors(pk);
  Tensor num, den;
  accumulate_branch(scale_rows(phi_q, cq), scale_rows(phi_k, ck), in.v, in.causal, num, den);
  accumulate_branch(scale_rows(phi_q, sq), scale_rows(phi_k, sk), in.v, in.causal, num, den);
  return div_rows_floored(num, den, kDenomFloor, flags);
}

Tensor rope_linear_attention(const AttentionInputs& in, double theta_base,
                             std::vector<std::uint8_t>* flags) {
  in.validate();
  if (in.q.extent(1) % 2 != 0)
    throw std::invalid_argument("rope_linear_attention: feature width must be even");
  Tensor phi_q = rope_rotate(feature_map(in.q), theta_base);
  Tensor phi_k = rope_rotate(feature_map(in.k), theta_base);
  return linear_kernel_single(phi_q, phi_k, in.v, in.causal, flags);
}

AttentionBlockWeights AttentionBlockWeights::init(int d_model, std::mt19937_64& rng, bool trainable) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d_model));
  AttentionBlockWeights w;
  w.wq = uniform_tensor({d_model, d_model}, -s, s, rng, trainable);
  w.bq = Tensor::zeros({d_model}, trainable);
  w.wk = uniform_tensor({d_model, d_model}, -s, s, rng, trainable);
  w.bk = Tensor::zeros({d_model}, trainable);
  w.wv = uniform_tensor({d_model, d_model}, -s, s, rng, trainable);
  w.bv = Tensor::zeros({d_model}, trainable);
  w.wo = uniform_tensor({d_model, d_model}, -s, s, rng, trainable);
  w.bo = Tensor::zeros({d_model}, trainable);
  return w;
}

int64_t AttentionBlockWeights::param_count() const {
  return wq.size() + bq.size() + wk.size() + bk.size() + wv.size() + bv.size() + wo.size() + bo.size();
}

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionBlockWeights& w,
                            int heads, const ReweightScheme& scheme, bool causal) {
  const int d_model = x_q.extent(1);
  if (heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("multi_head_attention: heads " + std::to_string(heads) +
                                " must divide d_model " + std::to_string(d_model));
  if (scheme.per_head_leap &&
      (static_cast<int>(scheme.leap_q_heads.size()) != heads ||
       static_cast<int>(scheme.leap_k_heads.size()) != heads))
    throw std::invalid_argument("multi_head_attention: per-head LeaP needs one module pair per head");
  Tensor q = add_rowwise(matmul(x_q, w.wq), w.bq);
  Tensor k = add_rowwise(matmul(x_kv, w.wk), w.bk);
  Tensor v = add_rowwise(matmul(x_kv, w.wv), w.bv);
  const int dh = d_model / heads;
  std::vector<Tensor> parts;
  parts.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    AttentionInputs in = AttentionInputs::make(slice_cols(q, h * dh, (h + 1) * dh),
                                               slice_cols(k, h * dh, (h + 1) * dh),
                                               slice_cols(v, h * dh, (h + 1) * dh), causal);
    if (scheme.kind == SchemeKind::softmax) {
      parts.push_back(softmax_attention(in));
    } else if (scheme.per_head_leap && scheme.kind == SchemeKind::cos_leap) {
      ReweightScheme head_scheme = scheme;
      head_scheme.per_head_leap = false;
      head_scheme.leap_q = scheme.leap_q_heads[h];
      head_scheme.leap_k = scheme.leap_k_heads[h];
      parts.push_back(linear_attention(in, head_scheme));
    } else {
      parts.push_back(linear_attention(in, scheme));
    }
  }
  return add_rowwise(matmul(concat_cols(parts), w.wo), w.bo);
}

Tensor reweight_matrix_dump(const AttentionInputs& in, const ReweightScheme& scheme) {
  in.validate();
  const int n1 = in.q.extent(0), n2 = in.k.extent(0), d = in.q.extent(1);
  switch (scheme.kind) {
    case SchemeKind::softmax:
      throw std::invalid_argument("reweight_matrix_dump: softmax applies no re-weighting");
    case SchemeKind::rope:
      throw std::invalid_argument(
          "reweight_matrix_dump: the rotation re-weight is not a scalar per pair");
    case SchemeKind::none:
      return Tensor::full({n1, n2}, 1.0);
    default:
      break;
  }
  const std::vector<double> pq = oracle_proportions(scheme, true, in.q.values(), n1, d);
  const std::vector<double> pk = oracle_proportions(scheme, false, in.k.values(), n2, d);
  std::vector<double> sigma(static_cast<size_t>(n1) * n2);
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n2; ++j)
      sigma[static_cast<size_t>(i) * n2 + j] = std::cos(kHalfPi * (pq[i] - pk[j]));
  return Tensor::from({n1, n2}, std::move(sigma));
}

int64_t leap_module_param_count(int d, int f) {
  if (f < 1 || d % f != 0)
    throw std::invalid_argument("leap_module_param_count: factor must divide width");
  const int64_t dk = d / f;
  return static_cast<int64_t>(d) * dk + dk + dk + 1;
}

LeapOverhead leap_param_overhead(int d_model, int heads, int blocks, int f, int64_t base_params) {
  if (heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("leap_param_overhead: heads must divide d_model");
  if (base_params <= 0) throw std::invalid_argument("leap_param_overhead: base count must be positive");
  LeapOverhead o;
  o.count = 2 * blocks * leap_module_param_count(d_model / heads, f);
  o.fraction = static_cast<double>(o.count) / static_cast<double>(base_params);
  return o;
}

}  // namespace leapattn
