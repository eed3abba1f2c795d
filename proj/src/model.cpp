#include "leapattn/model.hpp"

#include <cmath>
#include <stdexcept>

namespace leapattn {

namespace {

bool is_cos_leap(SchemeKind kind) { return kind == SchemeKind::cos_leap; }

ReweightScheme site_scheme(SchemeKind kind, int head_dim, int leap_f, double rope_theta,
                           int max_positions, std::mt19937_64& rng) {
  switch (kind) {
    case SchemeKind::softmax: return ReweightScheme::softmax();
    case SchemeKind::none: return ReweightScheme::none();
    case SchemeKind::cos_fixed: return ReweightScheme::cos_fixed();
    case SchemeKind::cos_leap:
      return ReweightScheme::cos_leap(LeapModule::init(head_dim, leap_f, rng),
                                      LeapModule::init(head_dim, leap_f, rng));
    case SchemeKind::rope: return ReweightScheme::rope(rope_theta);
    case SchemeKind::step_length: return ReweightScheme::step_length();
    case SchemeKind::stepping_max_length: return ReweightScheme::stepping_max_length(4);
    case SchemeKind::max_length: return ReweightScheme::max_length(max_positions);
  }
  throw std::logic_error("site_scheme: unreachable");
}

Tensor sinusoidal_positions(int max_positions, int d_model) {
  std::vector<double> table(static_cast<size_t>(max_positions) * d_model);
  for (int pos = 0; pos < max_positions; ++pos)
    for (int i = 0; i < d_model; ++i) {
      const double rate = std::pow(10000.0, -2.0 * (i / 2) / d_model);
      table[static_cast<size_t>(pos) * d_model + i] =
          (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  return Tensor::from({max_positions, d_model}, std::move(table));
}

// Embedding + scaled positions + dropout; rope stacks carry position inside
// the kernel instead of an additive table.
Tensor embed_tokens(const Model& m, const std::vector<int>& ids, bool add_positions, bool training,
                    std::mt19937_64& rng) {
  const int n = static_cast<int>(ids.size());
  if (n == 0) throw std::invalid_argument("embed_tokens: empty sequence");
  if (n > m.cfg.max_positions)
    throw std::invalid_argument("embed_tokens: sequence longer than max_positions");
  Tensor x = affine(embed(m.tok_embed, ids), std::sqrt(static_cast<double>(m.cfg.d_model)), 0.0);
  if (add_positions) x = add(x, slice_rows(m.pos_table, 0, n));
  return dropout(x, m.cfg.dropout, rng, training);
}

Tensor ffn_forward(const FfnWeights& w, const Tensor& x) {
  Tensor hidden = relu(add_rowwise(matmul(x, w.w1), w.b1));
  return add_rowwise(matmul(hidden, w.w2), w.b2);
}

Tensor run_encoder(const Model& m, Tensor x, bool training, std::mt19937_64& rng) {
  for (const auto& layer : m.enc) {
    Tensor normed = layer_norm_rows(x, layer.ln1.gain, layer.ln1.bias);
    Tensor attn_out =
        multi_head_attention(normed, normed, layer.attn, m.cfg.heads, layer.scheme, m.cfg.enc_causal);
    x = add(x, dropout(attn_out, m.cfg.dropout, rng, training));
    Tensor normed2 = layer_norm_rows(x, layer.ln2.gain, layer.ln2.bias);
    x = add(x, dropout(ffn_forward(layer.ffn, normed2), m.cfg.dropout, rng, training));
  }
  return layer_norm_rows(x, m.enc_ln.gain, m.enc_ln.bias);
}

void collect_leap(const ReweightScheme& s, const std::string& prefix,
                  std::vector<std::pair<std::string, Tensor>>& out) {
  auto push_module = [&](const std::optional<LeapModule>& mod, const std::string& side) {
    if (!mod) return;
    out.emplace_back(prefix + side + ".w1", mod->w1);
    out.emplace_back(prefix + side + ".b1", mod->b1);
    out.emplace_back(prefix + side + ".w2", mod->w2);
    out.emplace_back(prefix + side + ".b2", mod->b2);
  };
  push_module(s.leap_q, "leap_q");
  push_module(s.leap_k, "leap_k");
}

void collect_attn(const AttentionBlockWeights& w, const std::string& prefix,
                  std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + "wq", w.wq);
  out.emplace_back(prefix + "bq", w.bq);
  out.emplace_back(prefix + "wk", w.wk);
  out.emplace_back(prefix + "bk", w.bk);
  out.emplace_back(prefix + "wv", w.wv);
  out.emplace_back(prefix + "bv", w.bv);
  out.emplace_back(prefix + "wo", w.wo);
  out.emplace_back(prefix + "bo", w.bo);
}

void collect_ln(const LayerNormWeights& w, const std::string& prefix,
                std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + "gain", w.gain);
  out.emplace_back(prefix + "bias", w.bias);
}

void collect_ffn(const FfnWeights& w, const std::string& prefix,
                 std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + "w1", w.w1);
  out.emplace_back(prefix + "b1", w.b1);
  out.emplace_back(prefix + "w2", w.w2);
  out.emplace_back(prefix + "b2", w.b2);
}

}  // namespace

void TransformerConfig::validate() const {
  if (d_model < 2 || heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("TransformerConfig: heads must divide d_model");
  if (enc_layers < 0 || dec_layers < 0 || enc_layers + dec_layers == 0)
    throw std::invalid_argument("TransformerConfig: need at least one layer");
  if (ffn_dim < 1 || vocab_size < kPayloadBase + 1 || max_positions < 2)
    throw std::invalid_argument("TransformerConfig: bad dimensions");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("TransformerConfig: dropout must be in [0,1)");
  const int head_dim = d_model / heads;
  for (SchemeKind kind : {enc_self, dec_self, cross}) {
    if (is_cos_leap(kind) && (leap_f < 1 || head_dim % leap_f != 0))
      throw std::invalid_argument("TransformerConfig: leap_f must divide the head width");
    if (kind == SchemeKind::rope && head_dim % 2 != 0)
      throw std::invalid_argument("TransformerConfig: rope needs an even head width");
  }
  if (n_classes > 0 && enc_layers == 0)
    throw std::invalid_argument("TransformerConfig: classifier needs an encoder");
}

LayerNormWeights LayerNormWeights::init(int d, bool trainable) {
  LayerNormWeights w;
  w.gain = Tensor::full({d}, 1.0, trainable);
  w.bias = Tensor::zeros({d}, trainable);
  return w;
}

FfnWeights FfnWeights::init(int d_model, int ffn_dim, std::mt19937_64& rng, bool trainable) {
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d_model));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(ffn_dim));
  FfnWeights w;
  w.w1 = uniform_tensor({d_model, ffn_dim}, -s1, s1, rng, trainable);
  w.b1 = Tensor::zeros({ffn_dim}, trainable);
  w.w2 = uniform_tensor({ffn_dim, d_model}, -s2, s2, rng, trainable);
  w.b2 = Tensor::zeros({d_model}, trainable);
  return w;
}

Model build_model(const TransformerConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const int head_dim = cfg.d_model / cfg.heads;
  Model m;
  m.cfg = cfg;
  const double se = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  m.tok_embed = uniform_tensor({cfg.vocab_size, cfg.d_model}, -se, se, rng, true);
  m.pos_table = sinusoidal_positions(cfg.max_positions, cfg.d_model);
  for (int l = 0; l < cfg.enc_layers; ++l) {
    EncoderLayer layer;
    layer.ln1 = LayerNormWeights::init(cfg.d_model);
    layer.attn = AttentionBlockWeights::init(cfg.d_model, rng);
    layer.scheme = site_scheme(cfg.enc_self, head_dim, cfg.leap_f, cfg.rope_theta, cfg.max_positions, rng);
    layer.ln2 = LayerNormWeights::init(cfg.d_model);
    layer.ffn = FfnWeights::init(cfg.d_model, cfg.ffn_dim, rng);
    m.enc.push_back(std::move(layer));
  }
  for (int l = 0; l < cfg.dec_layers; ++l) {
    DecoderLayer layer;
    layer.ln1 = LayerNormWeights::init(cfg.d_model);
    layer.self_attn = AttentionBlockWeights::init(cfg.d_model, rng);
    layer.self_scheme = site_scheme(cfg.dec_self, head_dim, cfg.leap_f, cfg.rope_theta, cfg.max_positions, rng);
    if (cfg.enc_layers > 0) {
      layer.ln2 = LayerNormWeights::init(cfg.d_model);
      layer.cross_attn = AttentionBlockWeights::init(cfg.d_model, rng);
      layer.cross_scheme = site_scheme(cfg.cross, head_dim, cfg.leap_f, cfg.rope_theta, cfg.max_positions, rng);
    }
    layer.ln3 = LayerNormWeights::init(cfg.d_model);
    layer.ffn = FfnWeights::init(cfg.d_model, cfg.ffn_dim, rng);
    m.dec.push_back(std::move(layer));
  }
  if (cfg.enc_layers > 0) m.enc_ln = LayerNormWeights::init(cfg.d_model);
  if (cfg.dec_layers > 0) m.dec_ln = LayerNormWeights::init(cfg.d_model);
  const int out_dim = cfg.n_classes > 0 ? cfg.n_classes : cfg.vocab_size;
  m.out_w = uniform_tensor({cfg.d_model, out_dim}, -se, se, rng, true);
  m.out_b = Tensor::zeros({out_dim}, true);
  return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_embed", tok_embed);
  for (size_t l = 0; l < enc.size(); ++l) {
    const std::string p = "enc" + std::to_string(l) + ".";
    collect_ln(enc[l].ln1, p + "ln1.", out);
    collect_attn(enc[l].attn, p + "attn.", out);
    collect_leap(enc[l].scheme, p + "attn.", out);
    collect_ln(enc[l].ln2, p + "ln2.", out);
    collect_ffn(enc[l].ffn, p + "ffn.", out);
  }
  for (size_t l = 0; l < dec.size(); ++l) {
    const std::string p = "dec" + std::to_string(l) + ".";
    collect_ln(dec[l].ln1, p + "ln1.", out);
    collect_attn(dec[l].self_attn, p + "self.", out);
    collect_leap(dec[l].self_scheme, p + "self.", out);
    if (dec[l].cross_attn) {
      collect_ln(dec[l].ln2, p + "ln2.", out);
      collect_attn(*dec[l].cross_attn, p + "cross.", out);
      collect_leap(dec[l].cross_scheme, p + "cross.", out);
    }
    collect_ln(dec[l].ln3, p + "ln3.", out);
    collect_ffn(dec[l].ffn, p + "ffn.", out);
  }
  if (!enc.empty()) collect_ln(enc_ln, "enc_ln.", out);
  if (!dec.empty()) collect_ln(dec_ln, "dec_ln.", out);
  out.emplace_back("out_w", out_w);
  out.emplace_back("out_b", out_b);
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

int64_t Model::param_count(bool include_leap) const {
  int64_t total = 0;
  for (const auto& [name, t] : named_parameters()) {
    const bool is_leap = name.find("leap_") != std::string::npos;
    if (is_leap && !include_leap) continue;
    total += t.size();
  }
  return total;
}

int64_t Model::leap_param_census() const {
  return param_count(true) - param_count(false);
}

Tensor encode(const Model& m, const std::vector<int>& src, bool training, std::mt19937_64& rng) {
  if (m.enc.empty()) throw std::logic_error("encode: model has no encoder stack");
  Tensor x = embed_tokens(m, src, m.cfg.enc_self != SchemeKind::rope, training, rng);
  return run_encoder(m, x, training, rng);
}

Tensor decoder_logits(const Model& m, const Tensor& enc_out, const std::vector<int>& tgt_in,
                      bool training, std::mt19937_64& rng) {
  if (m.dec.empty()) throw std::logic_error("decoder_logits: model has no decoder stack");
  Tensor x = embed_tokens(m, tgt_in, m.cfg.dec_self != SchemeKind::rope, training, rng);
  for (const auto& layer : m.dec) {
    Tensor normed = layer_norm_rows(x, layer.ln1.gain, layer.ln1.bias);
    Tensor self_out =
        multi_head_attention(normed, normed, layer.self_attn, m.cfg.heads, layer.self_scheme, true);
    x = add(x, dropout(self_out, m.cfg.dropout, rng, training));
    if (layer.cross_attn) {
      if (!enc_out.defined())
        throw std::invalid_argument("decoder_logits: cross-attention needs encoder output");
      Tensor normed2 = layer_norm_rows(x, layer.ln2.gain, layer.ln2.bias);
      Tensor cross_out = multi_head_attention(normed2, enc_out, *layer.cross_attn, m.cfg.heads,
                                              layer.cross_scheme, false);
      x = add(x, dropout(cross_out, m.cfg.dropout, rng, training));
    }
    Tensor normed3 = layer_norm_rows(x, layer.ln3.gain, layer.ln3.bias);
    x = add(x, dropout(ffn_forward(layer.ffn, normed3), m.cfg.dropout, rng, training));
  }
  x = layer_norm_rows(x, m.dec_ln.gain, m.dec_ln.bias);
  return add_rowwise(matmul(x, m.out_w), m.out_b);
}

Tensor classifier_logits(const Model& m, const std::vector<int>& src, bool training,
                         std::mt19937_64& rng) {
  if (m.cfg.n_classes <= 0) throw std::logic_error("classifier_logits: model has no class head");
  std::vector<int> with_cls;
  with_cls.reserve(src.size() + 1);
  with_cls.push_back(kBosId);
  with_cls.insert(with_cls.end(), src.begin(), src.end());
  Tensor enc_out = encode(m, with_cls, training, rng);
  Tensor cls = slice_rows(enc_out, 0, 1);
  return add_rowwise(matmul(cls, m.out_w), m.out_b);
}

std::vector<int> greedy_decode(const Model& m, const Tensor& enc_out, int max_len) {
  std::mt19937_64 rng(0);  // eval mode, never consulted
  std::vector<int> prefix = {kBosId};
  std::vector<int> emitted;
  for (int step = 0; step < max_len; ++step) {
    Tensor logits = decoder_logits(m, enc_out, prefix, false, rng);
    const int n = logits.extent(0), v = logits.extent(1);
    int best = 0;
    for (int j = 1; j < v; ++j)
      if (logits.at(n - 1, j) > logits.at(n - 1, best)) best = j;
    if (best == kEosId) break;
    emitted.push_back(best);
    prefix.push_back(best);
  }
  return emitted;
}

}  // namespace leapattn
