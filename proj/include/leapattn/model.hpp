#pragma once

#include "leapattn/attention.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace leapattn {

// Reserved token ids shared by every task and model head.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kPayloadBase = 3;

struct TransformerConfig {
  int d_model = 64;
  int heads = 2;
  int enc_layers = 2;
  int dec_layers = 0;
  int ffn_dim = 128;
  int vocab_size = 16;
  int max_positions = 512;
  int n_classes = 0;  // > 0 selects the encoder-only classifier head
  SchemeKind enc_self = SchemeKind::softmax;
  SchemeKind dec_self = SchemeKind::softmax;
  SchemeKind cross = SchemeKind::softmax;
  int leap_f = 4;
  double dropout = 0.1;
  bool enc_causal = false;  // unidirectional encoder, needed for streaming reads
  double rope_theta = 10000.0;

  void validate() const;
};

struct LayerNormWeights {
  Tensor gain, bias;
  static LayerNormWeights init(int d, bool trainable = true);
};

struct FfnWeights {
  Tensor w1, b1, w2, b2;
  static FfnWeights init(int d_model, int ffn_dim, std::mt19937_64& rng, bool trainable = true);
};

struct EncoderLayer {
  LayerNormWeights ln1;
  AttentionBlockWeights attn;
  ReweightScheme scheme;
  LayerNormWeights ln2;
  FfnWeights ffn;
};

struct DecoderLayer {
  LayerNormWeights ln1;
  AttentionBlockWeights self_attn;
  ReweightScheme self_scheme;
  LayerNormWeights ln2;  // present only with an encoder stack
  std::optional<AttentionBlockWeights> cross_attn;
  ReweightScheme cross_scheme;
  LayerNormWeights ln3;
  FfnWeights ffn;
};

/// Pre-norm transformer with sinusoidal absolute positions. Covers three
/// shapes: encoder-only classifier (n_classes > 0), decoder-only LM
/// (enc_layers == 0), and encoder-decoder with cross-attention.
struct Model {
  TransformerConfig cfg;
  Tensor tok_embed;  // vocab x d_model
  Tensor pos_table;  // max_positions x d_model, constant
  std::vector<EncoderLayer> enc;
  std::vector<DecoderLayer> dec;
  LayerNormWeights enc_ln;
  LayerNormWeights dec_ln;
  Tensor out_w, out_b;  // d_model x (vocab | n_classes)

  std::vector<Tensor> parameters() const;
  /// Name/tensor registry in a stable order (checkpoint layout).
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  int64_t param_count(bool include_leap = true) const;
  int64_t leap_param_census() const;
};

Model build_model(const TransformerConfig& cfg, std::mt19937_64& rng);

/// Encoder stack over a source token sequence; returns N x d_model.
Tensor encode(const Model& m, const std::vector<int>& src, bool training, std::mt19937_64& rng);

/// Decoder stack over a target prefix (teacher forcing); rows are logits for
/// the token after each prefix position. enc_out may be undefined for
/// decoder-only models.
Tensor decoder_logits(const Model& m, const Tensor& enc_out, const std::vector<int>& tgt_in,
                      bool training, std::mt19937_64& rng);

/// Classifier head: logits (1 x n_classes) from the leading CLS position.
Tensor classifier_logits(const Model& m, const std::vector<int>& src, bool training,
                         std::mt19937_64& rng);

/// Greedy autoregressive decode against an encoded source. Stops at EOS
/// (not included in the result) or max_len.
std::vector<int> greedy_decode(const Model& m, const Tensor& enc_out, int max_len);

}  // namespace leapattn
