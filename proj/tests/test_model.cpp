#include "doctest.h"

#include "leapattn/checkpoint.hpp"
#include "leapattn/model.hpp"
#include "leapattn/tasks.hpp"
#include "leapattn/train.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

using namespace leapattn;

namespace {

TransformerConfig tiny_enc_dec(SchemeKind dec_self = SchemeKind::softmax) {
  TransformerConfig cfg;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ffn_dim = 32;
  cfg.vocab_size = 16;
  cfg.max_positions = 64;
  cfg.dec_self = dec_self;
  cfg.dropout = 0.0;
  return cfg;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  return worst;
}

// Plain-double transformer forward, written against no library code except
// the weight buffers, to pin the composite wiring of the real model.
namespace ref {

using Mat = std::vector<std::vector<double>>;

Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t k = 0; k < b.size(); ++k)
      for (size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

Mat from_tensor(const Tensor& t) {
  Mat out(t.extent(0), std::vector<double>(t.extent(1)));
  for (int i = 0; i < t.extent(0); ++i)
    for (int j = 0; j < t.extent(1); ++j) out[i][j] = t.at(i, j);
  return out;
}

std::vector<double> vec_of(const Tensor& t) { return t.values(); }

Mat add_bias(Mat x, const std::vector<double>& b) {
  for (auto& row : x)
    for (size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return x;
}

Mat layer_norm(const Mat& x, const std::vector<double>& gain, const std::vector<double>& bias) {
  Mat out = x;
  for (auto& row : out) {
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / row.size();
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= row.size();
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean) * inv * gain[j] + bias[j];
  }
  return out;
}

Mat softmax_attn(const Mat& q, const Mat& k, const Mat& v, bool causal, double scale) {
  const size_t n1 = q.size(), n2 = k.size();
  Mat out(n1, std::vector<double>(v[0].size(), 0.0));
  for (size_t i = 0; i < n1; ++i) {
    const size_t limit = causal ? i + 1 : n2;
    std::vector<double> scores(limit);
    double mx = -1e300;
    for (size_t j = 0; j < limit; ++j) {
      double s = 0.0;
      for (size_t t = 0; t < q[0].size(); ++t) s += q[i][t] * k[j][t];
      scores[j] = s * scale;
      mx = std::max(mx, scores[j]);
    }
    double z = 0.0;
    for (double& s : scores) {
      s = std::exp(s - mx);
      z += s;
    }
    for (size_t j = 0; j < limit; ++j)
      for (size_t t = 0; t < v[0].size(); ++t) out[i][t] += scores[j] / z * v[j][t];
  }
  return out;
}

Mat mha(const Mat& xq, const Mat& xkv, const AttentionBlockWeights& w, int heads, bool causal) {
  const Mat q = add_bias(matmul(xq, from_tensor(w.wq)), vec_of(w.bq));
  const Mat k = add_bias(matmul(xkv, from_tensor(w.wk)), vec_of(w.bk));
  const Mat v = add_bias(matmul(xkv, from_tensor(w.wv)), vec_of(w.bv));
  const int d = static_cast<int>(q[0].size());
  const int hd = d / heads;
  Mat concat(q.size(), std::vector<double>(d));
  for (int h = 0; h < heads; ++h) {
    auto take = [&](const Mat& m) {
      Mat out(m.size(), std::vector<double>(hd));
      for (size_t i = 0; i < m.size(); ++i)
        for (int j = 0; j < hd; ++j) out[i][j] = m[i][h * hd + j];
      return out;
    };
    const Mat head = softmax_attn(take(q), take(k), take(v), causal, 1.0 / std::sqrt(hd));
    for (size_t i = 0; i < head.size(); ++i)
      for (int j = 0; j < hd; ++j) concat[i][h * hd + j] = head[i][j];
  }
  return add_bias(matmul(concat, from_tensor(w.wo)), vec_of(w.bo));
}

Mat add(const Mat& a, const Mat& b) {
  Mat out = a;
  for (size_t i = 0; i < out.size(); ++i)
    for (size_t j = 0; j < out[0].size(); ++j) out[i][j] += b[i][j];
  return out;
}

Mat ffn(const Mat& x, const FfnWeights& w) {
  Mat h = add_bias(matmul(x, from_tensor(w.w1)), vec_of(w.b1));
  for (auto& row : h)
    for (double& v : row) v = std::max(0.0, v);
  return add_bias(matmul(h, from_tensor(w.w2)), vec_of(w.b2));
}

Mat embed_seq(const Model& m, const std::vector<int>& ids) {
  const int d = m.cfg.d_model;
  Mat x(ids.size(), std::vector<double>(d));
  const double s = std::sqrt(static_cast<double>(d));
  for (size_t i = 0; i < ids.size(); ++i)
    for (int j = 0; j < d; ++j)
      x[i][j] = m.tok_embed.at(ids[i], j) * s + m.pos_table.at(static_cast<int>(i), j);
  return x;
}

Mat forward_logits(const Model& m, const std::vector<int>& src, const std::vector<int>& tgt_in) {
  Mat enc = embed_seq(m, src);
  for (const auto& layer : m.enc) {
    enc = add(enc, mha(layer_norm(enc, vec_of(layer.ln1.gain), vec_of(layer.ln1.bias)),
                       layer_norm(enc, vec_of(layer.ln1.gain), vec_of(layer.ln1.bias)), layer.attn,
                       m.cfg.heads, false));
    enc = add(enc, ffn(layer_norm(enc, vec_of(layer.ln2.gain), vec_of(layer.ln2.bias)), layer.ffn));
  }
  enc = layer_norm(enc, vec_of(m.enc_ln.gain), vec_of(m.enc_ln.bias));

  Mat dec = embed_seq(m, tgt_in);
  for (const auto& layer : m.dec) {
    const Mat n1 = layer_norm(dec, vec_of(layer.ln1.gain), vec_of(layer.ln1.bias));
    dec = add(dec, mha(n1, n1, layer.self_attn, m.cfg.heads, true));
    const Mat n2 = layer_norm(dec, vec_of(layer.ln2.gain), vec_of(layer.ln2.bias));
    dec = add(dec, mha(n2, enc, *layer.cross_attn, m.cfg.heads, false));
    dec = add(dec, ffn(layer_norm(dec, vec_of(layer.ln3.gain), vec_of(layer.ln3.bias)), layer.ffn));
  }
  dec = layer_norm(dec, vec_of(m.dec_ln.gain), vec_of(m.dec_ln.bias));
  return add_bias(matmul(dec, from_tensor(m.out_w)), vec_of(m.out_b));
}

}  // namespace ref

}  // namespace

TEST_CASE("config validation rejects inconsistent shapes") {
  TransformerConfig cfg = tiny_enc_dec();
  CHECK_NOTHROW(cfg.validate());
  cfg.heads = 3;
  CHECK_THROWS(cfg.validate());  // heads must divide d_model
  cfg = tiny_enc_dec();
  cfg.dropout = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_enc_dec(SchemeKind::cos_leap);
  cfg.leap_f = 3;  // head width 8, f must divide it
  CHECK_THROWS(cfg.validate());
  cfg.leap_f = 4;
  CHECK_NOTHROW(cfg.validate());
  cfg = tiny_enc_dec();
  cfg.enc_layers = 0;
  cfg.n_classes = 2;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("all-softmax forward matches an independent plain-double reference") {
  std::mt19937_64 rng(123);
  Model m = build_model(tiny_enc_dec(), rng);
  const std::vector<int> src = {3, 7, 5, 4, 9};
  const std::vector<int> tgt_in = {kBosId, 3, 7, 5};
  std::mt19937_64 eval_rng(0);
  const Tensor got = decoder_logits(m, encode(m, src, false, eval_rng), tgt_in, false, eval_rng);
  const auto want = ref::forward_logits(m, src, tgt_in);
  double worst = 0.0;
  for (int i = 0; i < got.extent(0); ++i)
    for (int j = 0; j < got.extent(1); ++j)
      worst = std::max(worst, std::abs(got.at(i, j) - want[static_cast<size_t>(i)][j]));
  CHECK(worst <= 1e-9);
}

TEST_CASE("decoder rows ignore future target tokens") {
  for (SchemeKind kind : {SchemeKind::softmax, SchemeKind::cos_leap, SchemeKind::none}) {
    CAPTURE(scheme_to_string(kind));
    std::mt19937_64 rng(7);
    TransformerConfig cfg = tiny_enc_dec(kind);
    Model m = build_model(cfg, rng);
    std::mt19937_64 eval_rng(0);
    const std::vector<int> src = {4, 5, 6};
    Tensor enc_out = encode(m, src, false, eval_rng);
    std::vector<int> tgt_a = {kBosId, 3, 8, 6, 11};
    std::vector<int> tgt_b = tgt_a;
    tgt_b[3] = 12;  // mutate a future position
    tgt_b[4] = 5;
    const Tensor la = decoder_logits(m, enc_out, tgt_a, false, eval_rng);
    const Tensor lb = decoder_logits(m, enc_out, tgt_b, false, eval_rng);
    double worst = 0.0;
    for (int i = 0; i < 3; ++i)  // rows 0..2 see only the shared prefix
      for (int j = 0; j < la.extent(1); ++j)
        worst = std::max(worst, std::abs(la.at(i, j) - lb.at(i, j)));
    CHECK(worst <= 1e-12);
    CHECK(std::abs(la.at(3, 0) - lb.at(3, 0)) > 0.0);  // mutated row did change
  }
}

TEST_CASE("builds cover rope and fixed re-weight sites") {
  std::mt19937_64 rng(11);
  TransformerConfig cfg = tiny_enc_dec(SchemeKind::rope);
  cfg.enc_self = SchemeKind::cos_fixed;
  cfg.cross = SchemeKind::none;
  Model m = build_model(cfg, rng);
  std::mt19937_64 eval_rng(0);
  const Tensor logits =
      decoder_logits(m, encode(m, {3, 4, 5, 6}, false, eval_rng), {kBosId, 3, 4}, false, eval_rng);
  CHECK(logits.extent(0) == 3);
  CHECK(logits.extent(1) == cfg.vocab_size);
  for (int j = 0; j < logits.extent(1); ++j) CHECK(std::isfinite(logits.at(2, j)));
}

TEST_CASE("parameter registry: stable names, census matches the closed form") {
  std::mt19937_64 rng(3);
  TransformerConfig cfg = tiny_enc_dec(SchemeKind::cos_leap);
  cfg.cross = SchemeKind::cos_leap;
  Model m = build_model(cfg, rng);
  const auto named = m.named_parameters();
  CHECK(named.front().first == "tok_embed");
  CHECK(named.back().first == "out_b");
  // one leap pair on the decoder self site and one on the cross site
  const int head_dim = cfg.d_model / cfg.heads;
  const LeapOverhead ov =
      leap_param_overhead(cfg.d_model, cfg.heads, 2, cfg.leap_f, m.param_count(false));
  CHECK(m.leap_param_census() == ov.count);
  CHECK(m.param_count(true) - m.param_count(false) ==
        2 * 2 * leap_module_param_count(head_dim, cfg.leap_f));
  // no duplicate names
  std::set<std::string> seen;
  for (const auto& [name, t] : named) CHECK(seen.insert(name).second);
  // pos_table is constant and unregistered
  for (const auto& [name, t] : named) CHECK(name != "pos_table");
}

TEST_CASE("task generators produce the advertised structure") {
  TaskSpec spec;
  spec.kind = TaskKind::reverse;
  spec.min_len = 3;
  spec.max_len = 6;
  spec.vocab = 5;
  auto data = generate_task(spec, 40);
  REQUIRE(data.size() == 40);
  for (const Sample& s : data) {
    CHECK(s.src.size() >= 3);
    CHECK(s.src.size() <= 6);
    std::vector<int> rev(s.src.rbegin(), s.src.rend());
    CHECK(s.tgt == rev);
    for (int t : s.src) {
      CHECK(t >= kPayloadBase);
      CHECK(t < kPayloadBase + 5);
    }
  }

  spec.kind = TaskKind::toy_translate;
  spec.min_len = 6;
  spec.max_len = 6;
  spec.chunk = 4;
  const auto tr = generate_task(spec, 1);
  // chunked reversal: [a b c d | e f] -> [d c b a | f e]
  const auto& s = tr[0];
  CHECK(s.tgt[0] == s.src[3]);
  CHECK(s.tgt[3] == s.src[0]);
  CHECK(s.tgt[4] == s.src[5]);
  CHECK(s.tgt[5] == s.src[4]);

  spec.kind = TaskKind::parity;
  const auto par = generate_task(spec, 64);
  int ones_labels = 0;
  for (const Sample& p : par) {
    int ones = 0;
    for (int t : p.src) ones += t - kPayloadBase;
    CHECK(p.label == ones % 2);
    ones_labels += p.label;
  }
  CHECK(ones_labels > 8);  // both classes occur
  CHECK(ones_labels < 56);

  // determinism
  const auto again = generate_task(spec, 64);
  for (size_t i = 0; i < par.size(); ++i) {
    CHECK(par[i].src == again[i].src);
    CHECK(par[i].label == again[i].label);
  }
}

TEST_CASE("char_lm windows shift by one and reject a missing file") {
  TaskSpec spec;
  spec.kind = TaskKind::char_lm;
  spec.text_path = "";
  CHECK_THROWS(generate_task(spec, 1));

  const std::string path = (std::filesystem::temp_directory_path() / "lm_corpus.txt").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f);
    const std::string text = "the quick brown fox jumps over the lazy dog again and again";
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
  }
  spec.text_path = path;
  spec.max_len = 8;
  const auto data = generate_task(spec, 10);
  for (const Sample& s : data) {
    REQUIRE(s.src.size() == 8);
    REQUIRE(s.tgt.size() == 8);
    for (size_t i = 0; i + 1 < s.src.size(); ++i) CHECK(s.tgt[i] == s.src[i + 1]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("jsonl round-trips samples exactly") {
  TaskSpec spec;
  spec.kind = TaskKind::copy;
  const auto data = generate_task(spec, 5);
  const auto back = samples_from_jsonl(samples_to_jsonl(data));
  REQUIRE(back.size() == data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].src == data[i].src);
    CHECK(back[i].tgt == data[i].tgt);
  }
}

TEST_CASE("an untrained uniform-logit model scores perplexity == vocab") {
  std::mt19937_64 rng(5);
  TransformerConfig cfg = tiny_enc_dec();
  Model m = build_model(cfg, rng);
  // Zero the output head: logits identically zero, softmax exactly uniform.
  std::fill(m.out_w.leaf_values().begin(), m.out_w.leaf_values().end(), 0.0);
  std::fill(m.out_b.leaf_values().begin(), m.out_b.leaf_values().end(), 0.0);
  TaskSpec spec;
  spec.kind = TaskKind::copy;
  spec.vocab = cfg.vocab_size - kPayloadBase;
  const auto data = generate_task(spec, 6);
  const double ppl = evaluate(m, data, spec, EvalMetric::perplexity);
  CHECK(ppl == doctest::Approx(cfg.vocab_size).epsilon(1e-12));
}

TEST_CASE("training is deterministic and reduces loss on copy") {
  TaskSpec spec;
  spec.kind = TaskKind::copy;
  spec.min_len = 3;
  spec.max_len = 5;
  spec.vocab = 8;
  const auto data = generate_task(spec, 64);

  TransformerConfig cfg = tiny_enc_dec();
  cfg.vocab_size = model_vocab(spec);
  TrainConfig tc;
  tc.steps = 30;
  tc.warmup = 10;
  tc.lr = 3e-3;
  tc.batch = 4;

  auto run = [&]() {
    std::mt19937_64 rng(42);
    Model m = build_model(cfg, rng);
    return train(m, data, spec, tc);
  };
  const TrainResult a = run();
  const TrainResult b = run();
  REQUIRE(a.losses.size() == 30);
  CHECK_FALSE(a.diverged);
  CHECK(a.losses == b.losses);  // bit-identical reruns

  const double head = (a.losses[0] + a.losses[1] + a.losses[2]) / 3;
  const double tail = (a.losses[27] + a.losses[28] + a.losses[29]) / 3;
  CHECK(tail < head);
}

TEST_CASE("zero training steps leave the weights untouched") {
  TaskSpec spec;
  spec.kind = TaskKind::copy;
  const auto data = generate_task(spec, 8);
  TransformerConfig cfg = tiny_enc_dec();
  std::mt19937_64 rng(9);
  Model m = build_model(cfg, rng);
  const std::vector<double> before = m.tok_embed.values();
  TrainConfig tc;
  tc.steps = 0;
  const TrainResult r = train(m, data, spec, tc);
  CHECK(r.steps_run == 0);
  CHECK(m.tok_embed.values() == before);
}

TEST_CASE("an untrained classifier sits near chance on parity") {
  TaskSpec spec;
  spec.kind = TaskKind::parity;
  spec.min_len = 4;
  spec.max_len = 8;
  const auto data = generate_task(spec, 200);
  TransformerConfig cfg;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 0;
  cfg.ffn_dim = 32;
  cfg.vocab_size = model_vocab(spec);
  cfg.n_classes = 2;
  cfg.dropout = 0.0;
  std::mt19937_64 rng(13);
  Model m = build_model(cfg, rng);
  const double acc = evaluate(m, data, spec, EvalMetric::sequence_accuracy);
  CHECK(acc > 0.3);
  CHECK(acc < 0.7);
}

TEST_CASE("checkpoint round-trip restores weights and behaviour bit-exactly") {
  TaskSpec spec;
  spec.kind = TaskKind::copy;
  spec.vocab = 8;
  const auto data = generate_task(spec, 16);
  TransformerConfig cfg = tiny_enc_dec(SchemeKind::cos_leap);
  std::mt19937_64 rng(21);
  Model m = build_model(cfg, rng);
  TrainConfig tc;
  tc.steps = 5;
  tc.warmup = 2;
  train(m, data, spec, tc);

  const std::string base = (std::filesystem::temp_directory_path() / "ckpt_roundtrip").string();
  save_checkpoint(m, base);
  Model back = load_checkpoint(base);

  const auto na = m.named_parameters();
  const auto nb = back.named_parameters();
  REQUIRE(na.size() == nb.size());
  for (size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    CHECK(na[i].second.values() == nb[i].second.values());
  }
  std::mt19937_64 eval_rng(0);
  const std::vector<int> src = data[0].src;
  const Tensor la = decoder_logits(m, encode(m, src, false, eval_rng), {kBosId, src[0]}, false,
                                   eval_rng);
  const Tensor lb = decoder_logits(back, encode(back, src, false, eval_rng), {kBosId, src[0]},
                                   false, eval_rng);
  CHECK(max_abs_diff(la, lb) == 0.0);

  // a corrupted manifest shape is rejected
  {
    std::ifstream in(base + ".json");
    nlohmann::json manifest = nlohmann::json::parse(in);
    in.close();
    manifest["tensors"][0]["shape"] = {1, 1};
    std::ofstream out(base + ".json", std::ios::trunc);
    out << manifest.dump();
  }
  CHECK_THROWS(load_checkpoint(base));
  std::filesystem::remove(base + ".bin");
  std::filesystem::remove(base + ".json");
}

TEST_CASE("compare_schemes reports one row per variant with seed stats") {
  TaskSpec spec;
  spec.kind = TaskKind::copy;
  spec.min_len = 2;
  spec.max_len = 3;
  spec.vocab = 4;
  TransformerConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 1;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ffn_dim = 16;
  cfg.vocab_size = model_vocab(spec);
  cfg.dropout = 0.0;
  SchemeVariant a{"softmax", cfg};
  TransformerConfig cfg_b = cfg;
  cfg_b.dec_self = SchemeKind::none;
  SchemeVariant b{"none_dec", cfg_b};
  TrainConfig tc;
  tc.steps = 4;
  tc.warmup = 2;
  tc.batch = 2;
  const CompareReport rep = compare_schemes(spec, {a, b}, tc, {1, 2}, EvalMetric::token_accuracy,
                                            16, 8);
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.find("softmax") != nullptr);
  CHECK(rep.find("none_dec") != nullptr);
  CHECK(rep.find("missing") == nullptr);
  for (const CompareRow& row : rep.rows) {
    CHECK(row.per_seed.size() == 2);
    CHECK(row.mean >= 0.0);
    CHECK(row.mean <= 1.0);
    CHECK(row.stddev >= 0.0);
  }
  const std::string csv = rep.to_csv();
  CHECK(csv.rfind("scheme,metric,seed_mean,seed_std\n", 0) == 0);
  CHECK(csv.find("softmax,token_accuracy,") != std::string::npos);
}
