#include "leapattn/verify.hpp"

#include "leapattn/attention.hpp"
#include "leapattn/metrics.hpp"
#include "leapattn/streaming.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

namespace leapattn {

namespace {

constexpr size_t kMaxMessages = 10;

struct Checker {
  SuiteResult result;

  void expect(bool ok, const std::string& message) {
    ++result.checks;
    if (ok) return;
    ++result.failures;
    if (result.messages.size() < kMaxMessages) result.messages.push_back(message);
  }
};

double rel_err(const Tensor& a, const Tensor& b) {
  double worst = 0.0, scale = 1.0;
  for (int64_t i = 0; i < b.size(); ++i) scale = std::max(scale, std::abs(b.values()[i]));
  for (int64_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  return worst / scale;
}

std::vector<double> row_of(const Tensor& t, int i) {
  std::vector<double> row(t.extent(1));
  for (int j = 0; j < t.extent(1); ++j) row[j] = t.at(i, j);
  return row;
}

ReweightScheme random_scheme(SchemeKind kind, int d, int n, std::mt19937_64& rng) {
  switch (kind) {
    case SchemeKind::cos_leap:
      return ReweightScheme::cos_leap(LeapModule::init(d, 2, rng), LeapModule::init(d, 2, rng));
    case SchemeKind::max_length:
      return ReweightScheme::max_length(n + 1 + static_cast<int>(rng() % 8));
    case SchemeKind::stepping_max_length:
      return ReweightScheme::stepping_max_length(1 + static_cast<int>(rng() % 5));
    case SchemeKind::rope:
      return ReweightScheme::rope();
    case SchemeKind::cos_fixed:
      return ReweightScheme::cos_fixed();
    case SchemeKind::step_length:
      return ReweightScheme::step_length();
    default:
      return ReweightScheme::none();
  }
}

double batch_proportion(const ReweightScheme& scheme, const Tensor& x, int j, int n) {
  switch (scheme.kind) {
    case SchemeKind::cos_fixed: return static_cast<double>(j + 1) / n;
    case SchemeKind::step_length: return 1.0;
    case SchemeKind::max_length: return static_cast<double>(j + 1) / scheme.max_len;
    case SchemeKind::stepping_max_length: {
      const int delta = scheme.step_delta;
      return static_cast<double>(j + 1) / (delta * ((j + delta) / delta));
    }
    case SchemeKind::cos_leap: {
      Tensor row = Tensor::from({1, x.extent(1)}, row_of(x, j));
      return leap_forward(*scheme.leap_k, row).at(0);
    }
    default: return 0.0;
  }
}

double timed(const std::function<void()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  body();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TransformerConfig verify_model_config() {
  TransformerConfig cfg;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ffn_dim = 32;
  cfg.vocab_size = 16;
  cfg.max_positions = 64;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

SuiteResult verify_equivalence(std::uint64_t seed) {
  Checker c;
  c.result.name = "equivalence";
  c.result.seconds = timed([&] {
    std::mt19937_64 rng(seed);
    const int d = 6, e = 5;
    for (SchemeKind kind : all_reweight_kinds()) {
      for (bool causal : {false, true}) {
        for (int n : {1, 2, 3, 7, 16, 33, 64}) {
          for (int inst = 0; inst < 20; ++inst) {
            ReweightScheme scheme = random_scheme(kind, d, n, rng);
            Tensor q = uniform_tensor({n, d}, -1.5, 1.5, rng);
            Tensor k = uniform_tensor({n, d}, -1.5, 1.5, rng);
            Tensor v = uniform_tensor({n, e}, -2.0, 2.0, rng);
            const AttentionInputs in = AttentionInputs::make(q, k, v, causal);
            std::vector<std::uint8_t> oracle_flags, linear_flags;
            const Tensor want = quadratic_reweighted_oracle(in, scheme, &oracle_flags);
            const Tensor got = linear_attention(in, scheme, &linear_flags);
            std::ostringstream where;
            where << scheme_to_string(kind) << (causal ? " causal" : " cross") << " n=" << n
                  << " inst=" << inst;
            c.expect(rel_err(got, want) <= 1e-6, "linear/oracle mismatch: " + where.str());
            c.expect(oracle_flags == linear_flags, "floor flag mismatch: " + where.str());
          }
        }
      }
    }
  });
  return c.result;
}

SuiteResult verify_gradients(std::uint64_t seed) {
  Checker c;
  c.result.name = "gradients";
  c.result.seconds = timed([&] {
    std::mt19937_64 rng(seed);
    constexpr double kTol = 1e-4;
    for (int inst = 0; inst < 5; ++inst) {
      const int n = 3 + inst, d = 4 + 2 * (inst % 2), e = 3 + inst % 3;
      // q and k are drawn strictly positive: they pass through relu, and a row
      // with a single live coordinate makes the normalized output of that row
      // scale-invariant, so its true derivative is exactly zero and the finite
      // difference is pure rounding noise over the 1e-8 floor.  Positive draws
      // also keep every coordinate away from the relu kink.
      Tensor q = uniform_tensor({n, d}, 0.1, 1.0, rng, true);
      Tensor k = uniform_tensor({n, d}, 0.1, 1.0, rng, true);
      Tensor v = uniform_tensor({n, e}, -1.0, 1.0, rng, true);
      // Fixed random weighting makes the scalar functional non-constant.
      Tensor w = uniform_tensor({n, e}, -1.0, 1.0, rng);
      const double scale = 1.0 / std::sqrt(static_cast<double>(d));
      const auto tag = [&](const char* family, const char* wrt) {
        std::ostringstream msg;
        msg << family << " d" << wrt << " inst=" << inst;
        return msg.str();
      };

      // softmax: query probes run non-causal; a causal first row is constant
      // in q and trips the finite-difference noise floor.
      c.expect(grad_check(
                   [&](const Tensor& t) {
                     AttentionInputs in{t, k, v, false, scale};
                     return sum_all(mul(softmax_attention(in), w));
                   },
                   q) <= kTol,
               tag("softmax", "q"));
      c.expect(grad_check(
                   [&](const Tensor& t) {
                     AttentionInputs in{q, t, v, true, scale};
                     return sum_all(mul(softmax_attention(in), w));
                   },
                   k) <= kTol,
               tag("softmax", "k"));

      ReweightScheme fixed = ReweightScheme::cos_fixed();
      c.expect(grad_check(
                   [&](const Tensor& t) {
                     AttentionInputs in{t, k, v, false, 1.0};
                     return sum_all(mul(linear_attention(in, fixed), w));
                   },
                   q) <= kTol,
               tag("cos_fixed", "q"));
      c.expect(grad_check(
                   [&](const Tensor& t) {
                     AttentionInputs in{q, k, t, true, 1.0};
                     return sum_all(mul(linear_attention(in, fixed), w));
                   },
                   v) <= kTol,
               tag("cos_fixed", "v"));

      ReweightScheme leap =
          ReweightScheme::cos_leap(LeapModule::init(d, 2, rng), LeapModule::init(d, 2, rng));
      c.expect(grad_check(
                   [&](const Tensor& t) {
                     AttentionInputs in{t, k, v, false, 1.0};
                     return sum_all(mul(linear_attention(in, leap), w));
                   },
                   q) <= kTol,
               tag("cos_leap", "q"));
      c.expect(grad_check(
                   [&](const Tensor& t) {
                     ReweightScheme probe = leap;
                     probe.leap_q->w1 = t;
                     AttentionInputs in{q, k, v, true, 1.0};
                     return sum_all(mul(linear_attention(in, probe), w));
                   },
                   leap.leap_q->w1) <= kTol,
               tag("cos_leap", "leap_q.w1"));
      c.expect(grad_check(
                   [&](const Tensor& t) {
                     ReweightScheme probe = leap;
                     probe.leap_k->w2 = t;
                     AttentionInputs in{q, k, v, true, 1.0};
                     return sum_all(mul(linear_attention(in, probe), w));
                   },
                   leap.leap_k->w2) <= kTol,
               tag("cos_leap", "leap_k.w2"));

      c.expect(grad_check(
                   [&](const Tensor& t) {
                     AttentionInputs in{t, k, v, false, 1.0};
                     return sum_all(mul(rope_linear_attention(in, 10000.0), w));
                   },
                   q) <= kTol,
               tag("rope", "q"));
      // Non-causal for the key probe as well: under causal masking the first
      // output row reduces to v[0] with the key contribution cancelled, so
      // k[0]'s true gradient is exactly zero.  Causal backward coverage stays
      // with the softmax key, cos_fixed value, and leap weight probes above.
      c.expect(grad_check(
                   [&](const Tensor& t) {
                     AttentionInputs in{q, t, v, false, 1.0};
                     return sum_all(mul(rope_linear_attention(in, 10000.0), w));
                   },
                   k) <= kTol,
               tag("rope", "k"));
    }
  });
  return c.result;
}

SuiteResult verify_streaming(std::uint64_t seed) {
  Checker c;
  c.result.name = "streaming";
  c.result.seconds = timed([&] {
    std::mt19937_64 rng(seed);

    // per-step decode vs batch causal rows, every scheme, N up to 64
    for (SchemeKind kind : all_reweight_kinds()) {
      for (int n : {1, 5, 64}) {
        ReweightScheme scheme = random_scheme(kind, 6, n, rng);
        Tensor q = uniform_tensor({n, 6}, -1.0, 1.0, rng);
        Tensor k = uniform_tensor({n, 6}, -1.0, 1.0, rng);
        Tensor v = uniform_tensor({n, 6}, -1.0, 1.0, rng);
        std::vector<std::uint8_t> flags;
        Tensor batch = linear_attention(AttentionInputs::make(q, k, v, true), scheme, &flags);
        DecodeState s = state_init(scheme, 6, 6);
        for (int t = 0; t < n; ++t) {
          state_append(s, row_of(k, t), row_of(v, t), batch_proportion(scheme, k, t, n));
          double pq;
          if (kind == SchemeKind::cos_leap) {
            Tensor qrow = Tensor::from({1, 6}, row_of(q, t));
            pq = leap_forward(*scheme.leap_q, qrow).at(0);
          } else {
            pq = batch_proportion(scheme, q, t, n);
          }
          bool floored = false;
          const std::vector<double> out = state_decode(s, row_of(q, t), pq, -1, &floored);
          double worst = 0.0;
          for (int col = 0; col < 6; ++col)
            worst = std::max(worst, std::abs(out[col] - batch.at(t, col)) /
                                        std::max(1.0, std::abs(batch.at(t, col))));
          std::ostringstream where;
          where << scheme_to_string(kind) << " n=" << n << " t=" << t;
          c.expect(worst <= 1e-6, "stream/batch mismatch: " + where.str());
          c.expect(floored == (flags[t] != 0), "stream floor flag mismatch: " + where.str());
        }
      }
    }

    // incremental cross-attention append equals one-shot batch encoding
    {
      const int frames = 12, d = 6;
      ReweightScheme scheme = ReweightScheme::cos_fixed();
      Tensor k = uniform_tensor({frames, d}, -1.0, 1.0, rng);
      Tensor v = uniform_tensor({frames, d}, -1.0, 1.0, rng);
      Tensor q = uniform_tensor({1, d}, -1.0, 1.0, rng);
      Tensor batch = linear_attention(AttentionInputs::make(q, k, v, false), scheme);

      DecodeState s = state_init(scheme, d, d);
      std::vector<std::vector<double>> k_rows, v_rows;
      std::vector<double> props;
      for (int t = 0; t < frames; ++t) {
        k_rows.push_back(row_of(k, t));
        v_rows.push_back(row_of(v, t));
        props.push_back(static_cast<double>(t + 1) / frames);
      }
      const int split = 5;
      cross_attention_stream_update(
          EncUpdateMode::unidirectional_append, s,
          {k_rows.begin(), k_rows.begin() + split}, {v_rows.begin(), v_rows.begin() + split},
          {props.begin(), props.begin() + split});
      cross_attention_stream_update(EncUpdateMode::unidirectional_append, s,
                                    {k_rows.begin() + split, k_rows.end()},
                                    {v_rows.begin() + split, v_rows.end()},
                                    {props.begin() + split, props.end()});
      const std::vector<double> out = state_decode(s, row_of(q, 0), 1.0);
      double worst = 0.0;
      for (int col = 0; col < d; ++col)
        worst = std::max(worst, std::abs(out[col] - batch.at(0, col)) /
                                    std::max(1.0, std::abs(batch.at(0, col))));
      c.expect(worst <= 1e-6, "cross append vs batch mismatch");
    }

    // unread-frame mutation safety and schedule soundness on real traces
    {
      Model m = build_model(verify_model_config(), rng);
      std::vector<int> src = {4, 9, 3, 7, 5, 6, 8};
      const WaitKSchedule sched(1, 1);
      const SimulatedDecode a = simulate_simultaneous(m, src, sched);
      c.expect(trace_satisfies_schedule(a.trace, sched, static_cast<int>(src.size())),
               "trace violates wait-k schedule");
      std::vector<int> mutated = src;
      mutated.back() = 12;
      const SimulatedDecode b = simulate_simultaneous(m, mutated, sched);
      auto prefix_tokens = [](const StreamTrace& trace, size_t limit) {
        std::vector<int> out;
        for (const StreamAction& act : trace.actions)
          if (act.kind == StreamAction::Kind::write && out.size() < limit)
            out.push_back(*act.token);
        return out;
      };
      // frame 7 is unread until the 7th write under k=1, r=1
      c.expect(prefix_tokens(a.trace, 6) == prefix_tokens(b.trace, 6),
               "unread frame changed an emitted token");
    }
  });
  return c.result;
}

SuiteResult verify_metrics(const std::string& fixture_csv, std::uint64_t seed) {
  Checker c;
  c.result.name = "metrics";
  c.result.seconds = timed([&] {
    // fixture reproduction
    try {
      const auto records = parse_mechanism_csv(fixture_csv);
      const auto rows = rcp_report(records, "softmax");
      std::map<std::string, double> got;
      for (const RcpRow& r : rows) got[r.scheme] = r.rcp_value;
      const std::map<std::string, double> printed = {
          {"leapformer_1.5", 5.20}, {"leapformer_0.2", 4.90}, {"linear_relu", 4.09},
          {"cosformer", 3.59},      {"rope", 3.41},           {"performer", 2.69},
          {"reformer", 2.62},       {"skyformer", 2.10},      {"bigbird", 1.52},
          {"linformer", 1.44}};
      for (const auto& [scheme, expected] : printed) {
        const bool present = got.count(scheme) != 0;
        c.expect(present, "fixture row missing: " + scheme);
        if (present)
          c.expect(std::abs(got[scheme] - expected) <= 0.02,
                   "composite score off for " + scheme + ": got " + std::to_string(got[scheme]));
      }
      c.expect(got.count("softmax") && std::abs(got["softmax"] - 1.0) <= 1e-12,
               "baseline row should score exactly 1");
    } catch (const std::exception& ex) {
      c.expect(false, std::string("fixture processing failed: ") + ex.what());
    }

    // algebraic property grid
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(0.5, 20.0);
    std::uniform_real_distribution<double> acc(50.0, 70.0);
    int drawn = 0;
    while (drawn < 1000) {
      RcpInputs in;
      in.ef_thrpt = pos(rng);
      in.sft_thrpt = pos(rng);
      in.ef_acc = acc(rng);
      in.sft_acc = acc(rng);
      in.std_bench = pos(rng);
      in.ef_mem = pos(rng);
      in.sft_mem = pos(rng);
      if (1.0 + (in.sft_acc - in.ef_acc - 0.5) / in.std_bench <= 0.05) continue;
      ++drawn;
      const double base = rcp(in);

      RcpInputs scaled = in;
      const double factor = pos(rng);
      scaled.ef_thrpt *= factor;
      scaled.sft_thrpt *= factor;
      c.expect(std::abs(rcp(scaled) - base) <= 1e-12 * std::max(1.0, std::abs(base)),
               "rcp not scale invariant");

      RcpInputs faster = in;
      faster.ef_thrpt *= 1.25;
      c.expect(rcp(faster) > base, "rcp not increasing in throughput");

      RcpInputs better = in;
      better.ef_acc += 0.5;
      c.expect(rcp(better) > base, "rcp not increasing in accuracy");

      RcpInputs mem = in;
      mem.sft_mem = 1.0;
      mem.ef_mem = in.sft_thrpt / in.ef_thrpt;
      c.expect(std::abs(rcp_mem(mem) - base) <= 1e-12 * std::max(1.0, std::abs(base)),
               "rcp_mem does not reduce to rcp under equal ratios");
    }

    RcpInputs synth;
    synth.ef_thrpt = 4.0;
    synth.sft_thrpt = 1.0;
    synth.ef_acc = synth.sft_acc = 60.0;
    synth.std_bench = 2.0;
    synth.ef_mem = 1.0;
    synth.sft_mem = 2.0;
    c.expect(std::abs(rcp_mem(synth) - 3.0) <= 1e-12, "rcp_mem blend identity failed");
    c.expect(std::abs(sample_std({0.0, 2.0}) - std::sqrt(2.0)) <= 1e-12, "sample_std anchor");
  });
  return c.result;
}

std::string suites_to_json(const std::vector<SuiteResult>& suites, std::uint64_t seed) {
  nlohmann::json out;
  out["seed"] = seed;
  bool all_ok = true;
  out["suites"] = nlohmann::json::array();
  for (const SuiteResult& s : suites) {
    all_ok = all_ok && s.ok();
    out["suites"].push_back({{"name", s.name},
                             {"checks", s.checks},
                             {"failures", s.failures},
                             {"seconds", s.seconds},
                             {"ok", s.ok()},
                             {"messages", s.messages}});
  }
  out["ok"] = all_ok;
  return out.dump(2) + "\n";
}

}  // namespace leapattn
