#include "leapattn/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace leapattn {

namespace {


/// Mean-token cross-entropy of one sample under the task's head.
Tensor sample_loss(const Model& m, const Sample& s, const TaskSpec& task, bool training,
                   std::mt19937_64& rng) {
  switch (task.kind) {
    case TaskKind::copy:
    case TaskKind::reverse:
    case TaskKind::toy_translate: {
      Tensor enc_out = encode(m, s.src, training, rng);
      std::vector<int> tgt_in = {kBosId};
      tgt_in.insert(tgt_in.end(), s.tgt.begin(), s.tgt.end());
      std::vector<int> labels = s.tgt;
      labels.push_back(kEosId);
      return cross_entropy_mean(decoder_logits(m, enc_out, tgt_in, training, rng), labels);
    }
    case TaskKind::parity:
      return cross_entropy_mean(classifier_logits(m, s.src, training, rng), {s.label});
    case TaskKind::char_lm:
      return cross_entropy_mean(decoder_logits(m, Tensor(), s.src, training, rng), s.tgt);
  }
  throw std::logic_error("sample_loss: unreachable");
}

int argmax_row(const Tensor& logits, int row) {
  int best = 0;
  for (int j = 1; j < logits.extent(1); ++j)
    if (logits.at(row, j) > logits.at(row, best)) best = j;
  return best;
}

double global_grad_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

}  // namespace

void TrainConfig::validate() const {
  if (batch < 1 || steps < 0 || warmup < 0) throw std::invalid_argument("TrainConfig: bad budget");
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (eval_every < 0 || eval_samples < 1) throw std::invalid_argument("TrainConfig: bad eval plan");
}

TrainResult train(Model& m, const std::vector<Sample>& data, const TaskSpec& task,
                  const TrainConfig& tc, const std::vector<Sample>* dev) {
  tc.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");

  std::vector<Tensor> params = m.parameters();
  std::vector<std::vector<double>> adam_m(params.size()), adam_v(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    adam_m[i].assign(params[i].size(), 0.0);
    adam_v[i].assign(params[i].size(), 0.0);
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  std::mt19937_64 order_rng(tc.seed);
  std::mt19937_64 dropout_rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<size_t> pick(0, data.size() - 1);

  TrainResult result;
  for (int step = 1; step <= tc.steps; ++step) {
    for (Tensor& p : params) p.zero_grad();
    double step_loss = 0.0;
    bool bad = false;
    for (int b = 0; b < tc.batch; ++b) {
      const Sample& s = data[pick(order_rng)];
      Tensor loss = affine(sample_loss(m, s, task, true, dropout_rng), 1.0 / tc.batch, 0.0);
      const double v = loss.item();
      if (!std::isfinite(v)) {
        bad = true;
        break;
      }
      step_loss += v;
      backward(loss);
    }
    if (bad) {
      result.diverged = true;
      break;
    }
    result.losses.push_back(step_loss);
    result.steps_run = step;

    if (tc.clip > 0.0) {
      const double norm = global_grad_norm(params);
      if (norm > tc.clip) {
        const double scale = tc.clip / norm;
        for (Tensor& p : params) {
          if (!p.has_grad()) continue;
          for (double& g : p.mutable_grad()) g *= scale;
        }
      }
    }

    const double lr_t =
        step <= tc.warmup
            ? tc.lr * step / std::max(1, tc.warmup)
            : (tc.steps > tc.warmup
                   ? tc.lr * (tc.steps - step) / static_cast<double>(tc.steps - tc.warmup)
                   : 0.0);
    const double bc1 = 1.0 - std::pow(kBeta1, step);
    const double bc2 = 1.0 - std::pow(kBeta2, step);
    for (size_t i = 0; i < params.size(); ++i) {
      if (!params[i].has_grad()) continue;
      const std::vector<double>& g = params[i].grad();
      std::vector<double>& w = params[i].leaf_values();
      for (size_t j = 0; j < w.size(); ++j) {
        adam_m[i][j] = kBeta1 * adam_m[i][j] + (1.0 - kBeta1) * g[j];
        adam_v[i][j] = kBeta2 * adam_v[i][j] + (1.0 - kBeta2) * g[j] * g[j];
        w[j] -= lr_t * (adam_m[i][j] / bc1) / (std::sqrt(adam_v[i][j] / bc2) + kEps);
      }
    }

    if (dev && tc.eval_every > 0 && step % tc.eval_every == 0) {
      std::vector<Sample> probe(dev->begin(),
                                dev->begin() + std::min<size_t>(dev->size(), tc.eval_samples));
      const double acc = evaluate(m, probe, task, EvalMetric::sequence_accuracy);
      result.best_dev_acc = std::max(result.best_dev_acc, acc);
      if (tc.early_stop_acc >= 0.0 && acc >= tc.early_stop_acc) break;
    }
  }
  return result;
}

EvalMetric metric_from_string(const std::string& name) {
  if (name == "token_accuracy") return EvalMetric::token_accuracy;
  if (name == "sequence_accuracy") return EvalMetric::sequence_accuracy;
  if (name == "perplexity") return EvalMetric::perplexity;
  throw std::invalid_argument("unknown metric: " + name);
}

std::string metric_to_string(EvalMetric metric) {
  switch (metric) {
    case EvalMetric::token_accuracy: return "token_accuracy";
    case EvalMetric::sequence_accuracy: return "sequence_accuracy";
    case EvalMetric::perplexity: return "perplexity";
  }
  throw std::logic_error("metric_to_string: unreachable");
}

double evaluate(const Model& m, const std::vector<Sample>& data, const TaskSpec& task,
                EvalMetric metric) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::mt19937_64 rng(0);  // eval mode, never consulted

  if (metric == EvalMetric::perplexity) {
    double ce_sum = 0.0;
    int64_t tokens = 0;
    for (const Sample& s : data) {
      const Tensor loss = sample_loss(m, s, task, false, rng);
      const int n = task.kind == TaskKind::parity
                        ? 1
                        : static_cast<int>(task.kind == TaskKind::char_lm ? s.tgt.size()
                                                                          : s.tgt.size() + 1);
      ce_sum += loss.item() * n;
      tokens += n;
    }
    return std::exp(ce_sum / tokens);
  }

  int64_t hits = 0, total = 0;
  for (const Sample& s : data) {
    switch (task.kind) {
      case TaskKind::parity: {
        const Tensor logits = classifier_logits(m, s.src, false, rng);
        hits += argmax_row(logits, 0) == s.label;
        total += 1;
        break;
      }
      case TaskKind::char_lm: {
        const Tensor logits = decoder_logits(m, Tensor(), s.src, false, rng);
        if (metric == EvalMetric::token_accuracy) {
          for (size_t i = 0; i < s.tgt.size(); ++i)
            hits += argmax_row(logits, static_cast<int>(i)) == s.tgt[i];
          total += s.tgt.size();
        } else {
          bool all = true;
          for (size_t i = 0; i < s.tgt.size(); ++i)
            all = all && argmax_row(logits, static_cast<int>(i)) == s.tgt[i];
          hits += all;
          total += 1;
        }
        break;
      }
      default: {
        Tensor enc_out = encode(m, s.src, false, rng);
        if (metric == EvalMetric::token_accuracy) {
          std::vector<int> tgt_in = {kBosId};
          tgt_in.insert(tgt_in.end(), s.tgt.begin(), s.tgt.end());
          std::vector<int> labels = s.tgt;
          labels.push_back(kEosId);
          const Tensor logits = decoder_logits(m, enc_out, tgt_in, false, rng);
          for (size_t i = 0; i < labels.size(); ++i)
            hits += argmax_row(logits, static_cast<int>(i)) == labels[i];
          total += labels.size();
        } else {
          const int budget = static_cast<int>(s.tgt.size()) + 4;
          hits += greedy_decode(m, enc_out, budget) == s.tgt;
          total += 1;
        }
        break;
      }
    }
  }
  return static_cast<double>(hits) / total;
}

std::string CompareReport::to_csv() const {
  std::ostringstream out;
  out << "scheme,metric,seed_mean,seed_std\n";
  out.precision(9);
  for (const CompareRow& r : rows)
    out << r.label << ',' << metric << ',' << r.mean << ',' << r.stddev << '\n';
  return out.str();
}

const CompareRow* CompareReport::find(const std::string& label) const {
  for (const CompareRow& r : rows)
    if (r.label == label) return &r;
  return nullptr;
}

CompareReport compare_schemes(const TaskSpec& task, const std::vector<SchemeVariant>& variants,
                              const TrainConfig& tc, const std::vector<std::uint64_t>& seeds,
                              EvalMetric metric, int train_samples, int dev_samples) {
  if (variants.empty() || seeds.empty())
    throw std::invalid_argument("compare_schemes: nothing to compare");
  CompareReport report;
  report.metric = metric_to_string(metric);
  for (const SchemeVariant& variant : variants) {
    CompareRow row;
    row.label = variant.label;
    for (std::uint64_t seed : seeds) {
      TaskSpec seeded = task;
      seeded.seed = seed;
      const std::vector<Sample> train_data = generate_task(seeded, train_samples);
      seeded.seed = seed ^ 0x5bf03635ULL;
      const std::vector<Sample> dev_data = generate_task(seeded, dev_samples);
      std::mt19937_64 init_rng(seed);
      Model m = build_model(variant.cfg, init_rng);
      TrainConfig seeded_tc = tc;
      seeded_tc.seed = seed;
      train(m, train_data, task, seeded_tc);
      row.per_seed.push_back(evaluate(m, dev_data, task, metric));
    }
    double mean = 0.0;
    for (double v : row.per_seed) mean += v;
    mean /= row.per_seed.size();
    double var = 0.0;
    for (double v : row.per_seed) var += (v - mean) * (v - mean);
    row.mean = mean;
    row.stddev = row.per_seed.size() > 1 ? std::sqrt(var / (row.per_seed.size() - 1)) : 0.0;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace leapattn
