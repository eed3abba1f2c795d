#include "leapattn/tasks.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace leapattn {

namespace {

std::vector<int> random_payload(int len, int vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> tok(kPayloadBase, kPayloadBase + vocab - 1);
  std::vector<int> out(len);
  for (int& t : out) t = tok(rng);
  return out;
}

std::vector<int> chunk_reverse(const std::vector<int>& src, int chunk) {
  std::vector<int> out = src;
  for (size_t start = 0; start < out.size(); start += chunk) {
    const size_t end = std::min(start + chunk, out.size());
    std::reverse(out.begin() + start, out.begin() + end);
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("char_lm: cannot open text file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

std::string task_to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::parity: return "parity";
    case TaskKind::char_lm: return "char_lm";
    case TaskKind::toy_translate: return "toy_translate";
  }
  throw std::logic_error("task_to_string: unreachable");
}

TaskKind task_from_string(const std::string& name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "reverse") return TaskKind::reverse;
  if (name == "parity") return TaskKind::parity;
  if (name == "char_lm") return TaskKind::char_lm;
  if (name == "toy_translate") return TaskKind::toy_translate;
  throw std::invalid_argument("unknown task: " + name);
}

void TaskSpec::validate() const {
  if (min_len < 1 || max_len < min_len) throw std::invalid_argument("TaskSpec: bad length range");
  if (vocab < 1) throw std::invalid_argument("TaskSpec: vocab must be positive");
  if (chunk < 1) throw std::invalid_argument("TaskSpec: chunk must be positive");
  if (kind == TaskKind::char_lm && text_path.empty())
    throw std::invalid_argument("TaskSpec: char_lm requires text_path");
}

int model_vocab(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::parity: return kPayloadBase + 2;
    case TaskKind::char_lm: return kPayloadBase + 256;
    default: return kPayloadBase + spec.vocab;
  }
}

std::vector<Sample> generate_task(const TaskSpec& spec, int n_samples) {
  spec.validate();
  if (n_samples < 0) throw std::invalid_argument("generate_task: negative count");
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> len_dist(spec.min_len, spec.max_len);
  std::vector<Sample> out;
  out.reserve(n_samples);

  if (spec.kind == TaskKind::char_lm) {
    const std::string text = read_text_file(spec.text_path);
    if (static_cast<int>(text.size()) < spec.max_len + 1)
      throw std::runtime_error("char_lm: text shorter than one window");
    std::uniform_int_distribution<size_t> start_dist(0, text.size() - spec.max_len - 1);
    for (int s = 0; s < n_samples; ++s) {
      const size_t start = start_dist(rng);
      Sample smp;
      smp.src.resize(spec.max_len);
      smp.tgt.resize(spec.max_len);
      for (int i = 0; i < spec.max_len; ++i) {
        smp.src[i] = kPayloadBase + static_cast<unsigned char>(text[start + i]);
        smp.tgt[i] = kPayloadBase + static_cast<unsigned char>(text[start + i + 1]);
      }
      out.push_back(std::move(smp));
    }
    return out;
  }

  for (int s = 0; s < n_samples; ++s) {
    const int len = len_dist(rng);
    Sample smp;
    switch (spec.kind) {
      case TaskKind::copy:
        smp.src = random_payload(len, spec.vocab, rng);
        smp.tgt = smp.src;
        break;
      case TaskKind::reverse:
        smp.src = random_payload(len, spec.vocab, rng);
        smp.tgt.assign(smp.src.rbegin(), smp.src.rend());
        break;
      case TaskKind::parity: {
        smp.src = random_payload(len, 2, rng);
        int ones = 0;
        for (int t : smp.src) ones += (t - kPayloadBase);
        smp.label = ones % 2;
        break;
      }
      case TaskKind::toy_translate:
        smp.src = random_payload(len, spec.vocab, rng);
        smp.tgt = chunk_reverse(smp.src, spec.chunk);
        break;
      case TaskKind::char_lm: break;  // handled above
    }
    out.push_back(std::move(smp));
  }
  return out;
}

std::string samples_to_jsonl(const std::vector<Sample>& samples) {
  std::string out;
  for (const Sample& s : samples) {
    nlohmann::json j;
    j["src"] = s.src;
    j["tgt"] = s.tgt;
    if (s.tgt.empty()) j["label"] = s.label;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Sample> samples_from_jsonl(const std::string& text) {
  std::vector<Sample> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Sample s;
    s.src = j.at("src").get<std::vector<int>>();
    s.tgt = j.at("tgt").get<std::vector<int>>();
    if (j.contains("label")) s.label = j.at("label").get<int>();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace leapattn
