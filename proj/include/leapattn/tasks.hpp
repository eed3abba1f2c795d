#pragma once

#include "leapattn/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace leapattn {

enum class TaskKind { copy, reverse, parity, char_lm, toy_translate };

std::string task_to_string(TaskKind kind);
TaskKind task_from_string(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  int min_len = 4;
  int max_len = 16;
  int vocab = 16;  // payload symbols; ids start at kPayloadBase
  std::uint64_t seed = 17;
  std::string text_path;  // char_lm corpus
  int chunk = 4;          // toy_translate reversal window

  void validate() const;
};

struct Sample {
  std::vector<int> src;
  std::vector<int> tgt;
  int label = 0;  // parity
};

/// Deterministic given spec.seed. copy/reverse/toy_translate fill src+tgt;
/// parity fills src+label; char_lm slices windows of the text file into
/// src with tgt the next-token shift.
std::vector<Sample> generate_task(const TaskSpec& spec, int n_samples);

/// Token ids a model needs for this task (payload plus reserved ids).
int model_vocab(const TaskSpec& spec);

std::string samples_to_jsonl(const std::vector<Sample>& samples);
std::vector<Sample> samples_from_jsonl(const std::string& text);

}  // namespace leapattn
