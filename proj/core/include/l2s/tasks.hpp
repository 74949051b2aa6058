#pragma once

#include <cstdint>
#include <string>

#include "l2s/dataset.hpp"

namespace l2s {

enum class TaskKind { reversal_translation, keyed_substitution_translation, extract_summarize };

std::string task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& s);

// Deterministic synthetic sequence tasks. reversal_translation reverses the
// prompt body; keyed_substitution additionally maps every symbol through a
// fixed seeded bijection, so the mapping must be learned rather than copied;
// extract_summarize interleaves a payload with noise spans and asks for the
// payload back at a compression ratio of at least `noise_factor` + 1.
struct TaskSpec {
  TaskKind kind = TaskKind::reversal_translation;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  int min_len = 4;
  int max_len = 8;
  int noise_factor = 2;  // extract_summarize: noise symbols per payload symbol
  uint64_t seed = 0;
  int train_size = 256;
  int test_size = 64;
};

struct TaskData {
  Dataset train;
  Dataset test;
};

// Train and test splits are disjoint by prompt string; the same spec always
// regenerates byte-identical data.
TaskData generate_task(const TaskSpec& spec);

// Prefix carried by every prompt of the task.
std::string task_prefix(TaskKind kind);

}  // namespace l2s
