#pragma once

// Deterministic synthetic classification tasks. Generation is a pure function
// of the spec; splits draw from disjoint named seed streams and labels are
// balanced by per-class quota.

#include <cstdint>
#include <string>
#include <vector>

#include "redlab/model.hpp"  // ConfigError

namespace redlab {

enum class TaskName { parity, majority, copy_first };

std::string to_string(TaskName t);
TaskName task_name_from(const std::string& s);

struct TaskSpec {
  TaskName name = TaskName::parity;
  int vocab_size = 4;
  int seq_len = 16;
  int n_classes = 2;
  int n_train = 4000;
  int n_valid = 1000;
  int n_test = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  int seq_len = 0;
  std::vector<int> tokens;  // flat n×seq_len
  std::vector<int> labels;
  int size() const { return static_cast<int>(labels.size()); }
  const int* row(int i) const { return tokens.data() + static_cast<std::int64_t>(i) * seq_len; }
};

struct TaskData {
  Dataset train, valid, test;
};

// Label rule applied to one sequence.
int task_label(TaskName name, const int* tokens, int seq_len, int n_classes);

TaskData generate(const TaskSpec& spec);

// Token CSV dump (one row per example, label last).
std::string dataset_csv(const Dataset& ds);

}  // namespace redlab
