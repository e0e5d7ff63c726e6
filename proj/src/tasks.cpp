#include "redlab/tasks.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "redlab/rng.hpp"

namespace redlab {

std::string to_string(TaskName t) {
  switch (t) {
    case TaskName::parity: return "parity";
    case TaskName::majority: return "majority";
    case TaskName::copy_first: return "copy_first";
  }
  return "?";
}

TaskName task_name_from(const std::string& s) {
  if (s == "parity") return TaskName::parity;
  if (s == "majority") return TaskName::majority;
  if (s == "copy_first") return TaskName::copy_first;
  throw ConfigError("unknown task name: " + s);
}

void TaskSpec::validate() const {
  if (vocab_size < 2 || seq_len < 1 || n_classes < 2 || n_train < 1 || n_valid < 1 || n_test < 1)
    throw ConfigError("task: sizes out of range");
  switch (name) {
    case TaskName::parity:
      if (n_classes != 2) throw ConfigError("parity task requires n_classes == 2");
      break;
    case TaskName::majority:
      if (n_classes != vocab_size)
        throw ConfigError("majority task requires n_classes == vocab_size");
      break;
    case TaskName::copy_first:
      if (n_classes > vocab_size)
        throw ConfigError("copy_first task requires n_classes <= vocab_size");
      break;
  }
}

int task_label(TaskName name, const int* tokens, int seq_len, int n_classes) {
  switch (name) {
    case TaskName::parity: {
      int ones = 0;
      for (int i = 0; i < seq_len; ++i) ones += tokens[i] == 1;
      return ones % 2;
    }
    case TaskName::majority: {
      // most frequent token value; ties go to the smallest token
      std::vector<int> counts(n_classes, 0);
      for (int i = 0; i < seq_len; ++i) ++counts[tokens[i]];
      return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
    case TaskName::copy_first:
      return tokens[0] % n_classes;
  }
  throw ConfigError("bad task name");
}

namespace {

// Rejection-sample until each class quota is filled, then shuffle, so every
// split is balanced to within the integer remainder.
Dataset make_split(const TaskSpec& spec, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> quota(spec.n_classes, n / spec.n_classes);
  for (int c = 0; c < n % spec.n_classes; ++c) ++quota[c];
  Dataset ds;
  ds.seq_len = spec.seq_len;
  std::vector<int> row(spec.seq_len);
  int remaining = n;
  while (remaining > 0) {
    for (int& t : row) t = static_cast<int>(rng.next_below(spec.vocab_size));
    const int lab = task_label(spec.name, row.data(), spec.seq_len, spec.n_classes);
    if (quota[lab] == 0) continue;
    --quota[lab];
    --remaining;
    ds.tokens.insert(ds.tokens.end(), row.begin(), row.end());
    ds.labels.push_back(lab);
  }
  // Fisher-Yates over examples
  for (int i = ds.size() - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_below(i + 1));
    std::swap(ds.labels[i], ds.labels[j]);
    std::swap_ranges(ds.tokens.begin() + static_cast<std::int64_t>(i) * spec.seq_len,
                     ds.tokens.begin() + static_cast<std::int64_t>(i + 1) * spec.seq_len,
                     ds.tokens.begin() + static_cast<std::int64_t>(j) * spec.seq_len);
  }
  return ds;
}

}  // namespace

TaskData generate(const TaskSpec& spec) {
  spec.validate();
  TaskData data;
  data.train = make_split(spec, spec.n_train, derive_seed(spec.seed, "data-train"));
  data.valid = make_split(spec, spec.n_valid, derive_seed(spec.seed, "data-valid"));
  data.test = make_split(spec, spec.n_test, derive_seed(spec.seed, "data-test"));
  return data;
}

std::string dataset_csv(const Dataset& ds) {
  std::ostringstream os;
  for (int i = 0; i < ds.size(); ++i) {
    const int* row = ds.row(i);
    for (int j = 0; j < ds.seq_len; ++j) os << row[j] << ",";
    os << ds.labels[i] << "\n";
  }
  return os.str();
}

}  // namespace redlab
