#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "redlab/tasks.hpp"

using namespace redlab;

TEST_CASE("label rules") {
  int parity_seq[] = {1, 0, 1, 1};
  CHECK(task_label(TaskName::parity, parity_seq, 4, 2) == 1);
  int even_seq[] = {1, 0, 1, 0};
  CHECK(task_label(TaskName::parity, even_seq, 4, 2) == 0);

  int maj[] = {2, 2, 3};
  CHECK(task_label(TaskName::majority, maj, 3, 4) == 2);
  int tie[] = {3, 1, 1, 3};  // tie → smallest token
  CHECK(task_label(TaskName::majority, tie, 4, 4) == 1);

  int cf[] = {5, 0, 0};
  CHECK(task_label(TaskName::copy_first, cf, 3, 4) == 1);  // 5 % 4
}

TEST_CASE("spec validation") {
  TaskSpec s;
  s.name = TaskName::parity;
  s.n_classes = 3;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = TaskSpec{};
  s.name = TaskName::majority;
  s.n_classes = 2;
  s.vocab_size = 4;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = TaskSpec{};
  s.name = TaskName::copy_first;
  s.n_classes = 8;
  s.vocab_size = 4;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("generation: labels consistent, balanced, deterministic, splits differ") {
  TaskSpec spec;
  spec.name = TaskName::parity;
  spec.seq_len = 10;
  spec.n_train = 1000;
  spec.n_valid = 400;
  spec.n_test = 400;
  spec.seed = 123;
  TaskData d1 = generate(spec);
  TaskData d2 = generate(spec);
  CHECK(d1.train.tokens == d2.train.tokens);
  CHECK(d1.train.labels == d2.train.labels);
  CHECK(d1.train.tokens != d1.valid.tokens);

  for (const Dataset* ds : {&d1.train, &d1.valid, &d1.test}) {
    int ones = 0;
    for (int i = 0; i < ds->size(); ++i) {
      CHECK(ds->labels[i] ==
            task_label(spec.name, ds->row(i), spec.seq_len, spec.n_classes));
      ones += ds->labels[i];
    }
    // balanced within 5%
    const double frac = static_cast<double>(ones) / ds->size();
    CHECK(std::abs(frac - 0.5) <= 0.05);
    for (int t : ds->tokens) {
      CHECK(t >= 0);
      CHECK(t < spec.vocab_size);
    }
  }
}

TEST_CASE("majority and copy_first splits are balanced per class") {
  TaskSpec spec;
  spec.name = TaskName::majority;
  spec.vocab_size = 4;
  spec.n_classes = 4;
  spec.seq_len = 9;
  spec.n_train = 800;
  spec.n_valid = 200;
  spec.n_test = 200;
  spec.seed = 5;
  TaskData d = generate(spec);
  std::vector<int> counts(4, 0);
  for (int lab : d.train.labels) ++counts[lab];
  for (int c : counts) CHECK(std::abs(c - 200) <= 1);
}

TEST_CASE("different seeds give different data") {
  TaskSpec a;
  a.seed = 1;
  TaskSpec b;
  b.seed = 2;
  a.n_train = b.n_train = 100;
  a.n_valid = b.n_valid = 50;
  a.n_test = b.n_test = 50;
  CHECK(generate(a).train.tokens != generate(b).train.tokens);
}

TEST_CASE("csv dump shape") {
  TaskSpec spec;
  spec.n_train = 4;
  spec.n_valid = 2;
  spec.n_test = 2;
  spec.seq_len = 3;
  TaskData d = generate(spec);
  const std::string csv = dataset_csv(d.train);
  int lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 4);
}
