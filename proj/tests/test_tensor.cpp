#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "redlab/rng.hpp"
#include "redlab/tensor.hpp"

using namespace redlab;

namespace {

// central finite differences against the analytic grad of a scalar-valued fn
template <class Fn>
void check_grads(std::vector<Tensor<double>> inputs, Fn fn, double tol = 1e-6) {
  for (auto& t : inputs) t.set_requires_grad(true);
  Tensor<double> loss = fn(inputs);
  backward(loss);
  for (auto& t : inputs) {
    REQUIRE(t.has_grad());
    for (std::int64_t j = 0; j < t.numel(); ++j) {
      const double orig = t.data()[j];
      const double h = 1e-6 * std::max(1.0, std::abs(orig));
      t.data()[j] = orig + h;
      const double up = fn(inputs).item();
      t.data()[j] = orig - h;
      const double down = fn(inputs).item();
      t.data()[j] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = t.grad()[j];
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-8});
      if (std::max(std::abs(an), std::abs(fd)) <= 1e-8) continue;
      CHECK(std::abs(an - fd) / denom <= tol);
    }
  }
}

Tensor<double> rand_tensor(std::vector<int> shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> data(numel_of(shape));
  for (double& v : data) v = rng.uniform(-1.0, 1.0);
  return Tensor<double>::from(std::move(shape), std::move(data));
}

}  // namespace

TEST_CASE("matmul values") {
  auto a = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<double>::from({2, 2}, {2, 3, 4, 5});
  CHECK(matmul(a, b).data() == std::vector<double>{2, 3, 4, 5});
  auto c = Tensor<double>::from({1, 2}, {1, 2});
  auto d = Tensor<double>::from({2, 1}, {3, 4});
  CHECK(matmul(c, d).data() == std::vector<double>{11});
  CHECK_THROWS_AS(matmul(a, c), TensorError);
}

TEST_CASE("matmul grads vs finite differences") {
  check_grads({rand_tensor({3, 4}, 1), rand_tensor({4, 2}, 2)},
              [](const std::vector<Tensor<double>>& in) {
                return sum_all(matmul(in[0], in[1]));
              });
}

TEST_CASE("matmul_nt matches transposed matmul") {
  auto a = rand_tensor({3, 4}, 3);
  auto bt = rand_tensor({2, 4}, 4);
  std::vector<double> b_data(8);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) b_data[j * 2 + i] = bt.data()[i * 4 + j];
  auto b = Tensor<double>::from({4, 2}, b_data);
  CHECK(matmul_nt(a, bt).data() == matmul(a, b).data());
  check_grads({rand_tensor({3, 4}, 5), rand_tensor({2, 4}, 6)},
              [](const std::vector<Tensor<double>>& in) {
                return sum_all(matmul_nt(in[0], in[1]));
              });
}

TEST_CASE("elementwise values and broadcast") {
  auto a = Tensor<double>::from({2}, {2, 3});
  auto b = Tensor<double>::from({2}, {4, 5});
  CHECK(mul(a, b).data() == std::vector<double>{8, 15});
  auto rows = Tensor<double>::from({2, 2}, {1, 1, 2, 2});
  auto vec = Tensor<double>::from({2}, {10, 20});
  CHECK(add(rows, vec).data() == std::vector<double>{11, 21, 12, 22});
  CHECK(sub(a, b).data() == std::vector<double>{-2, -2});
  CHECK_THROWS_AS(add(rows, Tensor<double>::from({3}, {1, 2, 3})), TensorError);
}

TEST_CASE("broadcast bias grad equals column sum of upstream grad") {
  auto x = rand_tensor({4, 3}, 7);
  auto bias = rand_tensor({3}, 8);
  bias.set_requires_grad(true);
  // loss = sum(x + bias) → d/d(bias) = column count (4 per column)
  backward(sum_all(add(x, bias)));
  CHECK(bias.grad() == std::vector<double>{4, 4, 4});
  bias.zero_grad();
  check_grads({rand_tensor({4, 3}, 9), rand_tensor({3}, 10)},
              [](const std::vector<Tensor<double>>& in) {
                return sum_all(mul(in[0], in[1]));
              });
}

TEST_CASE("scale relu gelu grads") {
  check_grads({rand_tensor({3, 3}, 11)}, [](const std::vector<Tensor<double>>& in) {
    return sum_all(scale(in[0], 2.5));
  });
  check_grads({rand_tensor({3, 3}, 12)}, [](const std::vector<Tensor<double>>& in) {
    return sum_all(gelu(in[0]));
  });
  auto x = Tensor<double>::from({4}, {-2, -0.5, 0.5, 2});
  CHECK(relu(x).data() == std::vector<double>{0, 0, 0.5, 2});
}

TEST_CASE("softmax rows") {
  auto x = Tensor<double>::from({1, 2}, {0, 0});
  auto y = softmax_rows(x);
  CHECK(y.data()[0] == doctest::Approx(0.5));
  CHECK(y.data()[1] == doctest::Approx(0.5));
  // stability under large offsets
  auto big = softmax_rows(Tensor<double>::from({1, 2}, {1000.0, 1000.0}));
  CHECK(big.data()[0] == doctest::Approx(0.5));
  check_grads({rand_tensor({3, 4}, 13)}, [](const std::vector<Tensor<double>>& in) {
    auto w = Tensor<double>::from({3, 4}, {1, 2, -1, 0.5, 0, 1, 2, -2, 1, 1, 0, 3});
    return sum_all(mul(softmax_rows(in[0]), w));
  });
}

TEST_CASE("layer norm rows") {
  auto c = layer_norm_rows(Tensor<double>::from({1, 4}, {5, 5, 5, 5}), 1e-5);
  for (double v : c.data()) CHECK(std::abs(v) < 1e-9);
  auto y = layer_norm_rows(rand_tensor({3, 8}, 14), 1e-5);
  for (int i = 0; i < 3; ++i) {
    double mean = 0;
    for (int j = 0; j < 8; ++j) mean += y.data()[i * 8 + j];
    CHECK(std::abs(mean / 8) < 1e-12);
  }
  check_grads({rand_tensor({3, 6}, 15)}, [](const std::vector<Tensor<double>>& in) {
    auto w = rand_tensor({3, 6}, 16);
    return sum_all(mul(layer_norm_rows(in[0], 1e-5), w));
  }, 1e-5);
}

TEST_CASE("cross entropy") {
  std::vector<int> labels{1, 0};
  auto logits = Tensor<double>::from({2, 2}, {0, 0, 0, 0});
  CHECK(cross_entropy_mean(logits, labels).item() == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(cross_entropy_mean(logits, std::vector<int>{2, 0}), TensorError);
  check_grads({rand_tensor({2, 5}, 17)}, [labels](const std::vector<Tensor<double>>& in) {
    return cross_entropy_mean(in[0], std::vector<int>{1, 3});
  }, 1e-5);
}

TEST_CASE("gather and mean pool") {
  auto table = Tensor<double>::from({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(gather_rows(table, {2, 0}).data() == std::vector<double>{5, 6, 1, 2});
  CHECK_THROWS_AS(gather_rows(table, {3}), TensorError);
  auto x = Tensor<double>::from({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(mean_pool_rows(x, 2).data() == std::vector<double>{2, 3, 6, 7});
  check_grads({rand_tensor({6, 3}, 18)}, [](const std::vector<Tensor<double>>& in) {
    auto w = rand_tensor({2, 3}, 19);
    return sum_all(mul(mean_pool_rows(in[0], 3), w));
  });
}

TEST_CASE("attention grads vs finite differences") {
  check_grads({rand_tensor({4, 4}, 20), rand_tensor({4, 4}, 21), rand_tensor({4, 4}, 22)},
              [](const std::vector<Tensor<double>>& in) {
                auto w = rand_tensor({4, 4}, 23);
                return sum_all(mul(multi_head_attention(in[0], in[1], in[2], 2, 2), w));
              },
              1e-5);
}

TEST_CASE("attention mask excludes padded keys") {
  auto q = rand_tensor({4, 2}, 24);
  auto k = rand_tensor({4, 2}, 25);
  auto v = rand_tensor({4, 2}, 26);
  // batch 1, seq 4, last position masked: output must not depend on v[3]
  auto out1 = multi_head_attention(q, k, v, 1, 1, {1, 1, 1, 0});
  auto v2 = Tensor<double>::from({4, 2}, v.data());
  v2.data()[6] += 100;
  v2.data()[7] -= 100;
  auto out2 = multi_head_attention(q, k, v2, 1, 1, {1, 1, 1, 0});
  CHECK(out1.data() == out2.data());
}

TEST_CASE("backward basics") {
  auto x = rand_tensor({2, 3}, 27);
  x.set_requires_grad(true);
  backward(sum_all(x));
  CHECK(x.grad() == std::vector<double>(6, 1.0));
  x.zero_grad();

  auto a = rand_tensor({4}, 28);
  auto b = rand_tensor({4}, 29);
  a.set_requires_grad(true);
  backward(sum_all(mul(a, b)));
  CHECK(a.grad() == b.data());

  CHECK_THROWS_AS(backward(x), TensorError);  // non-scalar loss
}

TEST_CASE("repeated backward accumulates additively on leaves") {
  auto x = Tensor<double>::from({2}, {3, 4});
  x.set_requires_grad(true);
  auto loss = sum_all(mul(x, x));  // d/dx = 2x
  backward(loss);
  CHECK(x.grad() == std::vector<double>{6, 8});
  backward(loss);
  CHECK(x.grad() == std::vector<double>{12, 16});
}

TEST_CASE("ops do not mutate inputs") {
  auto a = rand_tensor({3, 3}, 30);
  auto b = rand_tensor({3, 3}, 31);
  const auto a0 = a.data();
  const auto b0 = b.data();
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  backward(sum_all(gelu(matmul(add(a, b), b))));
  CHECK(a.data() == a0);
  CHECK(b.data() == b0);
}

TEST_CASE("determinism: identical inputs give bitwise-identical results") {
  auto run = [] {
    auto a = rand_tensor({4, 4}, 32);
    auto b = rand_tensor({4, 4}, 33);
    a.set_requires_grad(true);
    auto loss = sum_all(softmax_rows(matmul(gelu(a), b)));
    backward(loss);
    return std::pair{loss.item(), a.grad()};
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}
