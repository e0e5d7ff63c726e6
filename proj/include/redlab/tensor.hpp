#pragma once

// Dense row-major tensors with reverse-mode autodiff. The graph is rebuilt on
// every forward pass; nodes carry a creation index and backward replays them
// in reverse creation order, once each. Ops never mutate their inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace redlab {

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline std::int64_t numel_of(const std::vector<int>& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw TensorError("non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

namespace detail {

inline std::uint64_t next_node_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

template <class T>
struct Node {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated on first use
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// C (+)= op(A)·op(B); only the three transpose combinations backward needs.
template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::int64_t>(m) * n, T(0));
  if (!trans_a && !trans_b) {  // A m×k, B k×n
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        const T aip = a[static_cast<std::int64_t>(i) * k + p];
        const T* brow = b + static_cast<std::int64_t>(p) * n;
        T* crow = c + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
  } else if (!trans_a && trans_b) {  // A m×k, B n×k
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const T* arow = a + static_cast<std::int64_t>(i) * k;
        const T* brow = b + static_cast<std::int64_t>(j) * k;
        T acc = 0;
        for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c[static_cast<std::int64_t>(i) * n + j] += acc;
      }
  } else if (trans_a && !trans_b) {  // A k×m, B k×n
    for (int p = 0; p < k; ++p)
      for (int i = 0; i < m; ++i) {
        const T api = a[static_cast<std::int64_t>(p) * m + i];
        const T* brow = b + static_cast<std::int64_t>(p) * n;
        T* crow = c + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += api * brow[j];
      }
  } else {
    throw TensorError("gemm: double transpose not supported");
  }
}

}  // namespace detail

template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(std::vector<int> shape, T value, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node<T>>();
    n->data.assign(numel_of(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    n->id = detail::next_node_id();
    return Tensor(std::move(n));
  }

  static Tensor from(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
    if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
      throw TensorError("data length " + std::to_string(data.size()) + " does not match shape " +
                        shape_str(shape));
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    n->id = detail::next_node_id();
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }
  int rows() const { return node_->shape.at(0); }
  int cols() const { return node_->shape.size() > 1 ? node_->shape[1] : 1; }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<T>& grad() { return node_->ensure_grad(); }
  const std::vector<T>& grad_view() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw TensorError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
  }

  std::shared_ptr<detail::Node<T>> node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node<T>> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

template <class T, class... Parents>
Tensor<T> make_op(std::vector<int> shape, std::vector<T> data, std::function<void()> backward_fn,
                  const Parents&... parents) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = (parents.node()->requires_grad || ...);
  n->id = next_node_id();
  if (n->requires_grad) {
    (n->parents.push_back(parents.node()), ...);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------- matmul

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw TensorError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(static_cast<std::int64_t>(m) * n);
  detail::gemm<T>(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto an = a.node();
  auto bn = b.node();
  Tensor<T> result = detail::make_op<T>(
      {m, n}, std::move(out), nullptr, a, b);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [an, bn, rn, m, k, n] {
      const T* g = rn->grad.data();
      if (an->requires_grad)
        detail::gemm<T>(false, true, m, k, n, g, bn->data.data(), an->ensure_grad().data(), true);
      if (bn->requires_grad)
        detail::gemm<T>(true, false, k, n, m, an->data.data(), g, bn->ensure_grad().data(), true);
    };
  }
  return result;
}

// a·bᵀ; b given row-major n×k
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1])
    throw TensorError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  std::vector<T> out(static_cast<std::int64_t>(m) * n);
  detail::gemm<T>(false, true, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto an = a.node();
  auto bn = b.node();
  Tensor<T> result = detail::make_op<T>({m, n}, std::move(out), nullptr, a, b);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [an, bn, rn, m, k, n] {
      const T* g = rn->grad.data();
      if (an->requires_grad)
        detail::gemm<T>(false, false, m, k, n, g, bn->data.data(), an->ensure_grad().data(), true);
      if (bn->requires_grad)
        detail::gemm<T>(true, false, n, k, m, g, an->data.data(), bn->ensure_grad().data(), true);
    };
  }
  return result;
}

// ---------------------------------------------------------------- elementwise

enum class EwOp { add, sub, mul };

// Shapes must match, or b may be a 1-D vector broadcast over a's trailing
// dimension (the edit-vector pattern).
template <class T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  const int c = a.shape().back();
  const bool bcast = !same && b.shape().size() == 1 && b.shape()[0] == c;
  if (!same && !bcast)
    throw TensorError("elementwise: shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()) + " are neither equal nor trailing-broadcastable");
  const std::int64_t n = a.numel();
  const std::int64_t rows = n / c;
  std::vector<T> out(n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    const T bv = same ? pb[i] : pb[i % c];
    switch (op) {
      case EwOp::add: out[i] = pa[i] + bv; break;
      case EwOp::sub: out[i] = pa[i] - bv; break;
      case EwOp::mul: out[i] = pa[i] * bv; break;
    }
  }
  auto an = a.node();
  auto bn = b.node();
  Tensor<T> result = detail::make_op<T>(a.shape(), std::move(out), nullptr, a, b);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [an, bn, rn, op, same, n, c, rows] {
      const T* g = rn->grad.data();
      if (an->requires_grad) {
        T* ga = an->ensure_grad().data();
        const T* pb2 = bn->data.data();
        for (std::int64_t i = 0; i < n; ++i) {
          const T bv = same ? pb2[i] : pb2[i % c];
          ga[i] += op == EwOp::mul ? g[i] * bv : g[i];
        }
      }
      if (bn->requires_grad) {
        T* gb = bn->ensure_grad().data();
        const T* pa2 = an->data.data();
        const T sign = op == EwOp::sub ? T(-1) : T(1);
        for (std::int64_t i = 0; i < n; ++i) {
          const std::int64_t bi = same ? i : i % c;
          gb[bi] += op == EwOp::mul ? g[i] * pa2[i] : sign * g[i];
        }
        (void)rows;
      }
    };
  }
  return result;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::add, a, b); }
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::sub, a, b); }
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::mul, a, b); }

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data());
  for (T& v : out) v *= factor;
  auto an = a.node();
  Tensor<T> result = detail::make_op<T>(a.shape(), std::move(out), nullptr, a);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [an, rn, factor] {
      T* ga = an->ensure_grad().data();
      const T* g = rn->grad.data();
      for (size_t i = 0; i < rn->grad.size(); ++i) ga[i] += factor * g[i];
    };
  }
  return result;
}

// ---------------------------------------------------------------- activations

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data());
  for (T& v : out) v = v > T(0) ? v : T(0);
  auto an = a.node();
  Tensor<T> result = detail::make_op<T>(a.shape(), std::move(out), nullptr, a);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [an, rn] {
      T* ga = an->ensure_grad().data();
      const T* g = rn->grad.data();
      const T* x = an->data.data();
      for (size_t i = 0; i < rn->grad.size(); ++i) ga[i] += x[i] > T(0) ? g[i] : T(0);
    };
  }
  return result;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  std::vector<T> out(a.numel());
  const T* x = a.data().data();
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double xi = static_cast<double>(x[i]);
    out[i] = static_cast<T>(0.5 * xi * (1.0 + std::erf(xi * inv_sqrt2)));
  }
  auto an = a.node();
  Tensor<T> result = detail::make_op<T>(a.shape(), std::move(out), nullptr, a);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [an, rn] {
      T* ga = an->ensure_grad().data();
      const T* g = rn->grad.data();
      const T* x2 = an->data.data();
      for (size_t i = 0; i < rn->grad.size(); ++i) {
        const double xi = static_cast<double>(x2[i]);
        const double cdf = 0.5 * (1.0 + std::erf(xi * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * xi * xi);
        ga[i] += g[i] * static_cast<T>(cdf + xi * pdf);
      }
    };
  }
  return result;
}

// ---------------------------------------------------------------- row-wise ops

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  if (a.shape().size() != 2) throw TensorError("softmax_rows: expected 2-D, got " + shape_str(a.shape()));
  const int r = a.shape()[0], c = a.shape()[1];
  std::vector<T> out(a.numel());
  const T* x = a.data().data();
  for (int i = 0; i < r; ++i) {
    const T* row = x + static_cast<std::int64_t>(i) * c;
    T* orow = out.data() + static_cast<std::int64_t>(i) * c;
    T mx = *std::max_element(row, row + c);
    T sum = 0;
    for (int j = 0; j < c; ++j) sum += orow[j] = std::exp(row[j] - mx);
    for (int j = 0; j < c; ++j) orow[j] /= sum;
  }
  auto an = a.node();
  Tensor<T> result = detail::make_op<T>(a.shape(), std::move(out), nullptr, a);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [an, rn, r, c] {
      T* ga = an->ensure_grad().data();
      const T* g = rn->grad.data();
      const T* y = rn->data.data();
      for (int i = 0; i < r; ++i) {
        const std::int64_t off = static_cast<std::int64_t>(i) * c;
        T dot = 0;
        for (int j = 0; j < c; ++j) dot += g[off + j] * y[off + j];
        for (int j = 0; j < c; ++j) ga[off + j] += y[off + j] * (g[off + j] - dot);
      }
    };
  }
  return result;
}

// Normalizes each row to zero mean, unit variance (epsilon inside the sqrt).
// Affine gain/bias live outside as broadcast mul/add.
template <class T>
Tensor<T> layer_norm_rows(const Tensor<T>& a, T eps) {
  if (a.shape().size() != 2) throw TensorError("layer_norm_rows: expected 2-D, got " + shape_str(a.shape()));
  const int r = a.shape()[0], c = a.shape()[1];
  std::vector<T> out(a.numel());
  std::vector<T> inv_std(r);
  const T* x = a.data().data();
  for (int i = 0; i < r; ++i) {
    const std::int64_t off = static_cast<std::int64_t>(i) * c;
    T mean = 0;
    for (int j = 0; j < c; ++j) mean += x[off + j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (int j = 0; j < c; ++j) {
      const T d = x[off + j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) out[off + j] = (x[off + j] - mean) * inv_std[i];
  }
  auto an = a.node();
  Tensor<T> result = detail::make_op<T>(a.shape(), std::move(out), nullptr, a);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [an, rn, r, c, inv_std = std::move(inv_std)] {
      T* ga = an->ensure_grad().data();
      const T* g = rn->grad.data();
      const T* xhat = rn->data.data();
      for (int i = 0; i < r; ++i) {
        const std::int64_t off = static_cast<std::int64_t>(i) * c;
        T gmean = 0, gxmean = 0;
        for (int j = 0; j < c; ++j) {
          gmean += g[off + j];
          gxmean += g[off + j] * xhat[off + j];
        }
        gmean /= static_cast<T>(c);
        gxmean /= static_cast<T>(c);
        for (int j = 0; j < c; ++j)
          ga[off + j] += inv_std[i] * (g[off + j] - gmean - xhat[off + j] * gxmean);
      }
    };
  }
  return result;
}

// Mean cross-entropy over the batch, from raw logits and integer labels.
template <class T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2) throw TensorError("cross_entropy_mean: expected 2-D logits");
  const int b = logits.shape()[0], c = logits.shape()[1];
  if (static_cast<int>(labels.size()) != b)
    throw TensorError("cross_entropy_mean: " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(b) + " rows");
  for (int y : labels)
    if (y < 0 || y >= c)
      throw TensorError("cross_entropy_mean: label " + std::to_string(y) + " out of range [0," +
                        std::to_string(c) + ")");
  std::vector<T> probs(logits.numel());
  const T* x = logits.data().data();
  T loss = 0;
  for (int i = 0; i < b; ++i) {
    const std::int64_t off = static_cast<std::int64_t>(i) * c;
    T mx = *std::max_element(x + off, x + off + c);
    T sum = 0;
    for (int j = 0; j < c; ++j) sum += probs[off + j] = std::exp(x[off + j] - mx);
    for (int j = 0; j < c; ++j) probs[off + j] /= sum;
    loss -= std::log(probs[off + labels[i]]);
  }
  loss /= static_cast<T>(b);
  auto ln = logits.node();
  Tensor<T> result = detail::make_op<T>({1}, {loss}, nullptr, logits);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [ln, rn, b, c, labels, probs = std::move(probs)] {
      T* gl = ln->ensure_grad().data();
      const T g = rn->grad[0] / static_cast<T>(b);
      for (int i = 0; i < b; ++i) {
        const std::int64_t off = static_cast<std::int64_t>(i) * c;
        for (int j = 0; j < c; ++j)
          gl[off + j] += g * (probs[off + j] - (j == labels[i] ? T(1) : T(0)));
      }
    };
  }
  return result;
}

// ---------------------------------------------------------------- gather / pool

template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& idx) {
  if (table.shape().size() != 2) throw TensorError("gather_rows: expected 2-D table");
  const int v = table.shape()[0], d = table.shape()[1];
  for (int i : idx)
    if (i < 0 || i >= v)
      throw TensorError("gather_rows: index " + std::to_string(i) + " out of range [0," +
                        std::to_string(v) + ")");
  const int n = static_cast<int>(idx.size());
  std::vector<T> out(static_cast<std::int64_t>(n) * d);
  const T* x = table.data().data();
  for (int i = 0; i < n; ++i)
    std::copy_n(x + static_cast<std::int64_t>(idx[i]) * d, d, out.data() + static_cast<std::int64_t>(i) * d);
  auto tn = table.node();
  Tensor<T> result = detail::make_op<T>({n, d}, std::move(out), nullptr, table);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [tn, rn, idx, n, d] {
      T* gt = tn->ensure_grad().data();
      const T* g = rn->grad.data();
      for (int i = 0; i < n; ++i) {
        T* dst = gt + static_cast<std::int64_t>(idx[i]) * d;
        const T* src = g + static_cast<std::int64_t>(i) * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return result;
}

// (groups*group_size)×d -> groups×d mean; rows where mask is 0 are excluded.
// An empty mask means all rows count.
template <class T>
Tensor<T> mean_pool_rows(const Tensor<T>& x, int group_size, const std::vector<std::uint8_t>& mask = {}) {
  if (x.shape().size() != 2 || x.shape()[0] % group_size != 0)
    throw TensorError("mean_pool_rows: rows of " + shape_str(x.shape()) + " not divisible by group " +
                      std::to_string(group_size));
  const int groups = x.shape()[0] / group_size, d = x.shape()[1];
  if (!mask.empty() && static_cast<int>(mask.size()) != x.shape()[0])
    throw TensorError("mean_pool_rows: mask length mismatch");
  std::vector<T> out(static_cast<std::int64_t>(groups) * d, T(0));
  std::vector<int> counts(groups, 0);
  const T* px = x.data().data();
  for (int gidx = 0; gidx < groups; ++gidx) {
    for (int s = 0; s < group_size; ++s) {
      const int row = gidx * group_size + s;
      if (!mask.empty() && !mask[row]) continue;
      ++counts[gidx];
      const T* src = px + static_cast<std::int64_t>(row) * d;
      T* dst = out.data() + static_cast<std::int64_t>(gidx) * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
    if (counts[gidx] == 0) throw TensorError("mean_pool_rows: fully masked group");
    T* dst = out.data() + static_cast<std::int64_t>(gidx) * d;
    for (int j = 0; j < d; ++j) dst[j] /= static_cast<T>(counts[gidx]);
  }
  auto xn = x.node();
  Tensor<T> result = detail::make_op<T>({groups, d}, std::move(out), nullptr, x);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [xn, rn, groups, group_size, d, mask, counts = std::move(counts)] {
      T* gx = xn->ensure_grad().data();
      const T* g = rn->grad.data();
      for (int gidx = 0; gidx < groups; ++gidx)
        for (int s = 0; s < group_size; ++s) {
          const int row = gidx * group_size + s;
          if (!mask.empty() && !mask[row]) continue;
          const T inv = T(1) / static_cast<T>(counts[gidx]);
          T* dst = gx + static_cast<std::int64_t>(row) * d;
          const T* src = g + static_cast<std::int64_t>(gidx) * d;
          for (int j = 0; j < d; ++j) dst[j] += src[j] * inv;
        }
    };
  }
  return result;
}

// ---------------------------------------------------------------- attention

// Fused scaled-dot-product multi-head attention over a flattened batch.
// q, k, v: (batch*seq)×d with d divisible by heads. Masked key positions are
// excluded from every softmax row. Probabilities are kept for backward.
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               int batch, int heads, const std::vector<std::uint8_t>& mask = {}) {
  if (q.shape() != k.shape() || q.shape() != v.shape() || q.shape().size() != 2)
    throw TensorError("multi_head_attention: q/k/v shapes differ");
  const int rows = q.shape()[0], d = q.shape()[1];
  if (rows % batch != 0 || d % heads != 0)
    throw TensorError("multi_head_attention: shape " + shape_str(q.shape()) +
                      " not divisible by batch " + std::to_string(batch) + " / heads " +
                      std::to_string(heads));
  const int seq = rows / batch, dh = d / heads;
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> probs(static_cast<std::int64_t>(batch) * heads * seq * seq);
  std::vector<T> out(static_cast<std::int64_t>(rows) * d, T(0));
  const T* pq = q.data().data();
  const T* pk = k.data().data();
  const T* pv = v.data().data();
  for (int b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h) {
      T* p = probs.data() + (static_cast<std::int64_t>(b) * heads + h) * seq * seq;
      for (int i = 0; i < seq; ++i) {
        const T* qi = pq + static_cast<std::int64_t>(b * seq + i) * d + h * dh;
        T* prow = p + static_cast<std::int64_t>(i) * seq;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < seq; ++j) {
          if (!mask.empty() && !mask[b * seq + j]) {
            prow[j] = -std::numeric_limits<T>::infinity();
            continue;
          }
          const T* kj = pk + static_cast<std::int64_t>(b * seq + j) * d + h * dh;
          T s = 0;
          for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
          prow[j] = s * inv_sqrt_dh;
          mx = std::max(mx, prow[j]);
        }
        T sum = 0;
        for (int j = 0; j < seq; ++j)
          sum += prow[j] = std::isinf(prow[j]) ? T(0) : std::exp(prow[j] - mx);
        for (int j = 0; j < seq; ++j) prow[j] /= sum;
        T* orow = out.data() + static_cast<std::int64_t>(b * seq + i) * d + h * dh;
        for (int j = 0; j < seq; ++j) {
          const T pij = prow[j];
          if (pij == T(0)) continue;
          const T* vj = pv + static_cast<std::int64_t>(b * seq + j) * d + h * dh;
          for (int c = 0; c < dh; ++c) orow[c] += pij * vj[c];
        }
      }
    }
  auto qn = q.node();
  auto kn = k.node();
  auto vn = v.node();
  Tensor<T> result = detail::make_op<T>({rows, d}, std::move(out), nullptr, q, k, v);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [qn, kn, vn, rn, batch, heads, seq, dh, d, inv_sqrt_dh,
                       probs = std::move(probs)] {
      const T* g = rn->grad.data();
      T* gq = qn->requires_grad ? qn->ensure_grad().data() : nullptr;
      T* gk = kn->requires_grad ? kn->ensure_grad().data() : nullptr;
      T* gv = vn->requires_grad ? vn->ensure_grad().data() : nullptr;
      const T* pq2 = qn->data.data();
      const T* pk2 = kn->data.data();
      const T* pv2 = vn->data.data();
      std::vector<T> dp(seq), ds(seq);
      for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h) {
          const T* p = probs.data() + (static_cast<std::int64_t>(b) * heads + h) * seq * seq;
          for (int i = 0; i < seq; ++i) {
            const T* prow = p + static_cast<std::int64_t>(i) * seq;
            const T* grow = g + static_cast<std::int64_t>(b * seq + i) * d + h * dh;
            // dP = dOut·Vᵀ, then softmax backward to scores
            T dot = 0;
            for (int j = 0; j < seq; ++j) {
              const T* vj = pv2 + static_cast<std::int64_t>(b * seq + j) * d + h * dh;
              T acc = 0;
              for (int c = 0; c < dh; ++c) acc += grow[c] * vj[c];
              dp[j] = acc;
              dot += acc * prow[j];
            }
            for (int j = 0; j < seq; ++j) ds[j] = prow[j] * (dp[j] - dot) * inv_sqrt_dh;
            const T* qi = pq2 + static_cast<std::int64_t>(b * seq + i) * d + h * dh;
            T* gqi = gq ? gq + static_cast<std::int64_t>(b * seq + i) * d + h * dh : nullptr;
            for (int j = 0; j < seq; ++j) {
              const std::int64_t joff = static_cast<std::int64_t>(b * seq + j) * d + h * dh;
              if (gv && prow[j] != T(0))
                for (int c = 0; c < dh; ++c) gv[joff + c] += prow[j] * grow[c];
              if (ds[j] != T(0)) {
                const T* kj = pk2 + joff;
                if (gqi)
                  for (int c = 0; c < dh; ++c) gqi[c] += ds[j] * kj[c];
                if (gk)
                  for (int c = 0; c < dh; ++c) gk[joff + c] += ds[j] * qi[c];
              }
            }
          }
        }
    };
  }
  return result;
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = std::accumulate(a.data().begin(), a.data().end(), T(0));
  auto an = a.node();
  Tensor<T> result = detail::make_op<T>({1}, {s}, nullptr, a);
  if (result.requires_grad()) {
    auto* rn = result.node().get();
    rn->backward_fn = [an, rn] {
      T* ga = an->ensure_grad().data();
      const T g = rn->grad[0];
      for (size_t i = 0; i < an->data.size(); ++i) ga[i] += g;
    };
  }
  return result;
}

// ---------------------------------------------------------------- backward

template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw TensorError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  std::vector<detail::Node<T>*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    if (n->backward_fn) order.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->id > b->id; });
  // Interior grads are scratch for this pass; only leaves accumulate across calls.
  for (auto* n : order) n->grad.clear();
  auto& lg = loss.node()->ensure_grad();
  lg[0] += T(1);
  for (auto* n : order) n->backward_fn();
}

}  // namespace redlab
