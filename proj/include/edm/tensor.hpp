// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

// Dense tensors with recorded operations and reverse-mode differentiation.
//
// Every operation on a Tensor that depends (transitively) on a trainable
// parameter records a closure computing the vector-Jacobian product for its
// inputs. backward() walks the recorded graph in reverse topological order.
// Constants never record anything, so inference-only passes stay cheap.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "edm/matrix.hpp"

#ifdef EDM_USE_CBLAS
#include <cblas.h>
#endif

namespace edm::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << "]";
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// C (rows x cols) += op(A) op(B), with op(A) rows x inner and op(B)
/// inner x cols, all row-major.
inline void gemm(bool trans_a, bool trans_b, std::size_t rows, std::size_t cols, std::size_t inner, const double* a,
                 const double* b, double* c) {
#ifdef EDM_USE_CBLAS
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(rows), static_cast<int>(cols), static_cast<int>(inner), 1.0, a,
              static_cast<int>(trans_a ? rows : inner), b, static_cast<int>(trans_b ? inner : cols), 1.0, c,
              static_cast<int>(cols));
#else
  std::vector<double> bt;
  if (trans_b) {
    bt.resize(inner * cols);
    for (std::size_t j = 0; j < cols; ++j)
      for (std::size_t p = 0; p < inner; ++p) bt[p * cols + j] = b[j * inner + p];
    b = bt.data();
  }
  for (std::size_t i = 0; i < rows; ++i) {
    double* crow = c + i * cols;
    for (std::size_t p = 0; p < inner; ++p) {
      const double aip = trans_a ? a[p * rows + i] : a[i * inner + p];
      const double* brow = b + p * cols;
      for (std::size_t j = 0; j < cols; ++j) crow[j] += aip * brow[j];
    }
  }
#endif
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values) {
    return Tensor(make_node(std::move(shape), std::move(values), false));
  }
  static Tensor parameter(Shape shape, std::vector<double> values) {
    return Tensor(make_node(std::move(shape), std::move(values), true));
  }
  static Tensor zeros(Shape shape) {
    auto n = numel_of(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor scalar(double v) { return constant({1}, {v}); }
  static Tensor from_matrix(const Matrix& m) { return constant({m.rows(), m.cols()}, m.data()); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t i) const { return node().shape.at(i); }
  std::size_t numel() const { return node().value.size(); }
  bool requires_grad() const { return node().requires_grad; }
  bool is_leaf() const { return node().is_leaf; }
  const char* op_name() const { return node().op; }

  std::span<const double> values() const { return node().value; }
  /// Direct write access for optimizers and checkpoint loading; the tensor
  /// must be a leaf.
  std::span<double> mutable_values() {
    if (!node().is_leaf) throw std::logic_error("mutable_values: tensor is not a leaf");
    return node_->value;
  }
  double item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not scalar");
    return node().value[0];
  }
  double operator[](std::size_t k) const { return node().value[k]; }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const double> grad() const { return node().grad; }
  void zero_grad() { node_->grad.clear(); }

  Matrix to_matrix() const {
    if (rank() != 2) throw ShapeError("to_matrix: tensor of shape " + to_string(shape()) + " is not rank 2");
    return Matrix(dim(0), dim(1), node().value);
  }

  /// Same values, no recorded history.
  Tensor detach() const { return constant(shape(), node().value); }

  detail::Node& node() const {
    if (!node_) throw std::logic_error("Tensor: use of undefined tensor");
    return *node_;
  }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

  static Tensor record(Shape shape, std::vector<double> values, const char* op,
                       std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward) {
    bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    auto n = make_node(std::move(shape), std::move(values), needs);
    n->op = op;
    n->is_leaf = false;
    if (needs) {
      n->parents.reserve(inputs.size());
      for (auto& in : inputs) n->parents.push_back(in.node_);
      n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
  }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  static std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values, bool trainable) {
    if (numel_of(shape) != values.size()) {
      throw ShapeError("Tensor: shape " + to_string(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = trainable;
    return n;
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Supported broadcast patterns of `small` against `big` (output shape = big).
enum class Bcast { kSame, kScalar, kTrailing, kColumn };

struct BcastPlan {
  Bcast kind = Bcast::kSame;
  std::size_t period = 1;  // trailing: small.numel; column: last dim of big

  std::size_t index(std::size_t k) const {
    switch (kind) {
      case Bcast::kSame: return k;
      case Bcast::kScalar: return 0;
      case Bcast::kTrailing: return k % period;
      case Bcast::kColumn: return k / period;
    }
    return k;
  }
};

inline bool plan_against(const Shape& big, const Shape& small, BcastPlan& plan) {
  if (big == small) {
    plan = {Bcast::kSame, 1};
    return true;
  }
  if (numel_of(small) == 1) {
    plan = {Bcast::kScalar, 1};
    return true;
  }
  if (small.size() < big.size() && std::equal(small.rbegin(), small.rend(), big.rbegin())) {
    plan = {Bcast::kTrailing, numel_of(small)};
    return true;
  }
  if (small.size() == big.size() && small.size() >= 2 && small.back() == 1 &&
      std::equal(small.begin(), small.end() - 1, big.begin())) {
    plan = {Bcast::kColumn, big.back()};
    return true;
  }
  return false;
}

struct BinaryPlan {
  Shape out;
  BcastPlan a;
  BcastPlan b;
};

inline BinaryPlan plan_binary(const char* op, const Shape& sa, const Shape& sb) {
  BinaryPlan p;
  if (plan_against(sa, sb, p.b)) {
    p.out = sa;
    p.a = {Bcast::kSame, 1};
    return p;
  }
  if (plan_against(sb, sa, p.a)) {
    p.out = sb;
    p.b = {Bcast::kSame, 1};
    return p;
  }
  throw ShapeError(std::string(op) + ": cannot broadcast shapes " + to_string(sa) + " and " + to_string(sb));
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA dfa, DB dfb) {
  BinaryPlan plan = plan_binary(op, a.shape(), b.shape());
  const std::size_t n = numel_of(plan.out);
  std::vector<double> out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t k = 0; k < n; ++k) out[k] = fwd(av[plan.a.index(k)], bv[plan.b.index(k)]);
  return Tensor::record(plan.out, std::move(out), op, {a, b}, [plan, n, dfa, dfb](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      for (std::size_t k = 0; k < n; ++k) {
        std::size_t ia = plan.a.index(k), ib = plan.b.index(k);
        ga[ia] += g[k] * dfa(pa.value[ia], pb.value[ib], self.value[k]);
      }
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t k = 0; k < n; ++k) {
        std::size_t ia = plan.a.index(k), ib = plan.b.index(k);
        gb[ib] += g[k] * dfb(pa.value[ia], pb.value[ib], self.value[k]);
      }
    }
  });
}

template <typename Fwd, typename Df>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Df df) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t k = 0; k < av.size(); ++k) out[k] = fwd(av[k]);
  return Tensor::record(a.shape(), std::move(out), op, {a}, [df](Node& self) {
    auto& pa = *self.parents[0];
    auto& ga = pa.grad_buffer();
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += self.grad[k] * df(pa.value[k], self.value[k]);
  });
}

inline void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + to_string(t.shape()));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }

inline Tensor square(const Tensor& a) {
  return detail::unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor sqrt(const Tensor& a) {
  return detail::unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      "sigmoid", a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor silu(const Tensor& a) {
  return detail::unary(
      "silu", a, [](double x) { return x * sigmoid_scalar(x); },
      [](double x, double) {
        double s = sigmoid_scalar(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

inline Tensor neg(const Tensor& a) { return a * -1.0; }

/// Sum of all elements, shape [1].
inline Tensor sum(const Tensor& a) {
  auto av = a.values();
  double acc = 0.0;
  for (double v : av) acc += v;
  return Tensor::record({1}, {acc}, "sum", {a}, [](detail::Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (double& g : ga) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  return sum(a) * (1.0 / static_cast<double>(a.numel()));
}

/// Sum over the last axis, keeping it with size 1.
inline Tensor sum_last(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("sum_last: rank-0 tensor");
  const std::size_t c = a.shape().back();
  const std::size_t outer = a.numel() / std::max<std::size_t>(c, 1);
  Shape out_shape = a.shape();
  out_shape.back() = 1;
  std::vector<double> out(outer, 0.0);
  auto av = a.values();
  for (std::size_t i = 0; i < outer; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += av[i * c + j];
  return Tensor::record(std::move(out_shape), std::move(out), "sum_last", {a}, [c, outer](detail::Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < outer; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[i];
  });
}

/// [m, k] x [k, n] -> [m, n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm(false, false, m, n, k, a.values().data(), b.values().data(), out.data());
  return Tensor::record({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    // dA += G B^T, dB += A^T G
    if (pa.requires_grad) detail::gemm(false, true, m, k, n, self.grad.data(), pb.value.data(), pa.grad_buffer().data());
    if (pb.requires_grad) detail::gemm(true, false, k, n, m, pa.value.data(), self.grad.data(), pb.grad_buffer().data());
  });
}

/// Concatenate rank-2 tensors with equal row counts along the last axis.
inline Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  const std::size_t rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) {
      throw ShapeError("concat_last: shape " + to_string(p.shape()) + " does not match " + to_string(parts[0].shape()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t q = 0; q < parts.size(); ++q) {
    auto v = parts[q].values();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(v.data() + i * widths[q], widths[q], out.data() + i * total + offset);
    offset += widths[q];
  }
  return Tensor::record({rows, total}, std::move(out), "concat_last", parts,
                        [rows, total, widths](detail::Node& self) {
                          std::size_t off = 0;
                          for (std::size_t q = 0; q < widths.size(); ++q) {
                            auto& p = *self.parents[q];
                            if (p.requires_grad) {
                              auto& gp = p.grad_buffer();
                              for (std::size_t i = 0; i < rows; ++i)
                                for (std::size_t j = 0; j < widths[q]; ++j)
                                  gp[i * widths[q] + j] += self.grad[i * total + off + j];
                            }
                            off += widths[q];
                          }
                        });
}

/// Columns [begin, end) of a rank-2 tensor.
inline Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_rank2("slice_last", a);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (begin > end || end > cols) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + to_string(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  auto av = a.values();
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(av.data() + i * cols + begin, w, out.data() + i * w);
  return Tensor::record({rows, w}, std::move(out), "slice_last", {a}, [rows, cols, begin, w](detail::Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * cols + begin + j] += self.grad[i * w + j];
  });
}

/// out[r] = a[index[r]] for rank-2 a.
inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  detail::require_rank2("gather_rows", a);
  const std::size_t cols = a.dim(1), n = a.dim(0);
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(idx.size() * cols);
  auto av = a.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw ShapeError("gather_rows: index " + std::to_string(idx[r]) + " out of range");
    std::copy_n(av.data() + idx[r] * cols, cols, out.data() + r * cols);
  }
  const std::size_t n_rows = idx.size();
  return Tensor::record({n_rows, cols}, std::move(out), "gather_rows", {a},
                        [idx = std::move(idx), cols](detail::Node& self) {
                          auto& ga = self.parents[0]->grad_buffer();
                          for (std::size_t r = 0; r < idx.size(); ++r)
                            for (std::size_t j = 0; j < cols; ++j) ga[idx[r] * cols + j] += self.grad[r * cols + j];
                        });
}

/// out[index[r]] += a[r]; output has `n_out` rows. Rows never targeted are zero.
inline Tensor scatter_add_rows(const Tensor& a, std::span<const std::size_t> index, std::size_t n_out) {
  detail::require_rank2("scatter_add_rows", a);
  const std::size_t cols = a.dim(1);
  if (index.size() != a.dim(0)) {
    throw ShapeError("scatter_add_rows: " + std::to_string(index.size()) + " indices for " +
                     to_string(a.shape()));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(n_out * cols, 0.0);
  auto av = a.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n_out) throw ShapeError("scatter_add_rows: index " + std::to_string(idx[r]) + " out of range");
    for (std::size_t j = 0; j < cols; ++j) out[idx[r] * cols + j] += av[r * cols + j];
  }
  return Tensor::record({n_out, cols}, std::move(out), "scatter_add_rows", {a},
                        [idx = std::move(idx), cols](detail::Node& self) {
                          auto& ga = self.parents[0]->grad_buffer();
                          for (std::size_t r = 0; r < idx.size(); ++r)
                            for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += self.grad[idx[r] * cols + j];
                        });
}

/// Populates .grad of every trainable ancestor of `loss` with d loss / d leaf.
/// Leaf gradients accumulate across calls until zero_grad().
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.handle().get(), 0}};
  seen.insert(loss.handle().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto* n : order)
    if (!n->is_leaf) n->grad.clear();
  loss.node().grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->is_leaf && n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace edm::ad
