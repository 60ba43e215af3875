#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "srnn/tensor.hpp"

namespace srnn {

// ---------------------------------------------------------------------------
// Raw accumulate kernels. Inner loops run over contiguous memory in a fixed
// order, so results are bitwise reproducible run to run.
// ---------------------------------------------------------------------------

// c[m x n] += a[m x p] * b[p x n]
template <typename T>
inline void gemm_nn_acc(const T* a, const T* b, T* c, std::size_t m,
                        std::size_t p, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * p;
    T* crow = c + i * n;
    for (std::size_t q = 0; q < p; ++q) {
      const T aiq = arow[q];
      const T* brow = b + q * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aiq * brow[j];
    }
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
template <typename T>
inline void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m,
                        std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      const T* brow = b + j * n;
      T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      std::size_t q = 0;
      for (; q + 4 <= n; q += 4) {
        s0 += arow[q] * brow[q];
        s1 += arow[q + 1] * brow[q + 1];
        s2 += arow[q + 2] * brow[q + 2];
        s3 += arow[q + 3] * brow[q + 3];
      }
      T s = (s0 + s1) + (s2 + s3);
      for (; q < n; ++q) s += arow[q] * brow[q];
      crow[j] += s;
    }
  }
}

// c[m x n] += a[p x m]^T * b[p x n]
template <typename T>
inline void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t p,
                        std::size_t m, std::size_t n) {
  for (std::size_t q = 0; q < p; ++q) {
    const T* arow = a + q * m;
    const T* brow = b + q * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T aqi = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aqi * brow[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Differentiation graph
// ---------------------------------------------------------------------------

// One tape node. `backprop` reads this node's grad and accumulates into the
// parents' grads; gradients of a node used several times therefore sum.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// Inference-only scope: nodes built inside skip gradient storage.
inline bool& no_grad_flag() {
  thread_local bool flag = false;
  return flag;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(no_grad_flag()) { no_grad_flag() = true; }
  ~NoGradGuard() { no_grad_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
NodePtr<T> make_node(Tensor<T> value, bool requires_grad, const char* op,
                     std::vector<NodePtr<T>> parents = {},
                     std::function<void(Node<T>&)> backprop = {}) {
  auto n = std::make_shared<Node<T>>();
  n->requires_grad = requires_grad && !no_grad_flag();
  if (requires_grad) n->grad = Tensor<T>(value.shape);
  n->value = std::move(value);
  n->op = op;
  n->parents = std::move(parents);
  n->backprop = std::move(backprop);
  return n;
}

template <typename T>
NodePtr<T> leaf(Tensor<T> v, bool requires_grad = true) {
  return make_node(std::move(v), requires_grad, "leaf");
}

template <typename T>
NodePtr<T> constant(Tensor<T> v) {
  return make_node(std::move(v), false, "const");
}

template <typename T>
inline bool any_grad(const std::vector<NodePtr<T>>& parents) {
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

// Postorder over the DAG (iterative; graphs get deep with many scales).
template <typename T>
std::vector<Node<T>*> topo_order(const NodePtr<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* par = node->parents[next++].get();
      if (seen.insert(par).second) stack.push_back({par, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

// Reverse-mode sweep from a scalar root. Grads of every reachable node are
// reset first, so parameters can be reused across consecutive graphs.
template <typename T>
void backward(const NodePtr<T>& root) {
  if (root->value.size() != 1)
    throw ContractError("backward: root must be scalar, got shape " +
                        shape_str(root->value.shape));
  auto order = topo_order(root);
  for (Node<T>* n : order)
    if (n->requires_grad) std::fill(n->grad.data.begin(), n->grad.data.end(), T(0));
  if (!root->requires_grad) return;
  root->grad.data[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->requires_grad && n->backprop) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> matmul(NodePtr<T> a, NodePtr<T> b) {
  const Tensor<T>& A = a->value;
  const Tensor<T>& B = b->value;
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape) +
                     " vs " + shape_str(B.shape));
  const std::size_t m = A.dim(0), p = A.dim(1), n = B.dim(1);
  Tensor<T> out({m, n});
  gemm_nn_acc(A.data.data(), B.data.data(), out.data.data(), m, p, n);
  bool rg = any_grad<T>({a, b});
  return make_node<T>(
      std::move(out), rg, "matmul", {a, b}, [m, p, n](Node<T>& nd) {
        auto& A = *nd.parents[0];
        auto& B = *nd.parents[1];
        if (A.requires_grad)
          gemm_nt_acc(nd.grad.data.data(), B.value.data.data(),
                      A.grad.data.data(), m, n, p);
        if (B.requires_grad)
          gemm_tn_acc(A.value.data.data(), nd.grad.data.data(),
                      B.grad.data.data(), m, p, n);
      });
}

template <typename T>
NodePtr<T> transpose(NodePtr<T> a) {
  const Tensor<T>& A = a->value;
  if (A.rank() != 2)
    throw ShapeError("transpose: want rank 2, got " + shape_str(A.shape));
  const std::size_t m = A.dim(0), n = A.dim(1);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
  return make_node<T>(std::move(out), a->requires_grad, "transpose", {a},
                      [m, n](Node<T>& nd) {
                        auto& A = *nd.parents[0];
                        if (!A.requires_grad) return;
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < n; ++j)
                            A.grad.at(i, j) += nd.grad.at(j, i);
                      });
}

template <typename T>
NodePtr<T> add(NodePtr<T> a, NodePtr<T> b) {
  require_same_shape(a->value, b->value, "add");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node<T>(std::move(out), any_grad<T>({a, b}), "add", {a, b},
                      [](Node<T>& nd) {
                        for (int k = 0; k < 2; ++k) {
                          auto& P = *nd.parents[k];
                          if (!P.requires_grad) continue;
                          for (std::size_t i = 0; i < nd.grad.size(); ++i)
                            P.grad[i] += nd.grad[i];
                        }
                      });
}

template <typename T>
NodePtr<T> mul(NodePtr<T> a, NodePtr<T> b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node<T>(std::move(out), any_grad<T>({a, b}), "mul", {a, b},
                      [](Node<T>& nd) {
                        auto& A = *nd.parents[0];
                        auto& B = *nd.parents[1];
                        if (A.requires_grad)
                          for (std::size_t i = 0; i < nd.grad.size(); ++i)
                            A.grad[i] += nd.grad[i] * B.value[i];
                        if (B.requires_grad)
                          for (std::size_t i = 0; i < nd.grad.size(); ++i)
                            B.grad[i] += nd.grad[i] * A.value[i];
                      });
}

template <typename T>
NodePtr<T> scale(NodePtr<T> a, T c) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v *= c;
  return make_node<T>(std::move(out), a->requires_grad, "scale", {a},
                      [c](Node<T>& nd) {
                        auto& A = *nd.parents[0];
                        if (!A.requires_grad) return;
                        for (std::size_t i = 0; i < nd.grad.size(); ++i)
                          A.grad[i] += c * nd.grad[i];
                      });
}

// Subgradient at 0 is 0.
template <typename T>
NodePtr<T> relu(NodePtr<T> a) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return make_node<T>(std::move(out), a->requires_grad, "relu", {a},
                      [](Node<T>& nd) {
                        auto& A = *nd.parents[0];
                        if (!A.requires_grad) return;
                        for (std::size_t i = 0; i < nd.grad.size(); ++i)
                          if (A.value[i] > T(0)) A.grad[i] += nd.grad[i];
                      });
}

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
NodePtr<T> sigmoid(NodePtr<T> a) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v = sigmoid_scalar(v);
  return make_node<T>(std::move(out), a->requires_grad, "sigmoid", {a},
                      [](Node<T>& nd) {
                        auto& A = *nd.parents[0];
                        if (!A.requires_grad) return;
                        for (std::size_t i = 0; i < nd.grad.size(); ++i) {
                          const T s = nd.value[i];
                          A.grad[i] += nd.grad[i] * s * (T(1) - s);
                        }
                      });
}

// (1 - z) .* a + z .* b
template <typename T>
NodePtr<T> affine_combine(NodePtr<T> z, NodePtr<T> a, NodePtr<T> b) {
  require_same_shape(z->value, a->value, "affine_combine");
  require_same_shape(z->value, b->value, "affine_combine");
  Tensor<T> out(z->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (T(1) - z->value[i]) * a->value[i] + z->value[i] * b->value[i];
  return make_node<T>(std::move(out), any_grad<T>({z, a, b}), "affine_combine",
                      {z, a, b}, [](Node<T>& nd) {
                        auto& Z = *nd.parents[0];
                        auto& A = *nd.parents[1];
                        auto& B = *nd.parents[2];
                        for (std::size_t i = 0; i < nd.grad.size(); ++i) {
                          const T g = nd.grad[i];
                          if (Z.requires_grad)
                            Z.grad[i] += g * (B.value[i] - A.value[i]);
                          if (A.requires_grad)
                            A.grad[i] += g * (T(1) - Z.value[i]);
                          if (B.requires_grad) B.grad[i] += g * Z.value[i];
                        }
                      });
}

// x[B x C] + row-broadcast bias[C]. The one sanctioned broadcast.
template <typename T>
NodePtr<T> add_bias(NodePtr<T> x, NodePtr<T> bias) {
  const Tensor<T>& X = x->value;
  const Tensor<T>& B = bias->value;
  if (X.rank() != 2 || B.rank() != 1 || X.dim(1) != B.dim(0))
    throw ShapeError("add_bias: shapes " + shape_str(X.shape) + " vs " +
                     shape_str(B.shape));
  const std::size_t rows = X.dim(0), cols = X.dim(1);
  Tensor<T> out = X;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) += B[j];
  return make_node<T>(std::move(out), any_grad<T>({x, bias}), "add_bias",
                      {x, bias}, [rows, cols](Node<T>& nd) {
                        auto& X = *nd.parents[0];
                        auto& Bi = *nd.parents[1];
                        if (X.requires_grad)
                          for (std::size_t i = 0; i < nd.grad.size(); ++i)
                            X.grad[i] += nd.grad[i];
                        if (Bi.requires_grad)
                          for (std::size_t i = 0; i < rows; ++i)
                            for (std::size_t j = 0; j < cols; ++j)
                              Bi.grad[j] += nd.grad.at(i, j);
                      });
}

template <typename T>
NodePtr<T> sum(NodePtr<T> a) {
  T s = 0;
  for (T v : a->value.data) s += v;
  return make_node<T>(Tensor<T>({1}, std::vector<T>{s}), a->requires_grad,
                      "sum", {a}, [](Node<T>& nd) {
                        auto& A = *nd.parents[0];
                        if (!A.requires_grad) return;
                        const T g = nd.grad[0];
                        for (auto& v : A.grad.data) v += g;
                      });
}

namespace detail {

template <typename T>
inline void softmax_row(const T* in, T* out, std::size_t n) {
  T mx = in[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  T denom = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    denom += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= denom;
}

template <typename T>
inline T logsumexp_row(const T* in, std::size_t n) {
  T mx = in[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(in[i] - mx);
  return mx + std::log(s);
}

}  // namespace detail

// Max-subtracted softmax over the last axis of a [C] or [B x C] tensor.
template <typename T>
NodePtr<T> softmax(NodePtr<T> a) {
  const Tensor<T>& X = a->value;
  if (X.rank() != 1 && X.rank() != 2)
    throw ShapeError("softmax: want rank 1 or 2, got " + shape_str(X.shape));
  if (!all_finite(X))
    throw NumericError("softmax: non-finite input");
  const std::size_t cols = X.shape.back();
  const std::size_t rows = X.size() / cols;
  Tensor<T> out(X.shape);
  for (std::size_t r = 0; r < rows; ++r)
    detail::softmax_row(X.data.data() + r * cols, out.data.data() + r * cols,
                        cols);
  return make_node<T>(std::move(out), a->requires_grad, "softmax", {a},
                      [rows, cols](Node<T>& nd) {
                        auto& A = *nd.parents[0];
                        if (!A.requires_grad) return;
                        for (std::size_t r = 0; r < rows; ++r) {
                          const T* y = nd.value.data.data() + r * cols;
                          const T* g = nd.grad.data.data() + r * cols;
                          T dot = 0;
                          for (std::size_t j = 0; j < cols; ++j)
                            dot += g[j] * y[j];
                          T* da = A.grad.data.data() + r * cols;
                          for (std::size_t j = 0; j < cols; ++j)
                            da[j] += y[j] * (g[j] - dot);
                        }
                      });
}

// Mean over the batch of -log softmax(logits)[label], fused via log-sum-exp.
template <typename T>
NodePtr<T> cross_entropy_from_logits(NodePtr<T> logits,
                                     const std::vector<std::size_t>& labels) {
  const Tensor<T>& X = logits->value;
  if (X.rank() != 2)
    throw ShapeError("cross_entropy_from_logits: want [B x C], got " +
                     shape_str(X.shape));
  const std::size_t batch = X.dim(0), classes = X.dim(1);
  if (labels.size() != batch)
    throw ShapeError("cross_entropy_from_logits: " +
                     std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(batch));
  for (std::size_t i = 0; i < batch; ++i)
    if (labels[i] >= classes)
      throw IndexError("cross_entropy_from_logits: label " +
                       std::to_string(labels[i]) + " out of range [0, " +
                       std::to_string(classes) + ")");
  T total = 0;
  for (std::size_t i = 0; i < batch; ++i) {
    const T* row = X.data.data() + i * classes;
    total += detail::logsumexp_row(row, classes) - row[labels[i]];
  }
  total /= static_cast<T>(batch);
  auto labels_copy = labels;
  return make_node<T>(
      Tensor<T>({1}, std::vector<T>{total}), logits->requires_grad,
      "cross_entropy", {logits},
      [batch, classes, labels_copy](Node<T>& nd) {
        auto& L = *nd.parents[0];
        if (!L.requires_grad) return;
        const T g = nd.grad[0] / static_cast<T>(batch);
        std::vector<T> probs(classes);
        for (std::size_t i = 0; i < batch; ++i) {
          const T* row = L.value.data.data() + i * classes;
          detail::softmax_row(row, probs.data(), classes);
          T* drow = L.grad.data.data() + i * classes;
          for (std::size_t j = 0; j < classes; ++j) drow[j] += g * probs[j];
          drow[labels_copy[i]] -= g;
        }
      });
}

}  // namespace srnn
