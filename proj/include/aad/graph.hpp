#ifndef AAD_GRAPH_HPP
#define AAD_GRAPH_HPP

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "aad/common.hpp"
#include "aad/gemm.hpp"
#include "aad/rng.hpp"
#include "aad/tensor.hpp"

namespace aad {

// Reverse-mode tape node. Ops allocate nodes, fill `value`, and install a
// `backprop` closure that scatters this node's grad into its inputs' grads.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  const char* op = "";
  std::string name;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::function<void()> backprop;

  const std::string label() const { return name.empty() ? std::string(op) : name; }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

// --- grad mode -------------------------------------------------------------

namespace detail {
inline thread_local bool g_grad_enabled = true;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
  ~NoGradGuard() { detail::g_grad_enabled = prev; }
};

inline bool grad_enabled() { return detail::g_grad_enabled; }

template <typename T>
bool tracks_grad(const Var<T>& v) {
  return grad_enabled() && v->requires_grad;
}

// --- node helpers ----------------------------------------------------------

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false, std::string name = {}) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->op = "leaf";
  n->name = std::move(name);
  return n;
}

template <typename T>
Tensor<T>& grad_of(Node<T>& n) {
  if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor<T>::zeros(n.value.shape);
  return n.grad;
}

// Scans for NaN/Inf; multiplication by zero maps finite->0 and NaN/Inf->NaN,
// so one vectorizable pass suffices.
template <typename T>
void check_finite(const Tensor<T>& t, const std::string& label) {
  T s = T(0);
  const T* p = t.ptr();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) s += p[i] * T(0);
  if (!(s == T(0))) throw NonFiniteError(label);
}

template <typename T, typename... Ins>
Var<T> make_node(const char* op, Tensor<T> value, std::string name, Ins... ins) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  n->name = std::move(name);
  (n->inputs.push_back(ins), ...);
  for (auto& i : n->inputs)
    if (tracks_grad(i)) n->requires_grad = true;
  check_finite(n->value, n->label());
  return n;
}

// Backward over the reachable graph. Iterative topological order (post-order
// DFS) so deep LSTM chains cannot overflow the stack.
template <typename T>
void backward(const Var<T>& root, Tensor<T> seed = {}) {
  require(root->requires_grad, "backward: root does not require grad");
  if (seed.empty()) {
    seed = Tensor<T>::full(root->value.shape, T(1));
  }
  require(seed.shape == root->value.shape, "backward: seed shape mismatch");
  grad_of(*root);
  for (int64_t i = 0; i < seed.numel(); ++i) root->grad[i] += seed[i];

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node<T>* child = node->inputs[idx++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // order is post-order: inputs before outputs; walk it backwards.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop();
  }
}

// --- elementwise ops ---------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b, std::string name = {}) {
  require(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  auto n = make_node("add", std::move(out), std::move(name), a, b);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, a, b]() {
      const Tensor<T>& g = np->grad;
      if (tracks_grad(a)) {
        Tensor<T>& ga = grad_of(*a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (tracks_grad(b)) {
        Tensor<T>& gb = grad_of(*b);
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
      }
    };
  }
  return n;
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b, std::string name = {}) {
  require(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  auto n = make_node("mul", std::move(out), std::move(name), a, b);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, a, b]() {
      const Tensor<T>& g = np->grad;
      if (tracks_grad(a)) {
        Tensor<T>& ga = grad_of(*a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * b->value[i];
      }
      if (tracks_grad(b)) {
        Tensor<T>& gb = grad_of(*b);
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * a->value[i];
      }
    };
  }
  return n;
}

template <typename T>
Var<T> sigmoid(const Var<T>& x, std::string name = {}) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
  auto n = make_node("sigmoid", std::move(out), std::move(name), x);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, x]() {
      Tensor<T>& gx = grad_of(*x);
      for (int64_t i = 0; i < np->grad.numel(); ++i) {
        T y = np->value[i];
        gx[i] += np->grad[i] * y * (T(1) - y);
      }
    };
  }
  return n;
}

template <typename T>
Var<T> tanh_op(const Var<T>& x, std::string name = {}) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v = std::tanh(v);
  auto n = make_node("tanh", std::move(out), std::move(name), x);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, x]() {
      Tensor<T>& gx = grad_of(*x);
      for (int64_t i = 0; i < np->grad.numel(); ++i) {
        T y = np->value[i];
        gx[i] += np->grad[i] * (T(1) - y * y);
      }
    };
  }
  return n;
}

// max(0, x); the subgradient at 0 is taken as 0.
template <typename T>
Var<T> relu(const Var<T>& x, std::string name = {}) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  auto n = make_node("relu", std::move(out), std::move(name), x);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, x]() {
      Tensor<T>& gx = grad_of(*x);
      for (int64_t i = 0; i < np->grad.numel(); ++i)
        if (np->value[i] > T(0)) gx[i] += np->grad[i];
    };
  }
  return n;
}

// Train: zero each element with probability p, scale survivors by 1/(1-p).
// p is quantized to 16-bit so mask draws cost a quarter of an rng word; the
// matching scale uses the quantized value, keeping E[out] == in exactly.
template <typename T>
Var<T> dropout(const Var<T>& x, double p, bool train, Rng& rng, std::string name = {}) {
  require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
  if (!train || p == 0.0) {
    Tensor<T> out = x->value;
    auto n = make_node("dropout", std::move(out), std::move(name), x);
    if (n->requires_grad) {
      Node<T>* np = n.get();
      n->backprop = [np, x]() {
        Tensor<T>& gx = grad_of(*x);
        for (int64_t i = 0; i < np->grad.numel(); ++i) gx[i] += np->grad[i];
      };
    }
    return n;
  }
  const uint64_t thresh = uint64_t(std::llround(p * 65536.0));
  const double p_eff = double(thresh) / 65536.0;
  const T scale = T(1.0 / (1.0 - p_eff));
  const int64_t ne = x->value.numel();
  auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(ne));
  for (int64_t i = 0; i < ne; i += 4) {
    uint64_t w = rng.next_u64();
    for (int64_t j = 0; j < 4 && i + j < ne; ++j) {
      (*mask)[size_t(i + j)] = uint8_t((w & 0xffff) >= thresh);
      w >>= 16;
    }
  }
  Tensor<T> out = x->value;
  for (int64_t i = 0; i < ne; ++i) out[i] = (*mask)[size_t(i)] ? out[i] * scale : T(0);
  auto n = make_node("dropout", std::move(out), std::move(name), x);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, x, mask, scale]() {
      Tensor<T>& gx = grad_of(*x);
      for (int64_t i = 0; i < np->grad.numel(); ++i)
        if ((*mask)[size_t(i)]) gx[i] += np->grad[i] * scale;
    };
  }
  return n;
}

// --- matmul / linear ---------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, std::string name = {}) {
  require(a->value.rank() == 2 && b->value.rank() == 2, "matmul: rank-2 tensors required");
  const int64_t M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(1);
  require(b->value.dim(0) == K, "matmul: inner dimensions disagree");
  Tensor<T> out({M, N});
  gemm<T>(false, M, N, K, a->value.ptr(), K, b->value.ptr(), N, out.ptr(), N);
  auto n = make_node("matmul", std::move(out), std::move(name), a, b);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, a, b, M, N, K]() {
      const T* g = np->grad.ptr();
      if (tracks_grad(a)) {
        // dA += G * B^T
        Tensor<T>& ga = grad_of(*a);
        detail::CMapRM<T> gm(g, M, N, Eigen::OuterStride<>(N));
        detail::CMapRM<T> bm(b->value.ptr(), K, N, Eigen::OuterStride<>(N));
        detail::MapRM<T> gam(ga.ptr(), M, K, Eigen::OuterStride<>(K));
        gam.noalias() += gm * bm.transpose();
      }
      if (tracks_grad(b)) {
        Tensor<T>& gb = grad_of(*b);
        gemm_at_b_acc<T>(M, N, K, a->value.ptr(), K, g, N, gb.ptr(), N);
      }
    };
  }
  return n;
}

// y = x W + b with x [N x Fin], W [Fin x Fout], b [Fout]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::string name = {}) {
  require(x->value.rank() == 2 && w->value.rank() == 2, "linear: rank-2 input and weight");
  const int64_t M = x->value.dim(0), K = x->value.dim(1), N = w->value.dim(1);
  require(w->value.dim(0) == K, "linear: weight rows must equal input features");
  require(b->value.numel() == N, "linear: bias length mismatch");
  Tensor<T> out({M, N});
  gemm<T>(false, M, N, K, x->value.ptr(), K, w->value.ptr(), N, out.ptr(), N);
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) out.at(i, j) += b->value[j];
  auto n = make_node("linear", std::move(out), std::move(name), x, w, b);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, x, w, b, M, N, K]() {
      const T* g = np->grad.ptr();
      if (tracks_grad(x)) {
        Tensor<T>& gx = grad_of(*x);
        detail::CMapRM<T> gm(g, M, N, Eigen::OuterStride<>(N));
        detail::CMapRM<T> wm(w->value.ptr(), K, N, Eigen::OuterStride<>(N));
        detail::MapRM<T> gxm(gx.ptr(), M, K, Eigen::OuterStride<>(K));
        gxm.noalias() += gm * wm.transpose();
      }
      if (tracks_grad(w)) {
        Tensor<T>& gw = grad_of(*w);
        gemm_at_b_acc<T>(M, N, K, x->value.ptr(), K, g, N, gw.ptr(), N);
      }
      if (tracks_grad(b)) {
        Tensor<T>& gb = grad_of(*b);
        for (int64_t i = 0; i < M; ++i)
          for (int64_t j = 0; j < N; ++j) gb[j] += g[i * N + j];
      }
    };
  }
  return n;
}

// --- shape ops ---------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape, std::string name = {}) {
  require(shape_numel(shape) == x->value.numel(), "reshape: element count mismatch");
  Tensor<T> out(std::move(shape), x->value.data);
  auto n = make_node("reshape", std::move(out), std::move(name), x);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, x]() {
      Tensor<T>& gx = grad_of(*x);
      for (int64_t i = 0; i < np->grad.numel(); ++i) gx[i] += np->grad[i];
    };
  }
  return n;
}

// rows [r0, r1) of a rank-2 tensor
template <typename T>
Var<T> slice_rows(const Var<T>& x, int64_t r0, int64_t r1, std::string name = {}) {
  require(x->value.rank() == 2 && r0 >= 0 && r1 <= x->value.dim(0) && r0 < r1,
          "slice_rows: bad range");
  const int64_t F = x->value.dim(1);
  Tensor<T> out({r1 - r0, F});
  std::memcpy(out.ptr(), x->value.ptr() + r0 * F, size_t((r1 - r0) * F) * sizeof(T));
  auto n = make_node("slice_rows", std::move(out), std::move(name), x);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, x, r0, F]() {
      Tensor<T>& gx = grad_of(*x);
      T* dst = gx.ptr() + r0 * F;
      for (int64_t i = 0; i < np->grad.numel(); ++i) dst[i] += np->grad[i];
    };
  }
  return n;
}

// columns [c0, c1) of a rank-2 tensor
template <typename T>
Var<T> slice_cols(const Var<T>& x, int64_t c0, int64_t c1, std::string name = {}) {
  require(x->value.rank() == 2 && c0 >= 0 && c1 <= x->value.dim(1) && c0 < c1,
          "slice_cols: bad range");
  const int64_t M = x->value.dim(0), F = x->value.dim(1), W = c1 - c0;
  Tensor<T> out({M, W});
  for (int64_t i = 0; i < M; ++i)
    std::memcpy(out.ptr() + i * W, x->value.ptr() + i * F + c0, size_t(W) * sizeof(T));
  auto n = make_node("slice_cols", std::move(out), std::move(name), x);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, x, c0, M, F, W]() {
      Tensor<T>& gx = grad_of(*x);
      for (int64_t i = 0; i < M; ++i) {
        const T* g = np->grad.ptr() + i * W;
        T* dst = gx.ptr() + i * F + c0;
        for (int64_t j = 0; j < W; ++j) dst[j] += g[j];
      }
    };
  }
  return n;
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts, std::string name = {}) {
  require(!parts.empty(), "concat_cols: empty input");
  const int64_t M = parts[0]->value.dim(0);
  int64_t F = 0;
  for (auto& p : parts) {
    require(p->value.rank() == 2 && p->value.dim(0) == M, "concat_cols: row mismatch");
    F += p->value.dim(1);
  }
  Tensor<T> out({M, F});
  int64_t off = 0;
  for (auto& p : parts) {
    const int64_t W = p->value.dim(1);
    for (int64_t i = 0; i < M; ++i)
      std::memcpy(out.ptr() + i * F + off, p->value.ptr() + i * W, size_t(W) * sizeof(T));
    off += W;
  }
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(out);
  n->op = "concat_cols";
  n->name = std::move(name);
  n->inputs.assign(parts.begin(), parts.end());
  for (auto& p : parts)
    if (tracks_grad(p)) n->requires_grad = true;
  check_finite(n->value, n->label());
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, parts, M, F]() {
      int64_t off = 0;
      for (auto& p : parts) {
        const int64_t W = p->value.dim(1);
        if (tracks_grad(p)) {
          Tensor<T>& gp = grad_of(*p);
          for (int64_t i = 0; i < M; ++i) {
            const T* g = np->grad.ptr() + i * F + off;
            T* dst = gp.ptr() + i * W;
            for (int64_t j = 0; j < W; ++j) dst[j] += g[j];
          }
        }
        off += W;
      }
    };
  }
  return n;
}

// [A,B,F] -> [B,A,F]
template <typename T>
Var<T> transpose01(const Var<T>& x, std::string name = {}) {
  require(x->value.rank() == 3, "transpose01: rank-3 tensor required");
  const int64_t A = x->value.dim(0), B = x->value.dim(1), F = x->value.dim(2);
  Tensor<T> out({B, A, F});
  for (int64_t a = 0; a < A; ++a)
    for (int64_t b = 0; b < B; ++b)
      std::memcpy(out.ptr() + (b * A + a) * F, x->value.ptr() + (a * B + b) * F,
                  size_t(F) * sizeof(T));
  auto n = make_node("transpose01", std::move(out), std::move(name), x);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, x, A, B, F]() {
      Tensor<T>& gx = grad_of(*x);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t a = 0; a < A; ++a) {
          const T* g = np->grad.ptr() + (b * A + a) * F;
          T* dst = gx.ptr() + (a * B + b) * F;
          for (int64_t f = 0; f < F; ++f) dst[f] += g[f];
        }
    };
  }
  return n;
}

// [N,A,B] -> [N,B,A]
template <typename T>
Var<T> transpose12(const Var<T>& x, std::string name = {}) {
  require(x->value.rank() == 3, "transpose12: rank-3 tensor required");
  const int64_t N = x->value.dim(0), A = x->value.dim(1), B = x->value.dim(2);
  Tensor<T> out({N, B, A});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t a = 0; a < A; ++a)
      for (int64_t b = 0; b < B; ++b) out.at(n, b, a) = x->value.at(n, a, b);
  auto nd = make_node("transpose12", std::move(out), std::move(name), x);
  if (nd->requires_grad) {
    Node<T>* np = nd.get();
    nd->backprop = [np, x, N, A, B]() {
      Tensor<T>& gx = grad_of(*x);
      for (int64_t n = 0; n < N; ++n)
        for (int64_t b = 0; b < B; ++b)
          for (int64_t a = 0; a < A; ++a) gx.at(n, a, b) += np->grad.at(n, b, a);
    };
  }
  return nd;
}

// Stack T rank-2 tensors [N,F] into [T,N,F]
template <typename T>
Var<T> stack_steps(const std::vector<Var<T>>& steps, std::string name = {}) {
  require(!steps.empty(), "stack_steps: empty input");
  const int64_t N = steps[0]->value.dim(0), F = steps[0]->value.dim(1);
  const int64_t S = int64_t(steps.size());
  Tensor<T> out({S, N, F});
  for (int64_t t = 0; t < S; ++t) {
    require(steps[size_t(t)]->value.dim(0) == N && steps[size_t(t)]->value.dim(1) == F,
            "stack_steps: shape mismatch");
    std::memcpy(out.ptr() + t * N * F, steps[size_t(t)]->value.ptr(),
                size_t(N * F) * sizeof(T));
  }
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(out);
  n->op = "stack_steps";
  n->name = std::move(name);
  n->inputs.assign(steps.begin(), steps.end());
  for (auto& p : steps)
    if (tracks_grad(p)) n->requires_grad = true;
  check_finite(n->value, n->label());
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, steps, N, F]() {
      for (int64_t t = 0; t < int64_t(steps.size()); ++t) {
        auto& p = steps[size_t(t)];
        if (!tracks_grad(p)) continue;
        Tensor<T>& gp = grad_of(*p);
        const T* g = np->grad.ptr() + t * N * F;
        for (int64_t i = 0; i < N * F; ++i) gp[i] += g[i];
      }
    };
  }
  return n;
}

// --- softmax cross-entropy -----------------------------------------------------

template <typename T>
struct SoftmaxXent {
  Var<T> loss;             // scalar, mean over the batch
  Tensor<T> probabilities; // [N x C], detached
};

// Numerically stabilized softmax (row max subtracted) + mean NLL.
template <typename T>
SoftmaxXent<T> softmax_crossentropy(const Var<T>& logits, const std::vector<int>& labels,
                                    std::string name = {}) {
  require(logits->value.rank() == 2, "softmax_crossentropy: rank-2 logits required");
  const int64_t N = logits->value.dim(0), C = logits->value.dim(1);
  require(int64_t(labels.size()) == N, "softmax_crossentropy: labels size mismatch");
  Tensor<T> probs({N, C});
  double loss_sum = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    require(labels[size_t(i)] >= 0 && labels[size_t(i)] < C,
            "softmax_crossentropy: label out of range");
    const T* row = logits->value.ptr() + i * C;
    T mx = row[0];
    for (int64_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < C; ++j) denom += std::exp(double(row[j] - mx));
    for (int64_t j = 0; j < C; ++j)
      probs.at(i, j) = T(std::exp(double(row[j] - mx)) / denom);
    loss_sum += -(double(row[labels[size_t(i)]] - mx) - std::log(denom));
  }
  Tensor<T> lv({1});
  lv[0] = T(loss_sum / double(N));
  auto n = make_node("softmax_xent", std::move(lv), std::move(name), logits);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    Tensor<T> probs_copy = probs;
    auto labels_copy = labels;
    n->backprop = [np, logits, probs_copy, labels_copy, N, C]() {
      const T g = np->grad[0] / T(N);
      Tensor<T>& gx = grad_of(*logits);
      for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < C; ++j) {
          T y = (labels_copy[size_t(i)] == int(j)) ? T(1) : T(0);
          gx.at(i, j) += g * (probs_copy.at(i, j) - y);
        }
    };
  }
  return {n, std::move(probs)};
}

}  // namespace aad

#endif  // AAD_GRAPH_HPP
