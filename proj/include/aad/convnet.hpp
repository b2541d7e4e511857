#ifndef AAD_CONVNET_HPP
#define AAD_CONVNET_HPP

#include <utility>
#include <vector>

#include "aad/graph.hpp"

namespace aad {

// Convolution geometry, stride fixed at 1. Tensors are channels-last:
// [N, H, W, C] with H the outer spatial axis and W the inner (contiguous).
struct ConvGeom {
  int64_t kh = 1, kw = 1;  // kernel extents on (H, W)
  int64_t dh = 1, dw = 1;  // dilation
  int64_t ph = 0, pw = 0;  // zero padding

  int64_t out_h(int64_t h) const { return h + 2 * ph - dh * (kh - 1); }
  int64_t out_w(int64_t w) const { return w + 2 * pw - dw * (kw - 1); }
};

using PoolWindows = std::vector<std::pair<int64_t, int64_t>>;

// floor(in/q) windows of width q; trailing remainder discarded
inline PoolWindows pool_windows_fixed(int64_t in, int64_t q) {
  require(q >= 1, "pool: window extent must be >= 1");
  PoolWindows w;
  for (int64_t i = 0; i + q <= in; i += q) w.push_back({i, i + q});
  return w;
}

// adaptive windows: start = floor(i*in/out), end = ceil((i+1)*in/out)
inline PoolWindows pool_windows_adaptive(int64_t in, int64_t out) {
  require(out >= 1 && in >= 1, "adaptive pool: extents must be >= 1");
  PoolWindows w;
  for (int64_t i = 0; i < out; ++i) {
    int64_t a = (i * in) / out;
    int64_t b = ((i + 1) * in + out - 1) / out;
    w.push_back({a, b});
  }
  return w;
}

namespace detail {

template <typename T>
void conv_naive_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                        const ConvGeom& g, Tensor<T>& out) {
  const int64_t N = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const int64_t Co = w.dim(3), Ho = g.out_h(H), Wo = g.out_w(W);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t ho = 0; ho < Ho; ++ho)
      for (int64_t wo = 0; wo < Wo; ++wo)
        for (int64_t co = 0; co < Co; ++co) {
          double acc = double(b[co]);
          for (int64_t ih = 0; ih < g.kh; ++ih) {
            const int64_t hi = ho + ih * g.dh - g.ph;
            if (hi < 0 || hi >= H) continue;
            for (int64_t iw = 0; iw < g.kw; ++iw) {
              const int64_t wi = wo + iw * g.dw - g.pw;
              if (wi < 0 || wi >= W) continue;
              for (int64_t ci = 0; ci < Ci; ++ci)
                acc += double(x.at(n, hi, wi, ci)) * double(w.at(ih, iw, ci, co));
            }
          }
          out.at(n, ho, wo, co) = T(acc);
        }
}

}  // namespace detail

// Reference cross-correlation (no kernel flip), stride 1. Direct loops; the
// model path uses conv_block below, which is checked against this one.
// x: [N,H,W,Cin], w: [kh,kw,Cin,Cout], b: [Cout]
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, const ConvGeom& g,
              std::string name = {}) {
  require(x->value.rank() == 4, "conv2d: input must be [N,H,W,C]");
  require(w->value.rank() == 4 && w->value.dim(0) == g.kh && w->value.dim(1) == g.kw,
          "conv2d: weight must be [kh,kw,Cin,Cout]");
  require(w->value.dim(2) == x->value.dim(3), "conv2d: channel mismatch");
  const int64_t N = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int64_t Co = w->value.dim(3);
  const int64_t Ho = g.out_h(H), Wo = g.out_w(W);
  require(Ho >= 1 && Wo >= 1, "conv2d: non-positive output extent");
  require(b->value.numel() == Co, "conv2d: bias length mismatch");
  Tensor<T> out({N, Ho, Wo, Co});
  detail::conv_naive_forward(x->value, w->value, b->value, g, out);
  auto n = make_node("conv2d", std::move(out), std::move(name), x, w, b);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    ConvGeom gg = g;
    n->backprop = [np, x, w, b, gg, N, H, W, Ho, Wo, Co]() {
      const int64_t Ci = x->value.dim(3);
      const Tensor<T>& gr = np->grad;
      const bool wx = tracks_grad(x), ww = tracks_grad(w), wb = tracks_grad(b);
      Tensor<T>* gxp = wx ? &grad_of(*x) : nullptr;
      Tensor<T>* gwp = ww ? &grad_of(*w) : nullptr;
      Tensor<T>* gbp = wb ? &grad_of(*b) : nullptr;
      for (int64_t nn = 0; nn < N; ++nn)
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo)
            for (int64_t co = 0; co < Co; ++co) {
              const T g0 = gr.at(nn, ho, wo, co);
              if (wb) (*gbp)[co] += g0;
              for (int64_t ih = 0; ih < gg.kh; ++ih) {
                const int64_t hi = ho + ih * gg.dh - gg.ph;
                if (hi < 0 || hi >= H) continue;
                for (int64_t iw = 0; iw < gg.kw; ++iw) {
                  const int64_t wi = wo + iw * gg.dw - gg.pw;
                  if (wi < 0 || wi >= W) continue;
                  for (int64_t ci = 0; ci < Ci; ++ci) {
                    if (ww) gwp->at(ih, iw, ci, co) += x->value.at(nn, hi, wi, ci) * g0;
                    if (wx) gxp->at(nn, hi, wi, ci) += w->value.at(ih, iw, ci, co) * g0;
                  }
                }
              }
            }
    };
  }
  return n;
}

// Max pooling over explicit per-axis windows. Gradient goes to the first
// (lowest flat index) maximum in each window.
template <typename T>
Var<T> maxpool2d(const Var<T>& x, const PoolWindows& wh, const PoolWindows& ww,
                 std::string name = {}) {
  require(x->value.rank() == 4, "maxpool2d: input must be [N,H,W,C]");
  const int64_t N = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2),
                C = x->value.dim(3);
  const int64_t Ho = int64_t(wh.size()), Wo = int64_t(ww.size());
  require(Ho >= 1 && Wo >= 1, "maxpool2d: empty window list");
  for (auto& [a, b] : wh) require(a >= 0 && b <= H && a < b, "maxpool2d: bad H window");
  for (auto& [a, b] : ww) require(a >= 0 && b <= W && a < b, "maxpool2d: bad W window");
  Tensor<T> out({N, Ho, Wo, C});
  auto idx = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(N * Ho * Wo * C));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < Ho; ++i)
      for (int64_t j = 0; j < Wo; ++j)
        for (int64_t c = 0; c < C; ++c) {
          T best = x->value.at(n, wh[size_t(i)].first, ww[size_t(j)].first, c);
          int32_t bi = int32_t(wh[size_t(i)].first * W + ww[size_t(j)].first);
          for (int64_t h = wh[size_t(i)].first; h < wh[size_t(i)].second; ++h)
            for (int64_t w = ww[size_t(j)].first; w < ww[size_t(j)].second; ++w) {
              const T v = x->value.at(n, h, w, c);
              if (v > best) {
                best = v;
                bi = int32_t(h * W + w);
              }
            }
          out.at(n, i, j, c) = best;
          (*idx)[size_t(((n * Ho + i) * Wo + j) * C + c)] = bi;
        }
  auto n = make_node("maxpool2d", std::move(out), std::move(name), x);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    n->backprop = [np, x, idx, N, Ho, Wo, C, W]() {
      Tensor<T>& gx = grad_of(*x);
      const int64_t HW = x->value.dim(1) * W;
      for (int64_t n2 = 0; n2 < N; ++n2) {
        T* gs = gx.ptr() + n2 * HW * C;
        const T* g = np->grad.ptr() + n2 * Ho * Wo * C;
        const int32_t* id = idx->data() + n2 * Ho * Wo * C;
        for (int64_t e = 0; e < Ho * Wo * C; ++e)
          gs[int64_t(id[e]) * C + e % C] += g[e];
      }
    };
  }
  return n;
}

// Batch normalization over (N, H, W) per channel; population variance. Train
// mode requires batch >= 2 and updates the running statistics in place.
template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 Tensor<T>* running_mean, Tensor<T>* running_var, bool train,
                 double momentum = 0.1, double eps = 1e-5, std::string name = {}) {
  require(x->value.rank() == 4, "batchnorm: input must be [N,H,W,C]");
  const int64_t N = x->value.dim(0), C = x->value.dim(3);
  const int64_t M = N * x->value.dim(1) * x->value.dim(2);
  require(gamma->value.numel() == C && beta->value.numel() == C,
          "batchnorm: gamma/beta length mismatch");
  require(running_mean && running_var && running_mean->numel() == C &&
              running_var->numel() == C,
          "batchnorm: running stats required");
  if (train) require(N >= 2, "batchnorm: train mode requires batch >= 2");

  std::vector<double> mean(size_t(C), 0.0), var(size_t(C), 0.0);
  if (train) {
    const T* p = x->value.ptr();
    for (int64_t i = 0; i < M; ++i)
      for (int64_t c = 0; c < C; ++c) mean[size_t(c)] += double(p[i * C + c]);
    for (auto& m : mean) m /= double(M);
    for (int64_t i = 0; i < M; ++i)
      for (int64_t c = 0; c < C; ++c) {
        double d = double(p[i * C + c]) - mean[size_t(c)];
        var[size_t(c)] += d * d;
      }
    for (auto& v : var) v /= double(M);
    for (int64_t c = 0; c < C; ++c) {
      (*running_mean)[c] = T((1.0 - momentum) * double((*running_mean)[c]) +
                             momentum * mean[size_t(c)]);
      (*running_var)[c] =
          T((1.0 - momentum) * double((*running_var)[c]) + momentum * var[size_t(c)]);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[size_t(c)] = double((*running_mean)[c]);
      var[size_t(c)] = double((*running_var)[c]);
    }
  }
  std::vector<T> istd(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) istd[size_t(c)] = T(1.0 / std::sqrt(var[size_t(c)] + eps));

  auto xhat = std::make_shared<Tensor<T>>(x->value.shape);
  Tensor<T> out(x->value.shape);
  {
    const T* p = x->value.ptr();
    T* xh = xhat->ptr();
    T* o = out.ptr();
    for (int64_t i = 0; i < M; ++i)
      for (int64_t c = 0; c < C; ++c) {
        const T h = (p[i * C + c] - T(mean[size_t(c)])) * istd[size_t(c)];
        xh[i * C + c] = h;
        o[i * C + c] = gamma->value[c] * h + beta->value[c];
      }
  }
  auto n = make_node("batchnorm", std::move(out), std::move(name), x, gamma, beta);
  if (n->requires_grad) {
    Node<T>* np = n.get();
    const bool train_mode = train;
    n->backprop = [np, x, gamma, beta, xhat, istd, M, C, train_mode]() {
      const T* g = np->grad.ptr();
      const T* xh = xhat->ptr();
      std::vector<double> s1(size_t(C), 0.0), s2(size_t(C), 0.0);
      for (int64_t i = 0; i < M; ++i)
        for (int64_t c = 0; c < C; ++c) {
          s1[size_t(c)] += double(g[i * C + c]);
          s2[size_t(c)] += double(g[i * C + c]) * double(xh[i * C + c]);
        }
      if (tracks_grad(beta)) {
        Tensor<T>& gb = grad_of(*beta);
        for (int64_t c = 0; c < C; ++c) gb[c] += T(s1[size_t(c)]);
      }
      if (tracks_grad(gamma)) {
        Tensor<T>& gg = grad_of(*gamma);
        for (int64_t c = 0; c < C; ++c) gg[c] += T(s2[size_t(c)]);
      }
      if (tracks_grad(x)) {
        Tensor<T>& gx = grad_of(*x);
        if (train_mode) {
          for (int64_t i = 0; i < M; ++i)
            for (int64_t c = 0; c < C; ++c)
              gx[i * C + c] += gamma->value[c] * istd[size_t(c)] *
                               (g[i * C + c] - T(s1[size_t(c)] / double(M)) -
                                xh[i * C + c] * T(s2[size_t(c)] / double(M)));
        } else {
          for (int64_t i = 0; i < M; ++i)
            for (int64_t c = 0; c < C; ++c)
              gx[i * C + c] += gamma->value[c] * istd[size_t(c)] * g[i * C + c];
        }
      }
    };
  }
  return n;
}

}  // namespace aad

#endif  // AAD_CONVNET_HPP
