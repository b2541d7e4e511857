#ifndef AAD_CONV_BLOCK_HPP
#define AAD_CONV_BLOCK_HPP

#include <memory>
#include <utility>
#include <vector>

#include "aad/convnet.hpp"

namespace aad {

// Per-layer batch-norm running statistics; owned by the model, mutated by
// train-mode forwards, consumed by eval-mode forwards.
template <typename T>
struct BnState {
  Tensor<T> mean, var;
  explicit BnState(int64_t channels = 0)
      : mean(Tensor<T>::zeros({channels})), var(Tensor<T>::full({channels}, T(1))) {}
};

struct ConvBlockCfg {
  ConvGeom geom;
  PoolWindows win_h, win_w;  // pooling windows on the conv output grid
  double p_drop = 0.0;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

template <typename T>
struct ConvBlockParams {
  Var<T> w;  // [kh, kw, Cin, Cout]
  Var<T> b;  // [Cout]
  Var<T> gamma, beta;
  BnState<T>* bn = nullptr;
};

namespace detail {

// conv output rows live on a width-padded grid [Ho x Wp]; columns >= Wo of
// each row are wrap garbage that every consumer below must skip.
struct BlockGeom {
  int64_t N, H, W, Ci, Co;
  int64_t Ho, Wo, Wp, Hp;
  int64_t ntaps, max_off;
  std::vector<int64_t> off;  // flat row offset into the padded input per tap

  BlockGeom(const Shape& xs, const Shape& ws, const ConvGeom& g) {
    N = xs[0]; H = xs[1]; W = xs[2]; Ci = xs[3];
    Co = ws[3];
    Ho = g.out_h(H);
    Wo = g.out_w(W);
    Wp = W + 2 * g.pw;
    Hp = H + 2 * g.ph;
    require(Ho >= 1 && Wo >= 1, "conv: non-positive output extent");
    ntaps = g.kh * g.kw;
    for (int64_t ih = 0; ih < g.kh; ++ih)
      for (int64_t iw = 0; iw < g.kw; ++iw) off.push_back(ih * g.dh * Wp + iw * g.dw);
    max_off = off.back();
  }
  int64_t xp_rows() const { return Hp * Wp + max_off; }
  int64_t out2_rows() const { return Ho * Wp; }
};

template <typename T>
void fill_padded(const T* x, T* xp, const BlockGeom& bg, int64_t ph, int64_t pw) {
  for (int64_t h = 0; h < bg.H; ++h)
    std::memcpy(xp + ((h + ph) * bg.Wp + pw) * bg.Ci, x + h * bg.W * bg.Ci,
                size_t(bg.W * bg.Ci) * sizeof(T));
}

template <typename T>
void conv_rows(const BlockGeom& bg, const T* xp, const T* w, T* out2) {
#ifdef __AVX512F__
  if constexpr (std::is_same_v<T, float>) {
    if (bg.Co == 32) {
      kern::conv_taps_n32(bg.Ho, bg.Wo, bg.Wp, xp, bg.Ci, bg.off.data(), int(bg.ntaps), w,
                          out2, 32);
      return;
    }
  }
#endif
  std::memset(out2, 0, size_t(bg.out2_rows() * bg.Co) * sizeof(T));
  for (int64_t j = 0; j < bg.ntaps; ++j)
    gemm<T>(true, bg.out2_rows(), bg.Co, bg.Ci, xp + bg.off[size_t(j)] * bg.Ci, bg.Ci,
            w + j * bg.Ci * bg.Co, bg.Co, out2, bg.Co);
}

}  // namespace detail

// conv -> maxpool -> batchnorm -> dropout -> relu as a single tape node.
// Equivalent to the composition of the primitive ops (see tests); fused so a
// training step stores one activation set per layer instead of five.
template <typename T>
Var<T> conv_block(const Var<T>& x, const ConvBlockParams<T>& prm, const ConvBlockCfg& cfg,
                  bool train, Rng& rng, std::string name = {}) {
  require(x->value.rank() == 4, "conv_block: input must be [N,H,W,C]");
  require(prm.w->value.rank() == 4 && prm.w->value.dim(0) == cfg.geom.kh &&
              prm.w->value.dim(1) == cfg.geom.kw && prm.w->value.dim(2) == x->value.dim(3),
          "conv_block: weight shape mismatch");
  require(prm.bn && prm.bn->mean.numel() == prm.w->value.dim(3),
          "conv_block: bn state missing");
  require(cfg.p_drop >= 0.0 && cfg.p_drop < 1.0, "conv_block: p_drop must be in [0,1)");
  const detail::BlockGeom bg(x->value.shape, prm.w->value.shape, cfg.geom);
  const int64_t Hpo = int64_t(cfg.win_h.size()), Wpo = int64_t(cfg.win_w.size());
  require(Hpo >= 1 && Wpo >= 1, "conv_block: empty pool windows");
  for (auto& [a, b2] : cfg.win_h)
    require(a >= 0 && b2 <= bg.Ho && a < b2, "conv_block: bad H pool window");
  for (auto& [a, b2] : cfg.win_w)
    require(a >= 0 && b2 <= bg.Wo && a < b2, "conv_block: bad W pool window");
  if (train) require(bg.N >= 2, "conv_block: batchnorm train mode requires batch >= 2");

  const int64_t N = bg.N, Co = bg.Co;
  const int64_t pooled_elems = Hpo * Wpo * Co;
  const bool want_grad = grad_enabled() &&
                         (x->requires_grad || prm.w->requires_grad || prm.b->requires_grad ||
                          prm.gamma->requires_grad || prm.beta->requires_grad);

  Tensor<T> pooled({N, Hpo, Wpo, Co});
  auto idx = want_grad ? std::make_shared<std::vector<int32_t>>(size_t(N * pooled_elems))
                       : nullptr;

  std::vector<T> xp(static_cast<size_t>(bg.xp_rows() * bg.Ci), T(0));
  std::vector<T> out2(static_cast<size_t>(bg.out2_rows() * Co));

  for (int64_t n = 0; n < N; ++n) {
    detail::fill_padded(x->value.ptr() + n * bg.H * bg.W * bg.Ci, xp.data(), bg,
                        cfg.geom.ph, cfg.geom.pw);
    detail::conv_rows(bg, xp.data(), prm.w->value.ptr(), out2.data());
    // pool + bias
    T* po = pooled.ptr() + n * pooled_elems;
    int32_t* id = idx ? idx->data() + n * pooled_elems : nullptr;
    for (int64_t i = 0; i < Hpo; ++i)
      for (int64_t j = 0; j < Wpo; ++j) {
        T* acc = po + (i * Wpo + j) * Co;
        int32_t* ai = id ? id + (i * Wpo + j) * Co : nullptr;
        bool first = true;
        for (int64_t h = cfg.win_h[size_t(i)].first; h < cfg.win_h[size_t(i)].second; ++h)
          for (int64_t w = cfg.win_w[size_t(j)].first; w < cfg.win_w[size_t(j)].second;
               ++w) {
            const T* row = out2.data() + (h * bg.Wp + w) * Co;
            const int32_t flat = int32_t(h * bg.Wp + w);
            if (first) {
              for (int64_t c = 0; c < Co; ++c) acc[c] = row[c];
              if (ai)
                for (int64_t c = 0; c < Co; ++c) ai[c] = flat;
              first = false;
            } else {
              for (int64_t c = 0; c < Co; ++c) {
                if (row[c] > acc[c]) {
                  acc[c] = row[c];
                  if (ai) ai[c] = flat;
                }
              }
            }
          }
        for (int64_t c = 0; c < Co; ++c) acc[c] += prm.b->value[c];
      }
  }

  // batch normalization statistics
  const int64_t M = N * Hpo * Wpo;
  std::vector<double> mean(size_t(Co), 0.0), var(size_t(Co), 0.0);
  if (train) {
    const T* p = pooled.ptr();
    for (int64_t i = 0; i < M; ++i)
      for (int64_t c = 0; c < Co; ++c) mean[size_t(c)] += double(p[i * Co + c]);
    for (auto& m : mean) m /= double(M);
    for (int64_t i = 0; i < M; ++i)
      for (int64_t c = 0; c < Co; ++c) {
        const double d = double(p[i * Co + c]) - mean[size_t(c)];
        var[size_t(c)] += d * d;
      }
    for (auto& v : var) v /= double(M);
    for (int64_t c = 0; c < Co; ++c) {
      prm.bn->mean[c] = T((1.0 - cfg.bn_momentum) * double(prm.bn->mean[c]) +
                          cfg.bn_momentum * mean[size_t(c)]);
      prm.bn->var[c] = T((1.0 - cfg.bn_momentum) * double(prm.bn->var[c]) +
                         cfg.bn_momentum * var[size_t(c)]);
    }
  } else {
    for (int64_t c = 0; c < Co; ++c) {
      mean[size_t(c)] = double(prm.bn->mean[c]);
      var[size_t(c)] = double(prm.bn->var[c]);
    }
  }
  auto istd = std::make_shared<std::vector<T>>(static_cast<size_t>(Co));
  for (int64_t c = 0; c < Co; ++c)
    (*istd)[size_t(c)] = T(1.0 / std::sqrt(var[size_t(c)] + cfg.bn_eps));

  // normalize + affine + dropout + relu in one pass
  const bool drop = train && cfg.p_drop > 0.0;
  const uint64_t thresh = drop ? uint64_t(std::llround(cfg.p_drop * 65536.0)) : 0;
  const double p_eff = double(thresh) / 65536.0;
  const T scale = drop ? T(1.0 / (1.0 - p_eff)) : T(1);
  auto xhat = want_grad ? std::make_shared<Tensor<T>>(pooled.shape) : nullptr;
  Tensor<T> out(pooled.shape);
  {
    const T* p = pooled.ptr();
    T* o = out.ptr();
    T* xh = xhat ? xhat->ptr() : nullptr;
    const int64_t total = M * Co;
    uint64_t word = 0;
    int bits = 0;
    for (int64_t i = 0; i < total; ++i) {
      const int64_t c = i % Co;
      const T h = (p[i] - T(mean[size_t(c)])) * (*istd)[size_t(c)];
      if (xh) xh[i] = h;
      T v = prm.gamma->value[c] * h + prm.beta->value[c];
      if (drop) {
        if (bits == 0) {
          word = rng.next_u64();
          bits = 4;
        }
        const bool keep = (word & 0xffff) >= thresh;
        word >>= 16;
        --bits;
        v = keep ? v * scale : T(0);
      }
      o[i] = v > T(0) ? v : T(0);
    }
  }

  auto node = make_node("conv_block", std::move(out), std::move(name), x, prm.w, prm.b,
                        prm.gamma, prm.beta);
  if (node->requires_grad) {
    Node<T>* np = node.get();
    const ConvBlockCfg cfg_c = cfg;
    const detail::BlockGeom bg_c = bg;
    const bool bn_batch_stats = train;
    const Var<T> xv = x, wv = prm.w, bv = prm.b, gv = prm.gamma, betav = prm.beta;
    node->backprop = [np, xv, wv, bv, gv, betav, idx, xhat, istd, scale, cfg_c, bg_c, Hpo,
                      Wpo, M, bn_batch_stats]() {
      const int64_t N = bg_c.N, Co = bg_c.Co, Ci = bg_c.Ci;
      const int64_t pooled_elems = Hpo * Wpo * Co;
      const T* g = np->grad.ptr();
      const T* o = np->value.ptr();
      const T* xh = xhat->ptr();

      // through relu + dropout (out > 0 implies the element survived dropout)
      Tensor<T> gy(np->value.shape);
      for (int64_t i = 0; i < M * Co; ++i) gy[i] = o[i] > T(0) ? g[i] * scale : T(0);

      std::vector<double> s1(size_t(Co), 0.0), s2(size_t(Co), 0.0);
      for (int64_t i = 0; i < M; ++i)
        for (int64_t c = 0; c < Co; ++c) {
          s1[size_t(c)] += double(gy[i * Co + c]);
          s2[size_t(c)] += double(gy[i * Co + c]) * double(xh[i * Co + c]);
        }
      if (tracks_grad(betav)) {
        Tensor<T>& gb = grad_of(*betav);
        for (int64_t c = 0; c < Co; ++c) gb[c] += T(s1[size_t(c)]);
      }
      if (tracks_grad(gv)) {
        Tensor<T>& gg = grad_of(*gv);
        for (int64_t c = 0; c < Co; ++c) gg[c] += T(s2[size_t(c)]);
      }

      // through batchnorm into the pooled activations (in place over gy);
      // with running statistics the normalization is a constant affine map
      if (bn_batch_stats) {
        for (int64_t i = 0; i < M; ++i)
          for (int64_t c = 0; c < Co; ++c) {
            const T gi = gy[i * Co + c];
            gy[i * Co + c] = gv->value[c] * (*istd)[size_t(c)] *
                             (gi - T(s1[size_t(c)] / double(M)) -
                              xh[i * Co + c] * T(s2[size_t(c)] / double(M)));
          }
      } else {
        for (int64_t i = 0; i < M; ++i)
          for (int64_t c = 0; c < Co; ++c)
            gy[i * Co + c] *= gv->value[c] * (*istd)[size_t(c)];
      }
      if (tracks_grad(bv)) {
        Tensor<T>& gb = grad_of(*bv);
        for (int64_t i = 0; i < M; ++i)
          for (int64_t c = 0; c < Co; ++c) gb[c] += gy[i * Co + c];
      }

      const bool want_dx = tracks_grad(xv);
      const bool want_dw = tracks_grad(wv);
      Tensor<T>* gx = want_dx ? &grad_of(*xv) : nullptr;
      Tensor<T>* gw = want_dw ? &grad_of(*wv) : nullptr;

      // transposed weights per tap for the input gradient
      std::vector<T> wt;
      if (want_dx) {
        wt.resize(static_cast<size_t>(bg_c.ntaps * Co * Ci));
        for (int64_t j = 0; j < bg_c.ntaps; ++j)
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t co = 0; co < Co; ++co)
              wt[size_t((j * Co + co) * Ci + ci)] =
                  wv->value[(j * Ci + ci) * Co + co];
      }

      const int64_t g2_rows = 2 * bg_c.max_off + bg_c.out2_rows();
      std::vector<T> g2ext(static_cast<size_t>(g2_rows * Co), T(0));
      T* g2 = g2ext.data() + bg_c.max_off * Co;  // aligned with out2 rows
      std::vector<T> xp(static_cast<size_t>(bg_c.xp_rows() * Ci), T(0));
      std::vector<T> dxp;
      if (want_dx) dxp.resize(static_cast<size_t>(bg_c.xp_rows() * Ci), T(0));

      for (int64_t n = 0; n < N; ++n) {
        const int32_t* id = idx->data() + n * pooled_elems;
        const T* gpo = gy.ptr() + n * pooled_elems;
        for (int64_t e = 0; e < pooled_elems; ++e)
          g2[int64_t(id[e]) * Co + e % Co] += gpo[e];

        if (want_dw) {
          detail::fill_padded(xv->value.ptr() + n * bg_c.H * bg_c.W * Ci, xp.data(), bg_c,
                              cfg_c.geom.ph, cfg_c.geom.pw);
          bool fast = false;
#ifdef __AVX512F__
          if constexpr (std::is_same_v<T, float>) {
            if (Ci == 32 && Co == 32) {
              detail::kern::conv_taps_dw32(bg_c.Ho, bg_c.Wo, bg_c.Wp, xp.data(),
                                           bg_c.off.data(), int(bg_c.ntaps), g2,
                                           gw->ptr());
              fast = true;
            }
          }
#endif
          if (!fast)
            for (int64_t j = 0; j < bg_c.ntaps; ++j)
              gemm_at_b_acc<T>(bg_c.out2_rows(), Co, Ci, xp.data() + bg_c.off[size_t(j)] * Ci,
                               Ci, g2, Co, gw->ptr() + j * Ci * Co, Co);
        }

        if (want_dx) {
          bool fast = false;
#ifdef __AVX512F__
          if constexpr (std::is_same_v<T, float>) {
            if (Ci == 32 && Co == 32) {
              // dxp[r] = sum_j g2[r - off_j] * W_j^T over the interior rows
              std::vector<int64_t> offx(static_cast<size_t>(bg_c.ntaps));
              for (int64_t j = 0; j < bg_c.ntaps; ++j)
                offx[size_t(j)] = bg_c.max_off - bg_c.off[size_t(j)];
              const int64_t r0 = cfg_c.geom.ph * bg_c.Wp;
              detail::kern::conv_taps_n32(1, bg_c.H * bg_c.Wp, 0,
                                          g2ext.data() + r0 * Co, Co, offx.data(),
                                          int(bg_c.ntaps), wt.data(),
                                          dxp.data() + r0 * Ci, Ci);
              fast = true;
            }
          }
#endif
          if (!fast) {
            std::fill(dxp.begin(), dxp.end(), T(0));
            for (int64_t j = 0; j < bg_c.ntaps; ++j)
              gemm<T>(true, bg_c.out2_rows(), Ci, Co, g2, Co, wt.data() + j * Co * Ci, Ci,
                      dxp.data() + bg_c.off[size_t(j)] * Ci, Ci);
          }
          T* gxn = gx->ptr() + n * bg_c.H * bg_c.W * Ci;
          for (int64_t h = 0; h < bg_c.H; ++h) {
            const T* src = dxp.data() + ((h + cfg_c.geom.ph) * bg_c.Wp + cfg_c.geom.pw) * Ci;
            T* dst = gxn + h * bg_c.W * Ci;
            for (int64_t k = 0; k < bg_c.W * Ci; ++k) dst[k] += src[k];
          }
        }

        // restore the shared scatter buffer for the next sample
        for (int64_t e = 0; e < pooled_elems; ++e) g2[int64_t(id[e]) * Co + e % Co] = T(0);
      }
    };
  }
  return node;
}

}  // namespace aad

#endif  // AAD_CONV_BLOCK_HPP
