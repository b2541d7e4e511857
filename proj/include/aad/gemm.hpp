#ifndef AAD_GEMM_HPP
#define AAD_GEMM_HPP

#include <cstdint>

#include <Eigen/Core>

#ifdef __AVX512F__
#include <immintrin.h>
#endif

namespace aad {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using CMapRM = Eigen::Map<const RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

#ifdef __AVX512F__
// C[M x 32] (+)= A[M x K] * B[K x 32]; A rows contiguous (lda), B/C ld = 32.
// Register-tiled over 8 output rows; dominant shape in the conv layers, where
// per-tap weight blocks are [C_in x C_out] with C_out = 32.
inline void sgemm_n32(bool acc, int64_t M, int64_t K, const float* A, int64_t lda,
                      const float* B, float* C) {
  int64_t m0 = 0;
  for (; m0 + 8 <= M; m0 += 8) {
    const float* a = A + m0 * lda;
    float* c = C + m0 * 32;
    __m512 acc00, acc01, acc10, acc11, acc20, acc21, acc30, acc31;
    __m512 acc40, acc41, acc50, acc51, acc60, acc61, acc70, acc71;
    if (acc) {
      acc00 = _mm512_loadu_ps(c + 0 * 32);      acc01 = _mm512_loadu_ps(c + 0 * 32 + 16);
      acc10 = _mm512_loadu_ps(c + 1 * 32);      acc11 = _mm512_loadu_ps(c + 1 * 32 + 16);
      acc20 = _mm512_loadu_ps(c + 2 * 32);      acc21 = _mm512_loadu_ps(c + 2 * 32 + 16);
      acc30 = _mm512_loadu_ps(c + 3 * 32);      acc31 = _mm512_loadu_ps(c + 3 * 32 + 16);
      acc40 = _mm512_loadu_ps(c + 4 * 32);      acc41 = _mm512_loadu_ps(c + 4 * 32 + 16);
      acc50 = _mm512_loadu_ps(c + 5 * 32);      acc51 = _mm512_loadu_ps(c + 5 * 32 + 16);
      acc60 = _mm512_loadu_ps(c + 6 * 32);      acc61 = _mm512_loadu_ps(c + 6 * 32 + 16);
      acc70 = _mm512_loadu_ps(c + 7 * 32);      acc71 = _mm512_loadu_ps(c + 7 * 32 + 16);
    } else {
      acc00 = acc01 = acc10 = acc11 = acc20 = acc21 = acc30 = acc31 = _mm512_setzero_ps();
      acc40 = acc41 = acc50 = acc51 = acc60 = acc61 = acc70 = acc71 = _mm512_setzero_ps();
    }
    for (int64_t k = 0; k < K; ++k) {
      const __m512 b0 = _mm512_loadu_ps(B + k * 32);
      const __m512 b1 = _mm512_loadu_ps(B + k * 32 + 16);
      __m512 av;
      av = _mm512_set1_ps(a[0 * lda + k]);
      acc00 = _mm512_fmadd_ps(av, b0, acc00);   acc01 = _mm512_fmadd_ps(av, b1, acc01);
      av = _mm512_set1_ps(a[1 * lda + k]);
      acc10 = _mm512_fmadd_ps(av, b0, acc10);   acc11 = _mm512_fmadd_ps(av, b1, acc11);
      av = _mm512_set1_ps(a[2 * lda + k]);
      acc20 = _mm512_fmadd_ps(av, b0, acc20);   acc21 = _mm512_fmadd_ps(av, b1, acc21);
      av = _mm512_set1_ps(a[3 * lda + k]);
      acc30 = _mm512_fmadd_ps(av, b0, acc30);   acc31 = _mm512_fmadd_ps(av, b1, acc31);
      av = _mm512_set1_ps(a[4 * lda + k]);
      acc40 = _mm512_fmadd_ps(av, b0, acc40);   acc41 = _mm512_fmadd_ps(av, b1, acc41);
      av = _mm512_set1_ps(a[5 * lda + k]);
      acc50 = _mm512_fmadd_ps(av, b0, acc50);   acc51 = _mm512_fmadd_ps(av, b1, acc51);
      av = _mm512_set1_ps(a[6 * lda + k]);
      acc60 = _mm512_fmadd_ps(av, b0, acc60);   acc61 = _mm512_fmadd_ps(av, b1, acc61);
      av = _mm512_set1_ps(a[7 * lda + k]);
      acc70 = _mm512_fmadd_ps(av, b0, acc70);   acc71 = _mm512_fmadd_ps(av, b1, acc71);
    }
    _mm512_storeu_ps(c + 0 * 32, acc00);        _mm512_storeu_ps(c + 0 * 32 + 16, acc01);
    _mm512_storeu_ps(c + 1 * 32, acc10);        _mm512_storeu_ps(c + 1 * 32 + 16, acc11);
    _mm512_storeu_ps(c + 2 * 32, acc20);        _mm512_storeu_ps(c + 2 * 32 + 16, acc21);
    _mm512_storeu_ps(c + 3 * 32, acc30);        _mm512_storeu_ps(c + 3 * 32 + 16, acc31);
    _mm512_storeu_ps(c + 4 * 32, acc40);        _mm512_storeu_ps(c + 4 * 32 + 16, acc41);
    _mm512_storeu_ps(c + 5 * 32, acc50);        _mm512_storeu_ps(c + 5 * 32 + 16, acc51);
    _mm512_storeu_ps(c + 6 * 32, acc60);        _mm512_storeu_ps(c + 6 * 32 + 16, acc61);
    _mm512_storeu_ps(c + 7 * 32, acc70);        _mm512_storeu_ps(c + 7 * 32 + 16, acc71);
  }
  for (; m0 < M; ++m0) {  // tail rows
    const float* a = A + m0 * lda;
    float* c = C + m0 * 32;
    __m512 s0 = acc ? _mm512_loadu_ps(c) : _mm512_setzero_ps();
    __m512 s1 = acc ? _mm512_loadu_ps(c + 16) : _mm512_setzero_ps();
    for (int64_t k = 0; k < K; ++k) {
      const __m512 av = _mm512_set1_ps(a[k]);
      s0 = _mm512_fmadd_ps(av, _mm512_loadu_ps(B + k * 32), s0);
      s1 = _mm512_fmadd_ps(av, _mm512_loadu_ps(B + k * 32 + 16), s1);
    }
    _mm512_storeu_ps(c, s0);
    _mm512_storeu_ps(c + 16, s1);
  }
}

// C[32 x 32] += A[M x 32]^T * G[M x 32]; all contiguous. Used for per-tap
// weight gradients. M is chunked so the A/G slab stays in L1 across the four
// 8-row passes over C.
inline void sgemm_t32_acc(int64_t M, const float* A, int64_t lda, const float* G,
                          int64_t ldg, float* C) {
  constexpr int64_t kChunk = 128;
  for (int64_t mb = 0; mb < M; mb += kChunk) {
    const int64_t me = (mb + kChunk < M) ? mb + kChunk : M;
    for (int cb = 0; cb < 32; cb += 8) {
      float* c = C + cb * 32;
      __m512 acc00 = _mm512_loadu_ps(c + 0 * 32), acc01 = _mm512_loadu_ps(c + 0 * 32 + 16);
      __m512 acc10 = _mm512_loadu_ps(c + 1 * 32), acc11 = _mm512_loadu_ps(c + 1 * 32 + 16);
      __m512 acc20 = _mm512_loadu_ps(c + 2 * 32), acc21 = _mm512_loadu_ps(c + 2 * 32 + 16);
      __m512 acc30 = _mm512_loadu_ps(c + 3 * 32), acc31 = _mm512_loadu_ps(c + 3 * 32 + 16);
      __m512 acc40 = _mm512_loadu_ps(c + 4 * 32), acc41 = _mm512_loadu_ps(c + 4 * 32 + 16);
      __m512 acc50 = _mm512_loadu_ps(c + 5 * 32), acc51 = _mm512_loadu_ps(c + 5 * 32 + 16);
      __m512 acc60 = _mm512_loadu_ps(c + 6 * 32), acc61 = _mm512_loadu_ps(c + 6 * 32 + 16);
      __m512 acc70 = _mm512_loadu_ps(c + 7 * 32), acc71 = _mm512_loadu_ps(c + 7 * 32 + 16);
      for (int64_t m = mb; m < me; ++m) {
        const float* a = A + m * lda + cb;
        const __m512 g0 = _mm512_loadu_ps(G + m * ldg);
        const __m512 g1 = _mm512_loadu_ps(G + m * ldg + 16);
        __m512 av;
        av = _mm512_set1_ps(a[0]);
        acc00 = _mm512_fmadd_ps(av, g0, acc00); acc01 = _mm512_fmadd_ps(av, g1, acc01);
        av = _mm512_set1_ps(a[1]);
        acc10 = _mm512_fmadd_ps(av, g0, acc10); acc11 = _mm512_fmadd_ps(av, g1, acc11);
        av = _mm512_set1_ps(a[2]);
        acc20 = _mm512_fmadd_ps(av, g0, acc20); acc21 = _mm512_fmadd_ps(av, g1, acc21);
        av = _mm512_set1_ps(a[3]);
        acc30 = _mm512_fmadd_ps(av, g0, acc30); acc31 = _mm512_fmadd_ps(av, g1, acc31);
        av = _mm512_set1_ps(a[4]);
        acc40 = _mm512_fmadd_ps(av, g0, acc40); acc41 = _mm512_fmadd_ps(av, g1, acc41);
        av = _mm512_set1_ps(a[5]);
        acc50 = _mm512_fmadd_ps(av, g0, acc50); acc51 = _mm512_fmadd_ps(av, g1, acc51);
        av = _mm512_set1_ps(a[6]);
        acc60 = _mm512_fmadd_ps(av, g0, acc60); acc61 = _mm512_fmadd_ps(av, g1, acc61);
        av = _mm512_set1_ps(a[7]);
        acc70 = _mm512_fmadd_ps(av, g0, acc70); acc71 = _mm512_fmadd_ps(av, g1, acc71);
      }
      _mm512_storeu_ps(c + 0 * 32, acc00);      _mm512_storeu_ps(c + 0 * 32 + 16, acc01);
      _mm512_storeu_ps(c + 1 * 32, acc10);      _mm512_storeu_ps(c + 1 * 32 + 16, acc11);
      _mm512_storeu_ps(c + 2 * 32, acc20);      _mm512_storeu_ps(c + 2 * 32 + 16, acc21);
      _mm512_storeu_ps(c + 3 * 32, acc30);      _mm512_storeu_ps(c + 3 * 32 + 16, acc31);
      _mm512_storeu_ps(c + 4 * 32, acc40);      _mm512_storeu_ps(c + 4 * 32 + 16, acc41);
      _mm512_storeu_ps(c + 5 * 32, acc50);      _mm512_storeu_ps(c + 5 * 32 + 16, acc51);
      _mm512_storeu_ps(c + 6 * 32, acc60);      _mm512_storeu_ps(c + 6 * 32 + 16, acc61);
      _mm512_storeu_ps(c + 7 * 32, acc70);      _mm512_storeu_ps(c + 7 * 32 + 16, acc71);
    }
  }
}
#endif  // __AVX512F__

#ifdef __AVX512F__
namespace kern {

// Fused-tap convolution kernel, N = 32 outputs.
//
// C rows are processed in segments (seg s covers C rows [s*stride, s*stride+len));
// row r accumulates sum_j A[(r + off[j]) * lda .. +K] * B_j where B_j is the
// j-th [K x 32] block of B. Keeping the 8-row accumulators live across all
// taps avoids re-streaming C once per tap.
inline void conv_taps_n32(int64_t n_seg, int64_t seg_len, int64_t seg_stride,
                          const float* A, int64_t lda, const int64_t* off, int ntaps,
                          const float* B, float* C, int64_t ldc) {
  for (int64_t s = 0; s < n_seg; ++s) {
    const int64_t r_base = s * seg_stride;
    int64_t r = 0;
    for (; r + 8 <= seg_len; r += 8) {
      float* c = C + (r_base + r) * ldc;
      __m512 a00 = _mm512_setzero_ps(), a01 = _mm512_setzero_ps();
      __m512 a10 = _mm512_setzero_ps(), a11 = _mm512_setzero_ps();
      __m512 a20 = _mm512_setzero_ps(), a21 = _mm512_setzero_ps();
      __m512 a30 = _mm512_setzero_ps(), a31 = _mm512_setzero_ps();
      __m512 a40 = _mm512_setzero_ps(), a41 = _mm512_setzero_ps();
      __m512 a50 = _mm512_setzero_ps(), a51 = _mm512_setzero_ps();
      __m512 a60 = _mm512_setzero_ps(), a61 = _mm512_setzero_ps();
      __m512 a70 = _mm512_setzero_ps(), a71 = _mm512_setzero_ps();
      for (int j = 0; j < ntaps; ++j) {
        const float* a = A + (r_base + r + off[j]) * lda;
        const float* b = B + int64_t(j) * lda * 32;
        for (int64_t k = 0; k < lda; ++k) {
          const __m512 b0 = _mm512_loadu_ps(b + k * 32);
          const __m512 b1 = _mm512_loadu_ps(b + k * 32 + 16);
          __m512 av;
          av = _mm512_set1_ps(a[0 * lda + k]);
          a00 = _mm512_fmadd_ps(av, b0, a00);  a01 = _mm512_fmadd_ps(av, b1, a01);
          av = _mm512_set1_ps(a[1 * lda + k]);
          a10 = _mm512_fmadd_ps(av, b0, a10);  a11 = _mm512_fmadd_ps(av, b1, a11);
          av = _mm512_set1_ps(a[2 * lda + k]);
          a20 = _mm512_fmadd_ps(av, b0, a20);  a21 = _mm512_fmadd_ps(av, b1, a21);
          av = _mm512_set1_ps(a[3 * lda + k]);
          a30 = _mm512_fmadd_ps(av, b0, a30);  a31 = _mm512_fmadd_ps(av, b1, a31);
          av = _mm512_set1_ps(a[4 * lda + k]);
          a40 = _mm512_fmadd_ps(av, b0, a40);  a41 = _mm512_fmadd_ps(av, b1, a41);
          av = _mm512_set1_ps(a[5 * lda + k]);
          a50 = _mm512_fmadd_ps(av, b0, a50);  a51 = _mm512_fmadd_ps(av, b1, a51);
          av = _mm512_set1_ps(a[6 * lda + k]);
          a60 = _mm512_fmadd_ps(av, b0, a60);  a61 = _mm512_fmadd_ps(av, b1, a61);
          av = _mm512_set1_ps(a[7 * lda + k]);
          a70 = _mm512_fmadd_ps(av, b0, a70);  a71 = _mm512_fmadd_ps(av, b1, a71);
        }
      }
      _mm512_storeu_ps(c + 0 * ldc, a00);  _mm512_storeu_ps(c + 0 * ldc + 16, a01);
      _mm512_storeu_ps(c + 1 * ldc, a10);  _mm512_storeu_ps(c + 1 * ldc + 16, a11);
      _mm512_storeu_ps(c + 2 * ldc, a20);  _mm512_storeu_ps(c + 2 * ldc + 16, a21);
      _mm512_storeu_ps(c + 3 * ldc, a30);  _mm512_storeu_ps(c + 3 * ldc + 16, a31);
      _mm512_storeu_ps(c + 4 * ldc, a40);  _mm512_storeu_ps(c + 4 * ldc + 16, a41);
      _mm512_storeu_ps(c + 5 * ldc, a50);  _mm512_storeu_ps(c + 5 * ldc + 16, a51);
      _mm512_storeu_ps(c + 6 * ldc, a60);  _mm512_storeu_ps(c + 6 * ldc + 16, a61);
      _mm512_storeu_ps(c + 7 * ldc, a70);  _mm512_storeu_ps(c + 7 * ldc + 16, a71);
    }
    for (; r < seg_len; ++r) {
      float* c = C + (r_base + r) * ldc;
      __m512 s0 = _mm512_setzero_ps(), s1 = _mm512_setzero_ps();
      for (int j = 0; j < ntaps; ++j) {
        const float* a = A + (r_base + r + off[j]) * lda;
        const float* b = B + int64_t(j) * lda * 32;
        for (int64_t k = 0; k < lda; ++k) {
          const __m512 av = _mm512_set1_ps(a[k]);
          s0 = _mm512_fmadd_ps(av, _mm512_loadu_ps(b + k * 32), s0);
          s1 = _mm512_fmadd_ps(av, _mm512_loadu_ps(b + k * 32 + 16), s1);
        }
      }
      _mm512_storeu_ps(c, s0);
      _mm512_storeu_ps(c + 16, s1);
    }
  }
}

// Per-tap weight gradient: dW_j[32 x 32] += sum over segment rows r of
// A[(r + off[j])]^T (x) G[r], with a row chunking that keeps the G slab hot
// across the four 8-row blocks of each dW tile.
inline void conv_taps_dw32(int64_t n_seg, int64_t seg_len, int64_t seg_stride,
                           const float* A, const int64_t* off, int ntaps, const float* G,
                           float* dW) {
  constexpr int64_t kChunk = 128;
  for (int64_t s = 0; s < n_seg; ++s) {
    const int64_t r_base = s * seg_stride;
    for (int64_t cb = 0; cb < seg_len; cb += kChunk) {
      const int64_t ce = cb + kChunk < seg_len ? cb + kChunk : seg_len;
      for (int j = 0; j < ntaps; ++j) {
        float* w = dW + int64_t(j) * 32 * 32;
        const float* a_base = A + (r_base + off[j]) * 32;
        const float* g_base = G + r_base * 32;
        for (int wb = 0; wb < 32; wb += 8) {
          float* wrow = w + wb * 32;
          __m512 w00 = _mm512_loadu_ps(wrow + 0 * 32), w01 = _mm512_loadu_ps(wrow + 0 * 32 + 16);
          __m512 w10 = _mm512_loadu_ps(wrow + 1 * 32), w11 = _mm512_loadu_ps(wrow + 1 * 32 + 16);
          __m512 w20 = _mm512_loadu_ps(wrow + 2 * 32), w21 = _mm512_loadu_ps(wrow + 2 * 32 + 16);
          __m512 w30 = _mm512_loadu_ps(wrow + 3 * 32), w31 = _mm512_loadu_ps(wrow + 3 * 32 + 16);
          __m512 w40 = _mm512_loadu_ps(wrow + 4 * 32), w41 = _mm512_loadu_ps(wrow + 4 * 32 + 16);
          __m512 w50 = _mm512_loadu_ps(wrow + 5 * 32), w51 = _mm512_loadu_ps(wrow + 5 * 32 + 16);
          __m512 w60 = _mm512_loadu_ps(wrow + 6 * 32), w61 = _mm512_loadu_ps(wrow + 6 * 32 + 16);
          __m512 w70 = _mm512_loadu_ps(wrow + 7 * 32), w71 = _mm512_loadu_ps(wrow + 7 * 32 + 16);
          for (int64_t m = cb; m < ce; ++m) {
            const float* a = a_base + m * 32 + wb;
            const __m512 g0 = _mm512_loadu_ps(g_base + m * 32);
            const __m512 g1 = _mm512_loadu_ps(g_base + m * 32 + 16);
            __m512 av;
            av = _mm512_set1_ps(a[0]);
            w00 = _mm512_fmadd_ps(av, g0, w00);  w01 = _mm512_fmadd_ps(av, g1, w01);
            av = _mm512_set1_ps(a[1]);
            w10 = _mm512_fmadd_ps(av, g0, w10);  w11 = _mm512_fmadd_ps(av, g1, w11);
            av = _mm512_set1_ps(a[2]);
            w20 = _mm512_fmadd_ps(av, g0, w20);  w21 = _mm512_fmadd_ps(av, g1, w21);
            av = _mm512_set1_ps(a[3]);
            w30 = _mm512_fmadd_ps(av, g0, w30);  w31 = _mm512_fmadd_ps(av, g1, w31);
            av = _mm512_set1_ps(a[4]);
            w40 = _mm512_fmadd_ps(av, g0, w40);  w41 = _mm512_fmadd_ps(av, g1, w41);
            av = _mm512_set1_ps(a[5]);
            w50 = _mm512_fmadd_ps(av, g0, w50);  w51 = _mm512_fmadd_ps(av, g1, w51);
            av = _mm512_set1_ps(a[6]);
            w60 = _mm512_fmadd_ps(av, g0, w60);  w61 = _mm512_fmadd_ps(av, g1, w61);
            av = _mm512_set1_ps(a[7]);
            w70 = _mm512_fmadd_ps(av, g0, w70);  w71 = _mm512_fmadd_ps(av, g1, w71);
          }
          _mm512_storeu_ps(wrow + 0 * 32, w00);  _mm512_storeu_ps(wrow + 0 * 32 + 16, w01);
          _mm512_storeu_ps(wrow + 1 * 32, w10);  _mm512_storeu_ps(wrow + 1 * 32 + 16, w11);
          _mm512_storeu_ps(wrow + 2 * 32, w20);  _mm512_storeu_ps(wrow + 2 * 32 + 16, w21);
          _mm512_storeu_ps(wrow + 3 * 32, w30);  _mm512_storeu_ps(wrow + 3 * 32 + 16, w31);
          _mm512_storeu_ps(wrow + 4 * 32, w40);  _mm512_storeu_ps(wrow + 4 * 32 + 16, w41);
          _mm512_storeu_ps(wrow + 5 * 32, w50);  _mm512_storeu_ps(wrow + 5 * 32 + 16, w51);
          _mm512_storeu_ps(wrow + 6 * 32, w60);  _mm512_storeu_ps(wrow + 6 * 32 + 16, w61);
          _mm512_storeu_ps(wrow + 7 * 32, w70);  _mm512_storeu_ps(wrow + 7 * 32 + 16, w71);
        }
      }
    }
  }
}

}  // namespace kern
#endif  // __AVX512F__

}  // namespace detail

// C[M x N] (+)= A[M x K] * B[K x N], row-major with leading dims.
template <typename T>
void gemm(bool accumulate, int64_t M, int64_t N, int64_t K, const T* A, int64_t lda,
          const T* B, int64_t ldb, T* C, int64_t ldc) {
  if (M <= 0 || N <= 0) return;
#ifdef __AVX512F__
  if constexpr (std::is_same_v<T, float>) {
    if (N == 32 && ldb == 32 && ldc == 32 && K > 0) {
      detail::sgemm_n32(accumulate, M, K, A, lda, B, C);
      return;
    }
  }
#endif
  detail::CMapRM<T> a(A, M, K, Eigen::OuterStride<>(lda));
  detail::CMapRM<T> b(B, K, N, Eigen::OuterStride<>(ldb));
  detail::MapRM<T> c(C, M, N, Eigen::OuterStride<>(ldc));
  if (accumulate)
    c.noalias() += a * b;
  else
    c.noalias() = a * b;
}

// C[K x N] += A[M x K]^T * B[M x N] (row-major). Weight-gradient shape.
template <typename T>
void gemm_at_b_acc(int64_t M, int64_t N, int64_t K, const T* A, int64_t lda, const T* B,
                   int64_t ldb, T* C, int64_t ldc) {
  if (M <= 0 || N <= 0 || K <= 0) return;
#ifdef __AVX512F__
  if constexpr (std::is_same_v<T, float>) {
    if (N == 32 && K == 32 && ldb == 32 && ldc == 32) {
      detail::sgemm_t32_acc(M, A, lda, B, ldb, C);
      return;
    }
  }
#endif
  detail::CMapRM<T> a(A, M, K, Eigen::OuterStride<>(lda));
  detail::CMapRM<T> b(B, M, N, Eigen::OuterStride<>(ldb));
  detail::MapRM<T> c(C, K, N, Eigen::OuterStride<>(ldc));
  c.noalias() += a.transpose() * b;
}

}  // namespace aad

#endif  // AAD_GEMM_HPP
