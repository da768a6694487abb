/* Copyright 2026 The SlimSeg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Compiled with -mavx2 -mfma. Nothing in this file may run before
// cpu_supports(Isa::kAvx2) has been checked.

#include "slimseg/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>
#include <cstdint>

namespace slimseg::kernels {
namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr int kWidth = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V set1(T x) { return _mm256_set1_ps(x); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
  static V max(V a, V b) { return _mm256_max_ps(a, b); }
  static V gt_mask(V a, V b) { return _mm256_cmp_ps(a, b, _CMP_GT_OQ); }
  static V bit_and(V a, V b) { return _mm256_and_ps(a, b); }
  static __m256i lane_mask(int count) {
    alignas(32) std::int32_t m[8];
    for (int i = 0; i < 8; ++i) m[i] = i < count ? -1 : 0;
    return _mm256_load_si256(reinterpret_cast<const __m256i*>(m));
  }
  static V mask_load(const T* p, __m256i m) { return _mm256_maskload_ps(p, m); }
  static void mask_store(T* p, __m256i m, V v) { _mm256_maskstore_ps(p, m, v); }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr int kWidth = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V set1(T x) { return _mm256_set1_pd(x); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
  static V max(V a, V b) { return _mm256_max_pd(a, b); }
  static V gt_mask(V a, V b) { return _mm256_cmp_pd(a, b, _CMP_GT_OQ); }
  static V bit_and(V a, V b) { return _mm256_and_pd(a, b); }
  static __m256i lane_mask(int count) {
    alignas(32) std::int64_t m[4];
    for (int i = 0; i < 4; ++i) m[i] = i < count ? -1 : 0;
    return _mm256_load_si256(reinterpret_cast<const __m256i*>(m));
  }
  static V mask_load(const T* p, __m256i m) { return _mm256_maskload_pd(p, m); }
  static void mask_store(T* p, __m256i m, V v) { _mm256_maskstore_pd(p, m, v); }
};

// Register tile of MR rows by two vectors. B panel columns [j, j + 2W).
template <typename Tr, int MR>
inline void tile_full(std::int64_t k, const typename Tr::T* a, std::int64_t lda,
                      const typename Tr::T* b, std::int64_t ldb,
                      typename Tr::T* c, std::int64_t ldc, bool accumulate) {
  using V = typename Tr::V;
  constexpr int W = Tr::kWidth;
  V acc[MR][2];
  for (int r = 0; r < MR; ++r) {
    if (accumulate) {
      acc[r][0] = Tr::load(c + r * ldc);
      acc[r][1] = Tr::load(c + r * ldc + W);
    } else {
      acc[r][0] = Tr::zero();
      acc[r][1] = Tr::zero();
    }
  }
  for (std::int64_t p = 0; p < k; ++p) {
    const V b0 = Tr::load(b + p * ldb);
    const V b1 = Tr::load(b + p * ldb + W);
    for (int r = 0; r < MR; ++r) {
      const V av = Tr::set1(a[r * lda + p]);
      acc[r][0] = Tr::fmadd(av, b0, acc[r][0]);
      acc[r][1] = Tr::fmadd(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    Tr::store(c + r * ldc, acc[r][0]);
    Tr::store(c + r * ldc + W, acc[r][1]);
  }
}

// Column tail: fewer than 2W columns remain.
template <typename Tr, int MR>
inline void tile_tail(std::int64_t k, std::int64_t ncols,
                      const typename Tr::T* a, std::int64_t lda,
                      const typename Tr::T* b, std::int64_t ldb,
                      typename Tr::T* c, std::int64_t ldc, bool accumulate) {
  using V = typename Tr::V;
  constexpr int W = Tr::kWidth;
  const int n0 = static_cast<int>(std::min<std::int64_t>(ncols, W));
  const int n1 = static_cast<int>(std::max<std::int64_t>(ncols - W, 0));
  const __m256i m0 = Tr::lane_mask(n0);
  const __m256i m1 = Tr::lane_mask(n1);
  V acc[MR][2];
  for (int r = 0; r < MR; ++r) {
    if (accumulate) {
      acc[r][0] = Tr::mask_load(c + r * ldc, m0);
      acc[r][1] = n1 > 0 ? Tr::mask_load(c + r * ldc + W, m1) : Tr::zero();
    } else {
      acc[r][0] = Tr::zero();
      acc[r][1] = Tr::zero();
    }
  }
  for (std::int64_t p = 0; p < k; ++p) {
    const V b0 = Tr::mask_load(b + p * ldb, m0);
    const V b1 = n1 > 0 ? Tr::mask_load(b + p * ldb + W, m1) : Tr::zero();
    for (int r = 0; r < MR; ++r) {
      const V av = Tr::set1(a[r * lda + p]);
      acc[r][0] = Tr::fmadd(av, b0, acc[r][0]);
      acc[r][1] = Tr::fmadd(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    Tr::mask_store(c + r * ldc, m0, acc[r][0]);
    if (n1 > 0) Tr::mask_store(c + r * ldc + W, m1, acc[r][1]);
  }
}

template <typename Tr, int MR>
inline void row_block(std::int64_t k, std::int64_t ncols, const typename Tr::T* a,
                      std::int64_t lda, const typename Tr::T* b, std::int64_t ldb,
                      typename Tr::T* c, std::int64_t ldc, bool accumulate) {
  if (ncols == 2 * Tr::kWidth) {
    tile_full<Tr, MR>(k, a, lda, b, ldb, c, ldc, accumulate);
  } else {
    tile_tail<Tr, MR>(k, ncols, a, lda, b, ldb, c, ldc, accumulate);
  }
}

// Column panels outermost so one K x 2W strip of B stays cache resident
// while every row block of A streams past it.
template <typename Tr>
void gemm_avx2(std::int64_t m, std::int64_t n, std::int64_t k,
               const typename Tr::T* a, std::int64_t lda, const typename Tr::T* b,
               std::int64_t ldb, typename Tr::T* c, std::int64_t ldc,
               bool accumulate) {
  constexpr std::int64_t kPanel = 2 * Tr::kWidth;
  if (k == 0) {
    if (!accumulate) {
      for (std::int64_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0);
    }
    return;
  }
  for (std::int64_t j = 0; j < n; j += kPanel) {
    const std::int64_t ncols = std::min(kPanel, n - j);
    std::int64_t i = 0;
    for (; i + 4 <= m; i += 4) {
      row_block<Tr, 4>(k, ncols, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc,
                       accumulate);
    }
    switch (m - i) {
      case 3:
        row_block<Tr, 3>(k, ncols, a + i * lda, lda, b + j, ldb, c + i * ldc + j,
                         ldc, accumulate);
        break;
      case 2:
        row_block<Tr, 2>(k, ncols, a + i * lda, lda, b + j, ldb, c + i * ldc + j,
                         ldc, accumulate);
        break;
      case 1:
        row_block<Tr, 1>(k, ncols, a + i * lda, lda, b + j, ldb, c + i * ldc + j,
                         ldc, accumulate);
        break;
      default:
        break;
    }
  }
}

template <typename Tr>
void axpy_avx2(std::int64_t n, typename Tr::T alpha, const typename Tr::T* x,
               typename Tr::T* y) {
  const auto av = Tr::set1(alpha);
  std::int64_t i = 0;
  for (; i + Tr::kWidth <= n; i += Tr::kWidth) {
    Tr::store(y + i, Tr::fmadd(av, Tr::load(x + i), Tr::load(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename Tr>
void add_avx2(std::int64_t n, const typename Tr::T* a, const typename Tr::T* b,
              typename Tr::T* out) {
  std::int64_t i = 0;
  for (; i + Tr::kWidth <= n; i += Tr::kWidth) {
    Tr::store(out + i, Tr::add(Tr::load(a + i), Tr::load(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename Tr>
void mul_avx2(std::int64_t n, const typename Tr::T* a, const typename Tr::T* b,
              typename Tr::T* out) {
  std::int64_t i = 0;
  for (; i + Tr::kWidth <= n; i += Tr::kWidth) {
    Tr::store(out + i, Tr::mul(Tr::load(a + i), Tr::load(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename Tr>
void scale_avx2(std::int64_t n, typename Tr::T alpha, const typename Tr::T* x,
                typename Tr::T* out) {
  const auto av = Tr::set1(alpha);
  std::int64_t i = 0;
  for (; i + Tr::kWidth <= n; i += Tr::kWidth) {
    Tr::store(out + i, Tr::mul(av, Tr::load(x + i)));
  }
  for (; i < n; ++i) out[i] = alpha * x[i];
}

template <typename Tr>
void relu_avx2(std::int64_t n, const typename Tr::T* x, typename Tr::T* out) {
  const auto z = Tr::zero();
  std::int64_t i = 0;
  for (; i + Tr::kWidth <= n; i += Tr::kWidth) {
    Tr::store(out + i, Tr::max(Tr::load(x + i), z));
  }
  for (; i < n; ++i) out[i] = x[i] > 0 ? x[i] : 0;
}

template <typename Tr>
void relu_backward_avx2(std::int64_t n, const typename Tr::T* x,
                        const typename Tr::T* gy, typename Tr::T* gx) {
  const auto z = Tr::zero();
  std::int64_t i = 0;
  for (; i + Tr::kWidth <= n; i += Tr::kWidth) {
    const auto pass = Tr::bit_and(Tr::gt_mask(Tr::load(x + i), z), Tr::load(gy + i));
    Tr::store(gx + i, Tr::add(Tr::load(gx + i), pass));
  }
  for (; i < n; ++i) {
    if (x[i] > 0) gx[i] += gy[i];
  }
}

template <typename Tr>
constexpr KernelSet<typename Tr::T> make_set() {
  return {&gemm_avx2<Tr>,  &axpy_avx2<Tr>, &add_avx2<Tr>,          &mul_avx2<Tr>,
          &scale_avx2<Tr>, &relu_avx2<Tr>, &relu_backward_avx2<Tr>};
}

const KernelTable kAvx2Table{Isa::kAvx2, make_set<F32>(), make_set<F64>()};

}  // namespace

const KernelTable& avx2_table() { return kAvx2Table; }

}  // namespace slimseg::kernels

#else

namespace slimseg::kernels {

// Built without AVX2 support; cpu_supports(Isa::kAvx2) never routes here.
const KernelTable& avx2_table() { return scalar_table(); }

}  // namespace slimseg::kernels

#endif
