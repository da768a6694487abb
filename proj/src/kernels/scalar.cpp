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

#include <algorithm>
#include <cstdint>

#include "slimseg/kernels.hpp"

namespace slimseg::kernels {
namespace {

template <typename T>
void gemm_ref(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
              std::int64_t lda, const T* b, std::int64_t ldb, T* c,
              std::int64_t ldc, bool accumulate) {
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    const T* arow = a + i * lda;
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * ldb;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void axpy_ref(std::int64_t n, T alpha, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void add_ref(std::int64_t n, const T* a, const T* b, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void mul_ref(std::int64_t n, const T* a, const T* b, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale_ref(std::int64_t n, T alpha, const T* x, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

template <typename T>
void relu_ref(std::int64_t n, const T* x, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward_ref(std::int64_t n, const T* x, const T* gy, T* gx) {
  for (std::int64_t i = 0; i < n; ++i) {
    if (x[i] > T(0)) gx[i] += gy[i];
  }
}

template <typename T>
constexpr KernelSet<T> make_set() {
  return {&gemm_ref<T>, &axpy_ref<T>,  &add_ref<T>,          &mul_ref<T>,
          &scale_ref<T>, &relu_ref<T>, &relu_backward_ref<T>};
}

constexpr KernelTable kScalarTable{Isa::kScalar, make_set<float>(),
                                   make_set<double>()};

}  // namespace

const KernelTable& scalar_table() { return kScalarTable; }

}  // namespace slimseg::kernels
