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

#pragma once

// Data-parallel inner loops used by the tensor core. Every kernel has a
// portable scalar reference and an AVX2/FMA variant; the variant is chosen
// once at startup from CPUID (or the SLIMSEG_ISA environment variable) and
// stays fixed for the life of the process, so reruns are bitwise repeatable.
//
// Accumulation order is identical in both variants (k ascending for GEMM,
// element order for the pointwise kernels). The AVX2 variant fuses
// multiply-add, so results agree with the reference only to rounding.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace slimseg::kernels {

enum class Isa : std::uint8_t { kScalar = 0, kAvx2 = 1 };

std::string_view isa_name(Isa isa);

template <typename T>
struct KernelSet {
  // C[m,n] (+)= sum_k A[m,k] * B[k,n]; row-major with leading dimensions.
  void (*gemm)(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
               std::int64_t lda, const T* b, std::int64_t ldb, T* c,
               std::int64_t ldc, bool accumulate);
  // y[i] += alpha * x[i]
  void (*axpy)(std::int64_t n, T alpha, const T* x, T* y);
  // out[i] = a[i] + b[i]
  void (*add)(std::int64_t n, const T* a, const T* b, T* out);
  // out[i] = a[i] * b[i]
  void (*mul)(std::int64_t n, const T* a, const T* b, T* out);
  // out[i] = alpha * x[i]
  void (*scale)(std::int64_t n, T alpha, const T* x, T* out);
  // out[i] = max(x[i], 0)
  void (*relu)(std::int64_t n, const T* x, T* out);
  // gx[i] += x[i] > 0 ? gy[i] : 0
  void (*relu_backward)(std::int64_t n, const T* x, const T* gy, T* gx);
};

struct KernelTable {
  Isa isa;
  KernelSet<float> f32;
  KernelSet<double> f64;
};

const KernelTable& scalar_table();
// Only valid to call through when cpu_supports(Isa::kAvx2) is true.
const KernelTable& avx2_table();

bool cpu_supports(Isa isa);

// Table selected for this process.
const KernelTable& active();

template <typename T>
const KernelSet<T>& active_set();

template <>
inline const KernelSet<float>& active_set<float>() {
  return active().f32;
}
template <>
inline const KernelSet<double>& active_set<double>() {
  return active().f64;
}

}  // namespace slimseg::kernels
