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

#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>

#include "slimseg/kernels.hpp"

namespace slimseg::kernels {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(__x86_64__) || defined(__i386__)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

namespace {

const KernelTable& select() {
  // SLIMSEG_ISA=scalar forces the reference kernels.
  if (const char* env = std::getenv("SLIMSEG_ISA")) {
    const std::string_view want(env);
    if (want == "scalar") return scalar_table();
    if (want == "avx2") {
      if (!cpu_supports(Isa::kAvx2)) {
        throw std::runtime_error("SLIMSEG_ISA=avx2 but the CPU lacks AVX2/FMA");
      }
      return avx2_table();
    }
    throw std::runtime_error("unknown SLIMSEG_ISA value: " + std::string(want));
  }
  return cpu_supports(Isa::kAvx2) ? avx2_table() : scalar_table();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace slimseg::kernels
