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

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "slimseg/tensor.hpp"

namespace slimseg::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, DType dtype = DType::kFloat64,
                            double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_values(shape, v, dtype, requires_grad);
}

// Values bounded away from zero so ReLU kinks stay outside a +-margin.
inline Tensor random_away_from_zero(const Shape& shape, std::uint64_t seed, double margin = 0.05) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor::from_values(shape, v, DType::kFloat64);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  const auto x = a.to_vector();
  const auto y = b.to_vector();
  double m = 0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

}  // namespace slimseg::testing
