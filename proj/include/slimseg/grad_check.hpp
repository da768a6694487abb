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

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "slimseg/tensor.hpp"

namespace slimseg {

struct GradCheckReport {
  // Worst |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::int64_t entries_checked = 0;
  std::string worst;  // "<tensor>[<flat index>]" of the worst entry
  bool passed = false;
};

inline constexpr double kGradCheckFloor = 1e-6;

// Compares the tape gradient of scalar f at x with central differences.
// x must be float64.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step, double tolerance, double floor = kGradCheckFloor);

// Same comparison for a closure over existing leaf tensors (e.g. model
// parameters). Each leaf is perturbed in place and restored. At most
// `max_entries` evenly spaced entries per leaf are checked (0 = all).
GradCheckReport grad_check_leaves(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                                  double step, double tolerance, std::int64_t max_entries = 0,
                                  double floor = kGradCheckFloor);

}  // namespace slimseg
