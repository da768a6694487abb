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

#include "slimseg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace slimseg {
namespace {

double eval_plain(const std::function<Tensor()>& f) {
  const Tensor out = f();
  if (out.numel() != 1) {
    throw ShapeError("grad_check: function must return a scalar, got " + shape_str(out.shape()));
  }
  return out.item();
}

void compare(double analytic, double numeric, double floor, const std::string& where,
             GradCheckReport& report) {
  const double abs_err = std::abs(analytic - numeric);
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  const double rel = abs_err / denom;
  report.max_abs_error = std::max(report.max_abs_error, abs_err);
  if (rel > report.max_rel_error || report.entries_checked == 0) {
    if (rel >= report.max_rel_error) report.worst = where;
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  ++report.entries_checked;
}

}  // namespace

GradCheckReport grad_check_leaves(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                                  double step, double tolerance, std::int64_t max_entries,
                                  double floor) {
  for (Tensor& t : leaves) {
    if (t.dtype() != DType::kFloat64) {
      throw std::invalid_argument("grad_check: leaves must be float64");
    }
    if (!t.is_leaf()) throw std::invalid_argument("grad_check: tensors must be leaves");
  }

  std::vector<bool> had_grad;
  for (Tensor& t : leaves) {
    had_grad.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = f();
    if (loss.numel() != 1) {
      throw ShapeError("grad_check: function must return a scalar, got " +
                       shape_str(loss.shape()));
    }
    tape.backward(loss);
  }

  GradCheckReport report;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& t = leaves[li];
    const std::vector<double> analytic = t.grad_vector();
    auto values = t.mutable_values<double>();
    const auto n = static_cast<std::int64_t>(values.size());
    const std::int64_t stride =
        (max_entries > 0 && n > max_entries) ? (n + max_entries - 1) / max_entries : 1;
    for (std::int64_t i = 0; i < n; i += stride) {
      const auto k = static_cast<std::size_t>(i);
      const double saved = values[k];
      values[k] = saved + step;
      const double up = eval_plain(f);
      values[k] = saved - step;
      const double down = eval_plain(f);
      values[k] = saved;
      const double numeric = (up - down) / (2 * step);
      compare(analytic[k], numeric, floor,
              "leaf" + std::to_string(li) + "[" + std::to_string(i) + "]", report);
    }
  }
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    leaves[li].drop_grad();
    leaves[li].set_requires_grad(had_grad[li]);
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step, double tolerance, double floor) {
  if (x.dtype() != DType::kFloat64) {
    throw std::invalid_argument("grad_check: input must be float64");
  }
  Tensor probe = x.clone();
  Tensor leaves[] = {probe};
  return grad_check_leaves([&] { return f(leaves[0]); }, leaves, step, tolerance, 0, floor);
}

}  // namespace slimseg
