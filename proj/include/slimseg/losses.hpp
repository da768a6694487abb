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

// Segmentation, distillation and boundary loss terms, the boundary masks that
// select pixels for the boundary-guided term, and their per-width
// combination.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slimseg/segnet.hpp"
#include "slimseg/tensor.hpp"

namespace slimseg {

inline constexpr std::uint8_t kIgnoreLabel = 255;

// Per-pixel u8 map of shape [batch, height, width].
struct LabelMap {
  std::int64_t batch = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(std::int64_t b, std::int64_t h, std::int64_t w, std::uint8_t fill = 0)
      : batch(b), height(h), width(w), data(static_cast<std::size_t>(b * h * w), fill) {}

  std::size_t size() const { return data.size(); }
  std::int64_t plane() const { return height * width; }
  std::uint8_t& at(std::int64_t b, std::int64_t y, std::int64_t x) {
    return data[static_cast<std::size_t>((b * height + y) * width + x)];
  }
  std::uint8_t at(std::int64_t b, std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>((b * height + y) * width + x)];
  }
  bool operator==(const LabelMap&) const = default;
};

// {0,1} map as a [B,1,H,W] tensor.
Tensor to_tensor(const LabelMap& map, DType dtype);

struct OhemConfig {
  double keep_threshold = 0.7;
  double min_kept_fraction = 1.0 / 16;
};

struct LossConfig {
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double tau = 0.7;
  int boundary_radius = 3;
  int ignore_index = kIgnoreLabel;
  std::optional<OhemConfig> ohem = OhemConfig{};

  void validate() const;
};

// valid(u, v) == (p_b(u, v) > tau).
struct BoundaryMask {
  std::int64_t batch = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> valid;

  std::size_t count() const;
};

// Mean -log softmax at the true class over non-ignored pixels, optionally
// restricted by OHEM. All-ignored input gives 0.
Tensor cross_entropy(const Tensor& logits, const LabelMap& labels, const LossConfig& cfg);

// Mean over pixels of -sum_k teacher_k * log softmax(student)_k. The teacher
// must not require grad.
Tensor soft_target_ce(const Tensor& student_logits, const Tensor& teacher_probs);

// Mean binary cross-entropy; targets may be soft. p is clamped to
// [1e-7, 1 - 1e-7] before the logs.
Tensor binary_ce(const Tensor& p, const Tensor& target);

BoundaryMask boundary_mask(const Tensor& p_b, double tau);
// Mask from a {0,1} boundary map: valid where the map is 1.
BoundaryMask mask_from_map(const LabelMap& boundary);

// Restricted to valid (and, for masked_ce, non-ignored) pixels. An empty
// selection gives 0 with zero gradient.
Tensor masked_ce(const Tensor& logits, const LabelMap& labels, const BoundaryMask& mask,
                 const LossConfig& cfg);
Tensor masked_kd(const Tensor& student_logits, const Tensor& teacher_probs,
                 const BoundaryMask& mask);

// 1 where a pixel with a different, non-ignored label lies within Euclidean
// distance <= radius; ignored pixels are 0.
LabelMap boundary_gt(const LabelMap& labels, int radius, int ignore_index = kIgnoreLabel);

// Per-pixel entropy of a probability map, averaged (the lower bound of
// soft_target_ce for a fixed teacher).
double mean_entropy(const Tensor& probs);

struct GroundTruth {
  LabelMap labels;
  LabelMap boundary;  // boundary_gt(labels)
  Tensor boundary_tensor;
};

GroundTruth make_ground_truth(const LabelMap& labels, const LossConfig& cfg, DType dtype);

// Detached larger-width predictions supervising one student width. Loss
// terms are averaged over the entries.
struct TeacherSet {
  std::vector<Tensor> seg_probs;
  std::vector<Tensor> boundary_probs;
};

struct LossTerms {
  Tensor seg;       // CE against ground truth, or KD against the teachers
  Tensor boundary;  // BCE against y_b, or binary KD against teacher p_b
  Tensor guided;    // masked CE or masked KD
  Tensor total;     // seg + lambda1 * boundary + lambda2 * guided
  bool supervised = false;
};

// Loss of one width. `teacher` is required unless `largest`. The boundary
// mask uses this width's own p_b, or ground-truth boundaries when lambda1 is 0.
LossTerms width_loss(const ForwardOutput& out, bool largest, const TeacherSet* teacher,
                     const GroundTruth& gt, const LossConfig& cfg);

struct CombinedLoss {
  Tensor total;
  double seg = 0;       // sum over widths of the seg terms
  double boundary = 0;  // sum over widths of the boundary terms
  double guided = 0;
  std::vector<LossTerms> per_width;
};

// Plain sum of the per-width totals (no averaging over widths).
CombinedLoss combine_losses(std::vector<LossTerms> per_width);

// Whether the forward pass must run the boundary head for this config.
inline bool needs_boundary(const LossConfig& cfg) { return cfg.lambda1 > 0; }

}  // namespace slimseg
