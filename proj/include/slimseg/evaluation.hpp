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

// Segmentation metrics and the boundary-distance error analysis.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "slimseg/data.hpp"
#include "slimseg/losses.hpp"
#include "slimseg/segnet.hpp"

namespace slimseg {

// Entry (g, p) counts pixels with ground truth g predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0);

  int num_classes() const { return k_; }
  std::int64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt * k_ + pred)]; }
  std::int64_t total() const;
  void add(int gt, int pred, std::int64_t n = 1);
  void merge(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

// Skips pixels whose ground truth is ignore_index; any other out-of-range id
// throws std::invalid_argument.
void update_confusion(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt,
                      int ignore_index = kIgnoreLabel);

struct MiouResult {
  double miou = 0;
  std::vector<double> iou;     // NaN for absent classes
  std::vector<bool> present;   // class occurs in prediction or ground truth
};

// Classes absent from both prediction and ground truth are left out of the
// mean; throws if every class is absent.
MiouResult miou(const ConfusionMatrix& cm);

// Exact squared Euclidean distance to the nearest 1 in each [H,W] plane
// (separable lower-envelope transform). Throws if a plane has no 1.
std::vector<std::int64_t> squared_distance_transform(const LabelMap& boundary);
std::vector<double> distance_transform(const LabelMap& boundary);

struct DistanceHistogram {
  std::vector<double> edges;  // bins are [edges[i], edges[i+1])
  std::vector<std::int64_t> counts;
  std::int64_t total() const;
};

std::vector<double> default_distance_edges();  // 0,1,2,3,4,5,10,inf

// Bins every mispredicted, non-ignored pixel by its distance to the
// radius-1 ground-truth boundary of its own image.
DistanceHistogram error_distance_histogram(const LabelMap& pred, const LabelMap& gt,
                                           int ignore_index = kIgnoreLabel,
                                           std::vector<double> edges = default_distance_edges());
void merge_histogram(DistanceHistogram& into, const DistanceHistogram& other);

struct DiffMap {
  std::int64_t batch = 0, height = 0, width = 0;
  std::vector<int> cells;  // -1 where the predictions agree, else the gt id
  std::int64_t disagree = 0;
  double ratio = 0;        // disagree / pixels
};

DiffMap diff_map(const LabelMap& pred_a, const LabelMap& pred_b, const LabelMap& gt);

// Eval-mode arg-max prediction at one width.
LabelMap predict(const SlimSegModel& model, const Tensor& images, std::size_t width_index);

// Confusion matrix per requested width over a list of samples.
std::vector<ConfusionMatrix> evaluate_widths(const SlimSegModel& model,
                                             const std::vector<Sample>& samples,
                                             const std::vector<std::size_t>& width_indices,
                                             std::size_t batch_size = 8);

struct WidthMetrics {
  double width = 0;
  double miou = 0;
  std::vector<double> iou;
  double flops = 0;
  std::int64_t params = 0;
};

// Header plus one tab-separated row per width.
std::string width_report(const std::vector<WidthMetrics>& rows);
// bin_low, bin_high, count rows.
std::string histogram_report(const DistanceHistogram& h);

}  // namespace slimseg
