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

// Synthetic segmentation scenes, the flip/scale/crop augmentation, batching,
// and the SLSD1 sample file format.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "slimseg/losses.hpp"
#include "slimseg/tensor.hpp"

namespace slimseg {

struct SynthConfig {
  int num_classes = 5;  // background + shape classes
  std::int64_t height = 64;
  std::int64_t width = 64;
  int min_shapes = 2;
  int max_shapes = 5;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

// image [3,H,W] float32 in [0,1]; labels and boundary are single-image maps
// (batch 1).
struct Sample {
  Tensor image;
  LabelMap labels;
  LabelMap boundary;
  int num_classes = 0;

  std::int64_t height() const { return labels.height; }
  std::int64_t width() const { return labels.width; }
};

enum class ShapeKind { kRect, kDisk, kTriangle };

// Deterministic in (cfg.seed, index). Shapes are painted in order, so later
// ones occlude earlier ones.
Sample synth_generate(const SynthConfig& cfg, std::uint64_t index,
                      int boundary_radius = 3);

// Same scene with an explicit shape count (0 gives pure background).
Sample synth_generate_with(const SynthConfig& cfg, std::uint64_t index, int shape_count,
                           int boundary_radius = 3);

// Mean RGB of a class; shapes jitter around it.
std::vector<double> class_color(int cls, int num_classes);

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  // Top-left corner of the crop window in the scaled image; may be negative
  // or run past the edge, which pads with ignore labels and a zero image.
  std::int64_t crop_y = 0;
  std::int64_t crop_x = 0;
};

struct AugmentRange {
  double min_scale = 0.5;
  double max_scale = 2.0;
};

// Scaled size of one side: max(1, round(side * scale)).
std::int64_t scaled_size(std::int64_t side, double scale);

// Flip, then scale (bilinear image, nearest labels), then crop to out_h x
// out_w. The boundary map is recomputed from the result.
Sample augment(const Sample& s, const AugmentParams& p, std::int64_t out_h, std::int64_t out_w,
               int boundary_radius = 3);

// Uniform flip, uniform scale in the range, crop origin uniform over the
// positions where the window lies inside the scaled image (or, on a short
// side, covers all of it).
AugmentParams random_augment(std::mt19937_64& rng, std::int64_t h, std::int64_t w,
                             std::int64_t out_h, std::int64_t out_w,
                             const AugmentRange& range = {});

struct Batch {
  Tensor images;  // [B,3,H,W]
  LabelMap labels;
};

Batch make_batch(const std::vector<Sample>& samples, DType dtype);

// Disjoint train/val generator indices: a seeded permutation of
// [0, train + val) split at `train`.
struct DatasetSplit {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> val;
};
DatasetSplit split_indices(std::size_t train, std::size_t val, std::uint64_t seed);

// SLSD1: "SLSD1", version u32, H u32, W u32, K u32, then (version 1) the f32
// image [3,H,W] and u8 labels [H,W]; version 2 stores labels only.
inline constexpr std::size_t kSampleHeaderBytes = 21;

std::vector<std::uint8_t> sample_bytes(const Sample& s);
std::vector<std::uint8_t> label_bytes(const LabelMap& labels, int num_classes);
// Loads either version; a labels-only file yields an undefined image.
Sample sample_from_bytes(const std::vector<std::uint8_t>& bytes, int boundary_radius = 3);

void save_sample(const Sample& s, const std::string& path);
void save_labels(const LabelMap& labels, int num_classes, const std::string& path);
Sample load_sample(const std::string& path, int boundary_radius = 3);

}  // namespace slimseg
