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

// Slimmable segmentation network: four-stage encoder, pyramid pooling on the
// deepest features, FPN-style decoder and a removable boundary head fed by
// the stage-2 (1/4 resolution) features.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slimseg/io.hpp"
#include "slimseg/slimmable.hpp"

namespace slimseg {

struct SegNetConfig {
  std::int64_t num_classes = 5;
  std::vector<std::int64_t> stage_channels{16, 32, 64, 128};
  std::vector<std::int64_t> ppm_bins{1, 2, 4};
  std::vector<double> widths{0.25, 0.5, 0.75, 1.0};
  std::int64_t input_channels = 3;
  // Channels of the PPM output, every decoder level and the boundary unit.
  std::int64_t decoder_channels = 32;
  DType dtype = DType::kFloat32;

  void validate() const;
  // Total encoder stride; input sides must be multiples of it.
  std::int64_t stride() const { return std::int64_t{1} << stage_channels.size(); }
};

struct ForwardOutput {
  Tensor seg_logits;                   // [B, K, H, W]
  Tensor seg_probs;                    // softmax of seg_logits
  std::optional<Tensor> boundary_prob;  // [B, 1, H, W]
};

struct FlopBreakdown {
  double encoder = 0;
  double ppm = 0;
  double decoder = 0;
  double boundary = 0;
  double total() const { return encoder + ppm + decoder + boundary; }
};

class SlimSegModel {
 public:
  static SlimSegModel build(const SegNetConfig& config, std::uint64_t seed);

  SlimSegModel(SlimSegModel&&) = default;
  SlimSegModel& operator=(SlimSegModel&&) = default;
  SlimSegModel(const SlimSegModel&) = delete;
  SlimSegModel& operator=(const SlimSegModel&) = delete;

  ForwardOutput forward(const Tensor& image, std::size_t width_index, BnMode mode,
                        bool with_boundary, double bn_momentum = kBnMomentum) const;

  const SegNetConfig& config() const { return config_; }
  const WidthList& widths() const { return widths_; }
  bool has_boundary_head() const { return boundary_unit_.has_value(); }
  // Drops the boundary head and its parameters.
  void strip_boundary_head();

  std::vector<ParamRef> parameters() const;
  std::vector<StatsRef> running_stats();

  FlopBreakdown count_flops(std::size_t width_index, std::int64_t h, std::int64_t w,
                            bool with_boundary) const;
  std::int64_t count_params(std::size_t width_index) const;
  // Every stored learnable value (all widths' BN records included).
  std::int64_t stored_params() const;

  // Deep copy through the checkpoint encoding.
  SlimSegModel clone() const;

 private:
  explicit SlimSegModel(const SegNetConfig& config);

  SegNetConfig config_;
  WidthList widths_;
  std::vector<SlimmableUnit> enc_a_;
  std::vector<SlimmableUnit> enc_b_;
  std::vector<SlimmableUnit> ppm_branch_;
  std::optional<SlimmableUnit> ppm_fuse_;
  std::vector<SlimmableUnit> lateral_;
  std::optional<SlimmableUnit> dec_fuse_;
  std::optional<SlimmableConv> classifier_;
  std::optional<SlimmableUnit> boundary_unit_;
  std::optional<SlimmableConv> boundary_classifier_;

  friend SlimSegModel model_from_tensors(const std::vector<std::pair<std::string, Tensor>>&);
};

// Encoder stage whose output feeds the boundary head (0-based).
inline constexpr std::size_t kBoundaryStage = 1;

// SLSCKPT1 checkpoint: parameters, running statistics and the model config.
std::vector<std::uint8_t> checkpoint_bytes(SlimSegModel& model);
SlimSegModel model_from_checkpoint_bytes(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(SlimSegModel& model, const std::string& path);
SlimSegModel load_checkpoint(const std::string& path);

// Raw tensor archive underlying the checkpoint format.
std::vector<std::uint8_t> encode_tensors(const std::vector<std::pair<std::string, Tensor>>& items);
std::vector<std::pair<std::string, Tensor>> decode_tensors(const std::vector<std::uint8_t>& bytes);

}  // namespace slimseg
