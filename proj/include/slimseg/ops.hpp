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

// Differentiable tensor operations. Each op records itself on the active
// tape when any input requires grad; otherwise it is a plain forward pass.
// Image tensors are [batch, channel, height, width].

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "slimseg/tensor.hpp"

namespace slimseg {

// Zero-padded 2-D convolution with an odd square kernel.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias, int stride,
              int padding);
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding) {
  return conv2d(x, kernel, nullptr, stride, padding);
}

enum class BnMode { kTrain, kEval };

// Running statistics owned by one normalization record. Uninitialized
// statistics (never updated by a train-mode pass and never set explicitly)
// cannot be used in eval mode.
struct RunningStats {
  Tensor mean;
  Tensor var;
  bool initialized = false;

  static RunningStats fresh(std::int64_t channels, DType dtype);
  static RunningStats from(Tensor mean, Tensor var);
};

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

// Train mode normalizes with biased batch statistics over (B, H, W) and
// updates `stats` in place; eval mode reads `stats` only.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    RunningStats& stats, BnMode mode, double momentum = kBnMomentum,
                    double eps = kBnEps);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Requires strictly positive input.
Tensor log(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

// Scalar (rank-0) reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor softmax_channels(const Tensor& x);

// Half-pixel-center bilinear resampling with edge clamping.
Tensor bilinear_upsample(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

// Bin i spans [floor(i*H/out), floor((i+1)*H/out)).
Tensor adaptive_avg_pool(const Tensor& x, std::int64_t out);

// Same values; never participates in backward.
Tensor detach(const Tensor& x);

Tensor concat_channels(std::span<const Tensor> parts);

// full[0:out_count, in_index[...], :, :] for a [Cout, Cin, k, k] kernel.
Tensor slice_kernel(const Tensor& full, std::int64_t out_count,
                    std::span<const std::int64_t> in_index);
// full[0:count] for a rank-1 tensor.
Tensor slice_leading(const Tensor& full, std::int64_t count);

// Per-pixel argmax over channels; ties resolve to the lowest channel.
std::vector<std::uint8_t> argmax_channels(const Tensor& x);

}  // namespace slimseg
