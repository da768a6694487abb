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

// Width-switchable layers. Every width reads a leading slice of one shared
// full-size kernel; each width owns its own normalization record.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "slimseg/ops.hpp"
#include "slimseg/tensor.hpp"

namespace slimseg {

class WidthList {
 public:
  // Strictly increasing, each in (0, 1], last exactly 1.0.
  explicit WidthList(std::vector<double> widths);

  std::size_t size() const { return widths_.size(); }
  double operator[](std::size_t n) const { return widths_.at(n); }
  const std::vector<double>& values() const { return widths_; }
  std::size_t largest() const { return widths_.size() - 1; }
  // Index of an exact width value; throws std::out_of_range if absent.
  std::size_t index_of(double width) const;
  std::string label(std::size_t n) const;  // "w0.25"

 private:
  std::vector<double> widths_;
};

// fixed -> full, else max(1, round-half-up(width * full)).
std::int64_t active_channels(double width, std::int64_t full, bool fixed);

enum class ParamKind { kKernel, kBias, kGamma, kBeta };

class SlimmableConv;

struct ParamRef {
  std::string name;
  Tensor tensor;
  ParamKind kind;
  const SlimmableConv* conv = nullptr;  // owner of a kernel or bias
  int record = -1;                      // width index of a BN gamma or beta
};

// 1 for every entry of p that the width-n forward reads, else 0.
std::vector<std::uint8_t> active_mask(const ParamRef& p, std::size_t width_index);

struct StatsRef {
  std::string name;
  RunningStats* stats;
};

struct ConvOptions {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  int kernel = 3;
  int stride = 1;
  bool in_fixed = false;
  bool out_fixed = false;
  bool bias = false;
  // Full sizes of channel groups concatenated along the input; each group is
  // sliced separately. Empty means one group of in_channels.
  std::vector<std::int64_t> in_groups;
  DType dtype = DType::kFloat32;
};

class SlimmableConv {
 public:
  SlimmableConv(const ConvOptions& options, const WidthList& widths);

  Tensor forward(const Tensor& x, std::size_t width_index) const;

  std::int64_t in_channels(std::size_t width_index) const;
  std::int64_t out_channels(std::size_t width_index) const;
  const ConvOptions& options() const { return options_; }
  const std::vector<std::int64_t>& in_index(std::size_t width_index) const {
    return in_index_.at(width_index);
  }
  int padding() const { return options_.kernel / 2; }

  // He (fan-in) normal kernel, zero bias.
  void init(std::mt19937_64& rng);

  const Tensor& kernel() const { return kernel_; }
  const Tensor& bias() const { return bias_; }
  Tensor& kernel() { return kernel_; }
  Tensor& bias() { return bias_; }

  std::int64_t param_count(std::size_t width_index) const;
  // 2 * Cout * Cin * k^2 * H' * W' for an input of h x w.
  double flops(std::size_t width_index, std::int64_t h, std::int64_t w) const;
  std::int64_t out_size(std::int64_t in) const;

  void collect(const std::string& prefix, std::vector<ParamRef>& out) const;

 private:
  ConvOptions options_;
  std::vector<double> widths_;
  std::vector<std::vector<std::int64_t>> in_index_;
  Tensor kernel_;
  Tensor bias_;
};

struct BnRecord {
  Tensor gamma;
  Tensor beta;
  RunningStats stats;
};

class SwitchableBatchNorm {
 public:
  SwitchableBatchNorm(std::int64_t channels, bool fixed, const WidthList& widths,
                      DType dtype = DType::kFloat32);

  Tensor forward(const Tensor& x, std::size_t width_index, BnMode mode,
                 double momentum = kBnMomentum) const;

  std::size_t size() const { return records_.size(); }
  BnRecord& record(std::size_t n) { return records_.at(n); }
  const BnRecord& record(std::size_t n) const { return records_.at(n); }
  std::int64_t channels(std::size_t n) const { return records_.at(n).gamma.dim(0); }

  std::int64_t param_count(std::size_t width_index) const { return 2 * channels(width_index); }

  void collect(const std::string& prefix, std::vector<ParamRef>& out) const;
  void collect_stats(const std::string& prefix, std::vector<StatsRef>& out);

 private:
  // Forward is logically const for parameters but writes running statistics.
  mutable std::vector<BnRecord> records_;
};

// conv -> switchable BN -> ReLU.
class SlimmableUnit {
 public:
  SlimmableUnit(const ConvOptions& options, const WidthList& widths);

  Tensor forward(const Tensor& x, std::size_t width_index, BnMode mode,
                 double momentum = kBnMomentum) const;

  SlimmableConv& conv() { return conv_; }
  const SlimmableConv& conv() const { return conv_; }
  SwitchableBatchNorm& bn() { return bn_; }
  const SwitchableBatchNorm& bn() const { return bn_; }

  std::int64_t out_channels(std::size_t width_index) const {
    return conv_.out_channels(width_index);
  }
  std::int64_t param_count(std::size_t width_index) const;
  double flops(std::size_t width_index, std::int64_t h, std::int64_t w) const;

  void collect(const std::string& prefix, std::vector<ParamRef>& out) const;
  void collect_stats(const std::string& prefix, std::vector<StatsRef>& out);

 private:
  SlimmableConv conv_;
  SwitchableBatchNorm bn_;
};

// FLOPs charged for an elementwise pass (BN, ReLU, resampling).
inline constexpr double kElementwiseFlops = 2.0;

}  // namespace slimseg
