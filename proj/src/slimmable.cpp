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

#include "slimseg/slimmable.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace slimseg {

WidthList::WidthList(std::vector<double> widths) : widths_(std::move(widths)) {
  if (widths_.empty()) throw std::invalid_argument("width list must not be empty");
  for (std::size_t i = 0; i < widths_.size(); ++i) {
    const double w = widths_[i];
    if (!(w > 0.0 && w <= 1.0)) {
      throw std::invalid_argument("width " + std::to_string(w) + " outside (0, 1]");
    }
    if (i > 0 && !(w > widths_[i - 1])) {
      throw std::invalid_argument("widths must be strictly increasing");
    }
  }
  if (widths_.back() != 1.0) throw std::invalid_argument("largest width must be exactly 1.0");
}

std::size_t WidthList::index_of(double width) const {
  for (std::size_t i = 0; i < widths_.size(); ++i) {
    if (std::abs(widths_[i] - width) < 1e-9) return i;
  }
  throw std::out_of_range("width " + std::to_string(width) + " is not in the width list");
}

std::string WidthList::label(std::size_t n) const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "w%.2f", widths_.at(n));
  return buf;
}

std::int64_t active_channels(double width, std::int64_t full, bool fixed) {
  if (fixed) return full;
  // The epsilon keeps products like 0.3 * 5 = 1.4999999999999998 on the
  // half-up side.
  const auto c = static_cast<std::int64_t>(std::floor(width * static_cast<double>(full) + 0.5 + 1e-9));
  return std::max<std::int64_t>(1, c);
}

SlimmableConv::SlimmableConv(const ConvOptions& options, const WidthList& widths)
    : options_(options), widths_(widths.values()) {
  if (options_.kernel < 1 || options_.kernel % 2 == 0) {
    throw std::invalid_argument("slimmable conv kernel must be odd");
  }
  if (options_.in_groups.empty()) options_.in_groups = {options_.in_channels};
  std::int64_t total = 0;
  for (auto g : options_.in_groups) total += g;
  if (total != options_.in_channels) {
    throw std::invalid_argument("input groups must sum to in_channels");
  }
  for (double w : widths_) {
    std::vector<std::int64_t> index;
    std::int64_t offset = 0;
    for (auto g : options_.in_groups) {
      const std::int64_t used = active_channels(w, g, options_.in_fixed);
      for (std::int64_t i = 0; i < used; ++i) index.push_back(offset + i);
      offset += g;
    }
    in_index_.push_back(std::move(index));
  }
  const std::int64_t k = options_.kernel;
  kernel_ = Tensor::zeros({options_.out_channels, options_.in_channels, k, k}, options_.dtype,
                          true);
  if (options_.bias) bias_ = Tensor::zeros({options_.out_channels}, options_.dtype, true);
}

std::int64_t SlimmableConv::in_channels(std::size_t n) const {
  return static_cast<std::int64_t>(in_index_.at(n).size());
}

std::int64_t SlimmableConv::out_channels(std::size_t n) const {
  return active_channels(widths_.at(n), options_.out_channels, options_.out_fixed);
}

Tensor SlimmableConv::forward(const Tensor& x, std::size_t n) const {
  const std::int64_t cin = in_channels(n);
  const std::int64_t cout = out_channels(n);
  if (x.rank() != 4 || x.dim(1) != cin) {
    throw ShapeError("slimmable conv at width " + std::to_string(widths_.at(n)) + " expects " +
                     std::to_string(cin) + " input channels, got " +
                     (x.rank() == 4 ? std::to_string(x.dim(1)) : shape_str(x.shape())));
  }
  const Tensor* bias = options_.bias ? &bias_ : nullptr;
  if (cin == options_.in_channels && cout == options_.out_channels) {
    return conv2d(x, kernel_, bias, options_.stride, padding());
  }
  const Tensor k = slice_kernel(kernel_, cout, in_index_[n]);
  if (!bias) return conv2d(x, k, nullptr, options_.stride, padding());
  const Tensor b = slice_leading(bias_, cout);
  return conv2d(x, k, &b, options_.stride, padding());
}

void SlimmableConv::init(std::mt19937_64& rng) {
  const double fan_in =
      static_cast<double>(options_.in_channels * options_.kernel * options_.kernel);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  dispatch(options_.dtype, [&]<typename T>() {
    for (T& v : kernel_.mutable_values<T>()) v = static_cast<T>(dist(rng));
    if (options_.bias) {
      for (T& v : bias_.mutable_values<T>()) v = T(0);
    }
  });
}

std::int64_t SlimmableConv::param_count(std::size_t n) const {
  const std::int64_t k = options_.kernel;
  const std::int64_t cout = out_channels(n);
  return cout * in_channels(n) * k * k + (options_.bias ? cout : 0);
}

std::int64_t SlimmableConv::out_size(std::int64_t in) const {
  return (in + 2 * padding() - options_.kernel) / options_.stride + 1;
}

double SlimmableConv::flops(std::size_t n, std::int64_t h, std::int64_t w) const {
  const double k = options_.kernel;
  return 2.0 * static_cast<double>(out_channels(n)) * static_cast<double>(in_channels(n)) * k *
         k * static_cast<double>(out_size(h)) * static_cast<double>(out_size(w));
}

void SlimmableConv::collect(const std::string& prefix, std::vector<ParamRef>& out) const {
  out.push_back({prefix + ".kernel", kernel_, ParamKind::kKernel, this});
  if (options_.bias) out.push_back({prefix + ".bias", bias_, ParamKind::kBias, this});
}

SwitchableBatchNorm::SwitchableBatchNorm(std::int64_t channels, bool fixed,
                                         const WidthList& widths, DType dtype) {
  for (double w : widths.values()) {
    const std::int64_t c = active_channels(w, channels, fixed);
    records_.push_back({Tensor::full({c}, 1.0, dtype, true), Tensor::zeros({c}, dtype, true),
                        RunningStats::fresh(c, dtype)});
  }
}

Tensor SwitchableBatchNorm::forward(const Tensor& x, std::size_t n, BnMode mode,
                                    double momentum) const {
  BnRecord& r = records_.at(n);
  if (x.rank() != 4 || x.dim(1) != r.gamma.dim(0)) {
    throw ShapeError("switchable BN record " + std::to_string(n) + " expects " +
                     std::to_string(r.gamma.dim(0)) + " channels, got " + shape_str(x.shape()));
  }
  return batch_norm2d(x, r.gamma, r.beta, r.stats, mode, momentum);
}

void SwitchableBatchNorm::collect(const std::string& prefix, std::vector<ParamRef>& out) const {
  for (std::size_t n = 0; n < records_.size(); ++n) {
    const std::string p = prefix + "." + std::to_string(n);
    out.push_back({p + ".gamma", records_[n].gamma, ParamKind::kGamma, nullptr,
                   static_cast<int>(n)});
    out.push_back({p + ".beta", records_[n].beta, ParamKind::kBeta, nullptr,
                   static_cast<int>(n)});
  }
}

void SwitchableBatchNorm::collect_stats(const std::string& prefix, std::vector<StatsRef>& out) {
  for (std::size_t n = 0; n < records_.size(); ++n) {
    out.push_back({prefix + "." + std::to_string(n), &records_[n].stats});
  }
}

std::vector<std::uint8_t> active_mask(const ParamRef& p, std::size_t n) {
  const auto count = static_cast<std::size_t>(p.tensor.numel());
  if (p.kind == ParamKind::kGamma || p.kind == ParamKind::kBeta) {
    return std::vector<std::uint8_t>(count, static_cast<std::size_t>(p.record) == n ? 1 : 0);
  }
  std::vector<std::uint8_t> mask(count, 0);
  const std::int64_t cout = p.conv->out_channels(n);
  if (p.kind == ParamKind::kBias) {
    for (std::int64_t o = 0; o < cout; ++o) mask[static_cast<std::size_t>(o)] = 1;
    return mask;
  }
  const std::int64_t cin = p.tensor.dim(1);
  const std::int64_t kk = p.tensor.dim(2) * p.tensor.dim(3);
  for (std::int64_t o = 0; o < cout; ++o) {
    for (std::int64_t c : p.conv->in_index(n)) {
      for (std::int64_t t = 0; t < kk; ++t) mask[static_cast<std::size_t>((o * cin + c) * kk + t)] = 1;
    }
  }
  return mask;
}

SlimmableUnit::SlimmableUnit(const ConvOptions& options, const WidthList& widths)
    : conv_(options, widths),
      bn_(options.out_channels, options.out_fixed, widths, options.dtype) {}

Tensor SlimmableUnit::forward(const Tensor& x, std::size_t n, BnMode mode,
                              double momentum) const {
  return relu(bn_.forward(conv_.forward(x, n), n, mode, momentum));
}

std::int64_t SlimmableUnit::param_count(std::size_t n) const {
  return conv_.param_count(n) + bn_.param_count(n);
}

double SlimmableUnit::flops(std::size_t n, std::int64_t h, std::int64_t w) const {
  const double elems = static_cast<double>(out_channels(n) * conv_.out_size(h) * conv_.out_size(w));
  return conv_.flops(n, h, w) + 2 * kElementwiseFlops * elems;
}

void SlimmableUnit::collect(const std::string& prefix, std::vector<ParamRef>& out) const {
  conv_.collect(prefix + ".conv", out);
  bn_.collect(prefix + ".bn", out);
}

void SlimmableUnit::collect_stats(const std::string& prefix, std::vector<StatsRef>& out) {
  bn_.collect_stats(prefix + ".bn", out);
}

}  // namespace slimseg
