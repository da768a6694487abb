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

#include "slimseg/segnet.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace slimseg {
namespace {

ConvOptions conv_opts(std::int64_t cin, std::int64_t cout, int k, int stride, DType dtype) {
  ConvOptions o;
  o.in_channels = cin;
  o.out_channels = cout;
  o.kernel = k;
  o.stride = stride;
  o.dtype = dtype;
  return o;
}

std::int64_t ppm_branch_channels(const SegNetConfig& c) {
  return std::max<std::int64_t>(1, c.stage_channels.back() / 4);
}

Tensor resize_to(const Tensor& x, std::int64_t h, std::int64_t w) {
  if (x.dim(2) == h && x.dim(3) == w) return x;
  return bilinear_upsample(x, h, w);
}

}  // namespace

void SegNetConfig::validate() const {
  if (num_classes < 2 || num_classes > 255) {
    throw std::invalid_argument("num_classes must be in [2, 255]");
  }
  if (stage_channels.empty()) throw std::invalid_argument("stage_channels must not be empty");
  if (stage_channels.size() <= kBoundaryStage) {
    throw std::invalid_argument("the boundary head needs at least " +
                                std::to_string(kBoundaryStage + 1) + " encoder stages");
  }
  for (auto c : stage_channels) {
    if (c < 1) throw std::invalid_argument("stage channel counts must be positive");
  }
  if (ppm_bins.empty()) throw std::invalid_argument("ppm_bins must not be empty");
  for (std::size_t i = 0; i < ppm_bins.size(); ++i) {
    if (ppm_bins[i] < 1 || (i > 0 && ppm_bins[i] <= ppm_bins[i - 1])) {
      throw std::invalid_argument("ppm_bins must be positive and strictly increasing");
    }
  }
  if (input_channels < 1) throw std::invalid_argument("input_channels must be positive");
  if (decoder_channels < 1) throw std::invalid_argument("decoder_channels must be positive");
  WidthList check(widths);
}

SlimSegModel::SlimSegModel(const SegNetConfig& config) : config_(config), widths_(config.widths) {
  config_.validate();
  const DType dt = config_.dtype;
  const auto& sc = config_.stage_channels;
  const std::int64_t d = config_.decoder_channels;

  std::int64_t prev = config_.input_channels;
  for (std::size_t s = 0; s < sc.size(); ++s) {
    ConvOptions a = conv_opts(prev, sc[s], 3, 1, dt);
    a.in_fixed = s == 0;
    enc_a_.emplace_back(a, widths_);
    enc_b_.emplace_back(conv_opts(sc[s], sc[s], 3, 2, dt), widths_);
    prev = sc[s];
  }

  const std::int64_t bc = ppm_branch_channels(config_);
  std::vector<std::int64_t> groups{sc.back()};
  for (std::size_t i = 0; i < config_.ppm_bins.size(); ++i) {
    ppm_branch_.emplace_back(conv_opts(sc.back(), bc, 1, 1, dt), widths_);
    groups.push_back(bc);
  }
  ConvOptions fuse = conv_opts(sc.back() + bc * static_cast<std::int64_t>(config_.ppm_bins.size()),
                               d, 3, 1, dt);
  fuse.in_groups = groups;
  ppm_fuse_.emplace(fuse, widths_);

  for (std::size_t s = 0; s + 1 < sc.size(); ++s) {
    lateral_.emplace_back(conv_opts(sc[s], d, 1, 1, dt), widths_);
  }
  dec_fuse_.emplace(conv_opts(d, d, 3, 1, dt), widths_);
  ConvOptions cls = conv_opts(d, config_.num_classes, 1, 1, dt);
  cls.out_fixed = true;
  cls.bias = true;
  classifier_.emplace(cls, widths_);

  boundary_unit_.emplace(conv_opts(sc[kBoundaryStage], d, 3, 1, dt), widths_);
  ConvOptions bcls = conv_opts(d, 1, 1, 1, dt);
  bcls.out_fixed = true;
  bcls.bias = true;
  boundary_classifier_.emplace(bcls, widths_);
}

SlimSegModel SlimSegModel::build(const SegNetConfig& config, std::uint64_t seed) {
  SlimSegModel m(config);
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < m.enc_a_.size(); ++s) {
    m.enc_a_[s].conv().init(rng);
    m.enc_b_[s].conv().init(rng);
  }
  for (auto& u : m.ppm_branch_) u.conv().init(rng);
  m.ppm_fuse_->conv().init(rng);
  for (auto& u : m.lateral_) u.conv().init(rng);
  m.dec_fuse_->conv().init(rng);
  m.classifier_->init(rng);
  m.boundary_unit_->conv().init(rng);
  m.boundary_classifier_->init(rng);
  return m;
}

void SlimSegModel::strip_boundary_head() {
  boundary_unit_.reset();
  boundary_classifier_.reset();
}

ForwardOutput SlimSegModel::forward(const Tensor& image, std::size_t n, BnMode mode,
                                    bool with_boundary, double momentum) const {
  if (n >= widths_.size()) throw std::out_of_range("width index out of range");
  if (image.rank() != 4) {
    throw ShapeError("forward: image must be [B,C,H,W], got " + shape_str(image.shape()));
  }
  const std::int64_t h = image.dim(2), w = image.dim(3);
  const std::int64_t stride = config_.stride();
  if (h % stride != 0 || w % stride != 0) {
    throw ShapeError("forward: input height and width must be divisible by " +
                     std::to_string(stride) + ", got " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  if (image.dtype() != config_.dtype) {
    throw ShapeError(std::string("forward: model is ") + dtype_name(config_.dtype) +
                     ", image is " + dtype_name(image.dtype()));
  }
  if (with_boundary && !has_boundary_head()) {
    throw std::logic_error("forward: boundary head was stripped from this model");
  }

  std::vector<Tensor> stages;
  Tensor x = image;
  for (std::size_t s = 0; s < enc_a_.size(); ++s) {
    x = enc_a_[s].forward(x, n, mode, momentum);
    x = enc_b_[s].forward(x, n, mode, momentum);
    stages.push_back(x);
  }

  const Tensor& deep = stages.back();
  const std::int64_t dh = deep.dim(2), dw = deep.dim(3);
  std::vector<Tensor> parts{deep};
  for (std::size_t i = 0; i < ppm_branch_.size(); ++i) {
    const std::int64_t bins = std::min({config_.ppm_bins[i], dh, dw});
    const Tensor pooled = ppm_branch_[i].forward(adaptive_avg_pool(deep, bins), n, mode, momentum);
    parts.push_back(resize_to(pooled, dh, dw));
  }
  Tensor top = ppm_fuse_->forward(concat_channels(parts), n, mode, momentum);

  for (std::size_t s = lateral_.size(); s-- > 0;) {
    const Tensor lat = lateral_[s].forward(stages[s], n, mode, momentum);
    top = add(resize_to(top, lat.dim(2), lat.dim(3)), lat);
  }
  top = dec_fuse_->forward(top, n, mode, momentum);

  ForwardOutput out;
  out.seg_logits = resize_to(classifier_->forward(top, n), h, w);
  out.seg_probs = softmax_channels(out.seg_logits);
  if (with_boundary) {
    const Tensor feat = boundary_unit_->forward(stages[kBoundaryStage], n, mode, momentum);
    out.boundary_prob = sigmoid(resize_to(boundary_classifier_->forward(feat, n), h, w));
  }
  return out;
}

std::vector<ParamRef> SlimSegModel::parameters() const {
  std::vector<ParamRef> out;
  for (std::size_t s = 0; s < enc_a_.size(); ++s) {
    enc_a_[s].collect("enc." + std::to_string(s) + ".a", out);
    enc_b_[s].collect("enc." + std::to_string(s) + ".b", out);
  }
  for (std::size_t i = 0; i < ppm_branch_.size(); ++i) {
    ppm_branch_[i].collect("ppm.branch." + std::to_string(i), out);
  }
  ppm_fuse_->collect("ppm.fuse", out);
  for (std::size_t s = 0; s < lateral_.size(); ++s) {
    lateral_[s].collect("dec.lateral." + std::to_string(s), out);
  }
  dec_fuse_->collect("dec.fuse", out);
  classifier_->collect("dec.classifier", out);
  if (has_boundary_head()) {
    boundary_unit_->collect("boundary.unit", out);
    boundary_classifier_->collect("boundary.classifier", out);
  }
  return out;
}

std::vector<StatsRef> SlimSegModel::running_stats() {
  std::vector<StatsRef> out;
  for (std::size_t s = 0; s < enc_a_.size(); ++s) {
    enc_a_[s].collect_stats("enc." + std::to_string(s) + ".a", out);
    enc_b_[s].collect_stats("enc." + std::to_string(s) + ".b", out);
  }
  for (std::size_t i = 0; i < ppm_branch_.size(); ++i) {
    ppm_branch_[i].collect_stats("ppm.branch." + std::to_string(i), out);
  }
  ppm_fuse_->collect_stats("ppm.fuse", out);
  for (std::size_t s = 0; s < lateral_.size(); ++s) {
    lateral_[s].collect_stats("dec.lateral." + std::to_string(s), out);
  }
  dec_fuse_->collect_stats("dec.fuse", out);
  if (has_boundary_head()) boundary_unit_->collect_stats("boundary.unit", out);
  return out;
}

FlopBreakdown SlimSegModel::count_flops(std::size_t n, std::int64_t h, std::int64_t w,
                                        bool with_boundary) const {
  FlopBreakdown f;
  const std::int64_t in_h = h, in_w = w;
  std::vector<std::pair<std::int64_t, std::int64_t>> sizes;
  for (std::size_t s = 0; s < enc_a_.size(); ++s) {
    f.encoder += enc_a_[s].flops(n, h, w);
    h = enc_a_[s].conv().out_size(h);
    w = enc_a_[s].conv().out_size(w);
    f.encoder += enc_b_[s].flops(n, h, w);
    h = enc_b_[s].conv().out_size(h);
    w = enc_b_[s].conv().out_size(w);
    sizes.emplace_back(h, w);
  }
  const auto [dh, dw] = sizes.back();
  for (std::size_t i = 0; i < ppm_branch_.size(); ++i) {
    const std::int64_t bins = std::min({config_.ppm_bins[i], dh, dw});
    f.ppm += ppm_branch_[i].flops(n, bins, bins);
    if (bins != dh || bins != dw) {
      f.ppm += kElementwiseFlops * static_cast<double>(ppm_branch_[i].out_channels(n) * dh * dw);
    }
  }
  f.ppm += ppm_fuse_->flops(n, dh, dw);

  std::int64_t th = dh, tw = dw;
  for (std::size_t s = lateral_.size(); s-- > 0;) {
    const auto [lh, lw] = sizes[s];
    f.decoder += lateral_[s].flops(n, lh, lw);
    if (th != lh || tw != lw) {
      f.decoder += kElementwiseFlops * static_cast<double>(ppm_fuse_->out_channels(n) * lh * lw);
    }
    th = lh;
    tw = lw;
  }
  f.decoder += dec_fuse_->flops(n, th, tw);
  f.decoder += classifier_->flops(n, th, tw);
  if (th != in_h || tw != in_w) {
    f.decoder += kElementwiseFlops * static_cast<double>(config_.num_classes * in_h * in_w);
  }

  if (with_boundary && has_boundary_head()) {
    const auto [bh, bw] = sizes[kBoundaryStage];
    f.boundary += boundary_unit_->flops(n, bh, bw);
    f.boundary += boundary_classifier_->flops(n, bh, bw);
    f.boundary += kElementwiseFlops * static_cast<double>(in_h * in_w);
  }
  return f;
}

std::int64_t SlimSegModel::count_params(std::size_t n) const {
  std::int64_t total = 0;
  for (std::size_t s = 0; s < enc_a_.size(); ++s) {
    total += enc_a_[s].param_count(n) + enc_b_[s].param_count(n);
  }
  for (const auto& u : ppm_branch_) total += u.param_count(n);
  total += ppm_fuse_->param_count(n);
  for (const auto& u : lateral_) total += u.param_count(n);
  total += dec_fuse_->param_count(n) + classifier_->param_count(n);
  if (has_boundary_head()) {
    total += boundary_unit_->param_count(n) + boundary_classifier_->param_count(n);
  }
  return total;
}

std::int64_t SlimSegModel::stored_params() const {
  std::int64_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.numel();
  return total;
}

SlimSegModel SlimSegModel::clone() const {
  return model_from_checkpoint_bytes(checkpoint_bytes(const_cast<SlimSegModel&>(*this)));
}

}  // namespace slimseg
