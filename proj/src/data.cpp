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

#include "slimseg/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "slimseg/io.hpp"
#include "slimseg/ops.hpp"

namespace slimseg {
namespace {

constexpr char kSampleMagic[] = "SLSD1";
constexpr std::size_t kSampleMagicLen = 5;
constexpr std::uint32_t kVersionFull = 1;
constexpr std::uint32_t kVersionLabels = 2;

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (auto& v2 : rgb) v2 += v - c;
  return rgb;
}

struct Point {
  double y, x;
};

double cross(Point a, Point b, Point p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); }

}  // namespace

void SynthConfig::validate() const {
  if (num_classes < 2 || num_classes > 255) throw std::invalid_argument("synth: num_classes must be in [2, 255]");
  if (height < 16 || width < 16 || height % 16 != 0 || width % 16 != 0) {
    throw std::invalid_argument("synth: canvas sides must be positive multiples of 16");
  }
  if (min_shapes < 0 || max_shapes < min_shapes) {
    throw std::invalid_argument("synth: shape count range must satisfy 0 <= min <= max");
  }
  if (!(noise_std >= 0)) throw std::invalid_argument("synth: noise_std must be >= 0");
}

std::vector<double> class_color(int cls, int num_classes) {
  if (cls == 0) return {0.15, 0.15, 0.15};
  const double hue = static_cast<double>(cls - 1) / static_cast<double>(num_classes - 1);
  const auto rgb = hsv_to_rgb(hue, 0.8, 0.9);
  return {rgb[0], rgb[1], rgb[2]};
}

Sample synth_generate(const SynthConfig& cfg, std::uint64_t index, int boundary_radius) {
  auto rng = sample_rng(cfg.seed, index);
  const int count = std::uniform_int_distribution<int>(cfg.min_shapes, cfg.max_shapes)(rng);
  return synth_generate_with(cfg, index, count, boundary_radius);
}

Sample synth_generate_with(const SynthConfig& cfg, std::uint64_t index, int shape_count,
                           int boundary_radius) {
  cfg.validate();
  const std::int64_t h = cfg.height, w = cfg.width;
  // Separate stream from the one picking the shape count, so explicit counts
  // draw the same geometry.
  auto rng = sample_rng(cfg.seed ^ 0x5eed5eed5eed5eedULL, index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> kind_dist(0, 2);
  std::uniform_int_distribution<int> cls_dist(1, cfg.num_classes - 1);

  Sample s;
  s.num_classes = cfg.num_classes;
  s.labels = LabelMap(1, h, w, 0);
  std::vector<double> rgb(static_cast<std::size_t>(3 * h * w));
  const auto bg = class_color(0, cfg.num_classes);
  for (int c = 0; c < 3; ++c) {
    std::fill(rgb.begin() + c * h * w, rgb.begin() + (c + 1) * h * w, bg[static_cast<std::size_t>(c)]);
  }

  const double side = static_cast<double>(std::min(h, w));
  for (int n = 0; n < shape_count; ++n) {
    const auto kind = static_cast<ShapeKind>(kind_dist(rng));
    const int cls = cls_dist(rng);
    auto color = class_color(cls, cfg.num_classes);
    for (auto& v : color) v = std::clamp(v + 0.16 * (unit(rng) - 0.5), 0.0, 1.0);
    const Point center{unit(rng) * static_cast<double>(h), unit(rng) * static_cast<double>(w)};
    const double a = side * (0.1 + 0.15 * unit(rng));
    const double b = side * (0.1 + 0.15 * unit(rng));
    std::array<Point, 3> tri{};
    for (auto& p : tri) {
      const double ang = 2 * M_PI * unit(rng);
      const double r = a * (0.6 + 0.8 * unit(rng));
      p = {center.y + r * std::sin(ang), center.x + r * std::cos(ang)};
    }
    const double orient = cross(tri[0], tri[1], tri[2]) >= 0 ? 1.0 : -1.0;

    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const Point p{static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5};
        bool inside = false;
        switch (kind) {
          case ShapeKind::kRect:
            inside = std::abs(p.y - center.y) <= a && std::abs(p.x - center.x) <= b;
            break;
          case ShapeKind::kDisk:
            inside = (p.y - center.y) * (p.y - center.y) + (p.x - center.x) * (p.x - center.x) <= a * a;
            break;
          case ShapeKind::kTriangle:
            inside = orient * cross(tri[0], tri[1], p) >= 0 && orient * cross(tri[1], tri[2], p) >= 0 &&
                     orient * cross(tri[2], tri[0], p) >= 0;
            break;
        }
        if (!inside) continue;
        s.labels.at(0, y, x) = static_cast<std::uint8_t>(cls);
        for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>((c * h + y) * w + x)] = color[static_cast<std::size_t>(c)];
      }
    }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& v : rgb) {
    const double n = cfg.noise_std > 0 ? cfg.noise_std * noise(rng) : 0.0;
    v = std::clamp(v + n, 0.0, 1.0);
  }
  s.image = Tensor::from_values({3, h, w}, rgb, DType::kFloat32);
  s.boundary = boundary_gt(s.labels, boundary_radius);
  return s;
}

std::int64_t scaled_size(std::int64_t side, double scale) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(side) * scale));
}

Sample augment(const Sample& s, const AugmentParams& p, std::int64_t out_h, std::int64_t out_w,
               int boundary_radius) {
  if (!(p.scale > 0)) throw std::invalid_argument("augment: scale must be positive");
  const std::int64_t h = s.height(), w = s.width();

  // Flip.
  const auto src = s.image.values<float>();
  Tensor flipped = Tensor::zeros({1, 3, h, w}, DType::kFloat32);
  LabelMap labels(1, h, w);
  {
    auto dst = flipped.mutable_values<float>();
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t sx = p.flip ? w - 1 - x : x;
        for (std::int64_t c = 0; c < 3; ++c) dst[(c * h + y) * w + x] = src[(c * h + y) * w + sx];
        labels.at(0, y, x) = s.labels.at(0, y, sx);
      }
    }
  }

  // Scale.
  const std::int64_t sh = scaled_size(h, p.scale), sw = scaled_size(w, p.scale);
  Tensor scaled = (sh == h && sw == w) ? flipped : bilinear_upsample(flipped, sh, sw);
  LabelMap scaled_labels(1, sh, sw);
  for (std::int64_t y = 0; y < sh; ++y) {
    const std::int64_t yy = std::min(h - 1, (2 * y + 1) * h / (2 * sh));
    for (std::int64_t x = 0; x < sw; ++x) {
      const std::int64_t xx = std::min(w - 1, (2 * x + 1) * w / (2 * sw));
      scaled_labels.at(0, y, x) = labels.at(0, yy, xx);
    }
  }

  // Crop.
  Sample out;
  out.num_classes = s.num_classes;
  out.labels = LabelMap(1, out_h, out_w, kIgnoreLabel);
  Tensor image = Tensor::zeros({3, out_h, out_w}, DType::kFloat32);
  const auto sv = scaled.values<float>();
  auto dv = image.mutable_values<float>();
  for (std::int64_t y = 0; y < out_h; ++y) {
    const std::int64_t yy = y + p.crop_y;
    if (yy < 0 || yy >= sh) continue;
    for (std::int64_t x = 0; x < out_w; ++x) {
      const std::int64_t xx = x + p.crop_x;
      if (xx < 0 || xx >= sw) continue;
      for (std::int64_t c = 0; c < 3; ++c) dv[(c * out_h + y) * out_w + x] = sv[(c * sh + yy) * sw + xx];
      out.labels.at(0, y, x) = scaled_labels.at(0, yy, xx);
    }
  }
  out.image = image;
  out.boundary = boundary_gt(out.labels, boundary_radius);
  return out;
}

AugmentParams random_augment(std::mt19937_64& rng, std::int64_t h, std::int64_t w,
                             std::int64_t out_h, std::int64_t out_w, const AugmentRange& range) {
  AugmentParams p;
  p.flip = std::bernoulli_distribution(0.5)(rng);
  p.scale = std::uniform_real_distribution<double>(range.min_scale, range.max_scale)(rng);
  auto origin = [&](std::int64_t scaled, std::int64_t out) {
    const std::int64_t lo = std::min<std::int64_t>(0, scaled - out);
    const std::int64_t hi = std::max<std::int64_t>(0, scaled - out);
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
  };
  p.crop_y = origin(scaled_size(h, p.scale), out_h);
  p.crop_x = origin(scaled_size(w, p.scale), out_w);
  return p;
}

Batch make_batch(const std::vector<Sample>& samples, DType dtype) {
  if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
  const std::int64_t h = samples[0].height(), w = samples[0].width();
  const auto b = static_cast<std::int64_t>(samples.size());
  Batch batch;
  batch.labels = LabelMap(b, h, w);
  std::vector<double> pixels;
  pixels.reserve(static_cast<std::size_t>(b * 3 * h * w));
  for (std::int64_t i = 0; i < b; ++i) {
    const Sample& s = samples[static_cast<std::size_t>(i)];
    if (s.height() != h || s.width() != w) throw ShapeError("make_batch: samples differ in size");
    for (float v : s.image.values<float>()) pixels.push_back(v);
    std::copy(s.labels.data.begin(), s.labels.data.end(),
              batch.labels.data.begin() + i * h * w);
  }
  batch.images = Tensor::from_values({b, 3, h, w}, pixels, dtype);
  return batch;
}

DatasetSplit split_indices(std::size_t train, std::size_t val, std::uint64_t seed) {
  std::vector<std::uint64_t> all(train + val);
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  DatasetSplit split;
  split.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(train));
  split.val.assign(all.begin() + static_cast<std::ptrdiff_t>(train), all.end());
  return split;
}

namespace {

void put_header(ByteWriter& out, std::uint32_t version, std::int64_t h, std::int64_t w, int k) {
  out.raw(kSampleMagic, kSampleMagicLen);
  out.put<std::uint32_t>(version);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(h));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(w));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(k));
}

}  // namespace

std::vector<std::uint8_t> sample_bytes(const Sample& s) {
  ByteWriter out;
  put_header(out, kVersionFull, s.height(), s.width(), s.num_classes);
  const auto img = s.image.values<float>();
  if (img.size() != static_cast<std::size_t>(3 * s.height() * s.width())) {
    throw ShapeError("sample_bytes: image does not match the label map");
  }
  out.raw(img.data(), img.size_bytes());
  out.raw(s.labels.data.data(), s.labels.size());
  return std::move(out.bytes());
}

std::vector<std::uint8_t> label_bytes(const LabelMap& labels, int num_classes) {
  if (labels.batch != 1) throw ShapeError("label_bytes: expected a single label map");
  ByteWriter out;
  put_header(out, kVersionLabels, labels.height, labels.width, num_classes);
  out.raw(labels.data.data(), labels.size());
  return std::move(out.bytes());
}

Sample sample_from_bytes(const std::vector<std::uint8_t>& bytes, int boundary_radius) {
  ByteReader in(bytes, "sample");
  if (in.remaining() < kSampleMagicLen ||
      in.text(kSampleMagicLen) != std::string(kSampleMagic, kSampleMagicLen)) {
    throw FormatError("sample: bad magic (expected SLSD1)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kVersionFull && version != kVersionLabels) {
    throw FormatError("sample: unsupported version " + std::to_string(version));
  }
  const std::int64_t h = in.get<std::uint32_t>(), w = in.get<std::uint32_t>();
  const auto k = in.get<std::uint32_t>();
  if (h == 0 || w == 0 || k < 2 || k > 255) throw FormatError("sample: bad header fields");
  Sample s;
  s.num_classes = static_cast<int>(k);
  if (version == kVersionFull) {
    s.image = Tensor::zeros({3, h, w}, DType::kFloat32);
    auto v = s.image.mutable_values<float>();
    in.raw(v.data(), v.size_bytes());
  }
  s.labels = LabelMap(1, h, w);
  in.raw(s.labels.data.data(), s.labels.size());
  if (in.remaining() != 0) {
    throw FormatError("sample: " + std::to_string(in.remaining()) + " trailing bytes");
  }
  for (auto l : s.labels.data) {
    if (l >= k && l != kIgnoreLabel) throw FormatError("sample: label " + std::to_string(l) + " >= K");
  }
  s.boundary = boundary_gt(s.labels, boundary_radius);
  return s;
}

void save_sample(const Sample& s, const std::string& path) { write_file(path, sample_bytes(s)); }

void save_labels(const LabelMap& labels, int num_classes, const std::string& path) {
  write_file(path, label_bytes(labels, num_classes));
}

Sample load_sample(const std::string& path, int boundary_radius) {
  return sample_from_bytes(read_file(path), boundary_radius);
}

}  // namespace slimseg
