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

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "slimseg/ops.hpp"

namespace slimseg {
namespace {

// Source taps for one output axis under the half-pixel rule.
struct Taps {
  std::vector<std::int64_t> lo, hi;
  std::vector<double> frac;
};

Taps make_taps(std::int64_t in, std::int64_t out) {
  Taps t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(t.lo.size());
  t.frac.resize(t.lo.size());
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(src));
    const auto k = static_cast<std::size_t>(i);
    t.lo[k] = lo;
    t.hi[k] = std::min(lo + 1, in - 1);
    t.frac[k] = src - static_cast<double>(lo);
  }
  return t;
}

void require_image(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + ": input must be [B,C,H,W], got " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  require_image(x, "bilinear_upsample");
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("bilinear_upsample: output size must be positive");
  }
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  auto ty = std::make_shared<Taps>(make_taps(h, out_h));
  auto tx = std::make_shared<Taps>(make_taps(w, out_w));
  Tensor y = Tensor::zeros({x.dim(0), x.dim(1), out_h, out_w}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    const T* xv = x.values<T>().data();
    T* yv = y.mutable_values<T>().data();
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* src = xv + p * h * w;
      T* dst = yv + p * out_h * out_w;
      for (std::int64_t i = 0; i < out_h; ++i) {
        const auto ki = static_cast<std::size_t>(i);
        const double fy = ty->frac[ki];
        const T* r0 = src + ty->lo[ki] * w;
        const T* r1 = src + ty->hi[ki] * w;
        for (std::int64_t j = 0; j < out_w; ++j) {
          const auto kj = static_cast<std::size_t>(j);
          const double fx = tx->frac[kj];
          const auto x0 = tx->lo[kj], x1 = tx->hi[kj];
          const double top = r0[x0] + fx * (r0[x1] - r0[x0]);
          const double bot = r1[x0] + fx * (r1[x1] - r1[x0]);
          dst[i * out_w + j] = static_cast<T>(top + fy * (bot - top));
        }
      }
    }
  });
  record_op({x}, y, [planes, h, w, out_h, out_w, ty, tx](const Storage& gy, GradSink& sink) {
    dispatch(gy.dtype(), [&]<typename T>() {
      T* gx = sink.grad<T>(0);
      if (!gx) return;
      const T* g = gy.as<T>().data();
      for (std::int64_t p = 0; p < planes; ++p) {
        T* dst = gx + p * h * w;
        const T* src = g + p * out_h * out_w;
        for (std::int64_t i = 0; i < out_h; ++i) {
          const auto ki = static_cast<std::size_t>(i);
          const double fy = ty->frac[ki];
          T* r0 = dst + ty->lo[ki] * w;
          T* r1 = dst + ty->hi[ki] * w;
          for (std::int64_t j = 0; j < out_w; ++j) {
            const auto kj = static_cast<std::size_t>(j);
            const double fx = tx->frac[kj];
            const auto x0 = tx->lo[kj], x1 = tx->hi[kj];
            const double v = src[i * out_w + j];
            r0[x0] += static_cast<T>(v * (1 - fy) * (1 - fx));
            r0[x1] += static_cast<T>(v * (1 - fy) * fx);
            r1[x0] += static_cast<T>(v * fy * (1 - fx));
            r1[x1] += static_cast<T>(v * fy * fx);
          }
        }
      }
    });
  });
  return y;
}

Tensor adaptive_avg_pool(const Tensor& x, std::int64_t out) {
  require_image(x, "adaptive_avg_pool");
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out < 1 || out > h || out > w) {
    throw ShapeError("adaptive_avg_pool: output size " + std::to_string(out) +
                     " must be in [1, min(H, W)] for input " + shape_str(x.shape()));
  }
  auto bin = [out](std::int64_t i, std::int64_t n) { return (i * n) / out; };
  Tensor y = Tensor::zeros({x.dim(0), x.dim(1), out, out}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    const T* xv = x.values<T>().data();
    T* yv = y.mutable_values<T>().data();
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* src = xv + p * h * w;
      for (std::int64_t oy = 0; oy < out; ++oy) {
        const std::int64_t y0 = bin(oy, h), y1 = bin(oy + 1, h);
        for (std::int64_t ox = 0; ox < out; ++ox) {
          const std::int64_t x0 = bin(ox, w), x1 = bin(ox + 1, w);
          double acc = 0;
          for (std::int64_t r = y0; r < y1; ++r) {
            for (std::int64_t c = x0; c < x1; ++c) acc += src[r * w + c];
          }
          yv[(p * out + oy) * out + ox] =
              static_cast<T>(acc / static_cast<double>((y1 - y0) * (x1 - x0)));
        }
      }
    }
  });
  record_op({x}, y, [planes, h, w, out, bin](const Storage& gy, GradSink& sink) {
    dispatch(gy.dtype(), [&]<typename T>() {
      T* gx = sink.grad<T>(0);
      if (!gx) return;
      const T* g = gy.as<T>().data();
      for (std::int64_t p = 0; p < planes; ++p) {
        T* dst = gx + p * h * w;
        for (std::int64_t oy = 0; oy < out; ++oy) {
          const std::int64_t y0 = bin(oy, h), y1 = bin(oy + 1, h);
          for (std::int64_t ox = 0; ox < out; ++ox) {
            const std::int64_t x0 = bin(ox, w), x1 = bin(ox + 1, w);
            const double share = g[(p * out + oy) * out + ox] /
                                 static_cast<double>((y1 - y0) * (x1 - x0));
            for (std::int64_t r = y0; r < y1; ++r) {
              for (std::int64_t c = x0; c < x1; ++c) dst[r * w + c] += static_cast<T>(share);
            }
          }
        }
      }
    });
  });
  return y;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Tensor& first = parts.front();
  require_image(first, "concat_channels");
  const std::int64_t batch = first.dim(0), plane = first.dim(2) * first.dim(3);
  std::vector<std::int64_t> channels;
  std::int64_t total = 0;
  for (const Tensor& p : parts) {
    require_image(p, "concat_channels");
    if (p.dim(0) != batch || p.dim(2) != first.dim(2) || p.dim(3) != first.dim(3) ||
        p.dtype() != first.dtype()) {
      throw ShapeError("concat_channels: incompatible part " + shape_str(p.shape()) + " vs " +
                       shape_str(first.shape()));
    }
    channels.push_back(p.dim(1));
    total += p.dim(1);
  }
  Tensor y = Tensor::zeros({batch, total, first.dim(2), first.dim(3)}, first.dtype());
  dispatch(first.dtype(), [&]<typename T>() {
    T* yv = y.mutable_values<T>().data();
    for (std::int64_t b = 0; b < batch; ++b) {
      std::int64_t offset = 0;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::int64_t n = channels[k] * plane;
        const T* src = parts[k].values<T>().data() + b * n;
        std::copy(src, src + n, yv + (b * total + offset) * plane);
        offset += channels[k];
      }
    }
  });
  record_op(std::vector<Tensor>(parts.begin(), parts.end()), y,
            [batch, plane, total, channels](const Storage& gy, GradSink& sink) {
              dispatch(gy.dtype(), [&]<typename T>() {
                const T* g = gy.as<T>().data();
                std::int64_t offset = 0;
                for (std::size_t k = 0; k < channels.size(); ++k) {
                  const std::int64_t n = channels[k] * plane;
                  if (T* gk = sink.grad<T>(k)) {
                    for (std::int64_t b = 0; b < batch; ++b) {
                      const T* src = g + (b * total + offset) * plane;
                      T* dst = gk + b * n;
                      for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
                    }
                  }
                  offset += channels[k];
                }
              });
            });
  return y;
}

Tensor slice_kernel(const Tensor& full, std::int64_t out_count,
                    std::span<const std::int64_t> in_index) {
  if (full.rank() != 4) {
    throw ShapeError("slice_kernel: expected [Cout,Cin,k,k], got " + shape_str(full.shape()));
  }
  const std::int64_t cout = full.dim(0), cin = full.dim(1), kk = full.dim(2) * full.dim(3);
  if (out_count < 1 || out_count > cout) {
    throw ShapeError("slice_kernel: output count " + std::to_string(out_count) +
                     " outside [1, " + std::to_string(cout) + "]");
  }
  if (in_index.empty()) throw ShapeError("slice_kernel: empty input-channel selection");
  for (auto c : in_index) {
    if (c < 0 || c >= cin) {
      throw ShapeError("slice_kernel: input channel " + std::to_string(c) + " outside [0, " +
                       std::to_string(cin) + ")");
    }
  }
  auto index = std::make_shared<std::vector<std::int64_t>>(in_index.begin(), in_index.end());
  const auto nin = static_cast<std::int64_t>(index->size());
  Tensor y = Tensor::zeros({out_count, nin, full.dim(2), full.dim(3)}, full.dtype());
  dispatch(full.dtype(), [&]<typename T>() {
    const T* src = full.values<T>().data();
    T* dst = y.mutable_values<T>().data();
    for (std::int64_t o = 0; o < out_count; ++o) {
      for (std::int64_t i = 0; i < nin; ++i) {
        const T* s = src + (o * cin + (*index)[static_cast<std::size_t>(i)]) * kk;
        std::copy(s, s + kk, dst + (o * nin + i) * kk);
      }
    }
  });
  record_op({full}, y, [out_count, cin, kk, nin, index](const Storage& gy, GradSink& sink) {
    dispatch(gy.dtype(), [&]<typename T>() {
      T* gf = sink.grad<T>(0);
      if (!gf) return;
      const T* g = gy.as<T>().data();
      for (std::int64_t o = 0; o < out_count; ++o) {
        for (std::int64_t i = 0; i < nin; ++i) {
          T* d = gf + (o * cin + (*index)[static_cast<std::size_t>(i)]) * kk;
          const T* s = g + (o * nin + i) * kk;
          for (std::int64_t q = 0; q < kk; ++q) d[q] += s[q];
        }
      }
    });
  });
  return y;
}

Tensor slice_leading(const Tensor& full, std::int64_t count) {
  if (full.rank() != 1) {
    throw ShapeError("slice_leading: expected rank-1 tensor, got " + shape_str(full.shape()));
  }
  if (count < 1 || count > full.dim(0)) {
    throw ShapeError("slice_leading: count " + std::to_string(count) + " outside [1, " +
                     std::to_string(full.dim(0)) + "]");
  }
  Tensor y = Tensor::zeros({count}, full.dtype());
  dispatch(full.dtype(), [&]<typename T>() {
    auto src = full.values<T>();
    std::copy(src.begin(), src.begin() + count, y.mutable_values<T>().begin());
  });
  record_op({full}, y, [count](const Storage& gy, GradSink& sink) {
    dispatch(gy.dtype(), [&]<typename T>() {
      T* gf = sink.grad<T>(0);
      if (!gf) return;
      const T* g = gy.as<T>().data();
      for (std::int64_t i = 0; i < count; ++i) gf[i] += g[i];
    });
  });
  return y;
}

}  // namespace slimseg
