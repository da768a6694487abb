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

#include <string>
#include <vector>

#include "slimseg/kernels.hpp"
#include "slimseg/ops.hpp"

namespace slimseg {
namespace {

struct ConvGeometry {
  std::int64_t batch, cin, h, w;
  std::int64_t cout, k;
  std::int64_t stride, pad;
  std::int64_t oh, ow;

  std::int64_t patch() const { return cin * k * k; }
  std::int64_t out_pixels() const { return oh * ow; }
  // 1x1, stride 1, no padding: the input plane is already the column matrix.
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::int64_t n = g.out_pixels();
  for (std::int64_t c = 0; c < g.cin; ++c) {
    const T* plane = x + c * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((c * g.k + ky) * g.k + kx) * n;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            for (std::int64_t ox = 0; ox < g.ow; ++ox) dst[ox] = T(0);
            continue;
          }
          const T* src = plane + iy * g.w;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* dx) {
  const std::int64_t n = g.out_pixels();
  for (std::int64_t c = 0; c < g.cin; ++c) {
    T* plane = dx + c * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((c * g.k + ky) * g.k + kx) * n;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = plane + iy * g.w;
          const T* src = row + oy * g.ow;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void transpose(std::int64_t rows, std::int64_t cols, const T* src, T* dst) {
  constexpr std::int64_t kBlock = 32;
  for (std::int64_t r0 = 0; r0 < rows; r0 += kBlock) {
    for (std::int64_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::int64_t r1 = std::min(rows, r0 + kBlock);
      const std::int64_t c1 = std::min(cols, c0 + kBlock);
      for (std::int64_t r = r0; r < r1; ++r) {
        for (std::int64_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
      }
    }
  }
}

template <typename T>
void conv_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const auto& ks = kernels::active_set<T>();
  const std::int64_t n = g.out_pixels();
  const std::int64_t patch = g.patch();
  std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(patch * n));
  for (std::int64_t b = 0; b < g.batch; ++b) {
    const T* xb = x + b * g.cin * g.h * g.w;
    T* yb = y + b * g.cout * n;
    const T* cols = xb;
    if (!g.pointwise()) {
      im2col(g, xb, col.data());
      cols = col.data();
    }
    ks.gemm(g.cout, n, patch, w, patch, cols, n, yb, n, false);
    if (bias) {
      for (std::int64_t o = 0; o < g.cout; ++o) {
        T* row = yb + o * n;
        for (std::int64_t i = 0; i < n; ++i) row[i] += bias[o];
      }
    }
  }
}

template <typename T>
void conv_backward(const ConvGeometry& g, const T* x, const T* w, const T* gy, T* gx, T* gw,
                   T* gb) {
  const auto& ks = kernels::active_set<T>();
  const std::int64_t n = g.out_pixels();
  const std::int64_t patch = g.patch();
  std::vector<T> col, col_t, dcol, w_t;
  if (gw) {
    col.resize(static_cast<std::size_t>(patch * n));
    col_t.resize(col.size());
  }
  if (gx) {
    w_t.resize(static_cast<std::size_t>(g.cout * patch));
    transpose(g.cout, patch, w, w_t.data());
    if (!g.pointwise()) dcol.resize(static_cast<std::size_t>(patch * n));
  }
  for (std::int64_t b = 0; b < g.batch; ++b) {
    const T* xb = x + b * g.cin * g.h * g.w;
    const T* gyb = gy + b * g.cout * n;
    if (gw) {
      const T* cols = xb;
      if (!g.pointwise()) {
        im2col(g, xb, col.data());
        cols = col.data();
      }
      transpose(patch, n, cols, col_t.data());
      ks.gemm(g.cout, patch, n, gyb, n, col_t.data(), patch, gw, patch, true);
    }
    if (gx) {
      T* gxb = gx + b * g.cin * g.h * g.w;
      if (g.pointwise()) {
        ks.gemm(patch, n, g.cout, w_t.data(), g.cout, gyb, n, gxb, n, true);
      } else {
        ks.gemm(patch, n, g.cout, w_t.data(), g.cout, gyb, n, dcol.data(), n, false);
        col2im_add(g, dcol.data(), gxb);
      }
    }
    if (gb) {
      for (std::int64_t o = 0; o < g.cout; ++o) {
        const T* row = gyb + o * n;
        T acc = 0;
        for (std::int64_t i = 0; i < n; ++i) acc += row[i];
        gb[o] += acc;
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias, int stride,
              int padding) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
  if (kernel.rank() != 4) {
    throw ShapeError("conv2d: kernel must be [Cout,Cin,k,k], got " + shape_str(kernel.shape()));
  }
  const std::int64_t k = kernel.dim(2);
  if (kernel.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd size, got " +
                     shape_str(kernel.shape()));
  }
  if (kernel.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " expects " +
                     std::to_string(kernel.dim(1)) + " input channels, input " +
                     shape_str(x.shape()) + " has " + std::to_string(x.dim(1)));
  }
  if (stride < 1 || padding < 0) {
    throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
  }
  if (x.dtype() != kernel.dtype()) throw ShapeError("conv2d: dtype mismatch");
  if (bias) {
    if (bias->rank() != 1 || bias->dim(0) != kernel.dim(0)) {
      throw ShapeError("conv2d: bias must be [" + std::to_string(kernel.dim(0)) + "], got " +
                       shape_str(bias->shape()));
    }
    if (bias->dtype() != x.dtype()) throw ShapeError("conv2d: dtype mismatch");
  }
  if (!x.all_finite()) throw NumericError("conv2d: non-finite input values");

  ConvGeometry g{};
  g.batch = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = kernel.dim(0);
  g.k = k;
  g.stride = stride;
  g.pad = padding;
  const std::int64_t span_h = g.h + 2 * g.pad - k;
  const std::int64_t span_w = g.w + 2 * g.pad - k;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  g.oh = span_h / g.stride + 1;
  g.ow = span_w / g.stride + 1;

  Tensor y = Tensor::zeros({g.batch, g.cout, g.oh, g.ow}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    conv_forward<T>(g, x.values<T>().data(), kernel.values<T>().data(),
                    bias ? bias->values<T>().data() : nullptr, y.mutable_values<T>().data());
  });

  std::vector<Tensor> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  record_op(std::move(inputs), y,
            [g, has_bias, xs = x.impl().data, ws = kernel.impl().data](const Storage& gy,
                                                                       GradSink& sink) {
              dispatch(gy.dtype(), [&]<typename T>() {
                conv_backward<T>(g, xs->as<T>().data(), ws->as<T>().data(),
                                 gy.as<T>().data(), sink.grad<T>(0), sink.grad<T>(1),
                                 has_bias ? sink.grad<T>(2) : nullptr);
              });
            });
  return y;
}

}  // namespace slimseg
