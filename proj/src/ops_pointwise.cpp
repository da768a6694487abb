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

#include "slimseg/kernels.hpp"
#include "slimseg/ops.hpp"

namespace slimseg {
namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) {
    throw ShapeError(std::string(op) + ": operands differ, " + shape_str(a.shape()) + " " +
                     dtype_name(a.dtype()) + " vs " + shape_str(b.shape()) + " " +
                     dtype_name(b.dtype()));
  }
}

}  // namespace

Tensor relu(const Tensor& x) {
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  const auto n = x.numel();
  dispatch(x.dtype(), [&]<typename T>() {
    kernels::active_set<T>().relu(n, x.values<T>().data(), y.mutable_values<T>().data());
  });
  record_op({x}, y, [n, xs = x.impl().data](const Storage& gy, GradSink& sink) {
    dispatch(gy.dtype(), [&]<typename T>() {
      if (T* gx = sink.grad<T>(0)) {
        kernels::active_set<T>().relu_backward(n, xs->as<T>().data(), gy.as<T>().data(), gx);
      }
    });
  });
  return y;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    auto yv = y.mutable_values<T>();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      // Branch keeps exp() from overflowing for large |x|.
      if (xv[i] >= 0) {
        yv[i] = T(1) / (T(1) + std::exp(-xv[i]));
      } else {
        const T e = std::exp(xv[i]);
        yv[i] = e / (T(1) + e);
      }
    }
  });
  record_op({x}, y, [ys = y.impl().data](const Storage& gy, GradSink& sink) {
    dispatch(gy.dtype(), [&]<typename T>() {
      T* gx = sink.grad<T>(0);
      if (!gx) return;
      auto yv = ys->as<T>();
      auto g = gy.as<T>();
      for (std::size_t i = 0; i < yv.size(); ++i) gx[i] += g[i] * yv[i] * (T(1) - yv[i]);
    });
  });
  return y;
}

Tensor log(const Tensor& x) {
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    auto yv = y.mutable_values<T>();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (!(xv[i] > T(0))) {
        throw std::domain_error("log: non-positive input " + std::to_string(xv[i]) +
                                " at flat index " + std::to_string(i));
      }
      yv[i] = std::log(xv[i]);
    }
  });
  record_op({x}, y, [xs = x.impl().data](const Storage& gy, GradSink& sink) {
    dispatch(gy.dtype(), [&]<typename T>() {
      T* gx = sink.grad<T>(0);
      if (!gx) return;
      auto xv = xs->as<T>();
      auto g = gy.as<T>();
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[i] / xv[i];
    });
  });
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor y = Tensor::zeros(a.shape(), a.dtype());
  const auto n = a.numel();
  dispatch(a.dtype(), [&]<typename T>() {
    kernels::active_set<T>().add(n, a.values<T>().data(), b.values<T>().data(),
                                 y.mutable_values<T>().data());
  });
  record_op({a, b}, y, [n](const Storage& gy, GradSink& sink) {
    dispatch(gy.dtype(), [&]<typename T>() {
      const auto& ks = kernels::active_set<T>();
      for (std::size_t i = 0; i < 2; ++i) {
        if (T* g = sink.grad<T>(i)) ks.axpy(n, T(1), gy.as<T>().data(), g);
      }
    });
  });
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  Tensor y = Tensor::zeros(a.shape(), a.dtype());
  const auto n = a.numel();
  dispatch(a.dtype(), [&]<typename T>() {
    kernels::active_set<T>().mul(n, a.values<T>().data(), b.values<T>().data(),
                                 y.mutable_values<T>().data());
  });
  record_op({a, b}, y,
            [n, as = a.impl().data, bs = b.impl().data](const Storage& gy, GradSink& sink) {
              dispatch(gy.dtype(), [&]<typename T>() {
                const T* g = gy.as<T>().data();
                if (T* ga = sink.grad<T>(0)) {
                  const T* bv = bs->as<T>().data();
                  for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
                }
                if (T* gb = sink.grad<T>(1)) {
                  const T* av = as->as<T>().data();
                  for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
                }
              });
            });
  return y;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  const auto n = x.numel();
  dispatch(x.dtype(), [&]<typename T>() {
    kernels::active_set<T>().scale(n, static_cast<T>(factor), x.values<T>().data(),
                                   y.mutable_values<T>().data());
  });
  record_op({x}, y, [n, factor](const Storage& gy, GradSink& sink) {
    dispatch(gy.dtype(), [&]<typename T>() {
      if (T* gx = sink.grad<T>(0)) {
        kernels::active_set<T>().axpy(n, static_cast<T>(factor), gy.as<T>().data(), gx);
      }
    });
  });
  return y;
}

Tensor sum(const Tensor& x) {
  Tensor y = Tensor::zeros({}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    double acc = 0;
    for (T v : x.values<T>()) acc += v;
    y.mutable_values<T>()[0] = static_cast<T>(acc);
  });
  const auto n = x.numel();
  record_op({x}, y, [n](const Storage& gy, GradSink& sink) {
    dispatch(gy.dtype(), [&]<typename T>() {
      T* gx = sink.grad<T>(0);
      if (!gx) return;
      const T g = gy.as<T>()[0];
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  });
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor softmax_channels(const Tensor& x) {
  if (x.rank() != 4) {
    throw ShapeError("softmax_channels: input must be [B,C,H,W], got " + shape_str(x.shape()));
  }
  const std::int64_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    const T* xv = x.values<T>().data();
    T* yv = y.mutable_values<T>().data();
    for (std::int64_t b = 0; b < batch; ++b) {
      const T* xb = xv + b * ch * plane;
      T* yb = yv + b * ch * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        T mx = xb[i];
        for (std::int64_t c = 1; c < ch; ++c) mx = std::max(mx, xb[c * plane + i]);
        double denom = 0;
        for (std::int64_t c = 0; c < ch; ++c) {
          const T e = std::exp(xb[c * plane + i] - mx);
          yb[c * plane + i] = e;
          denom += e;
        }
        const double inv = 1.0 / denom;
        for (std::int64_t c = 0; c < ch; ++c) {
          yb[c * plane + i] = static_cast<T>(yb[c * plane + i] * inv);
        }
      }
    }
  });
  record_op({x}, y,
            [batch, ch, plane, ys = y.impl().data](const Storage& gy, GradSink& sink) {
              dispatch(gy.dtype(), [&]<typename T>() {
                T* gx = sink.grad<T>(0);
                if (!gx) return;
                const T* yv = ys->as<T>().data();
                const T* g = gy.as<T>().data();
                for (std::int64_t b = 0; b < batch; ++b) {
                  const std::int64_t off = b * ch * plane;
                  for (std::int64_t i = 0; i < plane; ++i) {
                    double dot = 0;
                    for (std::int64_t c = 0; c < ch; ++c) {
                      dot += g[off + c * plane + i] * yv[off + c * plane + i];
                    }
                    for (std::int64_t c = 0; c < ch; ++c) {
                      const auto j = off + c * plane + i;
                      gx[j] += static_cast<T>(yv[j] * (g[j] - dot));
                    }
                  }
                }
              });
            });
  return y;
}

Tensor detach(const Tensor& x) { return x.detached_view(); }

std::vector<std::uint8_t> argmax_channels(const Tensor& x) {
  if (x.rank() != 4) {
    throw ShapeError("argmax_channels: input must be [B,C,H,W], got " + shape_str(x.shape()));
  }
  const std::int64_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (ch > 255) throw ShapeError("argmax_channels: more than 255 classes");
  std::vector<std::uint8_t> out(static_cast<std::size_t>(batch * plane));
  dispatch(x.dtype(), [&]<typename T>() {
    const T* xv = x.values<T>().data();
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t i = 0; i < plane; ++i) {
        std::int64_t best = 0;
        T best_v = xv[b * ch * plane + i];
        for (std::int64_t c = 1; c < ch; ++c) {
          const T v = xv[(b * ch + c) * plane + i];
          if (v > best_v) {
            best_v = v;
            best = c;
          }
        }
        out[static_cast<std::size_t>(b * plane + i)] = static_cast<std::uint8_t>(best);
      }
    }
  });
  return out;
}

}  // namespace slimseg
