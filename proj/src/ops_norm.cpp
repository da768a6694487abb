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

#include <cmath>
#include <string>
#include <vector>

#include "slimseg/ops.hpp"

namespace slimseg {

RunningStats RunningStats::fresh(std::int64_t channels, DType dtype) {
  RunningStats s;
  s.mean = Tensor::zeros({channels}, dtype);
  s.var = Tensor::full({channels}, 1.0, dtype);
  s.initialized = false;
  return s;
}

RunningStats RunningStats::from(Tensor mean, Tensor var) {
  if (mean.rank() != 1 || var.shape() != mean.shape()) {
    throw ShapeError("running stats must be two equal rank-1 tensors");
  }
  RunningStats s;
  s.mean = std::move(mean);
  s.var = std::move(var);
  s.initialized = true;
  return s;
}

namespace {

struct BnLayout {
  std::int64_t batch, channels, plane;
  std::int64_t count() const { return batch * plane; }
};

template <typename T>
void check_param(const Tensor& t, std::int64_t channels, const char* name) {
  if (t.rank() != 1 || t.dim(0) != channels) {
    throw ShapeError(std::string("batch_norm2d: ") + name + " must be [" +
                     std::to_string(channels) + "], got " + shape_str(t.shape()));
  }
  if (t.dtype() != dtype_of<T>()) throw ShapeError("batch_norm2d: dtype mismatch");
}

}  // namespace

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    RunningStats& stats, BnMode mode, double momentum, double eps) {
  if (x.rank() != 4) {
    throw ShapeError("batch_norm2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
  }
  const BnLayout lay{x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  if (mode == BnMode::kTrain && lay.count() < 2) {
    throw ShapeError("batch_norm2d: train mode needs at least 2 values per channel, got " +
                     shape_str(x.shape()));
  }
  if (mode == BnMode::kEval && !stats.initialized) {
    throw std::logic_error("batch_norm2d: eval mode with uninitialized running statistics");
  }

  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  // Per-channel mean and 1/sqrt(var + eps) used by the forward pass.
  auto saved_mean = std::make_shared<std::vector<double>>(lay.channels);
  auto saved_inv = std::make_shared<std::vector<double>>(lay.channels);

  dispatch(x.dtype(), [&]<typename T>() {
    check_param<T>(gamma, lay.channels, "gamma");
    check_param<T>(beta, lay.channels, "beta");
    check_param<T>(stats.mean, lay.channels, "running_mean");
    check_param<T>(stats.var, lay.channels, "running_var");
    const T* xv = x.values<T>().data();
    const T* gv = gamma.values<T>().data();
    const T* bv = beta.values<T>().data();
    T* yv = y.mutable_values<T>().data();
    const double m = static_cast<double>(lay.count());
    std::vector<double> batch_var(static_cast<std::size_t>(lay.channels));

    for (std::int64_t c = 0; c < lay.channels; ++c) {
      double mu, var;
      if (mode == BnMode::kTrain) {
        double s = 0;
        for (std::int64_t b = 0; b < lay.batch; ++b) {
          const T* p = xv + (b * lay.channels + c) * lay.plane;
          for (std::int64_t i = 0; i < lay.plane; ++i) s += p[i];
        }
        mu = s / m;
        double ss = 0;
        for (std::int64_t b = 0; b < lay.batch; ++b) {
          const T* p = xv + (b * lay.channels + c) * lay.plane;
          for (std::int64_t i = 0; i < lay.plane; ++i) {
            const double d = p[i] - mu;
            ss += d * d;
          }
        }
        var = ss / m;
      } else {
        mu = stats.mean.values<T>()[c];
        var = stats.var.values<T>()[c];
      }
      const double inv = 1.0 / std::sqrt(var + eps);
      batch_var[c] = var;
      (*saved_mean)[c] = mu;
      (*saved_inv)[c] = inv;
      const double scale = gv[c] * inv;
      const double shift = bv[c] - mu * scale;
      for (std::int64_t b = 0; b < lay.batch; ++b) {
        const T* p = xv + (b * lay.channels + c) * lay.plane;
        T* q = yv + (b * lay.channels + c) * lay.plane;
        for (std::int64_t i = 0; i < lay.plane; ++i) {
          q[i] = static_cast<T>(p[i] * scale + shift);
        }
      }
    }

    if (mode == BnMode::kTrain) {
      auto rm = stats.mean.mutable_values<T>();
      auto rv = stats.var.mutable_values<T>();
      for (std::int64_t c = 0; c < lay.channels; ++c) {
        rm[c] = static_cast<T>((1.0 - momentum) * rm[c] + momentum * (*saved_mean)[c]);
        rv[c] = static_cast<T>((1.0 - momentum) * rv[c] + momentum * batch_var[c]);
      }
      stats.initialized = true;
    }
  });

  const bool train = mode == BnMode::kTrain;
  record_op({x, gamma, beta}, y,
            [lay, train, saved_mean, saved_inv, xs = x.impl().data,
             gs = gamma.impl().data](const Storage& gy_store, GradSink& sink) {
              dispatch(gy_store.dtype(), [&]<typename T>() {
                const T* xv = xs->as<T>().data();
                const T* gv = gs->as<T>().data();
                const T* gy = gy_store.as<T>().data();
                T* gx = sink.grad<T>(0);
                T* ggamma = sink.grad<T>(1);
                T* gbeta = sink.grad<T>(2);
                const double m = static_cast<double>(lay.count());
                for (std::int64_t c = 0; c < lay.channels; ++c) {
                  const double mu = (*saved_mean)[c];
                  const double inv = (*saved_inv)[c];
                  double sum_dy = 0, sum_dy_xhat = 0;
                  for (std::int64_t b = 0; b < lay.batch; ++b) {
                    const std::int64_t off = (b * lay.channels + c) * lay.plane;
                    for (std::int64_t i = 0; i < lay.plane; ++i) {
                      const double xhat = (xv[off + i] - mu) * inv;
                      sum_dy += gy[off + i];
                      sum_dy_xhat += gy[off + i] * xhat;
                    }
                  }
                  if (ggamma) ggamma[c] += static_cast<T>(sum_dy_xhat);
                  if (gbeta) gbeta[c] += static_cast<T>(sum_dy);
                  if (!gx) continue;
                  const double g = gv[c];
                  for (std::int64_t b = 0; b < lay.batch; ++b) {
                    const std::int64_t off = (b * lay.channels + c) * lay.plane;
                    for (std::int64_t i = 0; i < lay.plane; ++i) {
                      double d;
                      if (train) {
                        const double xhat = (xv[off + i] - mu) * inv;
                        d = g * inv * (gy[off + i] - sum_dy / m - xhat * sum_dy_xhat / m);
                      } else {
                        d = g * inv * gy[off + i];
                      }
                      gx[off + i] += static_cast<T>(d);
                    }
                  }
                }
              });
            });
  return y;
}

}  // namespace slimseg
