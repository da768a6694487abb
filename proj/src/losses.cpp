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

#include "slimseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "slimseg/ops.hpp"

namespace slimseg {
namespace {

constexpr double kProbMin = 1e-7;
constexpr double kProbMax = 1.0 - 1e-7;
constexpr double kTeacherSumTolerance = 1e-4;

// Softmax over channels in double, laid out like the input [B,K,H*W].
struct PixelProbs {
  std::int64_t batch = 0;
  std::int64_t classes = 0;
  std::int64_t plane = 0;
  std::vector<double> p;

  std::size_t index(std::int64_t b, std::int64_t k, std::int64_t i) const {
    return static_cast<std::size_t>((b * classes + k) * plane + i);
  }
  std::size_t pixels() const { return static_cast<std::size_t>(batch * plane); }
};

void require_logits(const Tensor& logits, const char* what) {
  if (logits.rank() != 4) {
    throw ShapeError(std::string(what) + ": logits must be [B,K,H,W], got " +
                     shape_str(logits.shape()));
  }
}

PixelProbs softmax_of(const Tensor& logits) {
  PixelProbs out;
  out.batch = logits.dim(0);
  out.classes = logits.dim(1);
  out.plane = logits.dim(2) * logits.dim(3);
  out.p.resize(static_cast<std::size_t>(logits.numel()));
  dispatch(logits.dtype(), [&]<typename T>() {
    const T* x = logits.values<T>().data();
    for (std::int64_t b = 0; b < out.batch; ++b) {
      for (std::int64_t i = 0; i < out.plane; ++i) {
        double mx = -INFINITY;
        for (std::int64_t k = 0; k < out.classes; ++k) mx = std::max<double>(mx, x[out.index(b, k, i)]);
        double z = 0;
        for (std::int64_t k = 0; k < out.classes; ++k) {
          const std::size_t j = out.index(b, k, i);
          out.p[j] = std::exp(static_cast<double>(x[j]) - mx);
          z += out.p[j];
        }
        for (std::int64_t k = 0; k < out.classes; ++k) out.p[out.index(b, k, i)] /= z;
      }
    }
  });
  return out;
}

Tensor scalar_zero(DType dtype) { return Tensor::zeros({}, dtype); }

// sum_i w_i * -sum_k t_ik log clamp(p_ik). Clamped components pass no gradient,
// so d/dlogit_j = w_i * (p_j * S - t_j * u_j) with u the unclamped indicator
// and S = sum_k t_k u_k.
Tensor weighted_ce(const Tensor& logits, PixelProbs probs, std::vector<double> target,
                   std::vector<double> weight) {
  double total = 0;
  for (std::int64_t b = 0; b < probs.batch; ++b) {
    for (std::int64_t i = 0; i < probs.plane; ++i) {
      const double w = weight[static_cast<std::size_t>(b * probs.plane + i)];
      if (w == 0) continue;
      double acc = 0;
      for (std::int64_t k = 0; k < probs.classes; ++k) {
        const std::size_t j = probs.index(b, k, i);
        if (target[j] != 0) acc -= target[j] * std::log(std::clamp(probs.p[j], kProbMin, kProbMax));
      }
      total += w * acc;
    }
  }
  Tensor y = Tensor::full({}, total, logits.dtype());
  record_op({logits}, y,
            [probs = std::move(probs), target = std::move(target),
             weight = std::move(weight)](const Storage& gy, GradSink& sink) {
              dispatch(gy.dtype(), [&]<typename T>() {
                T* gx = sink.grad<T>(0);
                if (!gx) return;
                const double g = gy.as<T>()[0];
                for (std::int64_t b = 0; b < probs.batch; ++b) {
                  for (std::int64_t i = 0; i < probs.plane; ++i) {
                    const double w = weight[static_cast<std::size_t>(b * probs.plane + i)];
                    if (w == 0) continue;
                    double s = 0;
                    for (std::int64_t k = 0; k < probs.classes; ++k) {
                      const std::size_t j = probs.index(b, k, i);
                      const double p = probs.p[j];
                      if (p >= kProbMin && p <= kProbMax) s += target[j];
                    }
                    for (std::int64_t k = 0; k < probs.classes; ++k) {
                      const std::size_t j = probs.index(b, k, i);
                      const double p = probs.p[j];
                      const double t = (p >= kProbMin && p <= kProbMax) ? target[j] : 0.0;
                      gx[j] += static_cast<T>(g * w * (p * s - t));
                    }
                  }
                }
              });
            });
  return y;
}

void require_labels(const PixelProbs& probs, const LabelMap& labels, int ignore_index,
                    const char* what) {
  if (labels.batch != probs.batch || labels.plane() != probs.plane) {
    throw ShapeError(std::string(what) + ": labels [" + std::to_string(labels.batch) + ", " +
                     std::to_string(labels.height) + ", " + std::to_string(labels.width) +
                     "] do not match the logits");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels.data[i];
    if (l != ignore_index && l >= probs.classes) {
      throw std::invalid_argument(std::string(what) + ": label " + std::to_string(l) +
                                  " out of range for " + std::to_string(probs.classes) +
                                  " classes at pixel " + std::to_string(i));
    }
  }
}

std::vector<double> one_hot(const PixelProbs& probs, const LabelMap& labels, int ignore_index) {
  std::vector<double> t(probs.p.size(), 0.0);
  for (std::int64_t b = 0; b < probs.batch; ++b) {
    for (std::int64_t i = 0; i < probs.plane; ++i) {
      const int l = labels.data[static_cast<std::size_t>(b * probs.plane + i)];
      if (l != ignore_index) t[probs.index(b, l, i)] = 1.0;
    }
  }
  return t;
}

// Pixels with selected[i] != 0 get weight 1/count.
std::vector<double> mean_weights(const std::vector<std::uint8_t>& selected) {
  const auto count = std::count_if(selected.begin(), selected.end(), [](auto v) { return v != 0; });
  std::vector<double> w(selected.size(), 0.0);
  if (count == 0) return w;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (selected[i]) w[i] = 1.0 / static_cast<double>(count);
  }
  return w;
}

std::vector<double> teacher_values(const Tensor& student_logits, const Tensor& teacher,
                                   const char* what) {
  if (teacher.shape() != student_logits.shape()) {
    throw ShapeError(std::string(what) + ": teacher " + shape_str(teacher.shape()) +
                     " does not match student " + shape_str(student_logits.shape()));
  }
  if (teacher.requires_grad()) {
    throw std::invalid_argument(std::string(what) + ": teacher probabilities must be detached");
  }
  std::vector<double> t = teacher.to_vector();
  const std::int64_t batch = teacher.dim(0), classes = teacher.dim(1);
  const std::int64_t plane = teacher.dim(2) * teacher.dim(3);
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t i = 0; i < plane; ++i) {
      double s = 0;
      for (std::int64_t k = 0; k < classes; ++k) {
        const double v = t[static_cast<std::size_t>((b * classes + k) * plane + i)];
        if (!(v >= 0)) {
          throw std::invalid_argument(std::string(what) + ": negative or NaN teacher probability");
        }
        s += v;
      }
      if (std::abs(s - 1.0) > kTeacherSumTolerance) {
        throw std::invalid_argument(std::string(what) + ": teacher probabilities sum to " +
                                    std::to_string(s) + " at pixel " +
                                    std::to_string(b * plane + i));
      }
    }
  }
  return t;
}

void require_mask(const BoundaryMask& mask, const PixelProbs& probs, const char* what) {
  if (mask.batch != probs.batch || mask.height * mask.width != probs.plane ||
      mask.valid.size() != probs.pixels()) {
    throw ShapeError(std::string(what) + ": mask does not match the logits");
  }
}

// Mean of the given terms (all scalars of one dtype).
Tensor average(const std::vector<Tensor>& terms) {
  Tensor acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  if (terms.size() == 1) return acc;
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

Tensor to_tensor(const LabelMap& map, DType dtype) {
  std::vector<double> v(map.data.begin(), map.data.end());
  return Tensor::from_values({map.batch, 1, map.height, map.width}, v, dtype);
}

void LossConfig::validate() const {
  if (!(lambda1 >= 0) || !std::isfinite(lambda1)) throw std::invalid_argument("lambda1 must be >= 0");
  if (!(lambda2 >= 0) || !std::isfinite(lambda2)) throw std::invalid_argument("lambda2 must be >= 0");
  if (!(tau > 0 && tau < 1)) throw std::invalid_argument("tau must lie in (0, 1)");
  if (boundary_radius < 1) throw std::invalid_argument("boundary_radius must be >= 1");
  if (ignore_index < 0 || ignore_index > 255) {
    throw std::invalid_argument("ignore_index must fit in a u8 label");
  }
  if (ohem) {
    if (!(ohem->keep_threshold > 0 && ohem->keep_threshold <= 1)) {
      throw std::invalid_argument("ohem keep_threshold must lie in (0, 1]");
    }
    if (!(ohem->min_kept_fraction >= 0 && ohem->min_kept_fraction <= 1)) {
      throw std::invalid_argument("ohem min_kept_fraction must lie in [0, 1]");
    }
  }
}

std::size_t BoundaryMask::count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

Tensor cross_entropy(const Tensor& logits, const LabelMap& labels, const LossConfig& cfg) {
  require_logits(logits, "cross_entropy");
  PixelProbs probs = softmax_of(logits);
  require_labels(probs, labels, cfg.ignore_index, "cross_entropy");

  std::vector<std::uint8_t> selected(probs.pixels(), 0);
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (labels.data[i] != cfg.ignore_index) valid.push_back(i);
  }
  auto p_true = [&](std::size_t pixel) {
    const auto b = static_cast<std::int64_t>(pixel) / probs.plane;
    const auto i = static_cast<std::int64_t>(pixel) % probs.plane;
    return probs.p[probs.index(b, labels.data[pixel], i)];
  };
  if (!cfg.ohem) {
    for (auto i : valid) selected[i] = 1;
  } else {
    std::size_t kept = 0;
    for (auto i : valid) {
      if (p_true(i) < cfg.ohem->keep_threshold) {
        selected[i] = 1;
        ++kept;
      }
    }
    const auto min_kept = static_cast<std::size_t>(
        std::ceil(cfg.ohem->min_kept_fraction * static_cast<double>(valid.size())));
    if (kept < min_kept) {
      // Backfill with the hardest pixels; ties resolve by pixel index.
      std::vector<std::size_t> order = valid;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return p_true(a) < p_true(b); });
      for (std::size_t j = 0; j < min_kept; ++j) selected[order[j]] = 1;
    }
  }
  std::vector<double> target = one_hot(probs, labels, cfg.ignore_index);
  return weighted_ce(logits, std::move(probs), std::move(target), mean_weights(selected));
}

Tensor soft_target_ce(const Tensor& student_logits, const Tensor& teacher_probs) {
  require_logits(student_logits, "soft_target_ce");
  std::vector<double> target = teacher_values(student_logits, teacher_probs, "soft_target_ce");
  PixelProbs probs = softmax_of(student_logits);
  std::vector<double> weight(probs.pixels(), 1.0 / static_cast<double>(probs.pixels()));
  return weighted_ce(student_logits, std::move(probs), std::move(target), std::move(weight));
}

Tensor binary_ce(const Tensor& p, const Tensor& target) {
  if (p.shape() != target.shape()) {
    throw ShapeError("binary_ce: prediction " + shape_str(p.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  if (target.requires_grad()) throw std::invalid_argument("binary_ce: target must be detached");
  const std::vector<double> pv = p.to_vector();
  const std::vector<double> yv = target.to_vector();
  const double inv_n = 1.0 / static_cast<double>(pv.size());
  double total = 0;
  std::vector<double> dp(pv.size(), 0.0);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double c = std::clamp(pv[i], kProbMin, kProbMax);
    total -= yv[i] * std::log(c) + (1 - yv[i]) * std::log(1 - c);
    if (pv[i] >= kProbMin && pv[i] <= kProbMax) dp[i] = (-yv[i] / c + (1 - yv[i]) / (1 - c)) * inv_n;
  }
  Tensor y = Tensor::full({}, total * inv_n, p.dtype());
  record_op({p}, y, [dp = std::move(dp)](const Storage& gy, GradSink& sink) {
    dispatch(gy.dtype(), [&]<typename T>() {
      T* gx = sink.grad<T>(0);
      if (!gx) return;
      const double g = gy.as<T>()[0];
      for (std::size_t i = 0; i < dp.size(); ++i) gx[i] += static_cast<T>(g * dp[i]);
    });
  });
  return y;
}

BoundaryMask boundary_mask(const Tensor& p_b, double tau) {
  if (p_b.rank() != 4 || p_b.dim(1) != 1) {
    throw ShapeError("boundary_mask: expected [B,1,H,W], got " + shape_str(p_b.shape()));
  }
  BoundaryMask m{p_b.dim(0), p_b.dim(2), p_b.dim(3), {}};
  for (double v : p_b.to_vector()) m.valid.push_back(v > tau ? 1 : 0);
  return m;
}

BoundaryMask mask_from_map(const LabelMap& boundary) {
  BoundaryMask m{boundary.batch, boundary.height, boundary.width, {}};
  for (auto v : boundary.data) m.valid.push_back(v == 1 ? 1 : 0);
  return m;
}

Tensor masked_ce(const Tensor& logits, const LabelMap& labels, const BoundaryMask& mask,
                 const LossConfig& cfg) {
  require_logits(logits, "masked_ce");
  PixelProbs probs = softmax_of(logits);
  require_labels(probs, labels, cfg.ignore_index, "masked_ce");
  require_mask(mask, probs, "masked_ce");
  std::vector<std::uint8_t> selected(probs.pixels());
  for (std::size_t i = 0; i < selected.size(); ++i) {
    selected[i] = mask.valid[i] && labels.data[i] != cfg.ignore_index;
  }
  std::vector<double> target = one_hot(probs, labels, cfg.ignore_index);
  return weighted_ce(logits, std::move(probs), std::move(target), mean_weights(selected));
}

Tensor masked_kd(const Tensor& student_logits, const Tensor& teacher_probs,
                 const BoundaryMask& mask) {
  require_logits(student_logits, "masked_kd");
  std::vector<double> target = teacher_values(student_logits, teacher_probs, "masked_kd");
  PixelProbs probs = softmax_of(student_logits);
  require_mask(mask, probs, "masked_kd");
  std::vector<double> weight = mean_weights(mask.valid);
  return weighted_ce(student_logits, std::move(probs), std::move(target), std::move(weight));
}

LabelMap boundary_gt(const LabelMap& labels, int radius, int ignore_index) {
  if (radius < 1) throw std::invalid_argument("boundary_gt: radius must be >= 1");
  struct Offset {
    int dy, dx;
  };
  std::vector<Offset> disk;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if ((dy != 0 || dx != 0) && dy * dy + dx * dx <= radius * radius) disk.push_back({dy, dx});
    }
  }
  LabelMap out(labels.batch, labels.height, labels.width, 0);
  for (std::int64_t b = 0; b < labels.batch; ++b) {
    for (std::int64_t y = 0; y < labels.height; ++y) {
      for (std::int64_t x = 0; x < labels.width; ++x) {
        const int own = labels.at(b, y, x);
        if (own == ignore_index) continue;
        for (const auto& o : disk) {
          const std::int64_t yy = y + o.dy, xx = x + o.dx;
          if (yy < 0 || yy >= labels.height || xx < 0 || xx >= labels.width) continue;
          const int other = labels.at(b, yy, xx);
          if (other != own && other != ignore_index) {
            out.at(b, y, x) = 1;
            break;
          }
        }
      }
    }
  }
  return out;
}

double mean_entropy(const Tensor& probs) {
  if (probs.rank() != 4) throw ShapeError("mean_entropy: expected [B,K,H,W]");
  const std::vector<double> t = probs.to_vector();
  const std::int64_t batch = probs.dim(0), classes = probs.dim(1);
  const std::int64_t plane = probs.dim(2) * probs.dim(3);
  double total = 0;
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t k = 0; k < classes; ++k) {
      for (std::int64_t i = 0; i < plane; ++i) {
        const double v = t[static_cast<std::size_t>((b * classes + k) * plane + i)];
        if (v > 0) total -= v * std::log(v);
      }
    }
  }
  return total / static_cast<double>(batch * plane);
}

GroundTruth make_ground_truth(const LabelMap& labels, const LossConfig& cfg, DType dtype) {
  GroundTruth gt;
  gt.labels = labels;
  gt.boundary = boundary_gt(labels, cfg.boundary_radius, cfg.ignore_index);
  gt.boundary_tensor = to_tensor(gt.boundary, dtype);
  return gt;
}

LossTerms width_loss(const ForwardOutput& out, bool largest, const TeacherSet* teacher,
                     const GroundTruth& gt, const LossConfig& cfg) {
  const DType dtype = out.seg_logits.dtype();
  const bool use_boundary = cfg.lambda1 > 0;
  if (use_boundary && !out.boundary_prob) {
    throw std::invalid_argument("width_loss: lambda1 > 0 needs the boundary prediction");
  }
  if (!largest) {
    if (!teacher || teacher->seg_probs.empty()) {
      throw std::invalid_argument("width_loss: missing teacher for a non-largest width");
    }
    if (use_boundary && teacher->boundary_probs.size() != teacher->seg_probs.size()) {
      throw std::invalid_argument("width_loss: missing teacher boundary prediction");
    }
  }

  BoundaryMask mask;
  if (cfg.lambda2 > 0) {
    mask = use_boundary ? boundary_mask(*out.boundary_prob, cfg.tau) : mask_from_map(gt.boundary);
  }

  LossTerms terms;
  terms.supervised = largest;
  terms.boundary = scalar_zero(dtype);
  terms.guided = scalar_zero(dtype);
  if (largest) {
    terms.seg = cross_entropy(out.seg_logits, gt.labels, cfg);
    if (use_boundary) terms.boundary = binary_ce(*out.boundary_prob, gt.boundary_tensor);
    if (cfg.lambda2 > 0) terms.guided = masked_ce(out.seg_logits, gt.labels, mask, cfg);
  } else {
    std::vector<Tensor> seg, boundary, guided;
    for (std::size_t j = 0; j < teacher->seg_probs.size(); ++j) {
      seg.push_back(soft_target_ce(out.seg_logits, teacher->seg_probs[j]));
      if (use_boundary) boundary.push_back(binary_ce(*out.boundary_prob, teacher->boundary_probs[j]));
      if (cfg.lambda2 > 0) guided.push_back(masked_kd(out.seg_logits, teacher->seg_probs[j], mask));
    }
    terms.seg = average(seg);
    if (use_boundary) terms.boundary = average(boundary);
    if (cfg.lambda2 > 0) terms.guided = average(guided);
  }

  terms.total = terms.seg;
  if (use_boundary) terms.total = add(terms.total, scale(terms.boundary, cfg.lambda1));
  if (cfg.lambda2 > 0) terms.total = add(terms.total, scale(terms.guided, cfg.lambda2));
  return terms;
}

CombinedLoss combine_losses(std::vector<LossTerms> per_width) {
  if (per_width.empty()) throw std::invalid_argument("combine_losses: no width terms");
  CombinedLoss c;
  c.total = per_width.front().total;
  for (std::size_t n = 1; n < per_width.size(); ++n) c.total = add(c.total, per_width[n].total);
  for (const auto& t : per_width) {
    c.seg += t.seg.item();
    c.boundary += t.boundary.item();
    c.guided += t.guided.item();
  }
  c.per_width = std::move(per_width);
  return c;
}

}  // namespace slimseg
