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

#include "slimseg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "slimseg/ops.hpp"

namespace slimseg {
namespace {

void require_same_size(const LabelMap& a, const LabelMap& b, const char* what) {
  if (a.batch != b.batch || a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": label maps differ in shape");
  }
}

// One-dimensional lower envelope of parabolas (q - v)^2 + f(v). f values of
// kInf mark empty sites. Integer inputs give exact integer outputs.
constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;

void envelope_1d(const std::int64_t* f, std::int64_t n, std::int64_t* out,
                 std::vector<std::int64_t>& v, std::vector<double>& z) {
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  // Abscissa where the parabolas rooted at q and p intersect.
  auto cross = [f](std::int64_t q, std::int64_t p) {
    return static_cast<double>((f[q] + q * q) - (f[p] + p * p)) / static_cast<double>(2 * (q - p));
  };
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    if (f[q] >= kInf) continue;
    while (k >= 0 && cross(q, v[static_cast<std::size_t>(k)]) <= z[static_cast<std::size_t>(k)]) --k;
    ++k;
    const auto kk = static_cast<std::size_t>(k);
    v[kk] = q;
    z[kk] = k == 0 ? -std::numeric_limits<double>::infinity() : cross(q, v[kk - 1]);
    z[kk + 1] = std::numeric_limits<double>::infinity();
  }
  if (k < 0) {
    std::fill(out, out + n, kInf);
    return;
  }
  std::size_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const std::int64_t p = v[j];
    out[q] = (q - p) * (q - p) + f[p];
  }
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : k_(num_classes), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes < 0) throw std::invalid_argument("confusion matrix needs K >= 0");
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

void ConfusionMatrix::add(int gt, int pred, std::int64_t n) {
  if (gt < 0 || gt >= k_ || pred < 0 || pred >= k_) {
    throw std::invalid_argument("confusion: class pair (" + std::to_string(gt) + ", " +
                                std::to_string(pred) + ") out of range for K=" +
                                std::to_string(k_));
  }
  counts_[static_cast<std::size_t>(gt * k_ + pred)] += n;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("confusion: merging different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

void update_confusion(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt,
                      int ignore_index) {
  require_same_size(pred, gt, "update_confusion");
  // Validate first so a bad map leaves cm untouched.
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.data[i] == ignore_index) continue;
    if (gt.data[i] >= cm.num_classes() || pred.data[i] >= cm.num_classes()) {
      throw std::invalid_argument("update_confusion: label out of range at pixel " +
                                  std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.data[i] != ignore_index) cm.add(gt.data[i], pred.data[i]);
  }
}

MiouResult miou(const ConfusionMatrix& cm) {
  const int k = cm.num_classes();
  MiouResult r;
  r.iou.assign(static_cast<std::size_t>(k), std::nan(""));
  r.present.assign(static_cast<std::size_t>(k), false);
  double sum = 0;
  int n = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::int64_t denom = row + col - cm.at(c, c);
    if (denom == 0) continue;
    r.present[static_cast<std::size_t>(c)] = true;
    r.iou[static_cast<std::size_t>(c)] = static_cast<double>(cm.at(c, c)) / static_cast<double>(denom);
    sum += r.iou[static_cast<std::size_t>(c)];
    ++n;
  }
  if (n == 0) throw std::invalid_argument("miou: every class is absent");
  r.miou = sum / n;
  return r;
}

std::vector<std::int64_t> squared_distance_transform(const LabelMap& boundary) {
  const std::int64_t h = boundary.height, w = boundary.width, plane = h * w;
  std::vector<std::int64_t> out(boundary.size());
  std::vector<std::int64_t> col(static_cast<std::size_t>(h)), col_out(static_cast<std::size_t>(h));
  std::vector<std::int64_t> v;
  std::vector<double> z;
  for (std::int64_t b = 0; b < boundary.batch; ++b) {
    std::int64_t* d = out.data() + b * plane;
    bool any = false;
    for (std::int64_t i = 0; i < plane; ++i) {
      const bool on = boundary.data[static_cast<std::size_t>(b * plane + i)] != 0;
      d[i] = on ? 0 : kInf;
      any = any || on;
    }
    if (!any) {
      throw std::invalid_argument("distance_transform: image " + std::to_string(b) +
                                  " has no boundary pixel");
    }
    // Rows, then columns.
    std::vector<std::int64_t> row(static_cast<std::size_t>(w));
    for (std::int64_t y = 0; y < h; ++y) {
      envelope_1d(d + y * w, w, row.data(), v, z);
      std::copy(row.begin(), row.end(), d + y * w);
    }
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t y = 0; y < h; ++y) col[static_cast<std::size_t>(y)] = d[y * w + x];
      envelope_1d(col.data(), h, col_out.data(), v, z);
      for (std::int64_t y = 0; y < h; ++y) d[y * w + x] = col_out[static_cast<std::size_t>(y)];
    }
  }
  return out;
}

std::vector<double> distance_transform(const LabelMap& boundary) {
  const auto sq = squared_distance_transform(boundary);
  std::vector<double> out(sq.size());
  for (std::size_t i = 0; i < sq.size(); ++i) out[i] = std::sqrt(static_cast<double>(sq[i]));
  return out;
}

std::int64_t DistanceHistogram::total() const {
  std::int64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

std::vector<double> default_distance_edges() {
  return {0, 1, 2, 3, 4, 5, 10, std::numeric_limits<double>::infinity()};
}

DistanceHistogram error_distance_histogram(const LabelMap& pred, const LabelMap& gt,
                                           int ignore_index, std::vector<double> edges) {
  require_same_size(pred, gt, "error_distance_histogram");
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end())) {
    throw std::invalid_argument("error_distance_histogram: edges must be ascending, >= 2");
  }
  DistanceHistogram hist{edges, std::vector<std::int64_t>(edges.size() - 1, 0)};
  const std::vector<double> dist = distance_transform(boundary_gt(gt, 1, ignore_index));
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.data[i] == ignore_index || pred.data[i] == gt.data[i]) continue;
    const double d = dist[i];
    const auto it = std::upper_bound(edges.begin(), edges.end(), d);
    if (it == edges.begin() || it == edges.end()) continue;  // outside the binned range
    ++hist.counts[static_cast<std::size_t>(it - edges.begin() - 1)];
  }
  return hist;
}

void merge_histogram(DistanceHistogram& into, const DistanceHistogram& other) {
  if (into.edges.empty()) {
    into = other;
    return;
  }
  if (into.edges != other.edges) throw std::invalid_argument("merge_histogram: edges differ");
  for (std::size_t i = 0; i < into.counts.size(); ++i) into.counts[i] += other.counts[i];
}

DiffMap diff_map(const LabelMap& pred_a, const LabelMap& pred_b, const LabelMap& gt) {
  require_same_size(pred_a, pred_b, "diff_map");
  require_same_size(pred_a, gt, "diff_map");
  DiffMap d{gt.batch, gt.height, gt.width, std::vector<int>(gt.size(), -1), 0, 0};
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (pred_a.data[i] != pred_b.data[i]) {
      d.cells[i] = gt.data[i];
      ++d.disagree;
    }
  }
  d.ratio = gt.size() ? static_cast<double>(d.disagree) / static_cast<double>(gt.size()) : 0.0;
  return d;
}

LabelMap predict(const SlimSegModel& model, const Tensor& images, std::size_t width_index) {
  const ForwardOutput out = model.forward(images, width_index, BnMode::kEval, false);
  LabelMap labels(images.dim(0), images.dim(2), images.dim(3));
  labels.data = argmax_channels(out.seg_logits);
  return labels;
}

std::vector<ConfusionMatrix> evaluate_widths(const SlimSegModel& model,
                                             const std::vector<Sample>& samples,
                                             const std::vector<std::size_t>& width_indices,
                                             std::size_t batch_size) {
  const int k = static_cast<int>(model.config().num_classes);
  std::vector<ConfusionMatrix> out(width_indices.size(), ConfusionMatrix(k));
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    const std::vector<Sample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                    samples.begin() + static_cast<std::ptrdiff_t>(end));
    const Batch batch = make_batch(chunk, model.config().dtype);
    for (std::size_t j = 0; j < width_indices.size(); ++j) {
      update_confusion(out[j], predict(model, batch.images, width_indices[j]), batch.labels);
    }
  }
  return out;
}

std::string width_report(const std::vector<WidthMetrics>& rows) {
  std::ostringstream os;
  os << "width\tmiou";
  const std::size_t k = rows.empty() ? 0 : rows.front().iou.size();
  for (std::size_t c = 0; c < k; ++c) os << "\tiou_" << c;
  os << "\tflops\tparams\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.2f\t%.6f", r.width, r.miou);
    os << buf;
    for (double v : r.iou) {
      if (std::isnan(v)) {
        os << "\tnan";
      } else {
        std::snprintf(buf, sizeof buf, "\t%.6f", v);
        os << buf;
      }
    }
    std::snprintf(buf, sizeof buf, "\t%.0f\t%lld\n", r.flops, static_cast<long long>(r.params));
    os << buf;
  }
  return os.str();
}

std::string histogram_report(const DistanceHistogram& h) {
  std::ostringstream os;
  os << "bin_low\tbin_high\tcount\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    char lo[32], hi[32];
    std::snprintf(lo, sizeof lo, "%g", h.edges[i]);
    std::snprintf(hi, sizeof hi, "%g", h.edges[i + 1]);
    os << lo << '\t' << hi << '\t' << h.counts[i] << '\n';
  }
  return os.str();
}

}  // namespace slimseg
