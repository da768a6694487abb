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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "grad_suite.hpp"
#include "slimseg/losses.hpp"
#include "slimseg/ops.hpp"
#include "test_util.hpp"

namespace slimseg {
namespace {

using testing::random_labels;
using testing::random_mask;
using testing::random_tensor;

// -log softmax(logits)[k] at one pixel, straight from the definition.
double pixel_nll(const std::vector<double>& x, std::int64_t classes, std::int64_t plane,
                 std::int64_t b, std::int64_t i, std::int64_t k) {
  double z = 0;
  for (std::int64_t c = 0; c < classes; ++c) z += std::exp(x[(b * classes + c) * plane + i]);
  return -(x[(b * classes + k) * plane + i] - std::log(z));
}

double pixel_soft_ce(const std::vector<double>& x, const std::vector<double>& t,
                     std::int64_t classes, std::int64_t plane, std::int64_t b, std::int64_t i) {
  double acc = 0;
  for (std::int64_t k = 0; k < classes; ++k) {
    acc += t[(b * classes + k) * plane + i] * pixel_nll(x, classes, plane, b, i, k);
  }
  return acc;
}

LossConfig plain_ce() {
  LossConfig cfg;
  cfg.ohem.reset();
  return cfg;
}

// Two-class logits giving true-class probability p at every pixel of row-major
// list `p` (label 0 everywhere).
Tensor two_class_logits(const std::vector<double>& p, std::int64_t h, std::int64_t w) {
  std::vector<double> v(2 * p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = std::log(p[i]);
    v[p.size() + i] = std::log(1 - p[i]);
  }
  return Tensor::from_values({1, 2, h, w}, v, DType::kFloat64, true);
}

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
  const LabelMap labels = random_labels(2, 4, 4, 3, 7);
  std::vector<double> v(2 * 3 * 16, 0.0);
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t i = 0; i < 16; ++i) v[(b * 3 + labels.data[b * 16 + i]) * 16 + i] = 20;
  }
  const Tensor logits = Tensor::from_values({2, 3, 4, 4}, v, DType::kFloat64);
  EXPECT_LT(cross_entropy(logits, labels, plain_ce()).item(), 1e-6);
  EXPECT_LT(cross_entropy(logits, labels, LossConfig{}).item(), 1e-6);
}

TEST(CrossEntropy, UniformTwoClassIsLn2) {
  const Tensor logits = Tensor::zeros({2, 2, 3, 5}, DType::kFloat64);
  const LabelMap labels = random_labels(2, 3, 5, 2, 3);
  EXPECT_NEAR(cross_entropy(logits, labels, plain_ce()).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(cross_entropy(logits, labels, LossConfig{}).item(), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, IgnoredPixelsMatchPerPixelOracle) {
  const Tensor logits = random_tensor({2, 4, 5, 6}, 11, DType::kFloat64, -3, 3);
  const LabelMap labels = random_labels(2, 5, 6, 4, 12, 0.3);
  const auto x = logits.to_vector();
  double acc = 0;
  int count = 0;
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t i = 0; i < 30; ++i) {
      const int l = labels.data[b * 30 + i];
      if (l == kIgnoreLabel) continue;
      acc += pixel_nll(x, 4, 30, b, i, l);
      ++count;
    }
  }
  EXPECT_NEAR(cross_entropy(logits, labels, plain_ce()).item(), acc / count, 1e-12);
}

TEST(CrossEntropy, AllIgnoredIsZero) {
  Tensor logits = random_tensor({1, 3, 4, 4}, 5, DType::kFloat64, -1, 1, true);
  const LabelMap labels(1, 4, 4, kIgnoreLabel);
  Tape tape;
  TapeScope scope(tape);
  const Tensor loss = cross_entropy(logits, labels, LossConfig{});
  EXPECT_EQ(loss.item(), 0.0);
  backward(loss);
  for (double g : logits.grad_vector()) EXPECT_EQ(g, 0.0);
}

TEST(CrossEntropy, RejectsBadLabels) {
  const Tensor logits = Tensor::zeros({1, 3, 2, 2}, DType::kFloat64);
  LabelMap labels(1, 2, 2, 0);
  labels.data[3] = 3;
  EXPECT_THROW(cross_entropy(logits, labels, LossConfig{}), std::invalid_argument);
  EXPECT_THROW(cross_entropy(logits, LabelMap(1, 2, 3, 0), LossConfig{}), ShapeError);
}

// Half the pixels have true-class probability 0.99, the rest 0.3.
std::vector<double> half_easy(std::size_t n) {
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = (i % 2 == 0) ? 0.99 : 0.3;
  return p;
}

std::vector<std::size_t> pixels_with_grad(const Tensor& logits) {
  const auto g = logits.grad_vector();
  const std::size_t plane = g.size() / 2;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < plane; ++i) {
    if (g[i] != 0.0 || g[plane + i] != 0.0) out.push_back(i);
  }
  return out;
}

TEST(CrossEntropy, OhemDropsEasyPixels) {
  const auto p = half_easy(64);
  Tensor logits = two_class_logits(p, 8, 8);
  LossConfig cfg;
  cfg.ohem = OhemConfig{0.7, 1.0 / 16};
  Tape tape;
  TapeScope scope(tape);
  const Tensor loss = cross_entropy(logits, LabelMap(1, 8, 8, 0), cfg);
  EXPECT_NEAR(loss.item(), -std::log(0.3), 1e-12);
  backward(loss);
  std::vector<std::size_t> hard;
  for (std::size_t i = 1; i < 64; i += 2) hard.push_back(i);
  EXPECT_EQ(pixels_with_grad(logits), hard);
}

TEST(CrossEntropy, OhemBackfillsHardestThenLowestIndex) {
  auto p = half_easy(64);
  p[10] = 0.995;  // easiest of all; never reached by the backfill
  p[20] = 0.8;  // hardest easy pixel; picked first
  Tensor logits = two_class_logits(p, 8, 8);
  LossConfig cfg;
  cfg.ohem = OhemConfig{0.7, 0.75};  // keep at least 48 of 64
  Tape tape;
  TapeScope scope(tape);
  const Tensor loss = cross_entropy(logits, LabelMap(1, 8, 8, 0), cfg);
  backward(loss);

  // Oracle: all 32 hard pixels, then the 16 easy ones ordered by probability
  // and index.
  std::vector<std::size_t> order(64);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  std::vector<std::size_t> expected(order.begin(), order.begin() + 48);
  std::sort(expected.begin(), expected.end());
  EXPECT_EQ(pixels_with_grad(logits), expected);
  EXPECT_TRUE(std::find(expected.begin(), expected.end(), 20) != expected.end());
  EXPECT_TRUE(std::find(expected.begin(), expected.end(), 10) == expected.end());

  double acc = 0;
  for (auto i : expected) acc -= std::log(p[i]);
  EXPECT_NEAR(loss.item(), acc / 48, 1e-12);
}

TEST(SoftTargetCe, MatchedStudentGivesTeacherEntropy) {
  const Tensor teacher = Tensor::from_values({1, 2, 1, 1}, {0.25, 0.75}, DType::kFloat64);
  const Tensor student = Tensor::from_values({1, 2, 1, 1}, {std::log(0.25), std::log(0.75)},
                                             DType::kFloat64);
  const double h = -0.25 * std::log(0.25) - 0.75 * std::log(0.75);
  EXPECT_NEAR(soft_target_ce(student, teacher).item(), h, 1e-12);
  EXPECT_NEAR(h, 0.5623, 1e-4);
  EXPECT_NEAR(mean_entropy(teacher), h, 1e-15);
}

TEST(SoftTargetCe, MatchedCertainty) {
  const Tensor teacher = Tensor::from_values({1, 3, 1, 2}, {0, 1, 1, 0, 0, 0}, DType::kFloat64);
  const Tensor student =
      Tensor::from_values({1, 3, 1, 2}, {0, 20, 20, 0, 0, 0}, DType::kFloat64);
  EXPECT_LT(soft_target_ce(student, teacher).item(), 1e-6);
}

TEST(SoftTargetCe, GibbsInequalityOverRandomDistributions) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::int64_t k = std::uniform_int_distribution<std::int64_t>(2, 6)(rng);
    const Tensor teacher =
        softmax_channels(random_tensor({1, k, 2, 2}, 1000 + trial, DType::kFloat64, -4, 4));
    const Tensor student = random_tensor({1, k, 2, 2}, 5000 + trial, DType::kFloat64, -4, 4);
    const double gap = soft_target_ce(student, teacher).item() - mean_entropy(teacher);
    EXPECT_GE(gap, -1e-7);
    EXPECT_GT(gap, 0.0);  // a random student differs from the teacher

    const Tensor matched = log(teacher);
    EXPECT_NEAR(soft_target_ce(matched, teacher).item(), mean_entropy(teacher), 1e-12);
  }
}

TEST(SoftTargetCe, RejectsUnnormalizedOrTrackedTeacher) {
  const Tensor student = Tensor::zeros({1, 2, 1, 1}, DType::kFloat64);
  EXPECT_THROW(soft_target_ce(student, Tensor::from_values({1, 2, 1, 1}, {0.5, 0.6},
                                                           DType::kFloat64)),
               std::invalid_argument);
  EXPECT_NO_THROW(soft_target_ce(student, Tensor::from_values({1, 2, 1, 1}, {0.5, 0.50005},
                                                              DType::kFloat64)));
  const Tensor tracked =
      Tensor::from_values({1, 2, 1, 1}, {0.5, 0.5}, DType::kFloat64, /*requires_grad=*/true);
  EXPECT_THROW(soft_target_ce(student, tracked), std::invalid_argument);
  EXPECT_THROW(soft_target_ce(student, Tensor::full({1, 2, 2, 1}, 0.5, DType::kFloat64)),
               ShapeError);
}

TEST(BinaryCe, ClosedForms) {
  const Tensor half = Tensor::full({2, 1, 3, 3}, 0.5, DType::kFloat64);
  const Tensor y = to_tensor(random_labels(2, 3, 3, 2, 4), DType::kFloat64);
  EXPECT_NEAR(binary_ce(half, y).item(), std::log(2.0), 1e-12);
  EXPECT_LE(binary_ce(y, y).item(), 1e-6);
  const Tensor p = Tensor::full({1, 1, 4, 4}, 0.9, DType::kFloat64);
  const Tensor ones = Tensor::full({1, 1, 4, 4}, 1.0, DType::kFloat64);
  EXPECT_NEAR(binary_ce(p, ones).item(), -std::log(0.9), 1e-12);
  EXPECT_NEAR(-std::log(0.9), 0.1054, 1e-4);
}

TEST(BinaryCe, ClampedEntriesPassNoGradient) {
  Tensor p = Tensor::from_values({1, 1, 1, 3}, {0.0, 1.0, 0.5}, DType::kFloat64, true);
  const Tensor y = Tensor::from_values({1, 1, 1, 3}, {1.0, 0.0, 1.0}, DType::kFloat64);
  Tape tape;
  TapeScope scope(tape);
  const Tensor loss = binary_ce(p, y);
  EXPECT_TRUE(std::isfinite(loss.item()));
  EXPECT_NEAR(loss.item(), (-2 * std::log(1e-7) - std::log(0.5)) / 3, 1e-9);
  backward(loss);
  const auto g = p.grad_vector();
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_NEAR(g[2], -2.0 / 3, 1e-12);
}

TEST(BoundaryMask, StrictThreshold) {
  EXPECT_EQ(boundary_mask(Tensor::full({2, 1, 3, 3}, 0.9, DType::kFloat64), 0.7).count(), 18u);
  EXPECT_EQ(boundary_mask(Tensor::full({2, 1, 3, 3}, 0.7, DType::kFloat64), 0.7).count(), 0u);
}

TEST(BoundaryMask, MatchesElementwiseOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor p = random_tensor({1, 1, 32, 32}, seed, DType::kFloat32, 0, 1);
    const BoundaryMask m = boundary_mask(p, 0.7);
    const auto v = p.values<float>();
    ASSERT_EQ(m.valid.size(), v.size());
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(m.valid[i], v[i] > 0.7 ? 1 : 0);
  }
}

TEST(MaskedLosses, AllValidEqualsUnmasked) {
  const Tensor logits = random_tensor({2, 3, 4, 5}, 21, DType::kFloat64, -2, 2);
  const LabelMap labels = random_labels(2, 4, 5, 3, 22, 0.2);
  const Tensor teacher = softmax_channels(random_tensor({2, 3, 4, 5}, 23));
  BoundaryMask all{2, 4, 5, std::vector<std::uint8_t>(40, 1)};
  EXPECT_NEAR(masked_ce(logits, labels, all, LossConfig{}).item(),
              cross_entropy(logits, labels, plain_ce()).item(), 1e-12);
  EXPECT_NEAR(masked_kd(logits, teacher, all).item(), soft_target_ce(logits, teacher).item(),
              1e-12);
}

TEST(MaskedLosses, EmptyMaskIsZeroWithZeroGradient) {
  Tensor logits = random_tensor({1, 3, 4, 4}, 31, DType::kFloat64, -2, 2, true);
  const LabelMap labels = random_labels(1, 4, 4, 3, 32);
  const Tensor teacher = softmax_channels(random_tensor({1, 3, 4, 4}, 33));
  BoundaryMask none{1, 4, 4, std::vector<std::uint8_t>(16, 0)};
  Tape tape;
  TapeScope scope(tape);
  const Tensor a = masked_ce(logits, labels, none, LossConfig{});
  const Tensor b = masked_kd(logits, teacher, none);
  EXPECT_EQ(a.item(), 0.0);
  EXPECT_EQ(b.item(), 0.0);
  backward(add(a, b));
  for (double g : logits.grad_vector()) EXPECT_EQ(g, 0.0);
}

// Brute-force mean over selected pixels for both masked losses.
void expect_masked_oracle(const Tensor& logits, const LabelMap& labels, const Tensor& teacher,
                          const BoundaryMask& mask) {
  const std::int64_t b = logits.dim(0), k = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  const auto x = logits.to_vector();
  const auto t = teacher.to_vector();
  double ce = 0, kd = 0;
  int n_ce = 0, n_kd = 0;
  for (std::int64_t bb = 0; bb < b; ++bb) {
    for (std::int64_t i = 0; i < plane; ++i) {
      if (!mask.valid[bb * plane + i]) continue;
      kd += pixel_soft_ce(x, t, k, plane, bb, i);
      ++n_kd;
      const int l = labels.data[bb * plane + i];
      if (l == kIgnoreLabel) continue;
      ce += pixel_nll(x, k, plane, bb, i, l);
      ++n_ce;
    }
  }
  EXPECT_NEAR(masked_ce(logits, labels, mask, LossConfig{}).item(), n_ce ? ce / n_ce : 0.0, 1e-12);
  EXPECT_NEAR(masked_kd(logits, teacher, mask).item(), n_kd ? kd / n_kd : 0.0, 1e-12);
}

TEST(MaskedLosses, CheckerboardMatchesOracle) {
  const Tensor logits = random_tensor({2, 4, 6, 6}, 41, DType::kFloat64, -3, 3);
  const LabelMap labels = random_labels(2, 6, 6, 4, 42, 0.1);
  const Tensor teacher = softmax_channels(random_tensor({2, 4, 6, 6}, 43));
  BoundaryMask board{2, 6, 6, {}};
  for (int b = 0; b < 2; ++b) {
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 6; ++x) board.valid.push_back((x + y) % 2 == 0 ? 1 : 0);
    }
  }
  expect_masked_oracle(logits, labels, teacher, board);
}

TEST(MaskedLosses, RandomMasksMatchOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor logits = random_tensor({1, 5, 32, 32}, 100 + seed, DType::kFloat64, -3, 3);
    const LabelMap labels = random_labels(1, 32, 32, 5, 200 + seed, 0.05);
    const Tensor teacher = softmax_channels(random_tensor({1, 5, 32, 32}, 300 + seed));
    expect_masked_oracle(logits, labels, teacher, random_mask(1, 32, 32, 400 + seed));
  }
}

// Pixel (y, x) is boundary iff some other pixel within distance r carries a
// different, non-ignored label. Scans every pair.
LabelMap boundary_oracle(const LabelMap& labels, int r) {
  LabelMap out(labels.batch, labels.height, labels.width, 0);
  for (std::int64_t b = 0; b < labels.batch; ++b) {
    for (std::int64_t y = 0; y < labels.height; ++y) {
      for (std::int64_t x = 0; x < labels.width; ++x) {
        const int own = labels.at(b, y, x);
        if (own == kIgnoreLabel) continue;
        for (std::int64_t yy = 0; yy < labels.height; ++yy) {
          for (std::int64_t xx = 0; xx < labels.width; ++xx) {
            const int other = labels.at(b, yy, xx);
            const double d = std::hypot(double(yy - y), double(xx - x));
            if (other != own && other != kIgnoreLabel && d <= r) out.at(b, y, x) = 1;
          }
        }
      }
    }
  }
  return out;
}

// Blobby random maps: a few random disks and rectangles over a background,
// plus scattered ignore pixels.
LabelMap random_scene(std::uint64_t seed, std::int64_t size = 32) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pos(0, static_cast<int>(size) - 1), cls(0, 4), rad(2, 8);
  LabelMap m(1, size, size, 0);
  for (int s = 0; s < 4; ++s) {
    const int cy = pos(rng), cx = pos(rng), r = rad(rng);
    const auto c = static_cast<std::uint8_t>(cls(rng));
    const bool disk = s % 2 == 0;
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        const bool in = disk ? (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r
                             : std::abs(y - cy) <= r && std::abs(x - cx) <= r / 2;
        if (in) m.at(0, y, x) = c;
      }
    }
  }
  std::bernoulli_distribution ignored(0.02);
  for (auto& v : m.data) {
    if (ignored(rng)) v = kIgnoreLabel;
  }
  return m;
}

TEST(BoundaryGt, SingleClassIsEmpty) {
  const LabelMap m = boundary_gt(LabelMap(2, 9, 9, 3), 3);
  EXPECT_TRUE(std::all_of(m.data.begin(), m.data.end(), [](auto v) { return v == 0; }));
}

TEST(BoundaryGt, VerticalSplitMarksSixColumns) {
  const int c = 10;
  LabelMap labels(1, 7, 20, 0);
  for (int y = 0; y < 7; ++y) {
    for (int x = c; x < 20; ++x) labels.at(0, y, x) = 1;
  }
  const LabelMap m = boundary_gt(labels, 3);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 20; ++x) EXPECT_EQ(m.at(0, y, x), (x >= c - 3 && x <= c + 2) ? 1 : 0);
  }
}

TEST(BoundaryGt, MatchesBruteForceOnRandomMaps) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const LabelMap labels = random_scene(seed);
    for (int r : {1, 3}) EXPECT_EQ(boundary_gt(labels, r), boundary_oracle(labels, r)) << seed;
  }
}

TEST(BoundaryGt, InvariantUnderLabelPermutation) {
  const std::vector<std::uint8_t> perm{3, 0, 4, 1, 2};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const LabelMap labels = random_scene(50 + seed);
    LabelMap relabeled = labels;
    for (auto& v : relabeled.data) {
      if (v != kIgnoreLabel) v = perm[v];
    }
    EXPECT_EQ(boundary_gt(labels, 3), boundary_gt(relabeled, 3));
  }
}

TEST(BoundaryGt, IgnoredPixelsNeitherMarkedNorCounted) {
  LabelMap labels(1, 5, 5, 0);
  for (int y = 0; y < 5; ++y) labels.at(0, y, 2) = kIgnoreLabel;
  const LabelMap m = boundary_gt(labels, 2);
  EXPECT_TRUE(std::all_of(m.data.begin(), m.data.end(), [](auto v) { return v == 0; }));
  EXPECT_THROW(boundary_gt(labels, 0), std::invalid_argument);
}

TEST(LossProperties, NonNegativeAndFinite) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor logits = random_tensor({2, 3, 4, 4}, seed, DType::kFloat32, -30, 30);
    const LabelMap labels = random_labels(2, 4, 4, 3, seed + 1, 0.1);
    const Tensor teacher = softmax_channels(random_tensor({2, 3, 4, 4}, seed + 2,
                                                          DType::kFloat32, -30, 30));
    const Tensor p = random_tensor({2, 1, 4, 4}, seed + 3, DType::kFloat32, 0, 1);
    const Tensor y = random_tensor({2, 1, 4, 4}, seed + 4, DType::kFloat32, 0, 1);
    const BoundaryMask mask = random_mask(2, 4, 4, seed + 5);
    for (const Tensor& l : {cross_entropy(logits, labels, LossConfig{}),
                            soft_target_ce(logits, teacher), binary_ce(p, y),
                            masked_ce(logits, labels, mask, LossConfig{}),
                            masked_kd(logits, teacher, mask)}) {
      EXPECT_TRUE(std::isfinite(l.item()));
      EXPECT_GE(l.item(), 0.0);
    }
    EXPECT_GE(soft_target_ce(logits, teacher).item() - mean_entropy(teacher), -1e-6);
  }
}

TEST(LossConfigTest, Validation) {
  EXPECT_NO_THROW(LossConfig{}.validate());
  LossConfig c;
  c.tau = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = LossConfig{};
  c.lambda1 = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = LossConfig{};
  c.boundary_radius = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = LossConfig{};
  c.ohem->min_kept_fraction = 2;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

class Combination : public ::testing::Test {
 protected:
  void SetUp() override {
    model_.emplace(SlimSegModel::build(testing::tiny_net_config(), 5));
    image_ = random_tensor({2, 3, 16, 16}, 6, DType::kFloat64, 0, 1);
    LabelMap labels(2, 16, 16, 0);
    for (std::int64_t b = 0; b < 2; ++b) {
      for (std::int64_t y = 4; y < 12; ++y) {
        for (std::int64_t x = 3 + b; x < 10 + b; ++x) labels.at(b, y, x) = 2;
      }
    }
    labels_ = labels;
  }

  std::optional<SlimSegModel> model_;
  Tensor image_;
  LabelMap labels_;
};

TEST_F(Combination, SingleWidthIsSupervisedSum) {
  Tape tape;
  TapeScope scope(tape);
  LossConfig cfg;
  cfg.tau = 0.5;
  const GroundTruth gt = make_ground_truth(labels_, cfg, DType::kFloat64);
  const ForwardOutput out = model_->forward(image_, 1, BnMode::kTrain, true);
  const LossTerms t = width_loss(out, true, nullptr, gt, cfg);
  const double ce = cross_entropy(out.seg_logits, labels_, cfg).item();
  const double bce = binary_ce(*out.boundary_prob, gt.boundary_tensor).item();
  const double g =
      masked_ce(out.seg_logits, labels_, boundary_mask(*out.boundary_prob, 0.5), cfg).item();
  EXPECT_NEAR(t.total.item(), ce + 10 * bce + g, 1e-12);
  const CombinedLoss c = combine_losses({t});
  EXPECT_NEAR(c.total.item(), ce + 10 * bce + g, 1e-12);
  EXPECT_NEAR(c.seg, ce, 1e-12);
  EXPECT_NEAR(c.boundary, bce, 1e-12);
  EXPECT_NEAR(c.guided, g, 1e-12);
}

TEST_F(Combination, ZeroWeightsLeaveSegmentationOnly) {
  Tape tape;
  TapeScope scope(tape);
  LossConfig cfg;
  cfg.lambda1 = 0;
  cfg.lambda2 = 0;
  const GroundTruth gt = make_ground_truth(labels_, cfg, DType::kFloat64);
  const ForwardOutput out = model_->forward(image_, 1, BnMode::kTrain, false);
  const LossTerms t = width_loss(out, true, nullptr, gt, cfg);
  EXPECT_EQ(t.total.item(), cross_entropy(out.seg_logits, labels_, cfg).item());
  EXPECT_EQ(t.boundary.item(), 0.0);
  EXPECT_EQ(t.guided.item(), 0.0);
}

TEST_F(Combination, GroundTruthMaskWhenBoundaryTermIsOff) {
  Tape tape;
  TapeScope scope(tape);
  LossConfig cfg;
  cfg.lambda1 = 0;
  const GroundTruth gt = make_ground_truth(labels_, cfg, DType::kFloat64);
  const ForwardOutput out = model_->forward(image_, 1, BnMode::kTrain, false);
  const LossTerms t = width_loss(out, true, nullptr, gt, cfg);
  EXPECT_NEAR(t.guided.item(),
              masked_ce(out.seg_logits, labels_, mask_from_map(gt.boundary), cfg).item(), 1e-15);
  EXPECT_GT(mask_from_map(gt.boundary).count(), 0u);
}

TEST_F(Combination, StudentEqualToTeacherGivesEntropies) {
  const Tensor teacher_seg = softmax_channels(random_tensor({2, 3, 16, 16}, 61));
  const Tensor teacher_b = random_tensor({2, 1, 16, 16}, 62, DType::kFloat64, 0.05, 0.95);
  TeacherSet teacher{{teacher_seg}, {teacher_b}};
  ForwardOutput student{log(teacher_seg), teacher_seg, teacher_b};
  LossConfig cfg;
  const GroundTruth gt = make_ground_truth(labels_, cfg, DType::kFloat64);
  const LossTerms t = width_loss(student, false, &teacher, gt, cfg);

  EXPECT_NEAR(t.seg.item(), mean_entropy(teacher_seg), 1e-12);
  double hb = 0;
  for (double p : teacher_b.to_vector()) hb -= p * std::log(p) + (1 - p) * std::log(1 - p);
  EXPECT_NEAR(t.boundary.item(), hb / 512, 1e-12);

  const BoundaryMask m = boundary_mask(teacher_b, cfg.tau);
  const auto tv = teacher_seg.to_vector();
  double hm = 0;
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t i = 0; i < 256; ++i) {
      if (!m.valid[b * 256 + i]) continue;
      for (std::int64_t k = 0; k < 3; ++k) {
        const double v = tv[(b * 3 + k) * 256 + i];
        hm -= v * std::log(v);
      }
    }
  }
  ASSERT_GT(m.count(), 0u);
  EXPECT_NEAR(t.guided.item(), hm / static_cast<double>(m.count()), 1e-12);
  EXPECT_NEAR(t.total.item(), t.seg.item() + 10 * t.boundary.item() + t.guided.item(), 1e-12);
}

TEST_F(Combination, TeacherListIsAveraged) {
  const Tensor a = softmax_channels(random_tensor({2, 3, 16, 16}, 71));
  const Tensor b = softmax_channels(random_tensor({2, 3, 16, 16}, 72));
  const Tensor pa = random_tensor({2, 1, 16, 16}, 73, DType::kFloat64, 0.05, 0.95);
  const Tensor pb = random_tensor({2, 1, 16, 16}, 74, DType::kFloat64, 0.05, 0.95);
  const Tensor logits = random_tensor({2, 3, 16, 16}, 75);
  const Tensor own_b = random_tensor({2, 1, 16, 16}, 76, DType::kFloat64, 0.05, 0.95);
  ForwardOutput student{logits, softmax_channels(logits), own_b};
  LossConfig cfg;
  const GroundTruth gt = make_ground_truth(labels_, cfg, DType::kFloat64);
  TeacherSet both{{a, b}, {pa, pb}};
  const LossTerms t = width_loss(student, false, &both, gt, cfg);
  const BoundaryMask m = boundary_mask(own_b, cfg.tau);
  EXPECT_NEAR(t.seg.item(), (soft_target_ce(logits, a).item() + soft_target_ce(logits, b).item()) / 2,
              1e-12);
  EXPECT_NEAR(t.boundary.item(), (binary_ce(own_b, pa).item() + binary_ce(own_b, pb).item()) / 2,
              1e-12);
  EXPECT_NEAR(t.guided.item(),
              (masked_kd(logits, a, m).item() + masked_kd(logits, b, m).item()) / 2, 1e-12);
}

TEST_F(Combination, MissingTeacherThrows) {
  LossConfig cfg;
  const GroundTruth gt = make_ground_truth(labels_, cfg, DType::kFloat64);
  const ForwardOutput out = model_->forward(image_, 0, BnMode::kTrain, true);
  EXPECT_THROW(width_loss(out, false, nullptr, gt, cfg), std::invalid_argument);
  TeacherSet empty;
  EXPECT_THROW(width_loss(out, false, &empty, gt, cfg), std::invalid_argument);
  TeacherSet no_boundary{{out.seg_probs.clone()}, {}};
  EXPECT_THROW(width_loss(out, false, &no_boundary, gt, cfg), std::invalid_argument);
  EXPECT_THROW(combine_losses({}), std::invalid_argument);
}

TEST_F(Combination, WidthsAreSummed) {
  Tape tape;
  TapeScope scope(tape);
  LossConfig cfg;
  const GroundTruth gt = make_ground_truth(labels_, cfg, DType::kFloat64);
  const ForwardOutput full = model_->forward(image_, 1, BnMode::kTrain, true);
  TeacherSet teacher{{detach(full.seg_probs)}, {detach(*full.boundary_prob)}};
  const ForwardOutput narrow = model_->forward(image_, 0, BnMode::kTrain, true);
  const LossTerms a = width_loss(full, true, nullptr, gt, cfg);
  const LossTerms b = width_loss(narrow, false, &teacher, gt, cfg);
  const CombinedLoss c = combine_losses({a, b});
  EXPECT_NEAR(c.total.item(), a.total.item() + b.total.item(), 1e-12);
  EXPECT_NEAR(c.seg, a.seg.item() + b.seg.item(), 1e-12);
  ASSERT_EQ(c.per_width.size(), 2u);
  EXPECT_TRUE(c.per_width[0].supervised);
  EXPECT_FALSE(c.per_width[1].supervised);
}

// The narrow width's distillation loss reaches only the parameters that width
// reads, and never the teacher.
TEST_F(Combination, StudentGradientStaysInItsSlice) {
  LossConfig cfg;
  const GroundTruth gt = make_ground_truth(labels_, cfg, DType::kFloat64);
  TeacherSet teacher;
  {
    Tape tape;
    TapeScope scope(tape);
    const ForwardOutput full = model_->forward(image_, 1, BnMode::kTrain, true);
    teacher.seg_probs.push_back(detach(full.seg_probs));
    teacher.boundary_probs.push_back(detach(*full.boundary_prob));
  }
  const auto params = model_->parameters();
  for (const auto& p : params) Tensor(p.tensor).zero_grad();
  Tape tape;
  TapeScope scope(tape);
  const ForwardOutput narrow = model_->forward(image_, 0, BnMode::kTrain, true);
  backward(width_loss(narrow, false, &teacher, gt, cfg).total);
  EXPECT_FALSE(teacher.seg_probs[0].has_grad());
  EXPECT_FALSE(teacher.boundary_probs[0].has_grad());
  double inside = 0;
  for (const auto& p : params) {
    const auto mask = active_mask(p, 0);
    const auto g = p.tensor.grad_vector();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (mask[i]) {
        inside += std::abs(g[i]);
      } else {
        EXPECT_EQ(g[i], 0.0) << p.name << "[" << i << "]";
      }
    }
  }
  EXPECT_GT(inside, 0.0);
}

class LossGradients : public ::testing::TestWithParam<std::tuple<std::size_t, std::uint64_t>> {};

TEST_P(LossGradients, MatchFiniteDifferences) {
  const auto [index, seed] = GetParam();
  const auto cases = testing::loss_grad_cases();
  const auto report = cases.at(index).run(seed);
  EXPECT_TRUE(report.passed) << cases[index].name << " seed " << seed << ": rel "
                             << report.max_rel_error << " at " << report.worst;
  EXPECT_GT(report.entries_checked, 0);
}

INSTANTIATE_TEST_SUITE_P(
    AllLosses, LossGradients,
    ::testing::Combine(::testing::Range<std::size_t>(0, testing::loss_grad_cases().size()),
                       ::testing::Range<std::uint64_t>(0, 20)),
    [](const auto& info) {
      return testing::loss_grad_cases()[std::get<0>(info.param)].name + "_" +
             std::to_string(std::get<1>(info.param));
    });

}  // namespace
}  // namespace slimseg
