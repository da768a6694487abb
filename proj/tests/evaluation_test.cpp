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
#include <random>

#include "grad_suite.hpp"
#include "slimseg/evaluation.hpp"

namespace slimseg {
namespace {

using testing::random_labels;

TEST(Confusion, CountsAndIgnores) {
  ConfusionMatrix cm(3);
  update_confusion(cm, LabelMap(1, 10, 10, 2), LabelMap(1, 10, 10, 2));
  EXPECT_EQ(cm.at(2, 2), 100);
  EXPECT_EQ(cm.total(), 100);
  const ConfusionMatrix before = cm;
  update_confusion(cm, LabelMap(1, 4, 4, 1), LabelMap(1, 4, 4, kIgnoreLabel));
  EXPECT_EQ(cm, before);
}

TEST(Confusion, RejectsOutOfRangeWithoutSideEffects) {
  ConfusionMatrix cm(3);
  LabelMap gt(1, 2, 2, 0), pred(1, 2, 2, 0);
  pred.data[3] = 3;
  EXPECT_THROW(update_confusion(cm, pred, gt), std::invalid_argument);
  EXPECT_EQ(cm.total(), 0);
  gt.data[0] = 7;
  pred.data[3] = 0;
  EXPECT_THROW(update_confusion(cm, pred, gt), std::invalid_argument);
  EXPECT_THROW(update_confusion(cm, LabelMap(1, 2, 3), gt), ShapeError);
}

TEST(Confusion, MatchesCountingOracleOnRandomMaps) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const LabelMap gt = random_labels(1, 32, 32, 5, seed, 0.1);
    const LabelMap pred = random_labels(1, 32, 32, 5, seed + 100);
    ConfusionMatrix cm(5);
    update_confusion(cm, pred, gt);
    for (int g = 0; g < 5; ++g) {
      for (int p = 0; p < 5; ++p) {
        std::int64_t n = 0;
        for (std::size_t i = 0; i < gt.size(); ++i) n += gt.data[i] == g && pred.data[i] == p;
        EXPECT_EQ(cm.at(g, p), n);
      }
    }
    // mIoU straight from per-class pixel sets.
    double sum = 0;
    int present = 0;
    for (int c = 0; c < 5; ++c) {
      std::int64_t inter = 0, uni = 0;
      for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt.data[i] == kIgnoreLabel) continue;
        inter += gt.data[i] == c && pred.data[i] == c;
        uni += gt.data[i] == c || pred.data[i] == c;
      }
      if (uni == 0) continue;
      sum += static_cast<double>(inter) / static_cast<double>(uni);
      ++present;
    }
    EXPECT_EQ(miou(cm).miou, sum / present);
  }
}

TEST(Confusion, MergeOrderDoesNotMatter) {
  std::vector<ConfusionMatrix> shards;
  for (std::uint64_t s = 0; s < 4; ++s) {
    ConfusionMatrix cm(4);
    update_confusion(cm, random_labels(1, 8, 8, 4, s), random_labels(1, 8, 8, 4, s + 10));
    shards.push_back(cm);
  }
  ConfusionMatrix a(4), b(4);
  for (const auto& s : shards) a.merge(s);
  for (auto it = shards.rbegin(); it != shards.rend(); ++it) b.merge(*it);
  EXPECT_EQ(a, b);
  EXPECT_EQ(miou(a).miou, miou(b).miou);
}

TEST(Miou, ClosedForms) {
  ConfusionMatrix perfect(3);
  update_confusion(perfect, random_labels(1, 8, 8, 3, 1), random_labels(1, 8, 8, 3, 1));
  EXPECT_EQ(miou(perfect).miou, 1.0);

  LabelMap gt(1, 2, 4, 0);
  for (int x = 2; x < 4; ++x) {
    gt.at(0, 0, x) = 1;
    gt.at(0, 1, x) = 1;
  }
  ConfusionMatrix cm(2);
  update_confusion(cm, LabelMap(1, 2, 4, 0), gt);
  const MiouResult r = miou(cm);
  EXPECT_EQ(r.iou[0], 0.5);
  EXPECT_EQ(r.iou[1], 0.0);
  EXPECT_EQ(r.miou, 0.25);
}

TEST(Miou, AbsentClassesExcluded) {
  ConfusionMatrix cm(4);
  cm.add(0, 0, 10);
  cm.add(1, 1, 5);
  cm.add(1, 0, 5);
  const MiouResult r = miou(cm);
  EXPECT_FALSE(r.present[2]);
  EXPECT_TRUE(std::isnan(r.iou[3]));
  EXPECT_NEAR(r.miou, (10.0 / 15 + 5.0 / 10) / 2, 1e-15);
  EXPECT_THROW(miou(ConfusionMatrix(3)), std::invalid_argument);
}

TEST(Miou, InvariantUnderClassPermutation) {
  const std::vector<std::uint8_t> perm{2, 0, 3, 1};
  for (std::uint64_t s = 0; s < 5; ++s) {
    LabelMap gt = random_labels(1, 16, 16, 4, s), pred = random_labels(1, 16, 16, 4, s + 50);
    ConfusionMatrix a(4), b(4);
    update_confusion(a, pred, gt);
    for (auto& v : gt.data) v = perm[v];
    for (auto& v : pred.data) v = perm[v];
    update_confusion(b, pred, gt);
    EXPECT_NEAR(miou(a).miou, miou(b).miou, 1e-15);
  }
}

TEST(DistanceTransform, ClosedForms) {
  LabelMap one(1, 6, 6, 0);
  one.at(0, 0, 0) = 1;
  EXPECT_EQ(distance_transform(one)[3 * 6 + 4], 5.0);
  const auto all = distance_transform(LabelMap(1, 5, 7, 1));
  for (double d : all) EXPECT_EQ(d, 0.0);
  EXPECT_THROW(distance_transform(LabelMap(1, 4, 4, 0)), std::invalid_argument);
}

TEST(DistanceTransform, MatchesBruteForceExactly) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const double density = std::uniform_real_distribution<double>(0.002, 0.2)(rng);
    std::bernoulli_distribution on(density);
    LabelMap b(2, 32, 32, 0);
    for (auto& v : b.data) v = on(rng);
    b.at(0, 5, 7) = 1;  // every plane needs one site
    b.at(1, 31, 0) = 1;
    const auto sq = squared_distance_transform(b);
    for (std::int64_t img = 0; img < 2; ++img) {
      for (std::int64_t y = 0; y < 32; ++y) {
        for (std::int64_t x = 0; x < 32; ++x) {
          std::int64_t best = -1;
          for (std::int64_t yy = 0; yy < 32; ++yy) {
            for (std::int64_t xx = 0; xx < 32; ++xx) {
              if (!b.at(img, yy, xx)) continue;
              const std::int64_t d = (y - yy) * (y - yy) + (x - xx) * (x - xx);
              if (best < 0 || d < best) best = d;
            }
          }
          ASSERT_EQ(sq[(img * 32 + y) * 32 + x], best) << trial << " " << y << " " << x;
        }
      }
    }
  }
}

// Two-class 16x16 map split at column 8; the radius-1 boundary band is
// columns 7 and 8, so column c sits at distance max(7 - c, c - 8, 0).
TEST(ErrorHistogram, HandBinnedCase) {
  LabelMap gt(1, 16, 16, 0);
  for (int y = 0; y < 16; ++y) {
    for (int x = 8; x < 16; ++x) gt.at(0, y, x) = 1;
  }
  LabelMap pred = gt;
  const std::vector<int> columns{0, 3, 6, 7, 8, 12, 15};  // distances 7,4,1,0,0,4,7
  for (int x : columns) pred.at(0, 2, x) = 1 - gt.at(0, 2, x);
  pred.at(0, 9, 2) = 1;  // distance 5
  const DistanceHistogram h = error_distance_histogram(pred, gt);
  EXPECT_EQ(h.counts, (std::vector<std::int64_t>{2, 1, 0, 0, 2, 3, 0}));

  ConfusionMatrix cm(2);
  update_confusion(cm, pred, gt);
  EXPECT_EQ(h.total(), cm.at(0, 1) + cm.at(1, 0));
}

TEST(ErrorHistogram, PerfectAndBoundaryOnly) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const LabelMap gt = synth_generate_with(SynthConfig{}, s, 3).labels;
    EXPECT_EQ(error_distance_histogram(gt, gt).total(), 0);
    const LabelMap band = boundary_gt(gt, 1);
    LabelMap pred = gt;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (band.data[i]) pred.data[i] = static_cast<std::uint8_t>((gt.data[i] + 1) % 5);
    }
    const DistanceHistogram h = error_distance_histogram(pred, gt);
    EXPECT_EQ(h.counts[0], h.total());
    EXPECT_EQ(h.counts[0], std::count(band.data.begin(), band.data.end(), 1));
  }
}

TEST(ErrorHistogram, TotalMatchesConfusionOffDiagonal) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const LabelMap gt = synth_generate_with(SynthConfig{}, s, 4).labels;
    LabelMap pred = random_labels(1, 64, 64, 5, s + 9);
    for (std::size_t i = 0; i < pred.size(); i += 2) pred.data[i] = gt.data[i];
    ConfusionMatrix cm(5);
    update_confusion(cm, pred, gt);
    std::int64_t off = 0;
    for (int g = 0; g < 5; ++g) {
      for (int p = 0; p < 5; ++p) off += g != p ? cm.at(g, p) : 0;
    }
    EXPECT_EQ(error_distance_histogram(pred, gt).total(), off);
  }
}

TEST(DiffMap, Cases) {
  const LabelMap gt = random_labels(1, 8, 8, 2, 1);
  const LabelMap a = random_labels(1, 8, 8, 2, 2);
  EXPECT_EQ(diff_map(a, a, gt).disagree, 0);
  LabelMap flipped = a;
  for (auto& v : flipped.data) v = 1 - v;
  const DiffMap d = diff_map(a, flipped, gt);
  EXPECT_EQ(d.ratio, 1.0);
  for (std::size_t i = 0; i < gt.size(); ++i) EXPECT_EQ(d.cells[i], gt.data[i]);

  const LabelMap b = random_labels(1, 8, 8, 2, 3);
  const DiffMap r = diff_map(a, b, gt);
  std::int64_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    n += a.data[i] != b.data[i];
    EXPECT_EQ(r.cells[i], a.data[i] == b.data[i] ? -1 : gt.data[i]);
  }
  EXPECT_EQ(r.disagree, n);
  EXPECT_THROW(diff_map(a, LabelMap(1, 8, 7), gt), ShapeError);
}

TEST(Reports, Layout) {
  const std::string t = width_report({{0.25, 0.5, {0.5, std::nan("")}, 1234.0, 99},
                                      {1.0, 0.75, {0.75, 0.75}, 5678.0, 400}});
  EXPECT_EQ(t,
            "width\tmiou\tiou_0\tiou_1\tflops\tparams\n"
            "0.25\t0.500000\t0.500000\tnan\t1234\t99\n"
            "1.00\t0.750000\t0.750000\t0.750000\t5678\t400\n");
  DistanceHistogram h{{0, 1, 2.5, INFINITY}, {3, 0, 7}};
  EXPECT_EQ(histogram_report(h), "bin_low\tbin_high\tcount\n0\t1\t3\n1\t2.5\t0\n2.5\tinf\t7\n");
}

TEST(Evaluate, MatchesManualPrediction) {
  SegNetConfig cfg = testing::tiny_net_config();
  SlimSegModel model = SlimSegModel::build(cfg, 3);
  for (auto& s : model.running_stats()) {
    s.stats->initialized = true;
  }
  std::vector<Sample> samples;
  SynthConfig sc;
  sc.height = sc.width = 16;
  sc.num_classes = 3;
  for (std::uint64_t i = 0; i < 5; ++i) samples.push_back(synth_generate(sc, i));
  const auto cms = evaluate_widths(model, samples, {0, 1}, 2);
  ASSERT_EQ(cms.size(), 2u);
  for (std::size_t n = 0; n < 2; ++n) {
    ConfusionMatrix manual(3);
    for (const auto& s : samples) {
      const Batch b = make_batch({s}, DType::kFloat64);
      update_confusion(manual, predict(model, b.images, n), b.labels);
    }
    EXPECT_EQ(cms[n], manual);
    EXPECT_EQ(cms[n].total(), 5 * 16 * 16);
  }
}

}  // namespace
}  // namespace slimseg
