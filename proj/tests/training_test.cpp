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

#include <cmath>
#include <random>
#include <sstream>

#include "grad_suite.hpp"
#include "slimseg/training.hpp"

namespace slimseg {
namespace {

SegNetConfig three_width_config() {
  SegNetConfig c = testing::tiny_net_config();
  c.widths = {0.25, 0.5, 1.0};
  return c;
}

TrainConfig config_for(const SegNetConfig& net) {
  TrainConfig t;
  t.iterations = 10;
  t.batch_size = 2;
  t.widths = net.widths;
  return t;
}

Batch tiny_batch(int classes, std::uint64_t seed) {
  SynthConfig sc;
  sc.height = sc.width = 16;
  sc.num_classes = classes;
  sc.seed = seed;
  return make_batch({synth_generate(sc, 0), synth_generate(sc, 1)}, DType::kFloat64);
}

std::vector<double> grad_or_zero(const ParamRef& p) {
  if (!p.tensor.has_grad()) return std::vector<double>(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  return p.tensor.grad_vector();
}

TEST(PolyLr, ClosedForm) {
  const std::int64_t max = 2000;
  for (std::int64_t it : {std::int64_t{0}, std::int64_t{1}, max / 2, max - 1, max}) {
    const double frac = static_cast<double>(max - it) / static_cast<double>(max);
    const double oracle = it == max ? 0.0 : 0.01 * std::exp(0.9 * std::log(frac));
    EXPECT_NEAR(poly_lr(it, max, 0.01, 0.9), oracle, 1e-12) << it;
  }
  EXPECT_EQ(poly_lr(0, max, 0.01, 0.9), 0.01);
  EXPECT_EQ(poly_lr(max, max, 0.01, 0.9), 0.0);
  EXPECT_NEAR(poly_lr(max / 2, max, 0.01, 0.9), 0.0053589, 5e-8);
  EXPECT_THROW(poly_lr(max + 1, max, 0.01, 0.9), std::invalid_argument);
  EXPECT_THROW(poly_lr(-1, max, 0.01, 0.9), std::invalid_argument);
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.iterations = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = TrainConfig{};
  t.base_lr = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = TrainConfig{};
  t.widths = {0.5, 0.25, 1.0};
  EXPECT_THROW(t.validate(), std::invalid_argument);
  for (auto s : {TeacherStrategy::kPrev, TeacherStrategy::kLargest, TeacherStrategy::kMean,
                 TeacherStrategy::kLarger}) {
    EXPECT_EQ(parse_teacher_strategy(strategy_name(s)), s);
  }
  EXPECT_THROW(parse_teacher_strategy("median"), std::invalid_argument);
}

// Two steps by hand: kernels decay, BN affine and biases do not.
TEST(Sgd, MomentumAndWeightDecayAnalytic) {
  SlimSegModel model = SlimSegModel::build(testing::tiny_net_config(), 5);
  OptimizerState opt = make_optimizer(model);
  const double lr = 0.1, m = 0.9, wd = 0.01;
  auto params = model.parameters();
  std::size_t ki = 0, gi = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].kind == ParamKind::kKernel && ki == 0) ki = i + 1;
    if (params[i].kind == ParamKind::kGamma && gi == 0) gi = i + 1;
  }
  ASSERT_GT(ki, 0u);
  ASSERT_GT(gi, 0u);
  Tensor kern = params[ki - 1].tensor, gamma = params[gi - 1].tensor;
  const auto k0 = kern.to_vector(), gam0 = gamma.to_vector();
  std::vector<std::vector<double>> untouched;
  for (const auto& p : params) untouched.push_back(p.tensor.to_vector());

  const double g = 0.5;
  auto set_grads = [&] {
    zero_grads(model);
    kern.ensure_grad();
    for (auto& v : kern.mutable_grad_values<double>()) v = g;
    gamma.ensure_grad();
    for (auto& v : gamma.mutable_grad_values<double>()) v = g;
  };
  set_grads();
  sgd_step(model, opt, lr, m, wd);
  set_grads();
  sgd_step(model, opt, lr, m, wd);

  const auto k2 = kern.to_vector();
  for (std::size_t j = 0; j < k0.size(); ++j) {
    const double b1 = g + wd * k0[j];
    const double t1 = k0[j] - lr * b1;
    const double b2 = m * b1 + g + wd * t1;
    EXPECT_NEAR(k2[j], t1 - lr * b2, 1e-15);
  }
  const auto gam2 = gamma.to_vector();
  for (std::size_t j = 0; j < gam0.size(); ++j) {
    EXPECT_NEAR(gam2[j], gam0[j] - lr * g - lr * (m * g + g), 1e-15);
  }
  params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i + 1 == ki || i + 1 == gi) continue;
    EXPECT_EQ(params[i].tensor.to_vector(), untouched[i]) << params[i].name;
  }
}

TEST(TrainStep, ZeroLearningRateLeavesParametersBitwise) {
  const SegNetConfig net = three_width_config();
  SlimSegModel model = SlimSegModel::build(net, 1);
  TrainConfig cfg = config_for(net);
  OptimizerState opt = make_optimizer(model);
  std::vector<Tensor> before;
  for (const auto& p : model.parameters()) before.push_back(p.tensor.clone());
  // poly_lr reaches exactly 0 at iter == iterations.
  const StepReport r = train_step(model, tiny_batch(3, 2), cfg, opt, cfg.iterations);
  EXPECT_EQ(r.lr, 0.0);
  const auto after = model.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(after[i].tensor, before[i])) << after[i].name;
  }
}

TEST(TrainStep, VisitsWidthsInDescendingOrder) {
  const SegNetConfig net = three_width_config();
  for (auto s : {TeacherStrategy::kPrev, TeacherStrategy::kLargest, TeacherStrategy::kMean,
                 TeacherStrategy::kLarger}) {
    SlimSegModel model = SlimSegModel::build(net, 1);
    TrainConfig cfg = config_for(net);
    cfg.teacher_strategy = s;
    OptimizerState opt = make_optimizer(model);
    const StepReport r = train_step(model, tiny_batch(3, 4), cfg, opt, 0);
    EXPECT_EQ(r.visit_order, (std::vector<std::size_t>{2, 1, 0}));
    EXPECT_TRUE(r.widths[0].supervised);
    EXPECT_FALSE(r.widths[1].supervised);
    // prev holds one entry at a time; the list strategies hold both larger widths.
    const std::size_t expected_peak =
        s == TeacherStrategy::kPrev || s == TeacherStrategy::kLargest ? 1 : 2;
    EXPECT_EQ(r.peak_teachers, expected_peak) << strategy_name(s);
  }
}

// Gradient of the summed objective equals the sum of per-width gradients,
// each measured alone on an identical copy.
TEST(TrainStep, IsolationSumOracle) {
  const SegNetConfig net = three_width_config();
  for (auto s : {TeacherStrategy::kPrev, TeacherStrategy::kMean, TeacherStrategy::kLarger}) {
    SlimSegModel model = SlimSegModel::build(net, 11);
    TrainConfig cfg = config_for(net);
    cfg.teacher_strategy = s;
    cfg.loss.tau = 0.5;
    const Batch batch = tiny_batch(3, 6);

    SlimSegModel reference = model.clone();
    zero_grads(reference);
    accumulate_gradients(reference, batch, cfg);
    const auto ref_params = reference.parameters();

    std::vector<std::vector<double>> summed;
    for (const auto& p : ref_params) summed.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    for (std::size_t n = 0; n < net.widths.size(); ++n) {
      SlimSegModel copy = model.clone();
      zero_grads(copy);
      const std::vector<std::size_t> only{n};
      accumulate_gradients(copy, batch, cfg, &only);
      const auto cp = copy.parameters();
      for (std::size_t i = 0; i < cp.size(); ++i) {
        const auto g = grad_or_zero(cp[i]);
        for (std::size_t j = 0; j < g.size(); ++j) summed[i][j] += g[j];
      }
    }
    for (std::size_t i = 0; i < ref_params.size(); ++i) {
      const auto g = grad_or_zero(ref_params[i]);
      for (std::size_t j = 0; j < g.size(); ++j) {
        ASSERT_NEAR(g[j], summed[i][j], 1e-12 * (1 + std::abs(g[j])))
            << strategy_name(s) << " " << ref_params[i].name << "[" << j << "]";
      }
    }
  }
}

// Only the width-n distillation term: nothing outside width n's slices moves.
TEST(TrainStep, DetachContract) {
  const SegNetConfig net = three_width_config();
  for (auto s : {TeacherStrategy::kPrev, TeacherStrategy::kLargest, TeacherStrategy::kMean,
                 TeacherStrategy::kLarger}) {
    for (std::size_t n = 0; n + 1 < net.widths.size(); ++n) {
      SlimSegModel model = SlimSegModel::build(net, 21);
      TrainConfig cfg = config_for(net);
      cfg.teacher_strategy = s;
      cfg.loss.lambda1 = 0;
      cfg.loss.lambda2 = 0;
      zero_grads(model);
      const std::vector<std::size_t> only{n};
      accumulate_gradients(model, tiny_batch(3, 8), cfg, &only);
      std::size_t active_nonzero = 0;
      for (const auto& p : model.parameters()) {
        const auto mask = active_mask(p, n);
        const auto g = grad_or_zero(p);
        for (std::size_t j = 0; j < g.size(); ++j) {
          if (!mask[j]) {
            ASSERT_EQ(g[j], 0.0) << strategy_name(s) << " n=" << n << " " << p.name << "[" << j << "]";
          } else {
            active_nonzero += g[j] != 0.0;
          }
        }
      }
      EXPECT_GT(active_nonzero, 0u);
    }
  }
}

TEST(TeacherCache, EntriesAreDetachedAndNeverReceiveGradients) {
  SlimSegModel model = SlimSegModel::build(testing::tiny_net_config(), 2);
  const Batch batch = tiny_batch(3, 1);
  TeacherCache cache(TeacherStrategy::kPrev, 2);
  Tape tape;
  TapeScope scope(tape);
  const ForwardOutput out = model.forward(batch.images, 1, BnMode::kTrain, true);
  cache.store(1, out);
  const TeacherEntry& e = cache.at(1);
  EXPECT_FALSE(e.seg_probs.requires_grad());
  EXPECT_FALSE(e.boundary_prob->requires_grad());
  // A loss that reads the live output and the cached copy.
  backward(add(mean(out.seg_probs), mean(mul(out.seg_probs, e.seg_probs))));
  EXPECT_FALSE(e.seg_probs.has_grad());
  EXPECT_TRUE(bitwise_equal(e.seg_probs, detach(out.seg_probs)));
}

TEST(TeacherTarget, StrategiesAgainstOracles) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  const std::size_t n_w = 4;
  auto random_probs = [&] {
    std::vector<double> v(2 * 3 * 2 * 2);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t px = 0; px < 4; ++px) {
        double s = 0;
        double raw[3];
        for (double& r : raw) s += (r = u(rng));
        for (std::size_t c = 0; c < 3; ++c) v[(b * 3 + c) * 4 + px] = raw[c] / s;
      }
    }
    return Tensor::from_values({2, 3, 2, 2}, v, DType::kFloat64);
  };
  TeacherCache cache(TeacherStrategy::kMean, n_w);
  std::vector<Tensor> probs(n_w);
  for (std::size_t n = n_w - 1; n >= 1; --n) {
    probs[n] = random_probs();
    ForwardOutput out{probs[n], probs[n], std::nullopt};
    cache.store(n, out);
  }
  const TeacherSet mean = teacher_target(TeacherStrategy::kMean, cache, 0, n_w);
  ASSERT_EQ(mean.seg_probs.size(), 1u);
  EXPECT_TRUE(mean.boundary_probs.empty());
  const auto got = mean.seg_probs[0].to_vector();
  const auto a = probs[1].to_vector(), b = probs[2].to_vector(), c = probs[3].to_vector();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], (a[i] + b[i] + c[i]) / 3.0);

  EXPECT_TRUE(bitwise_equal(teacher_target(TeacherStrategy::kPrev, cache, 1, n_w).seg_probs[0], probs[2]));
  EXPECT_TRUE(bitwise_equal(teacher_target(TeacherStrategy::kLargest, cache, 0, n_w).seg_probs[0], probs[3]));
  EXPECT_EQ(teacher_target(TeacherStrategy::kLarger, cache, 0, n_w).seg_probs.size(), 3u);
  // One larger width left: every strategy gives the same single teacher.
  for (auto s : {TeacherStrategy::kPrev, TeacherStrategy::kLargest, TeacherStrategy::kMean,
                 TeacherStrategy::kLarger}) {
    const TeacherSet t = teacher_target(s, cache, 2, n_w);
    ASSERT_EQ(t.seg_probs.size(), 1u);
    EXPECT_TRUE(bitwise_equal(t.seg_probs[0], probs[3])) << strategy_name(s);
  }
  EXPECT_THROW(teacher_target(TeacherStrategy::kPrev, cache, 3, n_w), std::invalid_argument);
  TeacherCache empty(TeacherStrategy::kPrev, n_w);
  EXPECT_THROW(teacher_target(TeacherStrategy::kPrev, empty, 0, n_w), std::invalid_argument);
}

TEST(TeacherCache, RetentionPerStrategy) {
  const Tensor p = Tensor::full({1, 2, 1, 1}, 0.5, DType::kFloat64);
  const ForwardOutput out{p, p, std::nullopt};
  TeacherCache prev(TeacherStrategy::kPrev, 4), largest(TeacherStrategy::kLargest, 4),
      larger(TeacherStrategy::kLarger, 4);
  for (std::size_t n = 3; n >= 1; --n) {
    prev.store(n, out);
    largest.store(n, out);
    larger.store(n, out);
  }
  EXPECT_EQ(prev.held(), (std::vector<std::size_t>{1}));
  EXPECT_EQ(largest.held(), (std::vector<std::size_t>{3}));
  EXPECT_EQ(larger.held(), (std::vector<std::size_t>{1, 2, 3}));
}

TEST(TrainStep, NonFiniteLossNamesTermAndWidth) {
  SlimSegModel model = SlimSegModel::build(testing::tiny_net_config(), 4);
  for (auto& p : model.parameters()) {
    if (p.name.rfind("dec.classifier", 0) == 0 && p.kind == ParamKind::kKernel) {
      p.tensor.mutable_values<double>()[0] = std::nan("");
    }
  }
  TrainConfig cfg = config_for(testing::tiny_net_config());
  OptimizerState opt = make_optimizer(model);
  try {
    train_step(model, tiny_batch(3, 1), cfg, opt, 3);
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("L_seg"), std::string::npos) << msg;
    EXPECT_NE(msg.find("width 1.00"), std::string::npos) << msg;
    EXPECT_NE(msg.find("iteration 3"), std::string::npos) << msg;
  }
}

DataConfig tiny_data() {
  DataConfig d;
  d.synth.height = d.synth.width = 16;
  d.synth.num_classes = 3;
  d.train_size = 20;
  d.val_size = 4;
  return d;
}

TEST(TrainingBatch, SeededAndDrawnFromTrainSplit) {
  DataConfig d = tiny_data();
  TrainConfig cfg = config_for(testing::tiny_net_config());
  cfg.batch_size = 3;
  const DatasetSplit split = split_indices(d.train_size, d.val_size, d.synth.seed);
  const Batch a = training_batch(d, split, cfg, 4, DType::kFloat32, 3);
  const Batch b = training_batch(d, split, cfg, 4, DType::kFloat32, 3);
  EXPECT_TRUE(bitwise_equal(a.images, b.images));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(bitwise_equal(a.images, training_batch(d, split, cfg, 5, DType::kFloat32, 3).images));

  // One epoch without augmentation visits every train index exactly once.
  d.augment = false;
  cfg.batch_size = 4;
  std::vector<LabelMap> seen;
  for (std::int64_t it = 0; it < 5; ++it) {
    const Batch bt = training_batch(d, split, cfg, it, DType::kFloat32, 3);
    for (std::int64_t j = 0; j < 4; ++j) {
      LabelMap one(1, 16, 16);
      std::copy_n(bt.labels.data.begin() + j * 256, 256, one.data.begin());
      seen.push_back(one);
    }
  }
  std::vector<int> hits(split.train.size(), 0);
  for (const auto& l : seen) {
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      if (synth_generate(d.synth, split.train[i]).labels == l) {
        ++hits[i];
        break;
      }
    }
  }
  for (int h : hits) EXPECT_EQ(h, 1);
}

std::pair<std::string, std::vector<std::uint8_t>> short_run(const SegNetConfig& net,
                                                            std::int64_t iterations) {
  SlimSegModel model = SlimSegModel::build(net, 9);
  TrainConfig cfg = config_for(net);
  cfg.iterations = iterations;
  std::ostringstream log;
  LoopOptions opts;
  opts.log = &log;
  opts.val_every = 1;
  const TrainResult r = train_loop(model, tiny_data(), cfg, opts);
  EXPECT_EQ(r.steps.size(), static_cast<std::size_t>(iterations));
  EXPECT_EQ(r.validation.size(), static_cast<std::size_t>(iterations));
  return {log.str(), checkpoint_bytes(model)};
}

TEST(TrainLoop, TwoIterationsAreDeterministic) {
  SegNetConfig net = three_width_config();
  net.dtype = DType::kFloat32;
  const auto a = short_run(net, 2);
  const auto b = short_run(net, 2);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(a.first.find("w0.25:L_kd"), std::string::npos);
}

TEST(TrainLoop, SingleWidthHasNoDistillationColumns) {
  SegNetConfig net = testing::tiny_net_config();
  net.widths = {1.0};
  const auto run = short_run(net, 2);
  const std::string header = run.first.substr(0, run.first.find('\n'));
  EXPECT_EQ(header, "iter\tlr\tw1.00:L_seg\tw1.00:L_b\tw1.00:L_g\tw1.00:total");
  EXPECT_EQ(run.first.find("kd"), std::string::npos);
}

TEST(TrainLoop, RejectsMismatchedWidths) {
  SlimSegModel model = SlimSegModel::build(testing::tiny_net_config(), 1);
  TrainConfig cfg = config_for(three_width_config());
  EXPECT_THROW(train_loop(model, tiny_data(), cfg), std::invalid_argument);
}

}  // namespace
}  // namespace slimseg
