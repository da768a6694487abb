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

#include <cstring>
#include <vector>

#include "slimseg/ops.hpp"
#include "slimseg/tensor.hpp"
#include "test_util.hpp"

namespace slimseg {
namespace {

using testing::random_tensor;

TEST(Tensor, FactoriesAndMetadata) {
  const Tensor t = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.dtype(), DType::kFloat32);
  EXPECT_DOUBLE_EQ(t.at(4), 5.0);
  EXPECT_FALSE(t.has_grad());
  EXPECT_TRUE(t.is_leaf());
  EXPECT_THROW(Tensor::from_values({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::zeros({2, 0}), ShapeError);
  EXPECT_EQ(shape_str({1, 2, 3}), "[1, 2, 3]");
}

TEST(Tensor, CloneAndConvert) {
  const Tensor t = random_tensor({4, 5}, 3);
  const Tensor c = t.clone();
  EXPECT_TRUE(bitwise_equal(t, c));
  EXPECT_FALSE(c.shares_storage(t));
  const Tensor f = t.to(DType::kFloat32);
  EXPECT_EQ(f.dtype(), DType::kFloat32);
  EXPECT_NEAR(f.at(7), t.at(7), 1e-7);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from_values({3}, {0.5, -1.0, 2.0}, DType::kFloat64, true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(x));
  EXPECT_EQ(x.grad_vector(), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, TwiceDoublesGradients) {
  Tensor x = random_tensor({2, 3}, 5, DType::kFloat64, -1, 1, true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor loss = sum(mul(x, x));
  tape.backward(loss);
  const auto once = x.grad_vector();
  tape.backward(loss);
  const auto twice = x.grad_vector();
  for (std::size_t i = 0; i < once.size(); ++i) {
    EXPECT_DOUBLE_EQ(once[i], 2 * x.at(static_cast<std::int64_t>(i)));
    EXPECT_DOUBLE_EQ(twice[i], 2 * once[i]);
  }
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = random_tensor({3}, 1, DType::kFloat64, -1, 1, true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Backward, EmptyTapeRejected) {
  Tensor x = random_tensor({3}, 1, DType::kFloat64, -1, 1, true);
  const Tensor loss = sum(x);  // no active tape, nothing recorded
  EXPECT_THROW(backward(loss), std::logic_error);
}

TEST(Backward, AccumulationIsAdditive) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Tensor x1 = random_tensor({2, 2, 3, 3}, seed, DType::kFloat64, -1, 1, true);
    Tensor x2 = x1.clone().set_requires_grad(true);
    std::vector<double> separate, combined;
    {
      Tape tape;
      TapeScope scope(tape);
      const Tensor a = sum(sigmoid(x1));
      const Tensor b = sum(mul(x1, relu(x1)));
      tape.backward(a);
      tape.backward(b);
      separate = x1.grad_vector();
    }
    {
      Tape tape;
      TapeScope scope(tape);
      const Tensor a = sum(sigmoid(x2));
      const Tensor b = sum(mul(x2, relu(x2)));
      tape.backward(add(a, b));
      combined = x2.grad_vector();
    }
    for (std::size_t i = 0; i < separate.size(); ++i) {
      EXPECT_NEAR(separate[i], combined[i], 1e-12);
    }
  }
}

TEST(Tape, ClearKeepsParameterValues) {
  Tensor w = random_tensor({4}, 9, DType::kFloat64, -1, 1, true);
  const Tensor before = w.clone();
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(mul(w, w)));
  }
  EXPECT_GT(tape.size(), 0u);
  tape.clear();
  EXPECT_TRUE(tape.empty());
  EXPECT_TRUE(bitwise_equal(w, before));
  EXPECT_TRUE(w.has_grad());
}

TEST(Tape, TensorsFromClearedTapeActAsConstants) {
  Tensor w = Tensor::from_values({2}, {1.0, 2.0}, DType::kFloat64, true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor stale = scale(w, 3.0);
  tape.clear();
  w.zero_grad();
  tape.backward(sum(mul(stale, w)));
  // d/dw of sum(c * w) with c = 3w treated as constant.
  EXPECT_EQ(w.grad_vector(), (std::vector<double>{3.0, 6.0}));
}

TEST(Tape, NothingRecordedWithoutGrad) {
  const Tensor x = random_tensor({3}, 2);
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = sigmoid(x);
  EXPECT_TRUE(tape.empty());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Detach, ValuesBitwiseEqual) {
  const Tensor x = random_tensor({2, 3, 4, 4}, 4, DType::kFloat32, -5, 5, true);
  const Tensor d = detach(x);
  EXPECT_TRUE(bitwise_equal(x, d));
  EXPECT_FALSE(d.requires_grad());
}

TEST(Detach, ProductRuleSeversOneBranch) {
  Tensor x = random_tensor({5}, 8, DType::kFloat64, -1, 1, true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(mul(x, detach(x))));
  const auto g = x.grad_vector();
  for (std::int64_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(g[static_cast<std::size_t>(i)], x.at(i));
}

TEST(Detach, LossFromDetachedOnlyGivesZeroGradients) {
  Tensor w = random_tensor({3, 2, 3, 3}, 1, DType::kFloat64, -1, 1, true);
  const Tensor x = random_tensor({1, 2, 5, 5}, 2, DType::kFloat64);
  Tape tape;
  TapeScope scope(tape);
  const Tensor feats = detach(conv2d(x, w, 1, 1));
  const Tensor loss = sum(sigmoid(feats));
  w.zero_grad();
  EXPECT_THROW(tape.backward(loss), std::logic_error);  // loss has no history
  for (double g : w.grad_vector()) EXPECT_EQ(g, 0.0);
}

TEST(Detach, MatchesConstantCopy) {
  // Gradients with a detached branch equal those with that branch rebuilt
  // from a constant copy.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Tensor a = random_tensor({1, 2, 4, 4}, seed, DType::kFloat64, -1, 1, true);
    Tensor b = a.clone().set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(sigmoid(a), detach(relu(a)))));
    const Tensor constant = relu(b.clone());
    tape.backward(sum(mul(sigmoid(b), constant)));
    const auto ga = a.grad_vector();
    const auto gb = b.grad_vector();
    for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_EQ(ga[i], gb[i]);
  }
}

TEST(Determinism, RepeatedForwardBackwardIsBitwise) {
  auto run = [] {
    Tensor w = random_tensor({8, 3, 3, 3}, 42, DType::kFloat32, -0.3, 0.3, true);
    const Tensor x = random_tensor({2, 3, 9, 9}, 43, DType::kFloat32);
    Tape tape;
    TapeScope scope(tape);
    const Tensor y = softmax_channels(conv2d(x, w, 2, 1));
    tape.backward(sum(mul(y, y)));
    return std::make_pair(y.to_vector(), w.grad_vector());
  };
  const auto r1 = run();
  const auto r2 = run();
  ASSERT_EQ(r1.first.size(), r2.first.size());
  EXPECT_EQ(0, std::memcmp(r1.first.data(), r2.first.data(), r1.first.size() * sizeof(double)));
  EXPECT_EQ(0, std::memcmp(r1.second.data(), r2.second.data(),
                           r1.second.size() * sizeof(double)));
}

}  // namespace
}  // namespace slimseg
