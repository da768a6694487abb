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

#pragma once

// Width-descending training step with cached, detached teachers; SGD with
// momentum under a poly schedule; the seeded training loop.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "slimseg/data.hpp"
#include "slimseg/evaluation.hpp"
#include "slimseg/losses.hpp"
#include "slimseg/segnet.hpp"

namespace slimseg {

enum class TeacherStrategy { kPrev, kLargest, kMean, kLarger };

TeacherStrategy parse_teacher_strategy(const std::string& name);
std::string strategy_name(TeacherStrategy s);

struct TrainConfig {
  std::int64_t iterations = 2000;
  std::int64_t batch_size = 8;
  double base_lr = 0.01;
  double power = 0.9;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<double> widths{0.25, 0.5, 0.75, 1.0};  // must equal the model's
  TeacherStrategy teacher_strategy = TeacherStrategy::kPrev;
  LossConfig loss;
  std::uint64_t seed = 0;

  void validate() const;
};

// base * (1 - iter / iter_max)^power for 0 <= iter <= iter_max.
double poly_lr(std::int64_t iter, std::int64_t iter_max, double base, double power);

// One momentum buffer per full parameter tensor, in parameters() order.
struct OptimizerState {
  std::vector<std::string> names;
  std::vector<Tensor> buffers;
  double lr = 0;
};

OptimizerState make_optimizer(const SlimSegModel& model);

// buf = momentum * buf + g (+ weight_decay * theta on kernels); theta -= lr * buf.
// Parameters without a gradient are left alone.
void sgd_step(const SlimSegModel& model, OptimizerState& opt, double lr, double momentum,
              double weight_decay);

// Detached outputs of larger widths, keyed by width index.
struct TeacherEntry {
  Tensor seg_probs;
  std::optional<Tensor> boundary_prob;
};

class TeacherCache {
 public:
  TeacherCache(TeacherStrategy strategy, std::size_t num_widths);

  // Stores a width's detached outputs and drops entries the strategy will
  // not read again.
  void store(std::size_t width_index, const ForwardOutput& out);
  bool contains(std::size_t width_index) const { return entries_.count(width_index) != 0; }
  const TeacherEntry& at(std::size_t width_index) const;
  std::vector<std::size_t> held() const;
  std::size_t peak() const { return peak_; }
  void clear() { entries_.clear(); }

 private:
  TeacherStrategy strategy_;
  std::size_t num_widths_;
  std::map<std::size_t, TeacherEntry> entries_;
  std::size_t peak_ = 0;
};

// Teachers for student width n < N-1. "mean" yields one averaged entry,
// "larger" the full list (width_loss averages the per-teacher terms).
TeacherSet teacher_target(TeacherStrategy strategy, const TeacherCache& cache, std::size_t n,
                          std::size_t num_widths);

struct WidthReport {
  double width = 0;
  bool supervised = false;
  double seg = 0;
  double boundary = 0;
  double guided = 0;
  double total = 0;
};

struct StepReport {
  std::int64_t iter = 0;
  double lr = 0;
  std::vector<WidthReport> widths;       // in visitation (descending) order
  std::vector<std::size_t> visit_order;  // width indices
  std::size_t peak_teachers = 0;
};

// Thrown when a loss term is NaN or infinite.
class NonFiniteLoss : public NumericError {
 public:
  using NumericError::NumericError;
};

// Forward/backward over every width in descending order, accumulating into
// the parameter gradients (which are not zeroed here). When `backprop` is
// given, only the listed width indices run backward; every width still runs
// forward so teachers stay available.
StepReport accumulate_gradients(SlimSegModel& model, const Batch& batch, const TrainConfig& cfg,
                                const std::vector<std::size_t>* backprop = nullptr);

// Zero gradients, accumulate over all widths, one SGD update at poly_lr(iter).
StepReport train_step(SlimSegModel& model, const Batch& batch, const TrainConfig& cfg,
                      OptimizerState& opt, std::int64_t iter);

void zero_grads(const SlimSegModel& model);

struct DataConfig {
  SynthConfig synth;
  std::size_t train_size = 2000;
  std::size_t val_size = 200;
  bool augment = true;
  AugmentRange augment_range;
};

// Seeded training batch for one iteration: an epoch-wise shuffle of the
// train split, each sample augmented with its own stream.
Batch training_batch(const DataConfig& data, const DatasetSplit& split, const TrainConfig& cfg,
                     std::int64_t iter, DType dtype, int boundary_radius);

struct LoopOptions {
  std::int64_t val_every = 200;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::string out_dir;                // empty: no files
  std::ostream* log = nullptr;        // per-iteration TSV
  std::ostream* progress = nullptr;   // human-readable validation lines
};

struct ValRecord {
  std::int64_t iter = 0;
  std::vector<double> miou;  // per width index
};

struct TrainResult {
  std::vector<StepReport> steps;
  std::vector<ValRecord> validation;
};

std::string log_header(const WidthList& widths);
std::string log_row(const StepReport& r);

std::vector<Sample> validation_samples(const DataConfig& data, const DatasetSplit& split);

TrainResult train_loop(SlimSegModel& model, const DataConfig& data, const TrainConfig& cfg,
                       const LoopOptions& options = {});

}  // namespace slimseg
