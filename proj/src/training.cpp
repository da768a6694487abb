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

#include "slimseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <stdexcept>

#include "slimseg/ops.hpp"

namespace slimseg {
namespace {

std::mt19937_64 stream(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kOrderTag = 0x0bde;
constexpr std::uint64_t kAugmentTag = 0xa46;

void check_finite(const Tensor& t, const char* name, double width) {
  const double v = t.item();
  if (std::isfinite(v)) return;
  char buf[96];
  std::snprintf(buf, sizeof buf, "non-finite %s at width %.2f (value %g)", name, width, v);
  throw NonFiniteLoss(buf);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

TeacherStrategy parse_teacher_strategy(const std::string& name) {
  if (name == "prev") return TeacherStrategy::kPrev;
  if (name == "largest") return TeacherStrategy::kLargest;
  if (name == "mean") return TeacherStrategy::kMean;
  if (name == "larger") return TeacherStrategy::kLarger;
  throw std::invalid_argument("unknown teacher strategy '" + name +
                              "' (expected prev, largest, mean or larger)");
}

std::string strategy_name(TeacherStrategy s) {
  switch (s) {
    case TeacherStrategy::kPrev: return "prev";
    case TeacherStrategy::kLargest: return "largest";
    case TeacherStrategy::kMean: return "mean";
    case TeacherStrategy::kLarger: return "larger";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("train.iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (!(base_lr > 0) || !std::isfinite(base_lr)) throw std::invalid_argument("train.base_lr must be > 0");
  if (!(power >= 0)) throw std::invalid_argument("train.power must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("train.momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw std::invalid_argument("train.weight_decay must be >= 0");
  WidthList check(widths);
  loss.validate();
}

double poly_lr(std::int64_t iter, std::int64_t iter_max, double base, double power) {
  if (iter_max < 1 || iter < 0 || iter > iter_max) {
    throw std::invalid_argument("poly_lr: need 0 <= iter <= iter_max, iter_max >= 1");
  }
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(iter_max), power);
}

OptimizerState make_optimizer(const SlimSegModel& model) {
  OptimizerState opt;
  for (const auto& p : model.parameters()) {
    opt.names.push_back(p.name);
    opt.buffers.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
  }
  return opt;
}

void sgd_step(const SlimSegModel& model, OptimizerState& opt, double lr, double momentum,
              double weight_decay) {
  std::vector<ParamRef> params = model.parameters();
  if (params.size() != opt.buffers.size()) {
    throw std::invalid_argument("sgd_step: optimizer state does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = params[i].tensor;
    Tensor& buf = opt.buffers[i];
    if (params[i].name != opt.names[i] || theta.shape() != buf.shape()) {
      throw std::invalid_argument("sgd_step: buffer mismatch at " + params[i].name);
    }
    if (!theta.has_grad()) continue;
    const double wd = params[i].kind == ParamKind::kKernel ? weight_decay : 0.0;
    dispatch(theta.dtype(), [&]<typename T>() {
      const auto g = theta.grad_values<T>();
      auto th = theta.mutable_values<T>();
      auto b = buf.mutable_values<T>();
      const T m = static_cast<T>(momentum), l = static_cast<T>(lr), d = static_cast<T>(wd);
      for (std::size_t j = 0; j < th.size(); ++j) {
        b[j] = m * b[j] + (g[j] + d * th[j]);
        th[j] -= l * b[j];
      }
    });
  }
  opt.lr = lr;
}

void zero_grads(const SlimSegModel& model) {
  for (auto& p : model.parameters()) p.tensor.drop_grad();
}

TeacherCache::TeacherCache(TeacherStrategy strategy, std::size_t num_widths)
    : strategy_(strategy), num_widths_(num_widths) {}

void TeacherCache::store(std::size_t n, const ForwardOutput& out) {
  if (n >= num_widths_) throw std::out_of_range("TeacherCache: width index out of range");
  if (strategy_ == TeacherStrategy::kLargest && n + 1 != num_widths_) return;
  if (strategy_ == TeacherStrategy::kPrev) {
    // Only the next smaller width reads this entry; anything larger is spent.
    entries_.erase(entries_.upper_bound(n), entries_.end());
  }
  TeacherEntry e{detach(out.seg_probs), std::nullopt};
  if (out.boundary_prob) e.boundary_prob = detach(*out.boundary_prob);
  entries_[n] = std::move(e);
  peak_ = std::max(peak_, entries_.size());
}

const TeacherEntry& TeacherCache::at(std::size_t n) const {
  auto it = entries_.find(n);
  if (it == entries_.end()) {
    throw std::invalid_argument("teacher cache holds no entry for width index " + std::to_string(n));
  }
  return it->second;
}

std::vector<std::size_t> TeacherCache::held() const {
  std::vector<std::size_t> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

TeacherSet teacher_target(TeacherStrategy strategy, const TeacherCache& cache, std::size_t n,
                          std::size_t num_widths) {
  if (n + 1 >= num_widths) throw std::invalid_argument("teacher_target: the largest width has no teacher");
  TeacherSet set;
  auto push = [&set](const TeacherEntry& e) {
    set.seg_probs.push_back(e.seg_probs);
    if (e.boundary_prob) set.boundary_probs.push_back(*e.boundary_prob);
  };
  switch (strategy) {
    case TeacherStrategy::kPrev:
      push(cache.at(n + 1));
      break;
    case TeacherStrategy::kLargest:
      push(cache.at(num_widths - 1));
      break;
    case TeacherStrategy::kLarger:
      for (std::size_t j = n + 1; j < num_widths; ++j) push(cache.at(j));
      break;
    case TeacherStrategy::kMean: {
      std::vector<const TeacherEntry*> src;
      for (std::size_t j = n + 1; j < num_widths; ++j) src.push_back(&cache.at(j));
      auto average = [&src](auto pick) {
        const Tensor& first = pick(*src.front());
        Tensor out = Tensor::zeros(first.shape(), first.dtype());
        dispatch(first.dtype(), [&]<typename T>() {
          auto o = out.mutable_values<T>();
          for (const TeacherEntry* e : src) {
            const auto v = pick(*e).template values<T>();
            for (std::size_t i = 0; i < o.size(); ++i) o[i] += v[i];
          }
          const auto count = static_cast<T>(src.size());
          for (auto& x : o) x /= count;
        });
        return out;
      };
      set.seg_probs.push_back(average([](const TeacherEntry& e) -> const Tensor& { return e.seg_probs; }));
      bool all_b = true;
      for (const TeacherEntry* e : src) all_b = all_b && e->boundary_prob.has_value();
      if (all_b) {
        set.boundary_probs.push_back(
            average([](const TeacherEntry& e) -> const Tensor& { return *e.boundary_prob; }));
      }
      break;
    }
  }
  return set;
}

StepReport accumulate_gradients(SlimSegModel& model, const Batch& batch, const TrainConfig& cfg,
                                const std::vector<std::size_t>* backprop) {
  cfg.validate();
  const WidthList& widths = model.widths();
  if (widths.values() != cfg.widths) {
    throw std::invalid_argument("training widths differ from the model's width list");
  }
  const std::size_t n_w = widths.size();
  const bool with_boundary = needs_boundary(cfg.loss);
  const GroundTruth gt = make_ground_truth(batch.labels, cfg.loss, model.config().dtype);
  TeacherCache cache(cfg.teacher_strategy, n_w);
  StepReport report;

  for (std::size_t k = 0; k < n_w; ++k) {
    const std::size_t n = n_w - 1 - k;
    const bool largest = n == widths.largest();
    Tape tape;
    TapeScope scope(tape);
    const ForwardOutput out = model.forward(batch.images, n, BnMode::kTrain, with_boundary);
    TeacherSet teachers;
    if (!largest) teachers = teacher_target(cfg.teacher_strategy, cache, n, n_w);
    const LossTerms terms = width_loss(out, largest, largest ? nullptr : &teachers, gt, cfg.loss);

    check_finite(terms.seg, largest ? "L_seg" : "L_kd", widths[n]);
    check_finite(terms.boundary, largest ? "L_b" : "L_bkd", widths[n]);
    check_finite(terms.guided, largest ? "L_g" : "L_gkd", widths[n]);
    check_finite(terms.total, "total", widths[n]);
    report.widths.push_back({widths[n], terms.supervised, terms.seg.item(), terms.boundary.item(),
                             terms.guided.item(), terms.total.item()});
    report.visit_order.push_back(n);

    const bool run_backward =
        !backprop || std::find(backprop->begin(), backprop->end(), n) != backprop->end();
    if (run_backward) tape.backward(terms.total);
    if (n > 0) cache.store(n, out);
  }
  report.peak_teachers = cache.peak();
  return report;
}

StepReport train_step(SlimSegModel& model, const Batch& batch, const TrainConfig& cfg,
                      OptimizerState& opt, std::int64_t iter) {
  const double lr = poly_lr(iter, cfg.iterations, cfg.base_lr, cfg.power);
  zero_grads(model);
  StepReport report;
  try {
    report = accumulate_gradients(model, batch, cfg);
  } catch (const NonFiniteLoss& e) {
    throw NonFiniteLoss(std::string(e.what()) + " in iteration " + std::to_string(iter));
  }
  sgd_step(model, opt, lr, cfg.momentum, cfg.weight_decay);
  report.iter = iter;
  report.lr = lr;
  return report;
}

Batch training_batch(const DataConfig& data, const DatasetSplit& split, const TrainConfig& cfg,
                     std::int64_t iter, DType dtype, int boundary_radius) {
  const std::size_t n_train = split.train.size();
  if (n_train == 0) throw std::invalid_argument("training_batch: empty train split");
  std::map<std::uint64_t, std::vector<std::uint64_t>> orders;
  std::vector<Sample> samples;
  for (std::int64_t j = 0; j < cfg.batch_size; ++j) {
    const auto k = static_cast<std::uint64_t>(iter * cfg.batch_size + j);
    const std::uint64_t epoch = k / n_train;
    auto it = orders.find(epoch);
    if (it == orders.end()) {
      std::vector<std::uint64_t> order = split.train;
      auto rng = stream({cfg.seed, epoch, kOrderTag});
      std::shuffle(order.begin(), order.end(), rng);
      it = orders.emplace(epoch, std::move(order)).first;
    }
    Sample s = synth_generate(data.synth, it->second[k % n_train], boundary_radius);
    if (data.augment) {
      auto rng = stream({cfg.seed, static_cast<std::uint64_t>(iter), static_cast<std::uint64_t>(j),
                         kAugmentTag});
      const AugmentParams p =
          random_augment(rng, s.height(), s.width(), s.height(), s.width(), data.augment_range);
      s = augment(s, p, s.height(), s.width(), boundary_radius);
    }
    samples.push_back(std::move(s));
  }
  return make_batch(samples, dtype);
}

std::string log_header(const WidthList& widths) {
  std::string h = "iter\tlr";
  for (std::size_t k = 0; k < widths.size(); ++k) {
    const std::size_t n = widths.size() - 1 - k;
    const std::string w = widths.label(n) + ":";
    if (n == widths.largest()) {
      h += "\t" + w + "L_seg\t" + w + "L_b\t" + w + "L_g";
    } else {
      h += "\t" + w + "L_kd\t" + w + "L_bkd\t" + w + "L_gkd";
    }
    h += "\t" + w + "total";
  }
  return h;
}

std::string log_row(const StepReport& r) {
  std::string row = std::to_string(r.iter) + "\t" + fmt(r.lr);
  for (const auto& w : r.widths) {
    row += "\t" + fmt(w.seg) + "\t" + fmt(w.boundary) + "\t" + fmt(w.guided) + "\t" + fmt(w.total);
  }
  return row;
}

std::vector<Sample> validation_samples(const DataConfig& data, const DatasetSplit& split) {
  std::vector<Sample> out;
  out.reserve(split.val.size());
  for (auto idx : split.val) out.push_back(synth_generate(data.synth, idx));
  return out;
}

TrainResult train_loop(SlimSegModel& model, const DataConfig& data, const TrainConfig& cfg,
                       const LoopOptions& options) {
  cfg.validate();
  data.synth.validate();
  if (data.synth.num_classes != model.config().num_classes) {
    throw std::invalid_argument("dataset and model disagree on the number of classes");
  }
  const DatasetSplit split = split_indices(data.train_size, data.val_size, data.synth.seed);
  const std::vector<Sample> val = validation_samples(data, split);
  std::vector<std::size_t> all_widths(model.widths().size());
  for (std::size_t n = 0; n < all_widths.size(); ++n) all_widths[n] = n;
  if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

  OptimizerState opt = make_optimizer(model);
  TrainResult result;
  if (options.log) *options.log << log_header(model.widths()) << '\n';

  for (std::int64_t it = 0; it < cfg.iterations; ++it) {
    const Batch batch = training_batch(data, split, cfg, it, model.config().dtype,
                                       cfg.loss.boundary_radius);
    StepReport rep = train_step(model, batch, cfg, opt, it);
    if (options.log) *options.log << log_row(rep) << '\n' << std::flush;
    result.steps.push_back(std::move(rep));

    const std::int64_t done = it + 1;
    const bool last = done == cfg.iterations;
    if (!val.empty() && ((options.val_every > 0 && done % options.val_every == 0) || last)) {
      ValRecord rec{done, {}};
      for (const auto& cm : evaluate_widths(model, val, all_widths)) rec.miou.push_back(miou(cm).miou);
      if (options.progress) {
        *options.progress << "iter " << done;
        for (std::size_t n = 0; n < rec.miou.size(); ++n) {
          *options.progress << "  " << model.widths().label(n) << " mIoU " << fmt(rec.miou[n]);
        }
        *options.progress << std::endl;
      }
      result.validation.push_back(std::move(rec));
    }
    if (!options.out_dir.empty() && options.checkpoint_every > 0 && !last &&
        done % options.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "ckpt_%06lld.slsckpt", static_cast<long long>(done));
      save_checkpoint(model, (std::filesystem::path(options.out_dir) / name).string());
    }
  }
  if (!options.out_dir.empty()) {
    save_checkpoint(model, (std::filesystem::path(options.out_dir) / "final.slsckpt").string());
  }
  return result;
}

}  // namespace slimseg
