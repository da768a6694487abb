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

// Acceptance checks. Prints one "criterion N: PASS|FAIL ..." line per
// selected criterion; exit status 0 only when all of them pass.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "grad_suite.hpp"
#include "slimseg/evaluation.hpp"
#include "slimseg/training.hpp"

using namespace slimseg;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 1: finite differences ----------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  auto cases = testing::op_grad_cases();
  for (auto& c : testing::loss_grad_cases()) cases.push_back(std::move(c));
  double worst = 0;
  std::string worst_at;
  int failures = 0, runs = 0;
  for (const auto& c : cases) {
    for (std::uint64_t i = 0; i < 20; ++i) {
      const GradCheckReport r = c.run(50000 + i * 104729);
      ++runs;
      if (!r.passed || r.entries_checked == 0) ++failures;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_at = c.name + " " + r.worst;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 120,
          std::to_string(cases.size()) + " cases x 20 instances, " + std::to_string(failures) +
              " failed, worst rel " + fmt("%.2e", worst) + " (" + worst_at + "), " +
              fmt("%.1f", secs) + " s"};
}

// ---- shared helpers -------------------------------------------------------

Batch val_batch(const DataConfig& data, std::size_t count) {
  const DatasetSplit split = split_indices(data.train_size, data.val_size, data.synth.seed);
  std::vector<Sample> s;
  for (std::size_t i = 0; i < count; ++i) s.push_back(synth_generate(data.synth, split.val[i]));
  return make_batch(s, DType::kFloat32);
}

bool outputs_equal(const ForwardOutput& a, const ForwardOutput& b) {
  if (!bitwise_equal(a.seg_logits, b.seg_logits)) return false;
  if (a.boundary_prob.has_value() != b.boundary_prob.has_value()) return false;
  return !a.boundary_prob || bitwise_equal(*a.boundary_prob, *b.boundary_prob);
}

// ---- 2: parameter nesting -------------------------------------------------

Outcome parameter_nesting() {
  SlimSegModel model = SlimSegModel::build(SegNetConfig{}, 7);
  TrainConfig cfg;
  cfg.iterations = 500;
  cfg.seed = 7;
  DataConfig data;
  data.val_size = 8;
  LoopOptions opts;
  opts.val_every = 0;
  train_loop(model, data, cfg, opts);

  const Batch batch = val_batch(data, 4);
  const std::size_t n_w = model.widths().size();
  SlimSegModel reloaded = model_from_checkpoint_bytes(checkpoint_bytes(model));
  int reslice_ok = 0, perturb_ok = 0, sanity = 0;
  for (std::size_t n = 0; n < n_w; ++n) {
    const ForwardOutput ref = model.forward(batch.images, n, BnMode::kEval, true);
    reslice_ok += outputs_equal(ref, reloaded.forward(batch.images, n, BnMode::kEval, true));

    SlimSegModel other = model.clone();
    std::mt19937_64 rng(n);
    std::normal_distribution<float> noise(0.0f, 1.0f);
    for (auto& p : other.parameters()) {
      const auto mask = active_mask(p, n);
      auto v = p.tensor.mutable_values<float>();
      for (std::size_t j = 0; j < v.size(); ++j) {
        if (!mask[j]) v[j] += noise(rng);
      }
    }
    perturb_ok += outputs_equal(ref, other.forward(batch.images, n, BnMode::kEval, true));
    if (n + 1 < n_w) {
      sanity += !outputs_equal(model.forward(batch.images, n_w - 1, BnMode::kEval, true),
                               other.forward(batch.images, n_w - 1, BnMode::kEval, true));
    }
  }
  const int n = static_cast<int>(n_w);
  return {reslice_ok == n && perturb_ok == n && sanity == n - 1,
          "after 500 steps: re-sliced outputs bitwise " + std::to_string(reslice_ok) + "/" +
              std::to_string(n) + ", unchanged under outside-slice perturbation " +
              std::to_string(perturb_ok) + "/" + std::to_string(n)};
}

// ---- 3: BN isolation ------------------------------------------------------

std::size_t record_of(const std::string& stats_name) {
  return static_cast<std::size_t>(std::stoul(stats_name.substr(stats_name.rfind('.') + 1)));
}

void load_values(SlimSegModel& dst, const std::vector<Tensor>& values) {
  auto params = dst.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto src = values[i].values<float>();
    auto out = params[i].tensor.mutable_values<float>();
    std::copy(src.begin(), src.end(), out.begin());
  }
}

Outcome bn_isolation() {
  SlimSegModel model = SlimSegModel::build(SegNetConfig{}, 3);
  const std::size_t n_w = model.widths().size();
  std::vector<SlimSegModel> replay;
  for (std::size_t n = 0; n < n_w; ++n) replay.push_back(model.clone());
  SlimSegModel initial = model.clone();

  TrainConfig cfg;
  DataConfig data;
  const DatasetSplit split = split_indices(data.train_size, data.val_size, data.synth.seed);
  OptimizerState opt = make_optimizer(model);
  for (std::int64_t t = 0; t < 100; ++t) {
    const std::size_t n = static_cast<std::size_t>(t) % n_w;
    const Batch batch = training_batch(data, split, cfg, t, DType::kFloat32, 3);
    std::vector<Tensor> snapshot;
    for (const auto& p : model.parameters()) snapshot.push_back(p.tensor.clone());

    zero_grads(model);
    {
      Tape tape;
      TapeScope scope(tape);
      const ForwardOutput out = model.forward(batch.images, n, BnMode::kTrain, true);
      tape.backward(cross_entropy(out.seg_logits, batch.labels, cfg.loss));
    }
    sgd_step(model, opt, 0.01, 0.9, 5e-4);

    // Single-width replay: same parameters, only this width's forwards.
    load_values(replay[n], snapshot);
    Tape tape;
    TapeScope scope(tape);
    replay[n].forward(batch.images, n, BnMode::kTrain, true);
  }

  auto ms = model.running_stats();
  auto init = initial.running_stats();
  int own_ok = 0, own_total = 0, other_ok = 0, other_total = 0;
  for (std::size_t n = 0; n < n_w; ++n) {
    auto rs = replay[n].running_stats();
    for (std::size_t i = 0; i < ms.size(); ++i) {
      if (record_of(ms[i].name) == n) {
        ++own_total;
        own_ok += bitwise_equal(ms[i].stats->mean, rs[i].stats->mean) &&
                  bitwise_equal(ms[i].stats->var, rs[i].stats->var) &&
                  !bitwise_equal(ms[i].stats->mean, init[i].stats->mean);
      } else {
        ++other_total;
        other_ok += bitwise_equal(rs[i].stats->mean, init[i].stats->mean) &&
                    bitwise_equal(rs[i].stats->var, init[i].stats->var);
      }
    }
  }
  return {own_ok == own_total && other_ok == other_total,
          "100 alternating steps: " + std::to_string(own_ok) + "/" + std::to_string(own_total) +
              " BN records match their single-width replay bitwise, " + std::to_string(other_ok) +
              "/" + std::to_string(other_total) + " untouched by other widths"};
}

// ---- 4: detach contract ---------------------------------------------------

Outcome detach_contract() {
  const SegNetConfig net;
  DataConfig data;
  TrainConfig cfg;
  cfg.loss.lambda1 = 0;
  cfg.loss.lambda2 = 0;
  cfg.batch_size = 4;
  const DatasetSplit split = split_indices(data.train_size, data.val_size, data.synth.seed);
  const Batch batch = training_batch(data, split, cfg, 0, DType::kFloat32, 3);
  std::int64_t leaked = 0, checked = 0, moved = 0;
  for (auto s : {TeacherStrategy::kPrev, TeacherStrategy::kLargest, TeacherStrategy::kMean,
                 TeacherStrategy::kLarger}) {
    cfg.teacher_strategy = s;
    for (std::size_t n = 0; n + 1 < net.widths.size(); ++n) {
      SlimSegModel model = SlimSegModel::build(net, 4);
      zero_grads(model);
      const std::vector<std::size_t> only{n};
      accumulate_gradients(model, batch, cfg, &only);
      for (const auto& p : model.parameters()) {
        if (!p.tensor.has_grad()) continue;
        const auto mask = active_mask(p, n);
        const auto g = p.tensor.grad_values<float>();
        for (std::size_t j = 0; j < g.size(); ++j) {
          if (mask[j]) {
            moved += g[j] != 0.0f;
          } else {
            ++checked;
            leaked += g[j] != 0.0f;
          }
        }
      }
    }
  }
  return {leaked == 0 && checked > 0 && moved > 0,
          std::to_string(leaked) + " non-zero gradients among " + std::to_string(checked) +
              " entries outside the student's slices (4 strategies x 3 student widths)"};
}

// ---- 5: brute-force oracles -----------------------------------------------

LabelMap random_scene(std::mt19937_64& rng, int classes) {
  // Blocky random labels with some ignore pixels so boundaries are plentiful.
  LabelMap m(1, 32, 32);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  std::bernoulli_distribution ignore(0.05);
  const int cell = std::uniform_int_distribution<int>(2, 8)(rng);
  std::vector<int> grid((32 / cell + 1) * (32 / cell + 1));
  for (auto& g : grid) g = cls(rng);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      m.at(0, y, x) = ignore(rng) ? kIgnoreLabel
                                  : static_cast<std::uint8_t>(grid[(y / cell) * (32 / cell + 1) + x / cell]);
    }
  }
  return m;
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(2024);
  std::map<std::string, int> ok;
  const int trials = 10;
  const int k = 5;
  for (int t = 0; t < trials; ++t) {
    const LabelMap labels = random_scene(rng, k);
    const int r = 1 + t % 3;

    // boundary_gt
    const LabelMap bgt = boundary_gt(labels, r);
    bool same = true;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        std::uint8_t want = 0;
        const int own = labels.at(0, y, x);
        for (int yy = 0; yy < 32 && own != kIgnoreLabel; ++yy) {
          for (int xx = 0; xx < 32; ++xx) {
            const int o = labels.at(0, yy, xx);
            if (o != own && o != kIgnoreLabel && (yy - y) * (yy - y) + (xx - x) * (xx - x) <= r * r) want = 1;
          }
        }
        same = same && bgt.at(0, y, x) == want;
      }
    }
    ok["boundary_gt"] += same;

    // boundary_mask
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> pb(32 * 32);
    for (auto& v : pb) v = u(rng);
    const Tensor pbt = Tensor::from_values({1, 1, 32, 32}, pb, DType::kFloat64);
    const double tau = u(rng);
    const BoundaryMask mask = boundary_mask(pbt, tau);
    same = true;
    for (std::size_t i = 0; i < pb.size(); ++i) same = same && mask.valid[i] == (pb[i] > tau ? 1 : 0);
    ok["boundary_mask"] += same;

    // masked losses (double accumulation; equal to 1e-12)
    std::normal_distribution<double> nd(0, 2);
    std::vector<double> lg(k * 32 * 32), tp(k * 32 * 32);
    for (auto& v : lg) v = nd(rng);
    for (int i = 0; i < 32 * 32; ++i) {
      double s = 0;
      for (int c = 0; c < k; ++c) s += (tp[c * 1024 + i] = u(rng) + 1e-3);
      for (int c = 0; c < k; ++c) tp[c * 1024 + i] /= s;
    }
    const Tensor logits = Tensor::from_values({1, k, 32, 32}, lg, DType::kFloat64);
    const Tensor teacher = Tensor::from_values({1, k, 32, 32}, tp, DType::kFloat64);
    double ce = 0, kd = 0;
    int nce = 0, nkd = 0;
    for (int i = 0; i < 32 * 32; ++i) {
      if (!mask.valid[i]) continue;
      double mx = -1e300;
      for (int c = 0; c < k; ++c) mx = std::max(mx, lg[c * 1024 + i]);
      double z = 0;
      for (int c = 0; c < k; ++c) z += std::exp(lg[c * 1024 + i] - mx);
      auto logp = [&](int c) {
        const double p = std::exp(lg[c * 1024 + i] - mx) / z;
        return std::log(std::clamp(p, 1e-7, 1 - 1e-7));
      };
      for (int c = 0; c < k; ++c) kd -= tp[c * 1024 + i] * logp(c);
      ++nkd;
      if (labels.data[i] == kIgnoreLabel) continue;
      ce -= logp(labels.data[i]);
      ++nce;
    }
    LossConfig lc;
    const double mce = masked_ce(logits, labels, mask, lc).item();
    const double mkd = masked_kd(logits, teacher, mask).item();
    ok["masked_losses"] += std::abs(mce - (nce ? ce / nce : 0)) <= 1e-12 &&
                           std::abs(mkd - (nkd ? kd / nkd : 0)) <= 1e-12;

    // confusion + mIoU
    LabelMap pred = labels;
    std::uniform_int_distribution<int> cls(0, k - 1);
    for (auto& v : pred.data) {
      if (u(rng) < 0.3 || v == kIgnoreLabel) v = static_cast<std::uint8_t>(cls(rng));
    }
    ConfusionMatrix cm(k);
    update_confusion(cm, pred, labels);
    bool cm_ok = true;
    double iou_sum = 0;
    int present = 0;
    for (int g = 0; g < k; ++g) {
      std::int64_t inter = 0, uni = 0;
      for (int p = 0; p < k; ++p) {
        std::int64_t n = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) n += labels.data[i] == g && pred.data[i] == p;
        cm_ok = cm_ok && cm.at(g, p) == n;
      }
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels.data[i] == kIgnoreLabel) continue;
        inter += labels.data[i] == g && pred.data[i] == g;
        uni += labels.data[i] == g || pred.data[i] == g;
      }
      if (uni) {
        iou_sum += static_cast<double>(inter) / static_cast<double>(uni);
        ++present;
      }
    }
    ok["confusion_miou"] += cm_ok && miou(cm).miou == iou_sum / present;

    // distance transform on squared integers
    const auto sq = squared_distance_transform(bgt);
    same = true;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        std::int64_t best = -1;
        for (int yy = 0; yy < 32; ++yy) {
          for (int xx = 0; xx < 32; ++xx) {
            if (!bgt.at(0, yy, xx)) continue;
            const std::int64_t d = (yy - y) * (yy - y) + (xx - x) * (xx - x);
            if (best < 0 || d < best) best = d;
          }
        }
        same = same && sq[static_cast<std::size_t>(y * 32 + x)] == best;
      }
    }
    ok["distance_transform"] += same;
  }
  bool all = true;
  std::string detail;
  for (const auto& [name, n] : ok) {
    all = all && n == trials;
    detail += (detail.empty() ? "" : ", ") + name + " " + std::to_string(n) + "/" + std::to_string(trials);
  }
  return {all && ok.size() == 5, detail + " random 32x32 instances"};
}

// ---- 6: Gibbs -------------------------------------------------------------

Outcome gibbs() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(1e-3, 1.0);
  std::normal_distribution<double> nd(0, 3);
  const int n = 1000, k = 5;
  std::vector<double> teacher(k * n), student(k * n), same(k * n);
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int c = 0; c < k; ++c) s += (teacher[c * n + i] = std::pow(u(rng), 3));
    for (int c = 0; c < k; ++c) {
      teacher[c * n + i] /= s;
      student[c * n + i] = nd(rng);
      same[c * n + i] = std::log(teacher[c * n + i]);
    }
  }
  double worst_gap = 1e300, worst_eq = 0;
  int violations = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> ti(k), si(k), qi(k);
    for (int c = 0; c < k; ++c) {
      ti[c] = teacher[c * n + i];
      si[c] = student[c * n + i];
      qi[c] = same[c * n + i];
    }
    const Tensor tt = Tensor::from_values({1, k, 1, 1}, ti, DType::kFloat64);
    const double h = mean_entropy(tt);
    const double ce = soft_target_ce(Tensor::from_values({1, k, 1, 1}, si, DType::kFloat64), tt).item();
    const double eq = soft_target_ce(Tensor::from_values({1, k, 1, 1}, qi, DType::kFloat64), tt).item();
    worst_gap = std::min(worst_gap, ce - h);
    worst_eq = std::max(worst_eq, std::abs(eq - h));
    violations += ce < h - 1e-7 || std::abs(eq - h) > 1e-7;
  }
  return {violations == 0, std::to_string(n) + " distributions: min(CE - H) " + fmt("%.3e", worst_gap) +
                               ", max |CE(p,p) - H(p)| " + fmt("%.3e", worst_eq)};
}

// ---- 7: scheduler ---------------------------------------------------------

Outcome scheduler() {
  const std::int64_t max = 2000;
  double worst = 0;
  for (std::int64_t it : {std::int64_t{0}, std::int64_t{1}, max / 2, max - 1, max}) {
    const double frac = 1.0 - static_cast<double>(it) / static_cast<double>(max);
    const double oracle = frac == 0 ? 0.0 : 0.01 * std::exp(0.9 * std::log(frac));
    worst = std::max(worst, std::abs(poly_lr(it, max, 0.01, 0.9) - oracle));
  }
  const bool ends = poly_lr(0, max, 0.01, 0.9) == 0.01 && poly_lr(max, max, 0.01, 0.9) == 0.0;
  return {worst <= 1e-12 && ends, "max deviation " + fmt("%.2e", worst) + ", lr(max/2) " +
                                      fmt("%.7f", poly_lr(max / 2, max, 0.01, 0.9))};
}

// ---- 8: FLOPs and parameters -----------------------------------------------

Outcome flops_scaling() {
  SlimSegModel model = SlimSegModel::build(SegNetConfig{}, 0);
  const double f05 = model.count_flops(1, 64, 64, false).total();
  const double f10 = model.count_flops(3, 64, 64, false).total();
  const double ratio = f05 / f10;
  bool increasing = true;
  std::int64_t independent = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    independent += model.count_params(n);
    if (n) increasing = increasing && model.count_params(n) > model.count_params(n - 1);
  }
  const std::int64_t stored = model.stored_params();
  return {ratio >= 0.25 && ratio <= 0.32 && increasing && stored < independent,
          "FLOPs w0.50/w1.00 " + fmt("%.4f", ratio) + ", params increasing " +
              (increasing ? "yes" : "no") + ", slimmable " + std::to_string(stored) +
              " < independent sum " + std::to_string(independent)};
}

// ---- 9-11: training runs ----------------------------------------------------

struct RunSummary {
  std::string log;
  std::vector<std::uint8_t> checkpoint;
  std::vector<double> miou;
  std::int64_t near_errors_smallest = 0;  // errors within distance 5 at the smallest width
  double seconds = 0;
};

RunSummary train_run(std::uint64_t seed, bool full_loss, std::int64_t iterations) {
  SlimSegModel model = SlimSegModel::build(SegNetConfig{}, seed);
  TrainConfig cfg;
  cfg.iterations = iterations;
  cfg.seed = seed;
  if (!full_loss) {
    cfg.loss.lambda1 = 0;
    cfg.loss.lambda2 = 0;
  }
  DataConfig data;
  std::ostringstream log;
  LoopOptions opts;
  opts.val_every = 0;
  opts.log = &log;
  std::cerr << "training seed " << seed << (full_loss ? " full loss" : " seg loss only") << ", "
            << iterations << " iterations\n";
  const auto t0 = Clock::now();
  const TrainResult res = train_loop(model, data, cfg, opts);
  RunSummary s;
  s.seconds = seconds_since(t0);
  s.log = log.str();
  s.checkpoint = checkpoint_bytes(model);
  s.miou = res.validation.back().miou;

  const DatasetSplit split = split_indices(data.train_size, data.val_size, data.synth.seed);
  for (const Sample& v : validation_samples(data, split)) {
    const LabelMap band = boundary_gt(v.labels, 1);
    if (std::find(band.data.begin(), band.data.end(), 1) == band.data.end()) continue;
    const LabelMap pred = predict(model, make_batch({v}, DType::kFloat32).images, 0);
    const auto dist = distance_transform(band);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (v.labels.data[i] != kIgnoreLabel && pred.data[i] != v.labels.data[i] && dist[i] <= 5.0) {
        ++s.near_errors_smallest;
      }
    }
  }
  std::cerr << "  done in " << fmt("%.0f", s.seconds) << " s, mIoU";
  for (double m : s.miou) std::cerr << " " << fmt("%.4f", m);
  std::cerr << ", near-boundary errors at the smallest width " << s.near_errors_smallest << "\n";
  return s;
}

class Runs {
 public:
  explicit Runs(std::int64_t e2e_iters, std::int64_t boundary_iters)
      : e2e_(e2e_iters), boundary_(boundary_iters) {}

  const RunSummary& get(std::uint64_t seed, bool full, std::int64_t iters) {
    const auto key = std::make_tuple(seed, full, iters);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, train_run(seed, full, iters)).first;
    return it->second;
  }
  std::int64_t e2e() const { return e2e_; }
  std::int64_t boundary() const { return boundary_; }

 private:
  std::int64_t e2e_, boundary_;
  std::map<std::tuple<std::uint64_t, bool, std::int64_t>, RunSummary> cache_;
};

Outcome end_to_end(Runs& runs) {
  const RunSummary& r = runs.get(0, true, runs.e2e());
  bool monotone = true;
  for (std::size_t n = 1; n < r.miou.size(); ++n) monotone = monotone && r.miou[n] >= r.miou[n - 1] - 0.02;
  std::string m;
  const char* names[] = {"w0.25", "w0.50", "w0.75", "w1.00"};
  for (std::size_t n = 0; n < r.miou.size(); ++n) m += std::string(n ? " " : "") + names[n] + " " + fmt("%.4f", r.miou[n]);
  return {r.miou.back() >= 0.85 && monotone && r.seconds < 1800,
          std::to_string(runs.e2e()) + " iterations in " + fmt("%.0f", r.seconds) + " s, val mIoU " + m};
}

Outcome boundary_direction(Runs& runs) {
  double full_err = 0, seg_err = 0;
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const RunSummary& f = runs.get(seed, true, runs.boundary());
    const RunSummary& s = runs.get(seed, false, runs.boundary());
    full_err += static_cast<double>(f.near_errors_smallest) / 3;
    seg_err += static_cast<double>(s.near_errors_smallest) / 3;
    wins += f.miou.front() > s.miou.front();
    per_seed += " seed" + std::to_string(seed) + " mIoU " + fmt("%.4f", f.miou.front()) + " vs " +
                fmt("%.4f", s.miou.front()) + ";";
  }
  return {full_err < seg_err && wins >= 2,
          "width 0.25, full vs seg-only: mean errors within 5 px " + fmt("%.1f", full_err) + " vs " +
              fmt("%.1f", seg_err) + ", mIoU wins " + std::to_string(wins) + "/3;" + per_seed};
}

Outcome determinism(Runs& runs) {
  const RunSummary& a = runs.get(0, true, runs.e2e());
  const RunSummary b = train_run(0, true, runs.e2e());
  const bool logs = a.log == b.log, ckpt = a.checkpoint == b.checkpoint;
  return {logs && ckpt, std::string("loss logs ") + (logs ? "identical" : "differ") + ", checkpoints " +
                            (ckpt ? "identical" : "differ") + " (" + std::to_string(a.checkpoint.size()) +
                            " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected;
  std::int64_t e2e_iters = 2000, boundary_iters = 2000;
  app.add_option("--criteria", selected, "criteria to run (default 1-11)")->delimiter(',');
  app.add_option("--iterations", e2e_iters, "iterations for criteria 9 and 11");
  app.add_option("--boundary-iterations", boundary_iters, "iterations per run for criterion 10");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};

  Runs runs(e2e_iters, boundary_iters);
  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria = {
      {1, {"gradient correctness", gradient_correctness}},
      {2, {"parameter nesting", parameter_nesting}},
      {3, {"BN isolation", bn_isolation}},
      {4, {"detach contract", detach_contract}},
      {5, {"oracle equivalence", oracle_equivalence}},
      {6, {"Gibbs property", gibbs}},
      {7, {"scheduler exactness", scheduler}},
      {8, {"FLOPs scaling", flops_scaling}},
      {9, {"end-to-end training", [&] { return end_to_end(runs); }}},
      {10, {"boundary supervision direction", [&] { return boundary_direction(runs); }}},
      {11, {"determinism", [&] { return determinism(runs); }}},
  };

  bool all = true;
  for (int c : selected) {
    const auto it = criteria.find(c);
    if (it == criteria.end()) {
      std::cout << "criterion " << c << ": FAIL unknown criterion\n";
      all = false;
      continue;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << " " << it->second.first
              << ": " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
