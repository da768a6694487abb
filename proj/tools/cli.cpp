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

#include "slimseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "slimseg/run_config.hpp"

namespace fs = std::filesystem;

namespace slimseg {
namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

std::string available(const WidthList& widths) {
  std::string s;
  for (std::size_t n = 0; n < widths.size(); ++n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%g", n ? ", " : "", widths[n]);
    s += buf;
  }
  return s;
}

std::size_t width_index(const WidthList& widths, double w) {
  try {
    return widths.index_of(w);
  } catch (const std::out_of_range&) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", w);
    throw ConfigError(std::string("width ") + buf + " is not in the model's widths [" +
                      available(widths) + "]");
  }
}

LabelMap image_plane(const LabelMap& m, std::int64_t b) {
  LabelMap one(1, m.height, m.width);
  const auto off = static_cast<std::ptrdiff_t>(b * m.plane());
  std::copy_n(m.data.begin() + off, m.plane(), one.data.begin());
  return one;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve(const Common& c) {
  std::vector<std::string> sets = c.sets;
  if (c.seed) {
    sets.push_back("train.seed=" + std::to_string(*c.seed));
    sets.push_back("model.seed=" + std::to_string(*c.seed));
  }
  return load_run_config(c.config.empty() ? std::nullopt : std::optional<std::string>(c.config), sets);
}

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "key=value config file");
  cmd->add_option("--set", c.sets, "override, key=value (repeatable)");
  auto* out = cmd->add_option("--out", c.out_dir, "output directory");
  if (out_required) out->required();
  cmd->add_option("--seed", c.seed, "sets train.seed and model.seed");
}

int cmd_train(const Common& c, std::ostream& out) {
  const RunConfig cfg = resolve(c);
  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  write_file(dir / "resolved.cfg", resolved_text(cfg));

  SlimSegModel model = SlimSegModel::build(cfg.model, cfg.model_seed);
  std::ofstream log(dir / "train_log.tsv", std::ios::binary);
  LoopOptions opts;
  opts.val_every = cfg.val_every;
  opts.checkpoint_every = cfg.checkpoint_every;
  opts.out_dir = dir.string();
  opts.log = &log;
  opts.progress = &out;
  const TrainResult result = train_loop(model, cfg.data, cfg.train, opts);

  std::string val = "iter";
  for (std::size_t n = 0; n < model.widths().size(); ++n) val += "\t" + model.widths().label(n);
  val += "\n";
  for (const auto& r : result.validation) {
    val += std::to_string(r.iter);
    for (double m : r.miou) val += "\t" + fmt(m);
    val += "\n";
  }
  write_file(dir / "val_log.tsv", val);
  out << "wrote " << (dir / "final.slsckpt").string() << "\n";
  return kExitOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::vector<double>& widths,
             std::ostream& out) {
  const RunConfig cfg = resolve(c);
  SlimSegModel model = load_checkpoint(checkpoint);
  if (model.config().num_classes != cfg.data.synth.num_classes) {
    throw ConfigError("data.num_classes=" + std::to_string(cfg.data.synth.num_classes) +
                      " but the checkpoint has " + std::to_string(model.config().num_classes) +
                      " classes");
  }
  std::vector<std::size_t> idx;
  for (double w : widths) idx.push_back(width_index(model.widths(), w));
  if (idx.empty()) {
    for (std::size_t n = 0; n < model.widths().size(); ++n) idx.push_back(n);
  }
  const DatasetSplit split = split_indices(cfg.data.train_size, cfg.data.val_size, cfg.data.synth.seed);
  const std::vector<Sample> samples = validation_samples(cfg.data, split);
  if (samples.empty()) throw ConfigError("data.val_size must be >= 1 for eval");
  const EvalReport rep = evaluate_model(model, samples, idx);

  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  write_file(dir / "resolved.cfg", resolved_text(cfg));
  const std::string table = width_report(rep.rows);
  write_file(dir / "metrics.tsv", table);
  for (std::size_t j = 0; j < idx.size(); ++j) {
    write_file(dir / ("error_hist_" + model.widths().label(idx[j]) + ".tsv"),
               histogram_report(rep.histograms[j]));
  }
  out << table;
  if (rep.skipped_images) {
    out << rep.skipped_images << " image(s) without ground-truth boundaries left out of the histograms\n";
  }
  return kExitOk;
}

int cmd_infer(const Common& c, const std::string& checkpoint, const std::string& input,
              const std::vector<double>& widths, std::optional<double> diff_width,
              bool strip, std::ostream& out) {
  if (widths.size() != 1) throw ConfigError("infer needs exactly one --width");
  SlimSegModel model = load_checkpoint(checkpoint);
  if (strip) model.strip_boundary_head();
  const std::size_t n = width_index(model.widths(), widths[0]);
  std::optional<std::size_t> m;
  if (diff_width) m = width_index(model.widths(), *diff_width);

  const Sample sample = load_sample(input);
  if (!sample.image.defined()) throw ConfigError(input + " holds labels only; infer needs an image");
  if (sample.num_classes != model.config().num_classes) {
    throw ConfigError(input + " has " + std::to_string(sample.num_classes) +
                      " classes but the checkpoint has " + std::to_string(model.config().num_classes));
  }
  const Batch batch = make_batch({sample}, model.config().dtype);
  const LabelMap pred = predict(model, batch.images, n);

  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  const fs::path pred_path = dir / ("pred_" + model.widths().label(n) + ".slsd");
  save_labels(pred, static_cast<int>(model.config().num_classes), pred_path.string());
  out << "wrote " << pred_path.string() << "\n";

  if (m) {
    const LabelMap other = predict(model, batch.images, *m);
    const DiffMap d = diff_map(pred, other, sample.labels);
    std::string text = "disagree\t" + std::to_string(d.disagree) + "\nratio\t" + fmt(d.ratio) + "\n";
    for (std::int64_t y = 0; y < d.height; ++y) {
      for (std::int64_t x = 0; x < d.width; ++x) {
        text += (x ? "\t" : "") + std::to_string(d.cells[static_cast<std::size_t>(y * d.width + x)]);
      }
      text += "\n";
    }
    const fs::path diff_path =
        dir / ("diff_" + model.widths().label(n) + "_" + model.widths().label(*m) + ".tsv");
    write_file(diff_path, text);
    out << "disagreement ratio " << fmt(d.ratio) << " -> " << diff_path.string() << "\n";
  }
  return kExitOk;
}

std::pair<std::int64_t, std::int64_t> parse_size(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t a = 0, b = 0;
    const std::int64_t h = std::stoll(s.substr(0, x), &a);
    const std::int64_t w = std::stoll(s.substr(x + 1), &b);
    if (a != x || b != s.size() - x - 1 || h < 1 || w < 1) throw std::invalid_argument(s);
    return {h, w};
  } catch (const std::exception&) {
    throw ConfigError("--size expects HxW, got '" + s + "'");
  }
}

int cmd_profile(const Common& c, const std::string& checkpoint, const std::string& size,
                std::ostream& out) {
  const RunConfig cfg = resolve(c);
  SlimSegModel model = checkpoint.empty() ? SlimSegModel::build(cfg.model, cfg.model_seed)
                                          : load_checkpoint(checkpoint);
  std::int64_t h = cfg.data.synth.height, w = cfg.data.synth.width;
  if (!size.empty()) std::tie(h, w) = parse_size(size);
  const std::int64_t stride = model.config().stride();
  if (h % stride || w % stride) {
    throw ConfigError("profile size must be a multiple of " + std::to_string(stride));
  }
  const std::string text = profile_report(profile_model(model, h, w));
  out << text;
  if (!c.out_dir.empty()) {
    fs::create_directories(c.out_dir);
    write_file(fs::path(c.out_dir) / "profile.tsv", text);
    write_file(fs::path(c.out_dir) / "resolved.cfg", resolved_text(cfg));
  }
  return kExitOk;
}

}  // namespace

EvalReport evaluate_model(const SlimSegModel& model, const std::vector<Sample>& samples,
                          const std::vector<std::size_t>& width_indices, std::size_t batch_size) {
  const int k = static_cast<int>(model.config().num_classes);
  std::vector<ConfusionMatrix> cms(width_indices.size(), ConfusionMatrix(k));
  EvalReport rep;
  rep.histograms.resize(width_indices.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    const std::vector<Sample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                    samples.begin() + static_cast<std::ptrdiff_t>(end));
    const Batch batch = make_batch(chunk, model.config().dtype);
    std::vector<bool> has_boundary;
    for (std::int64_t b = 0; b < batch.labels.batch; ++b) {
      const LabelMap band = boundary_gt(image_plane(batch.labels, b), 1);
      const bool any = std::find(band.data.begin(), band.data.end(), 1) != band.data.end();
      has_boundary.push_back(any);
      rep.skipped_images += any ? 0 : 1;
    }
    for (std::size_t j = 0; j < width_indices.size(); ++j) {
      const LabelMap pred = predict(model, batch.images, width_indices[j]);
      update_confusion(cms[j], pred, batch.labels);
      for (std::int64_t b = 0; b < batch.labels.batch; ++b) {
        if (!has_boundary[static_cast<std::size_t>(b)]) continue;
        merge_histogram(rep.histograms[j],
                        error_distance_histogram(image_plane(pred, b), image_plane(batch.labels, b)));
      }
    }
  }
  const std::int64_t h = samples.empty() ? 0 : samples.front().height();
  const std::int64_t w = samples.empty() ? 0 : samples.front().width();
  for (std::size_t j = 0; j < width_indices.size(); ++j) {
    const std::size_t n = width_indices[j];
    const MiouResult r = miou(cms[j]);
    rep.rows.push_back({model.widths()[n], r.miou, r.iou, model.count_flops(n, h, w, false).total(),
                        model.count_params(n)});
    if (rep.histograms[j].edges.empty()) {
      const auto edges = default_distance_edges();
      rep.histograms[j] = {edges, std::vector<std::int64_t>(edges.size() - 1, 0)};
    }
  }
  return rep;
}

std::vector<ProfileRow> profile_model(const SlimSegModel& model, std::int64_t h, std::int64_t w) {
  std::vector<ProfileRow> rows;
  for (std::size_t n = 0; n < model.widths().size(); ++n) {
    const FlopBreakdown f = model.count_flops(n, h, w, false);
    const double total = f.total();
    rows.push_back({model.widths()[n], total, model.count_params(n), 100.0 * f.encoder / total,
                    100.0 * (f.ppm + f.decoder) / total});
  }
  return rows;
}

std::string profile_report(const std::vector<ProfileRow>& rows) {
  std::string s = "width\tflops\tparams\tencoder_pct\tdecoder_ppm_pct\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.2f\t%.0f\t%lld\t%.2f\t%.2f\n", r.width, r.flops,
                  static_cast<long long>(r.params), r.encoder_pct, r.decoder_ppm_pct);
    s += buf;
  }
  return s;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Width-switchable semantic segmentation: train, eval, infer, profile"};
  app.name("slimseg");
  app.require_subcommand(1);

  Common train_c, eval_c, infer_c, profile_c;
  std::string eval_ckpt, infer_ckpt, infer_input, profile_ckpt, profile_size;
  std::vector<double> eval_widths, infer_widths;
  std::optional<double> diff_width;
  bool strip = false;

  auto* train = app.add_subcommand("train", "train a slimmable model");
  add_common(train, train_c, true);

  auto* eval = app.add_subcommand("eval", "per-width metrics on the validation split");
  add_common(eval, eval_c, true);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--width", eval_widths, "width to evaluate (repeatable; default all)");

  auto* infer = app.add_subcommand("infer", "predict labels for one sample file");
  add_common(infer, infer_c, true);
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
  infer->add_option("--input", infer_input, "SLSD1 sample with an image")->required();
  infer->add_option("--width", infer_widths, "width to run")->required();
  infer->add_option("--diff-width", diff_width, "also write a difference map against this width");
  infer->add_flag("--strip-boundary", strip, "drop the boundary head before inference");

  auto* profile = app.add_subcommand("profile", "FLOPs and parameters per width");
  add_common(profile, profile_c, false);
  profile->add_option("--checkpoint", profile_ckpt, "checkpoint file (default: config model)");
  profile->add_option("--size", profile_size, "input size HxW (default data.height x data.width)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_c, out);
    if (*eval) return cmd_eval(eval_c, eval_ckpt, eval_widths, out);
    if (*infer) return cmd_infer(infer_c, infer_ckpt, infer_input, infer_widths, diff_width, strip, out);
    if (*profile) return cmd_profile(profile_c, profile_ckpt, profile_size, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace slimseg
