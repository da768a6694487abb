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

#include "slimseg/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace slimseg {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("bad value '" + value + "' for " + key + " (expected " + want + ")");
}

template <typename T>
T parse_number(const std::string& key, const std::string& text, const char* want) {
  const std::string v = trim(text);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, text, want);
  return out;
}

std::int64_t parse_int(const std::string& k, const std::string& v) {
  return parse_number<std::int64_t>(k, v, "an integer");
}
std::uint64_t parse_u64(const std::string& k, const std::string& v) {
  return parse_number<std::uint64_t>(k, v, "a non-negative integer");
}
double parse_double(const std::string& k, const std::string& v) {
  return parse_number<double>(k, v, "a number");
}

bool parse_bool(const std::string& k, const std::string& text) {
  const std::string v = trim(text);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(k, text, "true or false");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& k, const std::string& text, F one) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(one(k, item));
  if (out.empty()) bad_value(k, text, "a comma-separated list");
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T, typename F>
std::string fmt_list(const std::vector<T>& xs, F one) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + one(xs[i]);
  return s;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }
std::string fmt_int(std::int64_t v) { return std::to_string(v); }

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define INT_FIELD(KEY, EXPR) \
  Field{KEY, [](RunConfig& c, const std::string& k, const std::string& v) { EXPR = parse_int(k, v); }, \
        [](const RunConfig& c) { return fmt_int(static_cast<std::int64_t>(EXPR)); }}
#define U64_FIELD(KEY, EXPR) \
  Field{KEY, [](RunConfig& c, const std::string& k, const std::string& v) { EXPR = parse_u64(k, v); }, \
        [](const RunConfig& c) { return std::to_string(EXPR); }}
#define DOUBLE_FIELD(KEY, EXPR) \
  Field{KEY, [](RunConfig& c, const std::string& k, const std::string& v) { EXPR = parse_double(k, v); }, \
        [](const RunConfig& c) { return fmt_double(EXPR); }}
#define BOOL_FIELD(KEY, EXPR) \
  Field{KEY, [](RunConfig& c, const std::string& k, const std::string& v) { EXPR = parse_bool(k, v); }, \
        [](const RunConfig& c) { return fmt_bool(EXPR); }}

int to_int(std::int64_t v, const char* key) {
  if (v < -1000000000 || v > 1000000000) throw ConfigError(std::string(key) + " out of range");
  return static_cast<int>(v);
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"model.stage_channels",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.model.stage_channels = parse_list<std::int64_t>(k, v, parse_int);
            },
            [](const RunConfig& c) { return fmt_list(c.model.stage_channels, fmt_int); }},
      Field{"model.ppm_bins",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.model.ppm_bins = parse_list<std::int64_t>(k, v, parse_int);
            },
            [](const RunConfig& c) { return fmt_list(c.model.ppm_bins, fmt_int); }},
      INT_FIELD("model.decoder_channels", c.model.decoder_channels),
      Field{"model.dtype",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              const std::string t = trim(v);
              if (t == "f32") c.model.dtype = DType::kFloat32;
              else if (t == "f64") c.model.dtype = DType::kFloat64;
              else bad_value(k, v, "f32 or f64");
            },
            [](const RunConfig& c) { return std::string(c.model.dtype == DType::kFloat32 ? "f32" : "f64"); }},
      U64_FIELD("model.seed", c.model_seed),

      Field{"train.widths",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.train.widths = parse_list<double>(k, v, parse_double);
            },
            [](const RunConfig& c) { return fmt_list(c.train.widths, fmt_double); }},
      INT_FIELD("train.iterations", c.train.iterations),
      INT_FIELD("train.batch_size", c.train.batch_size),
      DOUBLE_FIELD("train.base_lr", c.train.base_lr),
      DOUBLE_FIELD("train.power", c.train.power),
      DOUBLE_FIELD("train.momentum", c.train.momentum),
      DOUBLE_FIELD("train.weight_decay", c.train.weight_decay),
      Field{"train.teacher_strategy",
            [](RunConfig& c, const std::string&, const std::string& v) {
              try {
                c.train.teacher_strategy = parse_teacher_strategy(trim(v));
              } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
              }
            },
            [](const RunConfig& c) { return strategy_name(c.train.teacher_strategy); }},
      U64_FIELD("train.seed", c.train.seed),
      INT_FIELD("train.val_every", c.val_every),
      INT_FIELD("train.checkpoint_every", c.checkpoint_every),

      DOUBLE_FIELD("loss.lambda1", c.train.loss.lambda1),
      DOUBLE_FIELD("loss.lambda2", c.train.loss.lambda2),
      DOUBLE_FIELD("loss.tau", c.train.loss.tau),
      Field{"loss.boundary_radius",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.train.loss.boundary_radius = to_int(parse_int(k, v), "loss.boundary_radius");
            },
            [](const RunConfig& c) { return fmt_int(c.train.loss.boundary_radius); }},
      BOOL_FIELD("loss.ohem", c.ohem),
      DOUBLE_FIELD("loss.ohem_threshold", c.ohem_params.keep_threshold),
      DOUBLE_FIELD("loss.ohem_min_kept", c.ohem_params.min_kept_fraction),

      Field{"data.num_classes",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.data.synth.num_classes = to_int(parse_int(k, v), "data.num_classes");
            },
            [](const RunConfig& c) { return fmt_int(c.data.synth.num_classes); }},
      INT_FIELD("data.height", c.data.synth.height),
      INT_FIELD("data.width", c.data.synth.width),
      Field{"data.min_shapes",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.data.synth.min_shapes = to_int(parse_int(k, v), "data.min_shapes");
            },
            [](const RunConfig& c) { return fmt_int(c.data.synth.min_shapes); }},
      Field{"data.max_shapes",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.data.synth.max_shapes = to_int(parse_int(k, v), "data.max_shapes");
            },
            [](const RunConfig& c) { return fmt_int(c.data.synth.max_shapes); }},
      DOUBLE_FIELD("data.noise_std", c.data.synth.noise_std),
      U64_FIELD("data.seed", c.data.synth.seed),
      U64_FIELD("data.train_size", c.data.train_size),
      U64_FIELD("data.val_size", c.data.val_size),
      BOOL_FIELD("data.augment", c.data.augment),
      DOUBLE_FIELD("data.min_scale", c.data.augment_range.min_scale),
      DOUBLE_FIELD("data.max_scale", c.data.augment_range.max_scale),
  };
  return table;
}

#undef INT_FIELD
#undef U64_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::finalize() {
  model.widths = train.widths;
  model.num_classes = data.synth.num_classes;
  train.loss.ohem = ohem ? std::optional<OhemConfig>(ohem_params) : std::nullopt;
  try {
    model.validate();
    train.validate();
    data.synth.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (data.train_size == 0) throw ConfigError("data.train_size must be >= 1");
  if (!(data.augment_range.min_scale > 0 &&
        data.augment_range.min_scale <= data.augment_range.max_scale)) {
    throw ConfigError("data.min_scale must be > 0 and <= data.max_scale");
  }
  if (val_every < 0 || checkpoint_every < 0) {
    throw ConfigError("train.val_every and train.checkpoint_every must be >= 0");
  }
  const std::int64_t stride = model.stride();
  if (data.synth.height % stride != 0 || data.synth.width % stride != 0) {
    throw ConfigError("data.height and data.width must be multiples of " + std::to_string(stride));
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  field(trim(key)).set(cfg, trim(key), value);
}

std::string get_setting(const RunConfig& cfg, const std::string& key) { return field(key).get(cfg); }

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    try {
      apply_setting(cfg, t.substr(0, eq), t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

RunConfig load_run_config(const std::optional<std::string>& path,
                          const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (path) {
    std::ifstream f(*path, std::ios::binary);
    if (!f) throw ConfigError("cannot read config file " + *path);
    std::stringstream ss;
    ss << f.rdbuf();
    apply_config_text(cfg, ss.str(), *path);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    apply_setting(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
  cfg.finalize();
  return cfg;
}

std::string resolved_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(cfg) + "\n";
  return out;
}

}  // namespace slimseg
