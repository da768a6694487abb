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

// Flat dotted key=value run configuration shared by every CLI command.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "slimseg/training.hpp"

namespace slimseg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  SegNetConfig model;
  std::uint64_t model_seed = 0;
  TrainConfig train;
  DataConfig data;
  bool ohem = true;
  OhemConfig ohem_params;
  std::int64_t val_every = 200;
  std::int64_t checkpoint_every = 0;

  // Copies shared settings across sections (widths, class count, OHEM) and
  // validates; throws ConfigError.
  void finalize();
};

// Every accepted key in canonical order.
std::vector<std::string> config_keys();

// Throws ConfigError for an unknown key or a malformed value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_setting(const RunConfig& cfg, const std::string& key);

// Lines of key=value; '#' starts a comment line; blank lines are skipped.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source);

// Defaults, then the file (if any), then "key=value" overrides in order.
RunConfig load_run_config(const std::optional<std::string>& path,
                          const std::vector<std::string>& overrides);

// Every key with its resolved value; parsing it back reproduces cfg exactly.
std::string resolved_text(const RunConfig& cfg);

}  // namespace slimseg
