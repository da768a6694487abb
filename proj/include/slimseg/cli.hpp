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

// train / eval / infer / profile commands. Exit codes: 0 ok, 2 config
// error, 3 runtime or numeric failure.

#include <ostream>
#include <string>
#include <vector>

#include "slimseg/evaluation.hpp"
#include "slimseg/segnet.hpp"

namespace slimseg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct EvalReport {
  std::vector<WidthMetrics> rows;
  std::vector<DistanceHistogram> histograms;  // one per row
  std::int64_t skipped_images = 0;            // no boundary pixel in gt
};

// Confusion matrices and error-distance histograms over `samples`. FLOPs are
// inference FLOPs (no boundary head) at the sample size.
EvalReport evaluate_model(const SlimSegModel& model, const std::vector<Sample>& samples,
                          const std::vector<std::size_t>& width_indices,
                          std::size_t batch_size = 8);

struct ProfileRow {
  double width = 0;
  double flops = 0;
  std::int64_t params = 0;
  double encoder_pct = 0;
  double decoder_ppm_pct = 0;
};

std::vector<ProfileRow> profile_model(const SlimSegModel& model, std::int64_t h, std::int64_t w);
std::string profile_report(const std::vector<ProfileRow>& rows);

}  // namespace slimseg
