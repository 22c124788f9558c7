// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hierfed/config.hpp"

namespace hierfed {

struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

struct SweepSpec {
  std::filesystem::path base_config;
  std::vector<SweepAxis> axes;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir{"sweep_out"};

  std::size_t num_runs() const;
};

// Format:
//   base = path/to/config.txt      (relative to the spec file)
//   out = path/to/output           (relative to the spec file)
//   seeds = 1,2,3
//   axis.<config key> = v1,v2,...
SweepSpec parse_sweep_spec(std::string_view text, const std::filesystem::path& spec_dir = {});
SweepSpec load_sweep_spec(const std::filesystem::path& path);

struct SweepRun {
  std::vector<std::string> axis_values;  // aligned with SweepSpec::axes
  std::uint64_t seed = 1;
  std::filesystem::path dir;
};

// Cartesian product in axis order, seeds innermost.
std::vector<SweepRun> expand_sweep(const SweepSpec& spec);

struct SweepRowResult {
  SweepRun run;
  std::string status;  // ok | skipped | aborted | failed
  std::optional<ExperimentSummary> summary;
  std::string error;
};

struct SweepOutcome {
  std::vector<SweepRowResult> rows;
  int failures = 0;
  std::filesystem::path comparison_csv;
};

// Runs every combination not already finished (a summary.json in its
// directory), `jobs` at a time, then writes comparison.csv.
SweepOutcome run_sweep(const SweepSpec& spec, int jobs);

std::string comparison_csv(const SweepSpec& spec, std::vector<SweepRowResult> rows);

ExperimentSummary read_summary(const std::filesystem::path& path);

}  // namespace hierfed
