// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hierfed/engine.hpp"

namespace hierfed {

// Column order of the round log. Rows carry a row_type of "group",
// "global" or "device"; columns that do not apply to a row are empty.
const std::vector<std::string>& round_log_columns();

std::string round_log_csv(const std::vector<RoundRecord>& rounds);
std::string events_jsonl(const std::vector<Event>& events);
std::string summary_json(const ExperimentSummary& summary);

// Writes to a sibling temporary file, then renames over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);

struct RunFiles {
  std::filesystem::path config;   // config.txt
  std::filesystem::path rounds;   // rounds.csv
  std::filesystem::path events;   // events.jsonl
  std::filesystem::path summary;  // summary.json
};

// Names used inside `dir`; an aborted run appends ".partial" to each.
RunFiles run_files(const std::filesystem::path& dir, bool partial);

RunFiles write_run(const std::filesystem::path& dir, const ExperimentConfig& config,
                   const ExperimentResult& result);

}  // namespace hierfed
