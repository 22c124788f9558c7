// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hierfed/engine.hpp"

namespace hierfed {

inline constexpr int kSchemaVersion = 1;

using Override = std::pair<std::string, std::string>;

// Parses "key = value" lines; '#' starts a comment. schema_version, mode, n
// and H are required, either in the text or among the overrides, which take
// precedence over file values. Errors are ConfigError("<key>: <reason>").
ExperimentConfig parse_config(std::string_view text, const std::vector<Override>& overrides = {});
ExperimentConfig load_config(const std::string& path, const std::vector<Override>& overrides = {});

// Every key with its current value, one per line, preceded by a comment.
std::string serialize_config(const ExperimentConfig& config);

void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const ExperimentConfig& config, std::string_view key);
bool is_config_key(std::string_view key);
std::vector<std::string> config_keys();

// "K=V" -> {K, V}; throws ConfigError when '=' is missing.
Override parse_override(std::string_view text);

}  // namespace hierfed
