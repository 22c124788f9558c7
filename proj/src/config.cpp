// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include "hierfed/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "hierfed/errors.hpp"

namespace hierfed {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: cannot parse '{}' as a number", key, text));
  }
  return value;
}

template <typename T>
T parse_value(std::string_view key, std::string_view text);

template <>
int parse_value<int>(std::string_view key, std::string_view text) {
  return parse_number<int>(key, text);
}
template <>
double parse_value<double>(std::string_view key, std::string_view text) {
  return parse_number<double>(key, text);
}
template <>
std::uint64_t parse_value<std::uint64_t>(std::string_view key, std::string_view text) {
  return parse_number<std::uint64_t>(key, text);
}
template <>
bool parse_value<bool>(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, text));
}
template <>
Mode parse_value<Mode>(std::string_view key, std::string_view text) {
  try {
    return parse_mode(std::string(text));
  } catch (const ConfigError&) {
    throw ConfigError(
        fmt::format("{}: unknown mode '{}' (hierfedlora | flat_baseline | fixed_arm)", key, text));
  }
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = trim(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start));
    out.push_back(parse_value<T>(key, item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <>
std::vector<int> parse_value<std::vector<int>>(std::string_view key, std::string_view text) {
  return parse_list<int>(key, text);
}
template <>
std::vector<double> parse_value<std::vector<double>>(std::string_view key, std::string_view text) {
  return parse_list<double>(key, text);
}

std::string format_value(int v) { return fmt::format("{}", v); }
std::string format_value(double v) { return fmt::format("{}", v); }
std::string format_value(std::uint64_t v) { return fmt::format("{}", v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(Mode v) { return to_string(v); }
template <typename T>
std::string format_value(const std::vector<T>& v) {
  return fmt::format("{}", fmt::join(v, ","));
}

struct Field {
  std::string name;
  std::string doc;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

template <typename Access>
Field field(std::string name, std::string doc, Access access) {
  Field f;
  f.name = name;
  f.doc = std::move(doc);
  f.get = [access](const ExperimentConfig& c) {
    return format_value(access(const_cast<ExperimentConfig&>(c)));
  };
  f.set = [access, name](ExperimentConfig& c, std::string_view text) {
    auto& slot = access(c);
    slot = parse_value<std::remove_reference_t<decltype(slot)>>(name, text);
  };
  return f;
}

#define HIERFED_FIELD(key, doc, member) \
  field(key, doc, [](ExperimentConfig& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      HIERFED_FIELD("mode", "hierfedlora | flat_baseline | fixed_arm", mode),
      HIERFED_FIELD("n", "number of devices", num_devices),
      HIERFED_FIELD("K", "number of groups; 0 uses max(1, n/10)", num_groups),
      HIERFED_FIELD("H", "number of rounds", rounds),
      HIERFED_FIELD("T", "local steps per round", local_steps),
      HIERFED_FIELD("batch_size", "samples per local step", batch_size),
      HIERFED_FIELD("samples_per_device", "local training samples per device", samples_per_device),
      HIERFED_FIELD("eval_samples", "balanced held-out evaluation samples", eval_samples),
      HIERFED_FIELD("learning_rate", "SGD step size", learning_rate),
      HIERFED_FIELD("input_dim", "feature dimension", model.input_dim),
      HIERFED_FIELD("hidden_dim", "width of hidden layers", model.hidden_dim),
      HIERFED_FIELD("num_classes", "number of classes", model.num_classes),
      HIERFED_FIELD("num_layers", "number of layers L", model.num_layers),
      HIERFED_FIELD("rank", "adapter rank", model.rank),
      HIERFED_FIELD("class_noise", "feature noise around unit-norm class means", class_noise),
      HIERFED_FIELD("p", "non-IID level; Dirichlet concentration 1/(p C) per class, 0 is IID", non_iid_level),
      HIERFED_FIELD("lambda", "grouping weight of waiting time against label divergence", lambda),
      HIERFED_FIELD("discount", "bandit discount factor in (0, 1]", discount),
      HIERFED_FIELD("ema_alpha", "weight of the previous capacity estimate", ema_alpha),
      HIERFED_FIELD("regroup_period", "rounds between regrouping", regroup_period),
      HIERFED_FIELD("move_budget_per_device", "refinement candidates evaluated per device", move_budget_per_device),
      HIERFED_FIELD("frequency_grid", "intra-group aggregations per round, comma separated", frequency_grid),
      HIERFED_FIELD("depth_grid", "fine-tuning depths; empty uses L/4, L/2, 3L/4, L", depth_grid),
      HIERFED_FIELD("fixed_frequency", "frequency used in fixed_arm mode", fixed_frequency),
      HIERFED_FIELD("fixed_depth", "depth used in fixed_arm mode; 0 means L", fixed_depth),
      HIERFED_FIELD("forward_cost", "compute cost of the forward pass", cost.forward_cost),
      HIERFED_FIELD("backward_cost", "compute cost per tuned layer", cost.backward_cost),
      HIERFED_FIELD("payload_per_layer", "payload units per layer per sync (integer)", cost.payload_per_layer),
      HIERFED_FIELD("compute_budget", "compute budget; <= 0 uses forward_cost + 0.75 L backward_cost", cost.compute_budget),
      HIERFED_FIELD("comm_budget", "communication budget; <= 0 uses 3.75 L payload_per_layer", cost.comm_budget),
      HIERFED_FIELD("cost_weight", "weight of compute against communication cost", cost.cost_weight),
      HIERFED_FIELD("forward_fraction", "time share of the forward pass per step", timing.forward_fraction),
      HIERFED_FIELD("backprop_fraction", "time share per tuned layer per step", timing.backprop_fraction),
      HIERFED_FIELD("time_noise_sigma", "lognormal sigma of time measurements", timing.noise_sigma),
      HIERFED_FIELD("compute_time_min", "lower bound of per-step compute time", profiles.compute_min),
      HIERFED_FIELD("compute_time_max", "upper bound of per-step compute time", profiles.compute_max),
      HIERFED_FIELD("upload_time_min", "lower bound of per-layer upload time", profiles.upload_min),
      HIERFED_FIELD("upload_time_max", "upper bound of per-layer upload time", profiles.upload_max),
      HIERFED_FIELD("mode_min", "lower bound of the device mode multiplier", profiles.mode_min),
      HIERFED_FIELD("mode_max", "upper bound of the device mode multiplier", profiles.mode_max),
      HIERFED_FIELD("mode_period", "rounds between device mode changes", profiles.mode_period),
      HIERFED_FIELD("download_factor", "redistribution time as a fraction of the slowest upload", download_factor),
      HIERFED_FIELD("count_download", "count download traffic equal to upload", count_download),
      HIERFED_FIELD("accuracy_targets", "accuracies reported in the time-to-accuracy table", accuracy_targets),
      HIERFED_FIELD("seed", "base seed", seed),
      HIERFED_FIELD("seed_data", "data stream seed; 0 derives from seed", seed_data),
      HIERFED_FIELD("seed_model", "model init stream seed; 0 derives from seed", seed_model),
      HIERFED_FIELD("seed_noise", "device profile and timing noise seed; 0 derives from seed", seed_noise),
      HIERFED_FIELD("seed_schedule", "batch order seed; 0 derives from seed", seed_schedule),
      HIERFED_FIELD("seed_grouping", "k-means and refinement seed; 0 derives from seed", seed_grouping),
      HIERFED_FIELD("workers", "threads for local training; results do not depend on it", workers),
  };
  return table;
}

#undef HIERFED_FIELD

const Field* find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.name == key) return &f;
  }
  return nullptr;
}

void apply(ExperimentConfig& config, std::string_view key, std::string_view value) {
  if (key == "schema_version") {
    const int v = parse_value<int>(key, value);
    if (v != kSchemaVersion) {
      throw ConfigError(fmt::format("schema_version: unsupported version {} (expected {})", v, kSchemaVersion));
    }
    return;
  }
  set_config_value(config, key, value);
}

}  // namespace

void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError(fmt::format("{}: unknown key", key));
  f->set(config, trim(value));
}

std::string get_config_value(const ExperimentConfig& config, std::string_view key) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError(fmt::format("{}: unknown key", key));
  return f->get(config);
}

bool is_config_key(std::string_view key) { return find_field(key) != nullptr; }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.name);
  return out;
}

Override parse_override(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError(fmt::format("override '{}': expected KEY=VALUE", text));
  }
  return {std::string(trim(text.substr(0, eq))), std::string(trim(text.substr(eq + 1)))};
}

ExperimentConfig parse_config(std::string_view text, const std::vector<Override>& overrides) {
  ExperimentConfig config;
  std::set<std::string, std::less<>> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(fmt::format("line {}: expected 'key = value'", line_no));
    }
    const auto key = trim(view.substr(0, eq));
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError(fmt::format("{}: duplicate key on line {}", key, line_no));
    }
    apply(config, key, trim(view.substr(eq + 1)));
  }
  for (const auto& [key, value] : overrides) {
    apply(config, key, value);
    seen.insert(key);
  }
  for (const char* required : {"schema_version", "mode", "n", "H"}) {
    if (!seen.contains(std::string_view(required))) {
      throw ConfigError(fmt::format("{}: required field is missing", required));
    }
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::string& path, const std::vector<Override>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("config: cannot open '{}'", path));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), overrides);
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out = fmt::format("schema_version = {}\n", kSchemaVersion);
  for (const auto& f : fields()) {
    out += fmt::format("# {}\n{} = {}\n", f.doc, f.name, f.get(config));
  }
  return out;
}

}  // namespace hierfed
