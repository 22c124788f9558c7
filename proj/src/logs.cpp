// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include "hierfed/logs.hpp"

#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "hierfed/config.hpp"
#include "hierfed/errors.hpp"

namespace hierfed {
namespace {

std::string num(double v) { return fmt::format("{}", v); }

class CsvRow {
 public:
  explicit CsvRow(const std::vector<std::string>& columns) : columns_(columns), cells_(columns.size()) {}

  template <typename T>
  CsvRow& set(std::string_view column, const T& value) {
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      if (columns_[i] == column) {
        if constexpr (std::is_floating_point_v<T>) {
          cells_[i] = num(value);
        } else {
          cells_[i] = fmt::format("{}", value);
        }
        return *this;
      }
    }
    throw ProtocolError(fmt::format("unknown round log column '{}'", column));
  }

  std::string str() const { return fmt::format("{}\n", fmt::join(cells_, ",")); }

 private:
  const std::vector<std::string>& columns_;
  std::vector<std::string> cells_;
};

}  // namespace

const std::vector<std::string>& round_log_columns() {
  static const std::vector<std::string> columns = {
      "row_type",   "round",         "group",       "members",       "frequency",    "depth",
      "fallback",   "round_time",    "waiting",     "loss_start",    "loss_end",     "loss_drop",
      "kl",         "utility",       "compute_cost", "resource_cost", "traffic",     "raw_reward",
      "reward",     "ucb_1",         "ucb_2",       "ucb_3",         "sim_time",     "eval_loss",
      "eval_accuracy", "device",     "compute_time", "upload_time",  "true_compute", "est_compute",
      "true_upload", "est_upload",
  };
  return columns;
}

std::string round_log_csv(const std::vector<RoundRecord>& rounds) {
  const auto& columns = round_log_columns();
  std::string out = fmt::format("{}\n", fmt::join(columns, ","));
  for (const auto& r : rounds) {
    for (const auto& g : r.groups) {
      CsvRow row(columns);
      row.set("row_type", "group").set("round", r.round).set("group", g.group).set("members", g.members);
      row.set("frequency", g.arm.frequency).set("depth", g.arm.depth).set("fallback", g.fallback ? 1 : 0);
      row.set("round_time", g.round_time).set("waiting", g.waiting);
      row.set("loss_start", g.loss_start).set("loss_end", g.loss_end).set("loss_drop", g.loss_drop);
      row.set("kl", g.kl).set("utility", g.utility);
      row.set("compute_cost", g.compute_cost).set("resource_cost", g.resource_cost);
      row.set("traffic", g.traffic).set("raw_reward", g.raw_reward).set("reward", g.reward);
      for (std::size_t i = 0; i < g.top_ucb.size() && i < 3; ++i) {
        row.set(fmt::format("ucb_{}", i + 1), g.top_ucb[i]);
      }
      out += row.str();
    }
    CsvRow global(columns);
    global.set("row_type", "global").set("round", r.round).set("round_time", r.round_time);
    global.set("traffic", r.traffic).set("sim_time", r.sim_time);
    global.set("eval_loss", r.eval_loss).set("eval_accuracy", r.eval_accuracy);
    out += global.str();
    for (const auto& d : r.devices) {
      CsvRow row(columns);
      row.set("row_type", "device").set("round", r.round).set("group", d.group).set("device", d.device);
      row.set("compute_time", d.compute_time).set("upload_time", d.upload_time);
      row.set("true_compute", d.true_compute).set("est_compute", d.est_compute);
      row.set("true_upload", d.true_upload).set("est_upload", d.est_upload);
      out += row.str();
    }
  }
  return out;
}

std::string events_jsonl(const std::vector<Event>& events) {
  std::string out;
  for (const auto& e : events) {
    nlohmann::ordered_json j;
    j["kind"] = e.kind;
    j["round"] = e.round;
    if (e.group >= 0) j["group"] = e.group;
    if (e.segment >= 0) {
      j["segment"] = e.segment;
      j["steps"] = e.steps;
    }
    j["start"] = e.start;
    j["end"] = e.end;
    if (e.kind == "group_sync") {
      j["payload_up"] = e.payload_up;
      j["payload_down"] = e.payload_down;
    }
    if (!e.layer_contributors.empty()) j["layer_contributors"] = e.layer_contributors;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string summary_json(const ExperimentSummary& s) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(s.mode);
  j["rounds_completed"] = s.rounds_completed;
  j["final_accuracy"] = s.final_accuracy;
  j["final_loss"] = s.final_loss;
  j["best_accuracy"] = s.best_accuracy;
  j["sim_time"] = s.sim_time;
  j["traffic"] = s.traffic;
  j["aborted"] = s.aborted;
  if (s.aborted) j["abort_reason"] = s.abort_reason;
  auto table = nlohmann::ordered_json::array();
  for (const auto& t : s.time_to_accuracy) {
    nlohmann::ordered_json row;
    row["target"] = t.target;
    row["time"] = t.time ? nlohmann::ordered_json(*t.time) : nlohmann::ordered_json(nullptr);
    row["round"] = t.round ? nlohmann::ordered_json(*t.round) : nlohmann::ordered_json(nullptr);
    table.push_back(std::move(row));
  }
  j["time_to_accuracy"] = std::move(table);
  return j.dump(2) + "\n";
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", tmp.string()));
    out << content;
    out.flush();
    if (!out) throw std::runtime_error(fmt::format("write failed for '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

RunFiles run_files(const std::filesystem::path& dir, bool partial) {
  const std::string suffix = partial ? ".partial" : "";
  return {dir / ("config.txt" + suffix), dir / ("rounds.csv" + suffix),
          dir / ("events.jsonl" + suffix), dir / ("summary.json" + suffix)};
}

RunFiles write_run(const std::filesystem::path& dir, const ExperimentConfig& config,
                   const ExperimentResult& result) {
  std::filesystem::create_directories(dir);
  const auto files = run_files(dir, result.summary.aborted);
  write_atomic(files.config, serialize_config(config));
  write_atomic(files.rounds, round_log_csv(result.rounds));
  write_atomic(files.events, events_jsonl(result.events));
  write_atomic(files.summary, summary_json(result.summary));
  return files;
}

}  // namespace hierfed
