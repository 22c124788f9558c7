// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/cfg/env.h>
#include <spdlog/spdlog.h>

#include "hierfed/config.hpp"
#include "hierfed/engine.hpp"
#include "hierfed/errors.hpp"
#include "hierfed/logs.hpp"
#include "hierfed/sweep.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

int cmd_run(const std::string& config_path, const std::vector<std::string>& override_args,
            const std::string& out_dir) {
  std::vector<hierfed::Override> overrides;
  hierfed::ExperimentConfig config;
  try {
    for (const auto& o : override_args) overrides.push_back(hierfed::parse_override(o));
    config = hierfed::load_config(config_path, overrides);
  } catch (const hierfed::ConfigError& e) {
    fmt::print(stderr, "invalid config: {}\n", e.what());
    return kExitValidation;
  }
  try {
    const auto result = hierfed::run_experiment(config);
    hierfed::write_run(out_dir, config, result);
    const auto& s = result.summary;
    fmt::print("{} rounds={} accuracy={:.4f} sim_time={:.3f} traffic={}{}\n", hierfed::to_string(s.mode),
               s.rounds_completed, s.final_accuracy, s.sim_time, s.traffic,
               s.aborted ? fmt::format(" ABORTED ({})", s.abort_reason) : "");
    return s.aborted ? kExitRuntime : kExitOk;
  } catch (const hierfed::ConfigError& e) {
    fmt::print(stderr, "invalid config: {}\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    fmt::print(stderr, "run failed: {}\n", e.what());
    return kExitRuntime;
  }
}

int cmd_sweep(const std::string& spec_path, int jobs) {
  hierfed::SweepSpec spec;
  try {
    spec = hierfed::load_sweep_spec(spec_path);
    hierfed::load_config(spec.base_config.string());
  } catch (const hierfed::ConfigError& e) {
    fmt::print(stderr, "invalid sweep: {}\n", e.what());
    return kExitValidation;
  }
  fmt::print("sweep: {} runs -> {}\n", spec.num_runs(), spec.output_dir.string());
  try {
    const auto outcome = hierfed::run_sweep(spec, jobs);
    fmt::print("sweep: {} runs, {} failed, comparison at {}\n", outcome.rows.size(), outcome.failures,
               outcome.comparison_csv.string());
    return outcome.failures > 0 ? kExitRuntime : kExitOk;
  } catch (const std::exception& e) {
    fmt::print(stderr, "sweep failed: {}\n", e.what());
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  spdlog::cfg::load_env_levels();

  CLI::App app{"Hierarchical federated adapter fine-tuning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "run_out";
  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("--config", config_path, "Experiment config file")->required();
  run->add_option("--override", overrides, "KEY=VALUE, applied after the file")->take_all();
  run->add_option("--out", out_dir, "Output directory");

  std::string spec_path;
  int jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run a parameter sweep");
  sweep->add_option("--spec", spec_path, "Sweep spec file")->required();
  sweep->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  if (run->parsed()) return cmd_run(config_path, overrides, out_dir);
  return cmd_sweep(spec_path, jobs);
}
