// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hierfed/datagen.hpp"
#include "hierfed/grouping.hpp"
#include "hierfed/model.hpp"
#include "hierfed/monitor.hpp"
#include "hierfed/scheduler.hpp"

namespace hierfed {

enum class Mode { HierFedLoRA, FlatBaseline, FixedArm };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);  // throws ConfigError

struct ExperimentConfig {
  Mode mode = Mode::HierFedLoRA;
  int num_devices = 100;       // n
  int num_groups = 0;          // K; 0 means max(1, n/10)
  int rounds = 50;             // H
  int local_steps = 20;        // T
  int batch_size = 8;
  int samples_per_device = 160;
  int eval_samples = 2000;
  double learning_rate = 0.1;

  ModelShape model;
  double class_noise = 0.35;
  double non_iid_level = 10.0;  // p

  double lambda = 0.5;
  double discount = 0.9;        // phi
  double ema_alpha = 0.8;
  int regroup_period = 20;
  int move_budget_per_device = 10;

  std::vector<int> frequency_grid{1, 2, 5, 10};
  std::vector<int> depth_grid;  // empty: {L/4, L/2, 3L/4, L}
  int fixed_frequency = 1;
  int fixed_depth = 0;          // 0 means L

  CostModel cost;               // budgets <= 0 are derived, see effective_cost()
  TimingModel timing;
  ProfileOptions profiles;
  double download_factor = 0.1;  // redistribution time / slowest upload
  bool count_download = true;    // traffic counts both directions

  std::vector<double> accuracy_targets;

  std::uint64_t seed = 1;
  // Per-stream overrides; 0 derives the stream from `seed`.
  std::uint64_t seed_data = 0;
  std::uint64_t seed_model = 0;
  std::uint64_t seed_noise = 0;
  std::uint64_t seed_schedule = 0;
  std::uint64_t seed_grouping = 0;

  int workers = 1;

  int effective_groups() const;
  std::vector<int> effective_depth_grid() const;
  int effective_fixed_depth() const;
  // Fills budgets left at <= 0: Pi = u_hat + 0.75 L u, Omega = 3.75 L b.
  CostModel effective_cost() const;
  std::uint64_t stream_seed(std::string_view stream) const;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct GroupRoundStats {
  int group = 0;
  int members = 0;
  ArmConfig arm;
  bool fallback = false;
  double round_time = 0.0;  // t_k, sum over segments
  double waiting = 0.0;     // W_k from measured member times
  double loss_start = 0.0;
  double loss_end = 0.0;
  double loss_drop = 0.0;   // Delta f_k
  double kl = 0.0;
  double utility = 0.0;
  double compute_cost = 0.0;  // u_hat + d u per device
  double resource_cost = 0.0; // normalized R_bar
  long long traffic = 0;      // payload units this round
  double raw_reward = 0.0;
  double reward = 0.0;
  std::vector<double> top_ucb;
};

struct DeviceRoundStats {
  int device = 0;
  int group = 0;
  double compute_time = 0.0;  // measured this round
  double upload_time = 0.0;
  double true_compute = 0.0;  // mu* x mode
  double true_upload = 0.0;   // beta* x mode
  double est_compute = 0.0;   // estimate after this round's observation
  double est_upload = 0.0;
};

struct RoundRecord {
  int round = 0;
  std::vector<GroupRoundStats> groups;
  std::vector<DeviceRoundStats> devices;
  double round_time = 0.0;
  double sim_time = 0.0;
  long long traffic = 0;  // cumulative
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
};

struct Event {
  std::string kind;  // group_sync | global_aggregation
  int round = 0;
  int group = -1;
  int segment = -1;
  int steps = 0;
  double start = 0.0;
  double end = 0.0;
  long long payload_up = 0;
  long long payload_down = 0;
  std::vector<int> layer_contributors;  // n_l per layer, global events only
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate(const LayeredAdapterModel& model, const Batch& eval_set);

// Layer-wise average: layer l takes the mean over devices whose depth
// covers it; untouched layers keep `global`'s values. Summation is in
// ascending device order.
void layerwise_aggregate(LayeredAdapterModel& global,
                         std::span<const LayeredAdapterModel* const> device_models,
                         std::span<const int> device_depths, std::vector<int>* contributors = nullptr);

// Owns the data, devices, clocks and global model of one experiment.
class Simulation {
 public:
  explicit Simulation(ExperimentConfig config);

  const ExperimentConfig& config() const { return config_; }
  const LayeredAdapterModel& global_model() const { return global_; }
  LayeredAdapterModel& mutable_global_model() { return global_; }
  std::span<const DeviceDataset> devices() const { return devices_; }
  std::span<const DeviceProfile> profiles() const { return profiles_; }
  const StatusMonitor& monitor() const { return monitor_; }
  StatusMonitor& monitor() { return monitor_; }
  const Batch& eval_set() const { return eval_set_; }
  const TaskGenerator& task() const { return task_; }
  const std::vector<Event>& events() const { return events_; }
  double sim_time() const { return sim_time_; }
  long long traffic() const { return traffic_; }

  // Sample order of `device` in 1-based `round`: a seeded permutation of its
  // local data. Step tau uses positions [tau*B, tau*B + B) modulo the size.
  std::vector<int> batch_order(int device, int round) const;
  static Batch batch_for_step(const Batch& data, std::span<const int> order, int step,
                              int batch_size);

  // Per-device predicted round time t = mu + beta under (frequency, depth).
  std::vector<double> predicted_times(const ArmConfig& arm) const;

  // T local steps per device with intra-group averaging every floor(T/rho)
  // steps, then layer-wise global aggregation. Advances the clock and
  // traffic counter. Eval fields of the record are left empty.
  RoundRecord run_round(int round, const GroupPlan& plan, std::span<const ArmConfig> arms);

 private:
  ExperimentConfig config_;
  TaskGenerator task_;
  std::vector<DeviceDataset> devices_;
  std::vector<DeviceProfile> profiles_;
  Batch eval_set_;
  LayeredAdapterModel global_;
  StatusMonitor monitor_;
  std::vector<Event> events_;
  double sim_time_ = 0.0;
  long long traffic_ = 0;
};

struct TimeToAccuracy {
  double target = 0.0;
  std::optional<double> time;
  std::optional<int> round;
};

struct ExperimentSummary {
  Mode mode = Mode::HierFedLoRA;
  int rounds_completed = 0;
  double final_accuracy = 0.0;
  double final_loss = 0.0;
  double best_accuracy = 0.0;
  double sim_time = 0.0;
  long long traffic = 0;
  bool aborted = false;
  std::string abort_reason;
  std::vector<TimeToAccuracy> time_to_accuracy;
};

struct ExperimentResult {
  std::vector<RoundRecord> rounds;
  std::vector<Event> events;
  ExperimentSummary summary;
};

// First simulated time at which eval accuracy reaches `target`.
TimeToAccuracy time_to_accuracy(std::span<const RoundRecord> rounds, double target);

ExperimentResult run_experiment(const ExperimentConfig& config);

}  // namespace hierfed
