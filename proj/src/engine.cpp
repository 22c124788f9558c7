// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include "hierfed/engine.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hierfed/errors.hpp"
#include "hierfed/rng.hpp"

namespace hierfed {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::HierFedLoRA: return "hierfedlora";
    case Mode::FlatBaseline: return "flat_baseline";
    case Mode::FixedArm: return "fixed_arm";
  }
  return "unknown";
}

Mode parse_mode(const std::string& text) {
  if (text == "hierfedlora") return Mode::HierFedLoRA;
  if (text == "flat_baseline") return Mode::FlatBaseline;
  if (text == "fixed_arm") return Mode::FixedArm;
  throw ConfigError(fmt::format("mode: unknown value '{}' (hierfedlora | flat_baseline | fixed_arm)", text));
}

int ExperimentConfig::effective_groups() const {
  return num_groups > 0 ? num_groups : std::max(1, num_devices / 10);
}

std::vector<int> ExperimentConfig::effective_depth_grid() const {
  return depth_grid.empty() ? default_depth_grid(model.num_layers) : depth_grid;
}

int ExperimentConfig::effective_fixed_depth() const {
  return fixed_depth > 0 ? fixed_depth : model.num_layers;
}

CostModel ExperimentConfig::effective_cost() const {
  CostModel c = cost;
  const int L = model.num_layers;
  if (c.compute_budget <= 0.0) c.compute_budget = c.forward_cost + 0.75 * L * c.backward_cost;
  if (c.comm_budget <= 0.0) c.comm_budget = 3.75 * L * c.payload_per_layer;
  return c;
}

std::uint64_t ExperimentConfig::stream_seed(std::string_view stream) const {
  std::uint64_t override_value = 0;
  if (stream == "data") override_value = seed_data;
  else if (stream == "model") override_value = seed_model;
  else if (stream == "noise") override_value = seed_noise;
  else if (stream == "schedule") override_value = seed_schedule;
  else if (stream == "grouping") override_value = seed_grouping;
  return override_value != 0 ? override_value : derive_seed(seed, stream);
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const char* field, const std::string& why) {
    if (!ok) throw ConfigError(fmt::format("{}: {}", field, why));
  };
  require(num_devices >= 1, "n", "must be at least 1");
  require(num_groups >= 0, "K", "must be nonnegative (0 derives n/10)");
  require(rounds >= 1, "H", "must be at least 1");
  require(local_steps >= 1, "T", "must be at least 1");
  require(batch_size >= 1, "batch_size", "must be at least 1");
  require(samples_per_device >= 1, "samples_per_device", "must be at least 1");
  require(eval_samples >= 1, "eval_samples", "must be at least 1");
  require(learning_rate > 0.0, "learning_rate", "must be positive");
  require(model.num_layers >= 1, "num_layers", "must be at least 1");
  require(model.input_dim >= 1, "input_dim", "must be at least 1");
  require(model.hidden_dim >= 1, "hidden_dim", "must be at least 1");
  require(model.num_classes >= 2, "num_classes", "must be at least 2");
  require(model.rank >= 1, "rank", "must be at least 1");
  require(class_noise >= 0.0, "class_noise", "must be nonnegative");
  require(non_iid_level >= 0.0, "non_iid_level", "must be nonnegative");
  require(lambda >= 0.0 && lambda <= 1.0, "lambda", "must lie in [0, 1]");
  require(discount > 0.0 && discount <= 1.0, "discount", "must lie in (0, 1]");
  require(ema_alpha >= 0.0 && ema_alpha <= 1.0, "ema_alpha", "must lie in [0, 1]");
  require(regroup_period >= 1, "regroup_period", "must be at least 1");
  require(move_budget_per_device >= 0, "move_budget_per_device", "must be nonnegative");
  require(!frequency_grid.empty(), "frequency_grid", "must not be empty");
  for (int rho : frequency_grid) {
    require(rho >= 1, "frequency_grid", "entries must be at least 1");
    require(rho <= local_steps, "frequency_grid", "entries must not exceed T");
  }
  for (int d : effective_depth_grid()) {
    require(d >= 1 && d <= model.num_layers, "depth_grid", "entries must lie in [1, L]");
  }
  require(fixed_frequency >= 1 && fixed_frequency <= local_steps, "fixed_frequency",
          "must lie in [1, T]");
  require(effective_fixed_depth() >= 1 && effective_fixed_depth() <= model.num_layers,
          "fixed_depth", "must lie in [1, L] (0 means L)");
  require(cost.forward_cost > 0.0, "forward_cost", "must be positive");
  require(cost.backward_cost > 0.0, "backward_cost", "must be positive");
  require(cost.payload_per_layer >= 1.0 && std::floor(cost.payload_per_layer) == cost.payload_per_layer,
          "payload_per_layer", "must be a positive integer");
  require(cost.cost_weight >= 0.0 && cost.cost_weight <= 1.0, "cost_weight", "must lie in [0, 1]");
  require(timing.forward_fraction > 0.0, "forward_fraction", "must be positive");
  require(timing.backprop_fraction > 0.0, "backprop_fraction", "must be positive");
  require(timing.noise_sigma >= 0.0, "time_noise_sigma", "must be nonnegative");
  require(profiles.compute_min > 0.0 && profiles.compute_max >= profiles.compute_min,
          "compute_time_min", "range must be positive and ordered");
  require(profiles.upload_min > 0.0 && profiles.upload_max >= profiles.upload_min,
          "upload_time_min", "range must be positive and ordered");
  require(profiles.mode_min > 0.0 && profiles.mode_max >= profiles.mode_min, "mode_min",
          "range must be positive and ordered");
  require(profiles.mode_period >= 1, "mode_period", "must be at least 1");
  require(download_factor >= 0.0, "download_factor", "must be nonnegative");
  require(workers >= 1, "workers", "must be at least 1");
  for (double t : accuracy_targets) {
    require(t >= 0.0 && t <= 1.0, "accuracy_targets", "entries must lie in [0, 1]");
  }
}

EvalResult evaluate(const LayeredAdapterModel& model, const Batch& eval_set) {
  const auto out = forward(model, eval_set);
  int correct = 0;
  for (int i = 0; i < eval_set.size(); ++i) {
    Eigen::Index arg = 0;
    out.logits.row(i).maxCoeff(&arg);
    if (static_cast<int>(arg) == eval_set.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return {out.loss, static_cast<double>(correct) / eval_set.size()};
}

void layerwise_aggregate(LayeredAdapterModel& global,
                         std::span<const LayeredAdapterModel* const> device_models,
                         std::span<const int> device_depths, std::vector<int>* contributors) {
  if (device_models.size() != device_depths.size()) {
    throw ProtocolError("device model and depth lists differ in length");
  }
  const int L = global.num_layers();
  if (contributors) contributors->assign(static_cast<std::size_t>(L), 0);
  for (int l = 0; l < L; ++l) {
    auto& target = global.layer(l);
    Matrix down = Matrix::Zero(target.adapter_down.rows(), target.adapter_down.cols());
    Matrix up = Matrix::Zero(target.adapter_up.rows(), target.adapter_up.cols());
    int count = 0;
    for (std::size_t i = 0; i < device_models.size(); ++i) {
      if (device_depths[i] < L - l) continue;
      const auto& src = device_models[i]->layer(l);
      if (src.adapter_down.rows() != down.rows() || src.adapter_down.cols() != down.cols() ||
          src.adapter_up.rows() != up.rows() || src.adapter_up.cols() != up.cols()) {
        throw ProtocolError(fmt::format("device adapter shape mismatch at layer {}", l));
      }
      down += src.adapter_down;
      up += src.adapter_up;
      ++count;
    }
    if (contributors) (*contributors)[static_cast<std::size_t>(l)] = count;
    if (count == 0) continue;
    target.adapter_down = down / static_cast<double>(count);
    target.adapter_up = up / static_cast<double>(count);
  }
}

namespace {

void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int i = w; i < count; i += workers) fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

void check_finite(double loss, int device, int round) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(fmt::format("non-finite loss on device {} in round {}", device, round));
  }
}

ProfileOptions profile_options(const ExperimentConfig& config) {
  ProfileOptions p = config.profiles;
  p.num_rounds = config.rounds;
  return p;
}

}  // namespace

Simulation::Simulation(ExperimentConfig config)
    : config_((config.validate(), std::move(config))),
      task_(generate_task(config_.model.num_classes, config_.model.input_dim,
                          config_.stream_seed("data"), config_.class_noise)),
      devices_(partition({config_.num_devices, config_.model.num_classes, config_.non_iid_level,
                          config_.samples_per_device, config_.stream_seed("data")},
                         task_)),
      profiles_(make_profiles(devices_, profile_options(config_), config_.stream_seed("noise"))),
      global_(LayeredAdapterModel::create(config_.model, config_.stream_seed("model"))),
      monitor_(config_.num_devices, config_.ema_alpha) {
  Rng eval_rng = make_rng(config_.stream_seed("data"), "eval");
  eval_set_ = task_.balanced_dataset(config_.eval_samples, eval_rng);

  // One-step profiling probe seeds every estimate before round 1.
  for (const auto& p : profiles_) {
    Rng rng = make_rng(config_.stream_seed("noise"), "probe", static_cast<std::uint64_t>(p.device_id));
    const auto t = sample_round_times(p, config_.timing, 1, 1, 1, rng);
    monitor_.observe(p.device_id, t.compute / config_.timing.step_work(1), t.upload);
  }
}

std::vector<int> Simulation::batch_order(int device, int round) const {
  const auto& data = devices_.at(static_cast<std::size_t>(device)).data;
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(config_.stream_seed("schedule"), "batches", static_cast<std::uint64_t>(device),
                     static_cast<std::uint64_t>(round));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Batch Simulation::batch_for_step(const Batch& data, std::span<const int> order, int step,
                                 int batch_size) {
  Batch batch;
  batch.inputs.resize(batch_size, data.inputs.cols());
  batch.labels.resize(static_cast<std::size_t>(batch_size));
  const auto n = static_cast<long>(order.size());
  for (int j = 0; j < batch_size; ++j) {
    const int src = order[static_cast<std::size_t>((static_cast<long>(step) * batch_size + j) % n)];
    batch.inputs.row(j) = data.inputs.row(src);
    batch.labels[static_cast<std::size_t>(j)] = data.labels[static_cast<std::size_t>(src)];
  }
  return batch;
}

std::vector<double> Simulation::predicted_times(const ArmConfig& arm) const {
  std::vector<double> out;
  out.reserve(devices_.size());
  for (int i = 0; i < config_.num_devices; ++i) {
    out.push_back(monitor_.predicted_round_time(i, config_.timing, config_.local_steps, arm.frequency,
                                                arm.depth));
  }
  return out;
}

RoundRecord Simulation::run_round(int round, const GroupPlan& plan, std::span<const ArmConfig> arms) {
  validate_partition(plan.groups, config_.num_devices);
  if (arms.size() != plan.groups.size()) throw ConfigError("one arm per group required");
  const int L = global_.num_layers();
  const int T = config_.local_steps;
  const long long payload = static_cast<long long>(config_.cost.payload_per_layer);
  const long long directions = config_.count_download ? 2 : 1;
  const std::uint64_t noise_seed = config_.stream_seed("noise");
  const CostModel cost = config_.effective_cost();

  RoundRecord record;
  record.round = round;
  record.devices.resize(devices_.size());
  std::vector<LayeredAdapterModel> group_models;
  group_models.reserve(plan.groups.size());
  const double round_start = sim_time_;

  for (std::size_t k = 0; k < plan.groups.size(); ++k) {
    const auto& members = plan.groups[k];
    const ArmConfig arm = arms[k];
    if (arm.depth < 1 || arm.depth > L) {
      throw ConfigError(fmt::format("group {} depth {} outside [1, {}]", k, arm.depth, L));
    }
    if (arm.frequency < 1 || arm.frequency > T) {
      throw ConfigError(fmt::format("group {} frequency {} outside [1, {}]", k, arm.frequency, T));
    }
    const int nk = static_cast<int>(members.size());
    GroupRoundStats stats;
    stats.group = static_cast<int>(k);
    stats.members = nk;
    stats.arm = arm;
    stats.compute_cost = cost.compute_cost(arm);

    LayeredAdapterModel group_model = global_;
    std::vector<LayeredAdapterModel> local(static_cast<std::size_t>(nk), global_);
    std::vector<std::vector<int>> orders(static_cast<std::size_t>(nk));
    std::vector<Rng> timing_rngs;
    std::vector<double> start_loss(static_cast<std::size_t>(nk));
    for (int j = 0; j < nk; ++j) {
      const int dev = members[static_cast<std::size_t>(j)];
      orders[static_cast<std::size_t>(j)] = batch_order(dev, round);
      timing_rngs.push_back(make_rng(noise_seed, "timing", static_cast<std::uint64_t>(dev),
                                     static_cast<std::uint64_t>(round)));
    }
    parallel_for(nk, config_.workers, [&](int j) {
      const int dev = members[static_cast<std::size_t>(j)];
      start_loss[static_cast<std::size_t>(j)] =
          forward(global_, devices_[static_cast<std::size_t>(dev)].data).loss;
    });

    std::vector<double> device_compute(static_cast<std::size_t>(nk), 0.0);
    std::vector<double> device_upload(static_cast<std::size_t>(nk), 0.0);
    const int segment_len = T / arm.frequency;
    int step = 0;
    double group_time = 0.0;
    for (int s = 0; s < arm.frequency; ++s) {
      const int steps = s + 1 == arm.frequency ? T - segment_len * (arm.frequency - 1) : segment_len;
      parallel_for(nk, config_.workers, [&](int j) {
        const int dev = members[static_cast<std::size_t>(j)];
        const auto& data = devices_[static_cast<std::size_t>(dev)].data;
        auto& model = local[static_cast<std::size_t>(j)];
        for (int tau = step; tau < step + steps; ++tau) {
          const double loss = local_step(
              model, batch_for_step(data, orders[static_cast<std::size_t>(j)], tau, config_.batch_size),
              arm.depth, config_.learning_rate);
          check_finite(loss, dev, round);
        }
      });

      double slowest = 0.0;
      double slowest_upload = 0.0;
      for (int j = 0; j < nk; ++j) {
        const int dev = members[static_cast<std::size_t>(j)];
        const auto t = sample_round_times(profiles_[static_cast<std::size_t>(dev)], config_.timing,
                                          arm.depth, steps, round, timing_rngs[static_cast<std::size_t>(j)]);
        device_compute[static_cast<std::size_t>(j)] += t.compute;
        device_upload[static_cast<std::size_t>(j)] += t.upload;
        slowest = std::max(slowest, t.compute + t.upload);
        slowest_upload = std::max(slowest_upload, t.upload);
      }
      const double segment_time = slowest + config_.download_factor * slowest_upload;

      std::vector<AdapterDelta> deltas;
      deltas.reserve(static_cast<std::size_t>(nk));
      for (int j = 0; j < nk; ++j) {
        deltas.push_back(extract_delta(local[static_cast<std::size_t>(j)], arm.depth,
                                       {round, static_cast<int>(k), members[static_cast<std::size_t>(j)]}));
      }
      const auto averaged = average_deltas(deltas);
      apply_params(group_model, averaged);
      for (auto& m : local) apply_params(m, averaged);

      Event ev;
      ev.kind = "group_sync";
      ev.round = round;
      ev.group = static_cast<int>(k);
      ev.segment = s;
      ev.steps = steps;
      ev.start = round_start + group_time;
      ev.end = ev.start + segment_time;
      ev.payload_up = static_cast<long long>(nk) * arm.depth * payload;
      ev.payload_down = config_.count_download ? ev.payload_up : 0;
      events_.push_back(std::move(ev));

      group_time += segment_time;
      step += steps;
    }

    std::vector<double> device_times(static_cast<std::size_t>(nk));
    for (int j = 0; j < nk; ++j) {
      const int dev = members[static_cast<std::size_t>(j)];
      device_times[static_cast<std::size_t>(j)] =
          device_compute[static_cast<std::size_t>(j)] + device_upload[static_cast<std::size_t>(j)];
      stats.loss_start += start_loss[static_cast<std::size_t>(j)];

      const auto& profile = profiles_[static_cast<std::size_t>(dev)];
      auto& row = record.devices[static_cast<std::size_t>(dev)];
      row.device = dev;
      row.group = static_cast<int>(k);
      row.compute_time = device_compute[static_cast<std::size_t>(j)];
      row.upload_time = device_upload[static_cast<std::size_t>(j)];
      row.true_compute = profile.compute_time_per_step * profile.mode_multiplier(round);
      row.true_upload = profile.upload_time_per_layer * profile.mode_multiplier(round);
    }
    stats.loss_start /= nk;
    stats.round_time = group_time;
    stats.waiting = predicted_waiting(device_times);
    stats.traffic = static_cast<long long>(arm.frequency) * arm.depth * payload * nk * directions;
    traffic_ += stats.traffic;

    record.groups.push_back(std::move(stats));
    group_models.push_back(std::move(group_model));
  }

  std::vector<const LayeredAdapterModel*> device_models(devices_.size());
  std::vector<int> device_depths(devices_.size());
  for (std::size_t k = 0; k < plan.groups.size(); ++k) {
    for (int dev : plan.groups[k]) {
      device_models[static_cast<std::size_t>(dev)] = &group_models[k];
      device_depths[static_cast<std::size_t>(dev)] = arms[k].depth;
    }
  }
  Event global_event;
  layerwise_aggregate(global_, device_models, device_depths, &global_event.layer_contributors);

  // Members hold their group's model at round end.
  std::vector<double> end_loss(devices_.size());
  parallel_for(config_.num_devices, config_.workers, [&](int dev) {
    end_loss[static_cast<std::size_t>(dev)] =
        forward(*device_models[static_cast<std::size_t>(dev)], devices_[static_cast<std::size_t>(dev)].data).loss;
  });
  for (std::size_t k = 0; k < plan.groups.size(); ++k) {
    auto& stats = record.groups[k];
    for (int dev : plan.groups[k]) {
      check_finite(end_loss[static_cast<std::size_t>(dev)], dev, round);
      stats.loss_end += end_loss[static_cast<std::size_t>(dev)];
    }
    stats.loss_end /= stats.members;
    stats.loss_drop = stats.loss_start - stats.loss_end;
  }

  double round_time = 0.0;
  for (const auto& g : record.groups) round_time = std::max(round_time, g.round_time);
  sim_time_ += round_time;

  global_event.kind = "global_aggregation";
  global_event.round = round;
  global_event.start = round_start;
  global_event.end = sim_time_;
  events_.push_back(std::move(global_event));

  record.round_time = round_time;
  record.sim_time = sim_time_;
  record.traffic = traffic_;
  return record;
}

TimeToAccuracy time_to_accuracy(std::span<const RoundRecord> rounds, double target) {
  TimeToAccuracy out;
  out.target = target;
  for (const auto& r : rounds) {
    if (r.eval_accuracy >= target) {
      out.time = r.sim_time;
      out.round = r.round;
      break;
    }
  }
  return out;
}

namespace {

std::vector<BanditState> inherit_bandits(const GroupPlan& previous, const std::vector<BanditState>& old_states,
                                         const GroupPlan& next, std::size_t num_arms, double discount) {
  std::vector<BanditState> out;
  for (const auto& g : next.groups) {
    int best = -1;
    int best_overlap = 0;
    for (std::size_t k = 0; k < previous.groups.size(); ++k) {
      int overlap = 0;
      for (int d : g) {
        if (std::binary_search(previous.groups[k].begin(), previous.groups[k].end(), d)) ++overlap;
      }
      if (overlap > best_overlap) {
        best_overlap = overlap;
        best = static_cast<int>(k);
      }
    }
    out.push_back(best >= 0 ? old_states[static_cast<std::size_t>(best)] : BanditState(num_arms, discount));
  }
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  Simulation sim(config);
  const auto& cfg = sim.config();
  const int L = cfg.model.num_layers;
  const int n = cfg.num_devices;
  const auto freq_grid = cfg.frequency_grid;
  const auto depth_grid = cfg.effective_depth_grid();
  const auto grid = make_arm_grid(freq_grid, depth_grid);
  const CostModel cost = cfg.effective_cost();

  std::vector<LabelDistribution> dists;
  std::vector<double> sample_counts;
  for (const auto& d : sim.devices()) {
    dists.push_back(d.distribution);
    sample_counts.push_back(static_cast<double>(d.data.size()));
  }
  const LabelDistribution reference = global_distribution(dists);
  const ArmConfig reference_arm = cfg.mode == Mode::FixedArm
                                      ? ArmConfig{cfg.fixed_frequency, cfg.effective_fixed_depth()}
                                      : ArmConfig{1, L};

  ExperimentResult result;
  result.summary.mode = cfg.mode;
  GroupPlan plan;
  std::vector<BanditState> bandits;
  RewardNormalizer normalizer;

  for (int h = 1; h <= cfg.rounds; ++h) {
    const bool regroup = (h - 1) % cfg.regroup_period == 0;
    if (regroup) {
      const auto times = sim.predicted_times(reference_arm);
      GroupingInput input{dists, sample_counts, times, reference};
      GroupPlan next;
      if (cfg.mode == Mode::FlatBaseline) {
        std::vector<int> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        next = describe_plan({all}, input, cfg.lambda);
      } else {
        next = build_groups(input, {cfg.effective_groups(), cfg.lambda, cfg.move_budget_per_device,
                                    cfg.stream_seed("grouping") + static_cast<std::uint64_t>(h)});
      }
      bandits = inherit_bandits(plan, bandits, next, grid.size(), cfg.discount);
      plan = std::move(next);
      spdlog::debug("round {}: {} groups, mean KL {:.4f}", h, plan.num_groups(), plan.mean_kl());
    }

    std::vector<ArmConfig> arms;
    std::vector<std::size_t> arm_index(plan.groups.size(), 0);
    std::vector<bool> fallback(plan.groups.size(), false);
    std::vector<std::vector<double>> top_ucb(plan.groups.size());
    for (std::size_t k = 0; k < plan.groups.size(); ++k) {
      switch (cfg.mode) {
        case Mode::FlatBaseline: arms.push_back({1, L}); break;
        case Mode::FixedArm: arms.push_back({cfg.fixed_frequency, cfg.effective_fixed_depth()}); break;
        case Mode::HierFedLoRA: {
          const auto feasible = feasible_arms(grid, cost);
          const auto& bandit = bandits[k];
          arm_index[k] = bandit.select(feasible.arms);
          fallback[k] = feasible.fallback;
          std::vector<double> ucbs;
          for (auto j : feasible.arms) ucbs.push_back(bandit.ucb(j));
          std::sort(ucbs.begin(), ucbs.end(), std::greater<>());
          ucbs.resize(std::min<std::size_t>(3, ucbs.size()));
          top_ucb[k] = std::move(ucbs);
          arms.push_back(grid[arm_index[k]]);
          break;
        }
      }
    }

    RoundRecord record;
    try {
      record = sim.run_round(h, plan, arms);
    } catch (const DivergenceError& e) {
      spdlog::error("round {}: {}", h, e.what());
      result.summary.aborted = true;
      result.summary.abort_reason = e.what();
      break;
    }

    for (int i = 0; i < n; ++i) {
      auto& row = record.devices[static_cast<std::size_t>(i)];
      const auto& arm = arms[static_cast<std::size_t>(row.group)];
      sim.monitor().observe(i, row.compute_time / (cfg.local_steps * cfg.timing.step_work(arm.depth)),
                            row.upload_time / (arm.frequency * arm.depth));
      row.est_compute = sim.monitor().estimate(i).compute();
      row.est_upload = sim.monitor().estimate(i).upload();
    }

    const auto eval = evaluate(sim.global_model(), sim.eval_set());
    record.eval_loss = eval.loss;
    record.eval_accuracy = eval.accuracy;
    if (!std::isfinite(eval.loss)) {
      result.summary.aborted = true;
      result.summary.abort_reason = fmt::format("non-finite evaluation loss in round {}", h);
      result.rounds.push_back(std::move(record));
      break;
    }

    std::vector<double> device_times;
    for (const auto& row : record.devices) device_times.push_back(row.compute_time + row.upload_time);
    const double waiting_floor = 0.01 * median(device_times);
    for (std::size_t k = 0; k < plan.groups.size(); ++k) {
      auto& g = record.groups[k];
      g.kl = plan.stats[k].kl;
      g.utility = plan.stats[k].utility;
      g.fallback = fallback[k];
      g.top_ucb = top_ucb[k];
      g.resource_cost = cost.normalized_cost(g.arm, grid);
      if (cfg.mode == Mode::HierFedLoRA) {
        g.raw_reward = raw_utility(g.loss_drop, g.resource_cost, g.waiting, waiting_floor);
        g.reward = normalizer.normalize(g.raw_reward);
        bandits[k].ingest(arm_index[k], g.reward, h, g.raw_reward);
      }
    }
    result.rounds.push_back(std::move(record));
  }

  auto& s = result.summary;
  s.rounds_completed = static_cast<int>(result.rounds.size());
  if (!result.rounds.empty()) {
    s.final_accuracy = result.rounds.back().eval_accuracy;
    s.final_loss = result.rounds.back().eval_loss;
    for (const auto& r : result.rounds) s.best_accuracy = std::max(s.best_accuracy, r.eval_accuracy);
  }
  s.sim_time = sim.sim_time();
  s.traffic = sim.traffic();
  for (double t : cfg.accuracy_targets) s.time_to_accuracy.push_back(time_to_accuracy(result.rounds, t));
  result.events = sim.events();
  return result;
}

}  // namespace hierfed
