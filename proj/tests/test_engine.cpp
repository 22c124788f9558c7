// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hierfed/engine.hpp"
#include "hierfed/errors.hpp"
#include "hierfed/logs.hpp"
#include "oracles.hpp"

using namespace hierfed;

namespace {

ExperimentConfig small_config(Mode mode) {
  ExperimentConfig c;
  c.mode = mode;
  c.num_devices = 20;
  c.num_groups = 4;
  c.rounds = 6;
  c.local_steps = 10;
  c.batch_size = 4;
  c.samples_per_device = 30;
  c.eval_samples = 300;
  c.learning_rate = 0.2;
  c.model = {8, 12, 4, 4, 2};
  c.non_iid_level = 5.0;
  c.regroup_period = 3;
  c.cost.payload_per_layer = 3.0;
  c.accuracy_targets = {0.3, 0.5};
  return c;
}

GroupPlan one_group(int n) {
  GroupPlan plan;
  plan.groups.emplace_back(static_cast<std::size_t>(n));
  std::iota(plan.groups.back().begin(), plan.groups.back().end(), 0);
  return plan;
}

bool same_model(const LayeredAdapterModel& a, const LayeredAdapterModel& b) {
  for (int l = 0; l < a.num_layers(); ++l) {
    const auto& x = a.layer(l);
    const auto& y = b.layer(l);
    if (x.frozen_weight != y.frozen_weight || x.frozen_bias != y.frozen_bias ||
        x.adapter_down != y.adapter_down || x.adapter_up != y.adapter_up) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("syncing every step on IID shards equals centralized SGD") {
  const auto config = oracle::centralized_equivalence_config();
  Simulation reference(config);
  const auto expected = oracle::centralized_sgd(reference, config.rounds);
  const auto got = oracle::federated_sync_every_step(config);
  CHECK(oracle::max_adapter_gap(expected, got) < 1e-10);
  CHECK(oracle::max_adapter_gap(expected, reference.global_model()) > 1e-3);
}

TEST_CASE("one device, one sync: the global model is the device model") {
  auto config = small_config(Mode::FixedArm);
  config.num_devices = 1;
  config.num_groups = 1;
  Simulation sim(config);
  auto device = sim.global_model();
  const auto order = sim.batch_order(0, 1);
  for (int tau = 0; tau < config.local_steps; ++tau) {
    local_step(device, Simulation::batch_for_step(sim.devices()[0].data, order, tau, config.batch_size),
               config.model.num_layers, config.learning_rate);
  }
  const std::vector<ArmConfig> arms{{1, config.model.num_layers}};
  sim.run_round(1, one_group(1), arms);
  CHECK(same_model(device, sim.global_model()));
}

TEST_CASE("uniform full-depth layer-wise aggregation is the plain average") {
  const ModelShape shape{6, 8, 3, 3, 2};
  std::vector<LayeredAdapterModel> models;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    auto m = LayeredAdapterModel::create(shape, 42);
    Rng rng(s);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int l = 0; l < m.num_layers(); ++l) {
      m.layer(l).adapter_down = m.layer(l).adapter_down.unaryExpr([&](double) { return g(rng); });
      m.layer(l).adapter_up = m.layer(l).adapter_up.unaryExpr([&](double) { return g(rng); });
    }
    models.push_back(std::move(m));
  }
  std::vector<const LayeredAdapterModel*> ptrs;
  std::vector<AdapterDelta> deltas;
  for (const auto& m : models) {
    ptrs.push_back(&m);
    deltas.push_back(extract_delta(m, 3));
  }
  auto layerwise = LayeredAdapterModel::create(shape, 42);
  auto flat = layerwise;
  std::vector<int> contributors;
  layerwise_aggregate(layerwise, ptrs, std::vector<int>(5, 3), &contributors);
  apply_params(flat, average_deltas(deltas));
  CHECK(oracle::max_adapter_gap(layerwise, flat) < 1e-12);
  CHECK(contributors == std::vector<int>{5, 5, 5});
}

TEST_CASE("layer-wise aggregation counts only devices that tuned the layer") {
  const ModelShape shape{4, 5, 3, 3, 1};
  auto global = LayeredAdapterModel::create(shape, 1);
  const auto before = global;
  auto a = global;
  auto b = global;
  for (int l = 0; l < 3; ++l) {
    a.layer(l).adapter_up.setConstant(1.0);
    b.layer(l).adapter_up.setConstant(3.0);
  }
  const std::vector<const LayeredAdapterModel*> ptrs{&a, &b};
  std::vector<int> contributors;
  layerwise_aggregate(global, ptrs, std::vector<int>{1, 2}, &contributors);
  CHECK(contributors == std::vector<int>{0, 1, 2});
  CHECK(global.layer(0).adapter_up == before.layer(0).adapter_up);
  CHECK((global.layer(1).adapter_up.array() == 3.0).all());
  CHECK((global.layer(2).adapter_up.array() == 2.0).all());
  CHECK_THROWS_AS(layerwise_aggregate(global, ptrs, std::vector<int>{1}), ProtocolError);
}

TEST_CASE("fixed arm (1, L) with one group reproduces the flat baseline") {
  auto fixed = small_config(Mode::FixedArm);
  fixed.num_groups = 1;
  fixed.fixed_frequency = 1;
  fixed.fixed_depth = 0;
  auto flat = fixed;
  flat.mode = Mode::FlatBaseline;
  const auto a = run_experiment(fixed);
  const auto b = run_experiment(flat);
  CHECK(round_log_csv(a.rounds) == round_log_csv(b.rounds));
  CHECK(events_jsonl(a.events) == events_jsonl(b.events));
}

TEST_CASE("traffic follows the closed form") {
  auto config = small_config(Mode::FixedArm);
  config.fixed_frequency = 2;
  config.fixed_depth = 3;
  const auto fixed = run_experiment(config);
  const long long b = 3;
  CHECK(fixed.summary.traffic == config.rounds * config.num_devices * 2LL * 2 * 3 * b);

  const auto hier = run_experiment(small_config(Mode::HierFedLoRA));
  long long closed = 0;
  long long previous = 0;
  for (const auto& r : hier.rounds) {
    for (const auto& g : r.groups) closed += 2LL * g.members * g.arm.frequency * g.arm.depth * b;
    CHECK(r.traffic >= previous);
    CHECK(r.traffic == closed);
    previous = r.traffic;
  }
  CHECK(hier.summary.traffic == closed);

  config.count_download = false;
  CHECK(run_experiment(config).summary.traffic == fixed.summary.traffic / 2);
}

TEST_CASE("per-device compute cost is forward plus per-layer backward") {
  const auto config = small_config(Mode::HierFedLoRA);
  const auto result = run_experiment(config);
  for (const auto& r : result.rounds) {
    for (const auto& g : r.groups) {
      CHECK(g.compute_cost == config.cost.forward_cost + g.arm.depth * config.cost.backward_cost);
    }
  }
}

TEST_CASE("clocks and waiting times are consistent") {
  const auto result = run_experiment(small_config(Mode::HierFedLoRA));
  double previous = 0.0;
  for (const auto& r : result.rounds) {
    CHECK(r.sim_time > previous);
    previous = r.sim_time;
    double slowest_group = 0.0;
    for (const auto& g : r.groups) {
      std::vector<double> times;
      for (const auto& d : r.devices) {
        if (d.group == g.group) times.push_back(d.compute_time + d.upload_time);
      }
      REQUIRE(static_cast<int>(times.size()) == g.members);
      CHECK(g.round_time >= *std::max_element(times.begin(), times.end()));
      CHECK(g.waiting == doctest::Approx(predicted_waiting(times)).epsilon(1e-14));
      const bool all_equal = std::all_of(times.begin(), times.end(), [&](double t) { return t == times[0]; });
      CHECK((g.waiting == 0.0) == all_equal);
      slowest_group = std::max(slowest_group, g.round_time);
    }
    CHECK(r.round_time == slowest_group);
  }
}

TEST_CASE("noiseless single-member groups have zero waiting") {
  auto config = small_config(Mode::FixedArm);
  config.num_devices = 3;
  config.timing.noise_sigma = 0.0;
  Simulation sim(config);
  GroupPlan plan;
  plan.groups = {{0}, {1}, {2}};
  const std::vector<ArmConfig> arms{{1, 1}, {2, 2}, {5, 4}};
  const auto record = sim.run_round(1, plan, arms);
  for (const auto& g : record.groups) {
    CHECK(g.members == 1);
    CHECK(g.waiting == 0.0);
  }
}

TEST_CASE("frozen weights never change") {
  const auto config = small_config(Mode::HierFedLoRA);
  Simulation sim(config);
  const auto initial = LayeredAdapterModel::create(config.model, config.stream_seed("model"));
  GroupPlan plan;
  plan.groups = {{0, 1, 2, 3, 4}, {5, 6, 7, 8, 9}, {10, 11, 12, 13, 14}, {15, 16, 17, 18, 19}};
  const std::vector<ArmConfig> arms{{1, 1}, {2, 2}, {5, 3}, {10, 4}};
  for (int h = 1; h <= 3; ++h) {
    sim.run_round(h, plan, arms);
    for (int l = 0; l < config.model.num_layers; ++l) {
      CHECK(sim.global_model().layer(l).frozen_weight == initial.layer(l).frozen_weight);
      CHECK(sim.global_model().layer(l).frozen_bias == initial.layer(l).frozen_bias);
    }
  }
}

TEST_CASE("segments fold the remainder into the last one") {
  auto config = small_config(Mode::FixedArm);
  config.local_steps = 11;
  config.fixed_frequency = 5;
  config.frequency_grid = {1, 5};
  Simulation sim(config);
  const std::vector<ArmConfig> arms{{5, 2}};
  sim.run_round(1, one_group(config.num_devices), arms);
  std::vector<int> steps;
  for (const auto& e : sim.events()) {
    if (e.kind == "group_sync") steps.push_back(e.steps);
  }
  CHECK(steps == std::vector<int>{2, 2, 2, 2, 3});
}

TEST_CASE("runs are deterministic and independent of worker count") {
  auto config = small_config(Mode::HierFedLoRA);
  const auto a = run_experiment(config);
  config.workers = 3;
  const auto b = run_experiment(config);
  CHECK(round_log_csv(a.rounds) == round_log_csv(b.rounds));
  CHECK(events_jsonl(a.events) == events_jsonl(b.events));
  CHECK(summary_json(a.summary) == summary_json(b.summary));
}

TEST_CASE("hierarchical mode keeps arms feasible and rewards normalized") {
  const auto config = small_config(Mode::HierFedLoRA);
  const auto cost = config.effective_cost();
  const auto result = run_experiment(config);
  for (const auto& r : result.rounds) {
    for (const auto& g : r.groups) {
      if (!g.fallback) {
        CHECK(cost.compute_cost(g.arm) <= cost.compute_budget);
        CHECK(cost.comm_cost(g.arm) <= cost.comm_budget);
      }
      CHECK(g.reward >= 0.0);
      CHECK(g.reward <= 1.0);
    }
  }
}

TEST_CASE("evaluation is pure and untrained models sit at chance") {
  double total = 0.0;
  const int seeds = 200;
  for (int s = 1; s <= seeds; ++s) {
    const auto task = generate_task(2, 8, static_cast<std::uint64_t>(s));
    Rng rng(static_cast<std::uint64_t>(s));
    const auto eval = task.balanced_dataset(400, rng);
    const auto model = LayeredAdapterModel::create({8, 8, 2, 3, 2}, static_cast<std::uint64_t>(100 + s));
    const auto copy = model;
    total += evaluate(model, eval).accuracy;
    CHECK(same_model(model, copy));
  }
  CHECK(std::abs(total / seeds - 0.5) <= 0.05);
}

TEST_CASE("centralized training separates noiseless classes") {
  const auto task = generate_task(2, 8, 3, 0.0);
  Rng rng(3);
  const auto train = task.balanced_dataset(200, rng);
  const auto eval = task.balanced_dataset(400, rng);
  auto model = LayeredAdapterModel::create({8, 8, 2, 3, 2}, 5);
  for (int step = 0; step < 500; ++step) local_step(model, train, 3, 0.5);
  CHECK(evaluate(model, eval).accuracy >= 0.99);
}

TEST_CASE("divergence aborts the run with a reason") {
  auto config = small_config(Mode::FixedArm);
  config.learning_rate = 1e8;
  const auto result = run_experiment(config);
  CHECK(result.summary.aborted);
  CHECK_FALSE(result.summary.abort_reason.empty());
  CHECK(result.summary.rounds_completed < config.rounds);
}

TEST_CASE("time to accuracy reports the first crossing") {
  std::vector<RoundRecord> rounds(3);
  rounds[0].round = 1;
  rounds[0].sim_time = 2.0;
  rounds[0].eval_accuracy = 0.2;
  rounds[1].round = 2;
  rounds[1].sim_time = 5.0;
  rounds[1].eval_accuracy = 0.6;
  rounds[2].round = 3;
  rounds[2].sim_time = 9.0;
  rounds[2].eval_accuracy = 0.7;
  const auto hit = time_to_accuracy(rounds, 0.5);
  REQUIRE(hit.time);
  CHECK(*hit.time == 5.0);
  CHECK(*hit.round == 2);
  CHECK_FALSE(time_to_accuracy(rounds, 0.9).time);
}

TEST_CASE("invalid configs name the offending field") {
  auto config = small_config(Mode::FixedArm);
  config.frequency_grid = {1, 50};
  try {
    config.validate();
    FAIL("expected a validation error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("frequency_grid") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_mode("hier"), ConfigError);
}
