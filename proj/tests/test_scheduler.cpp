// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "hierfed/errors.hpp"
#include "hierfed/scheduler.hpp"
#include "oracles.hpp"

using namespace hierfed;

namespace {

std::vector<std::size_t> all_arms(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = j;
  return out;
}

}  // namespace

TEST_CASE("arm grid and default depths") {
  const std::vector<int> rho{1, 2, 5, 10};
  const auto depths = default_depth_grid(4);
  CHECK(depths == std::vector<int>{1, 2, 3, 4});
  CHECK(default_depth_grid(8) == std::vector<int>{2, 4, 6, 8});
  CHECK(default_depth_grid(2) == std::vector<int>{1, 2});
  const auto grid = make_arm_grid(rho, depths);
  REQUIRE(grid.size() == 16);
  CHECK(grid[0] == ArmConfig{1, 1});
  CHECK(grid[5] == ArmConfig{2, 2});
  CHECK_THROWS_AS(make_arm_grid(std::vector<int>{0}, depths), ConfigError);
}

TEST_CASE("cost arithmetic") {
  CostModel cost;
  cost.forward_cost = 10.0;
  cost.backward_cost = 2.0;
  cost.payload_per_layer = 3.0;
  CHECK(cost.compute_cost({1, 6}) == 22.0);
  CHECK(cost.comm_cost({5, 4}) == 60.0);

  const std::vector<ArmConfig> arms{{1, 6}, {5, 4}};
  cost.compute_budget = 22.0;
  cost.comm_budget = 60.0;
  CHECK(feasible_arms(arms, cost).arms == std::vector<std::size_t>{0, 1});
  cost.compute_budget = 21.999;
  CHECK(feasible_arms(arms, cost).arms == std::vector<std::size_t>{1});
  cost.compute_budget = 22.0;
  cost.comm_budget = 59.999;
  CHECK(feasible_arms(arms, cost).arms == std::vector<std::size_t>{0});
}

TEST_CASE("tight budgets leave only the cheapest arm") {
  const auto grid = make_arm_grid(std::vector<int>{1, 2, 5}, std::vector<int>{1, 2, 3});
  CostModel cost;
  cost.compute_budget = cost.forward_cost + cost.backward_cost;
  cost.comm_budget = cost.payload_per_layer;
  const auto f = feasible_arms(grid, cost);
  CHECK_FALSE(f.fallback);
  REQUIRE(f.arms.size() == 1);
  CHECK(grid[f.arms[0]] == ArmConfig{1, 1});

  cost.comm_budget = 0.5;
  const auto empty = feasible_arms(grid, cost);
  CHECK(empty.fallback);
  REQUIRE(empty.arms.size() == 1);
  CHECK(grid[empty.arms[0]] == ArmConfig{1, 1});
}

TEST_CASE("normalized cost mixes compute and communication") {
  const auto grid = make_arm_grid(std::vector<int>{1, 10}, std::vector<int>{1, 4});
  CostModel cost;
  cost.cost_weight = 0.5;
  const double max_comp = cost.compute_cost({1, 4});
  const double max_comm = cost.comm_cost({10, 4});
  const double expected = 0.5 * cost.compute_cost({1, 1}) / max_comp + 0.5 * cost.comm_cost({1, 1}) / max_comm;
  CHECK(cost.normalized_cost({1, 1}, grid) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(cost.normalized_cost({10, 4}, grid) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("cold start selects the lowest index, then every unpulled arm") {
  BanditState b(4, 0.9);
  const auto arms = all_arms(4);
  CHECK(b.select(arms) == 0);
  b.ingest(0, 1.0);
  CHECK(b.select(arms) == 1);
  std::vector<int> pulls(4, 0);
  BanditState c(4, 0.9);
  for (int h = 0; h < 4; ++h) {
    const auto j = c.select(arms);
    ++pulls[j];
    c.ingest(j, 0.5);
  }
  CHECK(pulls == std::vector<int>{1, 1, 1, 1});
}

TEST_CASE("undiscounted mean is the arithmetic mean") {
  BanditState b(1, 1.0);
  const std::vector<double> rewards{0.2, 0.9, 0.4, 0.0, 1.0};
  for (double r : rewards) b.ingest(0, r);
  CHECK(b.count(0) == 5.0);
  CHECK(b.mean(0) == doctest::Approx(2.5 / 5.0).epsilon(1e-15));
}

TEST_CASE("discounted two-step recursion gives one third") {
  BanditState b(2, 0.5);
  b.ingest(0, 1.0);
  b.ingest(0, 0.0);
  CHECK(b.mean(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(b.count(0) == 1.5);
}

TEST_CASE("discounted counts add up to the total") {
  BanditState b(3, 0.7);
  Rng rng(4);
  std::uniform_int_distribution<int> pick(0, 2);
  for (int h = 0; h < 50; ++h) {
    b.ingest(static_cast<std::size_t>(pick(rng)), 0.5);
    CHECK(b.total_count() == doctest::Approx(b.count(0) + b.count(1) + b.count(2)).epsilon(1e-15));
    for (std::size_t j = 0; j < 3; ++j) CHECK(b.count(j) >= 0.0);
  }
}

TEST_CASE("rewards outside the unit interval are rejected") {
  BanditState b(2, 0.9);
  CHECK_THROWS_AS(b.ingest(0, 1.5), ConfigError);
  CHECK_THROWS_AS(b.ingest(0, -0.1), ConfigError);
  CHECK_THROWS_AS(b.ingest(0, std::nan("")), ConfigError);
  CHECK_THROWS_AS(b.ingest(2, 0.5), ConfigError);
  CHECK(b.total_count() == 0.0);
  CHECK_THROWS_AS(BanditState(2, 0.0), ConfigError);
}

TEST_CASE("raw utility and its normalization") {
  CHECK(raw_utility(0.6, 0.5, 2.0, 0.1) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(raw_utility(0.6, 0.5, 0.0, 0.1) == doctest::Approx(12.0).epsilon(1e-15));
  CHECK_THROWS_AS(raw_utility(std::nan(""), 0.5, 1.0, 0.1), ConfigError);
  CHECK_THROWS_AS(raw_utility(0.1, 0.0, 1.0, 0.1), ConfigError);
  CHECK_THROWS_AS(raw_utility(0.1, 0.5, -1.0, 0.1), ConfigError);

  RewardNormalizer norm;
  CHECK(norm.normalize(-3.0) == 0.0);
  CHECK(norm.normalize(2.0) == 1.0);
  CHECK(norm.normalize(1.0) == 0.5);
  CHECK(norm.normalize(-0.5) == 0.0);
  CHECK(norm.normalize(4.0) == 1.0);
  Rng rng(8);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int i = 0; i < 500; ++i) {
    const double r = norm.normalize(g(rng));
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }
}

TEST_CASE("one pulled arm and one unpulled: the unpulled arm wins") {
  BanditState b(2, 1.0);
  b.ingest(0, 1.0);
  CHECK(b.select(all_arms(2)) == 1);
}

TEST_CASE("undiscounted selection matches the reference UCB1 step for step") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto stream = oracle::bernoulli_stream({0.7, 0.5, 0.45, 0.2}, 500, seed);
    BanditState ours(4, 1.0);
    oracle::Ucb1 reference(4);
    const auto arms = all_arms(4);
    for (int h = 0; h < 500; ++h) {
      const auto a = ours.select(arms);
      const auto r = reference.select();
      REQUIRE(a == r);
      const double reward = stream[static_cast<std::size_t>(h)][a];
      ours.ingest(a, reward);
      reference.update(r, reward);
    }
  }
}

TEST_CASE("a clearly better arm dominates the pulls") {
  BanditState b(2, 1.0);
  oracle::Ucb1 reference(2);
  const auto arms = all_arms(2);
  int good = 0;
  for (int h = 0; h < 200; ++h) {
    const auto j = b.select(arms);
    REQUIRE(j == reference.select());
    const double reward = j == 0 ? 0.9 : 0.1;
    b.ingest(j, reward);
    reference.update(j, reward);
    good += j == 0;
  }
  CHECK(good >= 150);
}

TEST_CASE("selection respects the feasible subset") {
  BanditState b(4, 0.9);
  const std::vector<std::size_t> feasible{1, 3};
  for (int h = 0; h < 30; ++h) {
    const auto j = b.select(feasible);
    CHECK((j == 1 || j == 3));
    b.ingest(j, j == 3 ? 0.8 : 0.2);
  }
}

TEST_CASE("regret bookkeeping") {
  const std::vector<std::vector<double>> expected{{0.9, 0.1}, {0.9, 0.1}, {0.2, 0.8}};
  const std::vector<std::size_t> oracle_choice{0, 0, 1};
  CHECK(per_round_regret(expected, oracle_choice) == std::vector<double>{0.0, 0.0, 0.0});
  const auto horizon = horizon_regret(expected, oracle_choice);
  CHECK(horizon.back() == doctest::Approx(-0.6));
  const std::vector<std::size_t> bad{1, 1, 1};
  const auto series = per_round_regret(expected, bad);
  CHECK(std::is_sorted(series.begin(), series.end()));
  CHECK(series.back() == doctest::Approx(1.6));
  CHECK_THROWS_AS(cumulative_regret(std::vector<double>{1.0}, std::vector<double>{}), ConfigError);
}

TEST_CASE("two-arm Bernoulli regret stays small") {
  const auto regret = oracle::mean_bandit_regret({0.9, 0.1}, 500, 20, 1.0);
  CHECK(regret.back() / 500.0 < 0.08);
  CHECK(std::is_sorted(regret.begin(), regret.end()));
}
