// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include "hierfed/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

#include "hierfed/errors.hpp"

namespace hierfed {

std::vector<ArmConfig> make_arm_grid(std::span<const int> frequencies, std::span<const int> depths) {
  std::vector<ArmConfig> grid;
  for (int rho : frequencies) {
    for (int d : depths) {
      if (rho < 1 || d < 1) throw ConfigError("arm frequency and depth must be positive");
      grid.push_back({rho, d});
    }
  }
  if (grid.empty()) throw ConfigError("arm grid is empty");
  return grid;
}

std::vector<int> default_depth_grid(int num_layers) {
  std::vector<int> depths;
  for (int quarter = 1; quarter <= 4; ++quarter) {
    const int d = std::max(1, static_cast<int>(std::lround(num_layers * quarter / 4.0)));
    if (depths.empty() || depths.back() != d) depths.push_back(d);
  }
  return depths;
}

double CostModel::normalized_cost(const ArmConfig& arm, std::span<const ArmConfig> grid) const {
  double max_comp = 0.0;
  double max_comm = 0.0;
  for (const auto& a : grid) {
    max_comp = std::max(max_comp, compute_cost(a));
    max_comm = std::max(max_comm, comm_cost(a));
  }
  if (!(max_comp > 0.0 && max_comm > 0.0)) throw ConfigError("cost model must be positive");
  return cost_weight * compute_cost(arm) / max_comp +
         (1.0 - cost_weight) * comm_cost(arm) / max_comm;
}

FeasibleSet feasible_arms(std::span<const ArmConfig> arms, const CostModel& cost) {
  if (!(cost.forward_cost > 0.0 && cost.backward_cost > 0.0 && cost.payload_per_layer > 0.0)) {
    throw ConfigError("cost model must be positive");
  }
  FeasibleSet out;
  for (std::size_t j = 0; j < arms.size(); ++j) {
    if (cost.compute_cost(arms[j]) <= cost.compute_budget &&
        cost.comm_cost(arms[j]) <= cost.comm_budget) {
      out.arms.push_back(j);
    }
  }
  if (out.arms.empty() && !arms.empty()) {
    std::size_t cheapest = 0;
    for (std::size_t j = 1; j < arms.size(); ++j) {
      const auto& a = arms[j];
      const auto& c = arms[cheapest];
      if (a.frequency < c.frequency || (a.frequency == c.frequency && a.depth < c.depth)) {
        cheapest = j;
      }
    }
    spdlog::warn("no arm fits budgets (compute {}, comm {}); using ({}, {})", cost.compute_budget,
                 cost.comm_budget, arms[cheapest].frequency, arms[cheapest].depth);
    out.arms.push_back(cheapest);
    out.fallback = true;
  }
  return out;
}

BanditState::BanditState(std::size_t num_arms, double discount)
    : discount_(discount), counts_(num_arms, 0.0), sums_(num_arms, 0.0) {
  if (!(discount > 0.0 && discount <= 1.0)) throw ConfigError("discount must lie in (0, 1]");
  if (num_arms == 0) throw ConfigError("bandit needs at least one arm");
}

double BanditState::total_count() const {
  double total = 0.0;
  for (double c : counts_) total += c;
  return total;
}

double BanditState::mean(std::size_t arm) const {
  const double n = counts_.at(arm);
  return n > 0.0 ? sums_[arm] / n : 0.0;
}

double BanditState::ucb(std::size_t arm) const {
  const double n = counts_.at(arm);
  if (n <= 0.0) return std::numeric_limits<double>::infinity();
  const double total = total_count();
  const double bonus = total > 1.0 ? std::sqrt(2.0 * std::log(total) / n) : 0.0;
  return sums_[arm] / n + bonus;
}

std::size_t BanditState::select(std::span<const std::size_t> feasible) const {
  if (feasible.empty()) throw ConfigError("no feasible arm to select from");
  std::size_t best = feasible.front();
  double best_ucb = ucb(best);
  for (std::size_t j : feasible) {
    const double u = ucb(j);
    if (u > best_ucb || (u == best_ucb && j < best)) {
      best = j;
      best_ucb = u;
    }
  }
  return best;
}

void BanditState::ingest(std::size_t arm, double reward, int round, double raw_utility) {
  if (arm >= counts_.size()) throw ConfigError("arm index out of range");
  if (!std::isfinite(reward) || reward < 0.0 || reward > 1.0) {
    throw ConfigError("normalized reward must be finite and in [0, 1]");
  }
  for (std::size_t j = 0; j < counts_.size(); ++j) {
    counts_[j] *= discount_;
    sums_[j] *= discount_;
  }
  counts_[arm] += 1.0;
  sums_[arm] += reward;
  history_.push_back({round, arm, reward, raw_utility});
}

double raw_utility(double loss_drop, double resource_cost, double waiting, double waiting_floor) {
  if (!std::isfinite(loss_drop) || !std::isfinite(resource_cost) || !std::isfinite(waiting) ||
      !std::isfinite(waiting_floor)) {
    throw ConfigError("reward inputs must be finite");
  }
  if (!(resource_cost > 0.0)) throw ConfigError("resource cost must be positive");
  if (waiting < 0.0) throw ConfigError("waiting time must be nonnegative");
  const double w = std::max(waiting, waiting_floor);
  if (!(w > 0.0)) throw ConfigError("waiting floor must be positive when waiting is zero");
  return loss_drop / (resource_cost * w);
}

double RewardNormalizer::normalize(double raw) {
  if (!std::isfinite(raw)) throw ConfigError("raw utility must be finite");
  const double clamped = std::max(raw, 0.0);
  max_ = std::max(max_, clamped);
  return max_ > 0.0 ? clamped / max_ : 0.0;
}

std::vector<double> cumulative_regret(std::span<const double> oracle_rewards,
                                      std::span<const double> chosen_rewards) {
  if (oracle_rewards.size() != chosen_rewards.size()) {
    throw ConfigError("oracle and chosen reward series differ in length");
  }
  std::vector<double> out;
  out.reserve(oracle_rewards.size());
  double total = 0.0;
  for (std::size_t h = 0; h < oracle_rewards.size(); ++h) {
    total += oracle_rewards[h] - chosen_rewards[h];
    out.push_back(total);
  }
  return out;
}

std::vector<double> horizon_regret(const std::vector<std::vector<double>>& expected,
                                   std::span<const std::size_t> chosen) {
  if (expected.size() != chosen.size()) throw ConfigError("horizon mismatch");
  if (expected.empty()) return {};
  const std::size_t arms = expected.front().size();
  std::vector<double> totals(arms, 0.0);
  for (const auto& row : expected) {
    for (std::size_t j = 0; j < arms; ++j) totals[j] += row.at(j);
  }
  const auto best = static_cast<std::size_t>(
      std::max_element(totals.begin(), totals.end()) - totals.begin());
  std::vector<double> oracle, got;
  for (std::size_t h = 0; h < expected.size(); ++h) {
    oracle.push_back(expected[h][best]);
    got.push_back(expected[h].at(chosen[h]));
  }
  return cumulative_regret(oracle, got);
}

std::vector<double> per_round_regret(const std::vector<std::vector<double>>& expected,
                                     std::span<const std::size_t> chosen) {
  if (expected.size() != chosen.size()) throw ConfigError("horizon mismatch");
  std::vector<double> oracle, got;
  for (std::size_t h = 0; h < expected.size(); ++h) {
    oracle.push_back(*std::max_element(expected[h].begin(), expected[h].end()));
    got.push_back(expected[h].at(chosen[h]));
  }
  return cumulative_regret(oracle, got);
}

}  // namespace hierfed
