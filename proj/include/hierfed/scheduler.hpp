// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <vector>

namespace hierfed {

// (rho, d): intra-group aggregations per round and fine-tuning depth.
struct ArmConfig {
  int frequency = 1;
  int depth = 1;

  auto operator<=>(const ArmConfig&) const = default;
};

// Arm grid rho x d in row-major order (frequency outer).
std::vector<ArmConfig> make_arm_grid(std::span<const int> frequencies, std::span<const int> depths);

// {L/4, L/2, 3L/4, L} rounded to the nearest integer, clamped to >= 1,
// duplicates removed.
std::vector<int> default_depth_grid(int num_layers);

struct CostModel {
  double forward_cost = 0.4;   // u-hat
  double backward_cost = 0.05; // u, per tuned layer
  double payload_per_layer = 1.0;  // b
  double compute_budget = 0.0; // Pi
  double comm_budget = 0.0;    // Omega
  double cost_weight = 0.5;    // v

  double compute_cost(const ArmConfig& arm) const { return forward_cost + arm.depth * backward_cost; }
  double comm_cost(const ArmConfig& arm) const { return arm.frequency * arm.depth * payload_per_layer; }
  // v * comp/max_comp + (1 - v) * comm/max_comm, maxima over `grid`.
  double normalized_cost(const ArmConfig& arm, std::span<const ArmConfig> grid) const;
};

struct FeasibleSet {
  std::vector<std::size_t> arms;  // indices into the grid
  bool fallback = false;          // nothing fit; cheapest arm substituted
};

FeasibleSet feasible_arms(std::span<const ArmConfig> arms, const CostModel& cost);

// Discounted UCB over a fixed arm grid. With discount 1 this is UCB1.
class BanditState {
 public:
  struct Pull {
    int round = 0;
    std::size_t arm = 0;
    double reward = 0.0;
    double raw_utility = 0.0;
  };

  BanditState() = default;
  BanditState(std::size_t num_arms, double discount);

  std::size_t num_arms() const { return counts_.size(); }
  double discount() const { return discount_; }
  double count(std::size_t arm) const { return counts_.at(arm); }
  double reward_sum(std::size_t arm) const { return sums_.at(arm); }
  double total_count() const;
  double mean(std::size_t arm) const;
  // +infinity for an arm never pulled.
  double ucb(std::size_t arm) const;

  // argmax of ucb over `feasible`; ties go to the lowest arm index.
  std::size_t select(std::span<const std::size_t> feasible) const;

  // Decays every arm by the discount, then credits `arm` with one pull.
  // Throws ConfigError unless reward is finite and in [0, 1].
  void ingest(std::size_t arm, double reward, int round = 0, double raw_utility = 0.0);

  const std::vector<Pull>& history() const { return history_; }

 private:
  double discount_ = 1.0;
  std::vector<double> counts_;
  std::vector<double> sums_;
  std::vector<Pull> history_;
};

// Delta_f / (R_bar * max(W, waiting_floor)); throws ConfigError on
// non-finite input, nonpositive cost or negative waiting time.
double raw_utility(double loss_drop, double resource_cost, double waiting, double waiting_floor);

// I(.): clamps at 0, then divides by the running maximum of clamped values
// seen so far (running min-max anchored at the clamp floor).
class RewardNormalizer {
 public:
  double normalize(double raw);
  double max_seen() const { return max_; }

 private:
  double max_ = 0.0;
};

// Partial sums of oracle[h] - chosen[h].
std::vector<double> cumulative_regret(std::span<const double> oracle_rewards,
                                      std::span<const double> chosen_rewards);

// Regret against the single arm with the best total expected reward over
// the horizon. expected[h][j] is arm j's expected reward in round h.
std::vector<double> horizon_regret(const std::vector<std::vector<double>>& expected,
                                   std::span<const std::size_t> chosen);

// Regret against each round's best arm.
std::vector<double> per_round_regret(const std::vector<std::vector<double>>& expected,
                                     std::span<const std::size_t> chosen);

}  // namespace hierfed
