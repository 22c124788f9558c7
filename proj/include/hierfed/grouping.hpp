// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hierfed/datagen.hpp"

namespace hierfed {

// Sum_c a(c) log(a(c)/b(c)) with natural log. Terms with a(c) = 0 vanish;
// a(c) > 0 with b(c) = 0 gives +infinity.
double kl_divergence(std::span<const double> a, std::span<const double> b);
inline double kl_divergence(const LabelDistribution& a, const LabelDistribution& b) {
  return kl_divergence(a.probs(), b.probs());
}

// Mean gap between each member's round time and the slowest member's.
double predicted_waiting(std::span<const double> times);

// Unweighted mean of device distributions.
LabelDistribution global_distribution(std::span<const LabelDistribution> devices);

struct GroupingInput {
  std::span<const LabelDistribution> distributions;
  std::span<const double> sample_counts;    // per device; weights for group mixes
  std::span<const double> predicted_times;  // per device, t = mu + beta
  LabelDistribution reference;              // Phi_0
};

struct GroupingOptions {
  int num_groups = 10;         // K
  double lambda = 0.5;
  int move_budget_per_device = 10;
  std::uint64_t seed = 1;
};

struct GroupStats {
  LabelDistribution distribution;  // sample-weighted member mix
  double kl = 0.0;                 // KL(Phi_k || Phi_0)
  double waiting = 0.0;            // W_k from predicted times
  double utility = 0.0;            // lambda * W_k/w_scale + (1-lambda) * KL/kl_scale
};

struct GroupPlan {
  std::vector<std::vector<int>> groups;  // ascending device ids per group
  std::vector<GroupStats> stats;
  double lambda = 0.5;
  double kl_scale = 1.0;       // max_i KL(Gamma_i || Phi_0) of this invocation
  double waiting_scale = 1.0;  // max_i t_i - min_i t_i of this invocation
  int accepted_moves = 0;
  int evaluated_moves = 0;

  double total_utility() const;
  double mean_kl() const;
  int num_groups() const { return static_cast<int>(groups.size()); }
};

// Lloyd's algorithm with k-means++ seeding on distribution vectors.
// Returns a cluster index per point; clusters may end up empty.
std::vector<int> kmeans(std::span<const LabelDistribution> points, int k, std::uint64_t seed,
                        int max_iterations = 50, double tolerance = 1e-6);

// Builds per-group statistics for an arbitrary partition. Normalization
// scales are computed from the device-level inputs, so plans over the same
// input are comparable.
GroupPlan describe_plan(std::vector<std::vector<int>> groups, const GroupingInput& input,
                        double lambda);

// K-means sets, greedy near-IID group construction from the slowest device
// of each set, surplus groups folded into K, then swap/move hill climbing on
// the total utility.
GroupPlan build_groups(const GroupingInput& input, const GroupingOptions& options);

// Throws ConfigError unless `groups` is a disjoint cover of [0, n) with
// nonempty members.
void validate_partition(const std::vector<std::vector<int>>& groups, int num_devices);

}  // namespace hierfed
