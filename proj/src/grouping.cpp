// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include "hierfed/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hierfed/errors.hpp"
#include "hierfed/rng.hpp"

namespace hierfed {

double kl_divergence(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("KL divergence needs equal-length distributions");
  double kl = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    if (a[c] <= 0.0) continue;
    if (b[c] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += a[c] * std::log(a[c] / b[c]);
  }
  // Rounding can push an identical pair a hair below zero.
  return std::max(kl, 0.0);
}

double predicted_waiting(std::span<const double> times) {
  if (times.empty()) return 0.0;
  const double slowest = *std::max_element(times.begin(), times.end());
  double total = 0.0;
  for (double t : times) total += std::abs(t - slowest);
  return total / static_cast<double>(times.size());
}

LabelDistribution global_distribution(std::span<const LabelDistribution> devices) {
  if (devices.empty()) throw ConfigError("no device distributions");
  const auto C = static_cast<std::size_t>(devices.front().num_classes());
  std::vector<double> mean(C, 0.0);
  for (const auto& d : devices) {
    if (static_cast<std::size_t>(d.num_classes()) != C) {
      throw ConfigError("device distributions disagree on class count");
    }
    for (std::size_t c = 0; c < C; ++c) mean[c] += d.probs()[c];
  }
  for (auto& v : mean) v /= static_cast<double>(devices.size());
  // Renormalize away accumulated rounding.
  const double sum = std::accumulate(mean.begin(), mean.end(), 0.0);
  for (auto& v : mean) v /= sum;
  return LabelDistribution(std::move(mean));
}

double GroupPlan::total_utility() const {
  double total = 0.0;
  for (const auto& s : stats) total += s.utility;
  return total;
}

double GroupPlan::mean_kl() const {
  if (stats.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : stats) total += s.kl;
  return total / static_cast<double>(stats.size());
}

void validate_partition(const std::vector<std::vector<int>>& groups, int num_devices) {
  std::vector<int> seen(static_cast<std::size_t>(num_devices), 0);
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].empty()) throw ConfigError(fmt::format("group {} is empty", k));
    for (int d : groups[k]) {
      if (d < 0 || d >= num_devices) throw ConfigError(fmt::format("device {} out of range", d));
      if (seen[static_cast<std::size_t>(d)]++) {
        throw ConfigError(fmt::format("device {} assigned twice", d));
      }
    }
  }
  for (int d = 0; d < num_devices; ++d) {
    if (!seen[static_cast<std::size_t>(d)]) {
      throw ConfigError(fmt::format("device {} not assigned", d));
    }
  }
}

std::vector<int> kmeans(std::span<const LabelDistribution> points, int k, std::uint64_t seed,
                        int max_iterations, double tolerance) {
  const int n = static_cast<int>(points.size());
  if (n == 0) return {};
  k = std::clamp(k, 1, n);
  const auto dim = static_cast<std::size_t>(points.front().num_classes());
  auto dist2 = [&](std::span<const double> a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t c = 0; c < dim; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
    return s;
  };

  Rng rng = make_rng(seed, "kmeans");
  std::vector<std::vector<double>> centers;
  {
    std::uniform_int_distribution<int> first(0, n - 1);
    const auto p = points[static_cast<std::size_t>(first(rng))].probs();
    centers.emplace_back(p.begin(), p.end());
  }
  std::vector<double> nearest(static_cast<std::size_t>(n));
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, dist2(points[static_cast<std::size_t>(i)].probs(), c));
      nearest[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    if (total <= 0.0) break;  // every point already sits on a center
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng);
    int chosen = n - 1;
    for (int i = 0; i < n; ++i) {
      target -= nearest[static_cast<std::size_t>(i)];
      if (target <= 0.0 && nearest[static_cast<std::size_t>(i)] > 0.0) {
        chosen = i;
        break;
      }
    }
    const auto p = points[static_cast<std::size_t>(chosen)].probs();
    centers.emplace_back(p.begin(), p.end());
  }

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < max_iterations; ++it) {
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const double d = dist2(points[static_cast<std::size_t>(i)].probs(), centers[c]);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      assign[static_cast<std::size_t>(i)] = best;
    }
    double movement = 0.0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      std::vector<double> mean(dim, 0.0);
      int count = 0;
      for (int i = 0; i < n; ++i) {
        if (assign[static_cast<std::size_t>(i)] != static_cast<int>(c)) continue;
        const auto p = points[static_cast<std::size_t>(i)].probs();
        for (std::size_t j = 0; j < dim; ++j) mean[j] += p[j];
        ++count;
      }
      if (count == 0) continue;  // empty cluster keeps its center
      for (auto& v : mean) v /= count;
      movement = std::max(movement, std::sqrt(dist2(mean, centers[c])));
      centers[c] = std::move(mean);
    }
    if (movement < tolerance) break;
  }
  return assign;
}

namespace {

// Evaluates group statistics against fixed normalization scales.
class UtilityModel {
 public:
  UtilityModel(const GroupingInput& input, double lambda) : input_(input), lambda_(lambda) {
    const int n = static_cast<int>(input.distributions.size());
    if (n == 0) throw ConfigError("grouping needs at least one device");
    if (input.sample_counts.size() != input.distributions.size() ||
        input.predicted_times.size() != input.distributions.size()) {
      throw ConfigError("grouping inputs disagree on device count");
    }
    double kl_max = 0.0;
    for (const auto& d : input.distributions) kl_max = std::max(kl_max, kl_divergence(d, input.reference));
    kl_scale_ = kl_max > 0.0 && std::isfinite(kl_max) ? kl_max : 1.0;
    const auto [lo, hi] = std::minmax_element(input.predicted_times.begin(), input.predicted_times.end());
    waiting_scale_ = *hi - *lo > 0.0 ? *hi - *lo : 1.0;
  }

  double kl_scale() const { return kl_scale_; }
  double waiting_scale() const { return waiting_scale_; }

  std::vector<double> mix(std::span<const int> members) const {
    const auto C = static_cast<std::size_t>(input_.reference.num_classes());
    std::vector<double> mass(C, 0.0);
    double weight = 0.0;
    for (int d : members) {
      const double w = input_.sample_counts[static_cast<std::size_t>(d)];
      const auto p = input_.distributions[static_cast<std::size_t>(d)].probs();
      for (std::size_t c = 0; c < C; ++c) mass[c] += w * p[c];
      weight += w;
    }
    for (auto& v : mass) v /= weight;
    return mass;
  }

  double kl(std::span<const int> members) const {
    return kl_divergence(mix(members), input_.reference.probs());
  }

  double waiting(std::span<const int> members) const {
    std::vector<double> times;
    times.reserve(members.size());
    for (int d : members) times.push_back(input_.predicted_times[static_cast<std::size_t>(d)]);
    return predicted_waiting(times);
  }

  double utility(std::span<const int> members) const {
    return lambda_ * waiting(members) / waiting_scale_ + (1.0 - lambda_) * kl(members) / kl_scale_;
  }

  GroupStats stats(std::span<const int> members) const {
    GroupStats s;
    auto m = mix(members);
    const double sum = std::accumulate(m.begin(), m.end(), 0.0);
    for (auto& v : m) v /= sum;
    s.distribution = LabelDistribution(std::move(m));
    s.kl = kl(members);
    s.waiting = waiting(members);
    s.utility = lambda_ * s.waiting / waiting_scale_ + (1.0 - lambda_) * s.kl / kl_scale_;
    return s;
  }

 private:
  const GroupingInput& input_;
  double lambda_;
  double kl_scale_ = 1.0;
  double waiting_scale_ = 1.0;
};

std::vector<int> with(std::vector<int> members, int add) {
  members.insert(std::lower_bound(members.begin(), members.end(), add), add);
  return members;
}

std::vector<int> without(std::vector<int> members, int remove) {
  members.erase(std::find(members.begin(), members.end(), remove));
  return members;
}

}  // namespace

GroupPlan describe_plan(std::vector<std::vector<int>> groups, const GroupingInput& input,
                        double lambda) {
  validate_partition(groups, static_cast<int>(input.distributions.size()));
  UtilityModel model(input, lambda);
  GroupPlan plan;
  plan.lambda = lambda;
  plan.kl_scale = model.kl_scale();
  plan.waiting_scale = model.waiting_scale();
  for (auto& g : groups) std::sort(g.begin(), g.end());
  plan.groups = std::move(groups);
  for (const auto& g : plan.groups) plan.stats.push_back(model.stats(g));
  return plan;
}

GroupPlan build_groups(const GroupingInput& input, const GroupingOptions& options) {
  const int n = static_cast<int>(input.distributions.size());
  if (options.num_groups < 1) throw ConfigError("group count K must be at least 1");
  if (!(options.lambda >= 0.0 && options.lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  int K = options.num_groups;
  if (K > n) {
    spdlog::warn("K={} exceeds device count {}; clamping", K, n);
    K = n;
  }
  UtilityModel model(input, options.lambda);
  const auto time_of = [&](int d) { return input.predicted_times[static_cast<std::size_t>(d)]; };

  // (i) near-identical label mixes share a set
  const auto cluster = kmeans(input.distributions, K, options.seed);
  std::vector<std::vector<int>> sets(static_cast<std::size_t>(K));
  for (int d = 0; d < n; ++d) sets[static_cast<std::size_t>(cluster[static_cast<std::size_t>(d)])].push_back(d);

  // (ii)-(iii) each new group draws from the slowest remaining device of
  // every set, admitting while the group's KL to Phi_0 strictly falls
  std::vector<std::vector<int>> groups;
  auto remaining = [&] {
    return std::any_of(sets.begin(), sets.end(), [](const auto& s) { return !s.empty(); });
  };
  while (remaining()) {
    std::vector<int> candidates;
    for (const auto& s : sets) {
      if (s.empty()) continue;
      int best = s.front();
      for (int d : s) {
        if (time_of(d) > time_of(best)) best = d;
      }
      candidates.push_back(best);
    }
    std::sort(candidates.begin(), candidates.end());

    std::vector<int> group;
    double current_kl = std::numeric_limits<double>::infinity();
    while (!candidates.empty()) {
      int pick = -1;
      double pick_kl = std::numeric_limits<double>::infinity();
      for (int d : candidates) {
        const double kl = model.kl(with(group, d));
        if (pick < 0 || kl < pick_kl) {
          pick = d;
          pick_kl = kl;
        }
      }
      if (!group.empty() && !(pick_kl < current_kl)) break;
      group = with(std::move(group), pick);
      current_kl = pick_kl;
      candidates.erase(std::find(candidates.begin(), candidates.end(), pick));
      auto& s = sets[static_cast<std::size_t>(cluster[static_cast<std::size_t>(pick)])];
      s.erase(std::find(s.begin(), s.end(), pick));
    }
    groups.push_back(std::move(group));
  }

  // Fold surplus groups into the K largest.
  if (static_cast<int>(groups.size()) > K) {
    std::vector<std::size_t> order(groups.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return groups[a].size() > groups[b].size(); });
    std::vector<std::size_t> keep(order.begin(), order.begin() + K);
    std::sort(keep.begin(), keep.end());
    std::vector<int> loose;
    for (std::size_t i = static_cast<std::size_t>(K); i < order.size(); ++i) {
      loose.insert(loose.end(), groups[order[i]].begin(), groups[order[i]].end());
    }
    std::vector<std::vector<int>> kept;
    for (auto i : keep) kept.push_back(std::move(groups[i]));
    std::stable_sort(loose.begin(), loose.end(), [&](int a, int b) {
      return time_of(a) > time_of(b) || (time_of(a) == time_of(b) && a < b);
    });
    for (int d : loose) {
      std::size_t best = 0;
      double best_delta = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < kept.size(); ++k) {
        const double delta = model.utility(with(kept[k], d)) - model.utility(kept[k]);
        if (delta < best_delta) {
          best_delta = delta;
          best = k;
        }
      }
      kept[best] = with(std::move(kept[best]), d);
    }
    groups = std::move(kept);
  }

  // (iv) hill climbing on sum_k U_k with single moves and pairwise swaps
  std::vector<double> utility;
  for (const auto& g : groups) utility.push_back(model.utility(g));
  std::vector<int> owner(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < groups.size(); ++k) {
    for (int d : groups[k]) owner[static_cast<std::size_t>(d)] = static_cast<int>(k);
  }
  const long budget = static_cast<long>(options.move_budget_per_device) * n;
  long evaluated = 0;
  int accepted = 0;
  Rng rng = make_rng(options.seed, "refine");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  constexpr double kMinGain = 1e-12;

  bool improved = groups.size() > 1;
  while (improved && evaluated < budget) {
    improved = false;
    std::shuffle(order.begin(), order.end(), rng);
    for (int a : order) {
      if (evaluated >= budget) break;
      for (std::size_t target = 0; target < groups.size() && evaluated < budget; ++target) {
        const auto src = static_cast<std::size_t>(owner[static_cast<std::size_t>(a)]);
        if (target == src) continue;
        // move a: src -> target
        if (groups[src].size() > 1) {
          ++evaluated;
          auto new_src = without(groups[src], a);
          auto new_dst = with(groups[target], a);
          const double u_src = model.utility(new_src);
          const double u_dst = model.utility(new_dst);
          if (u_src + u_dst < utility[src] + utility[target] - kMinGain) {
            groups[src] = std::move(new_src);
            groups[target] = std::move(new_dst);
            utility[src] = u_src;
            utility[target] = u_dst;
            owner[static_cast<std::size_t>(a)] = static_cast<int>(target);
            ++accepted;
            improved = true;
            continue;
          }
        }
        // swap a with each member of target
        const auto members = groups[target];
        for (int b : members) {
          if (evaluated >= budget) break;
          ++evaluated;
          auto new_src = with(without(groups[src], a), b);
          auto new_dst = with(without(groups[target], b), a);
          const double u_src = model.utility(new_src);
          const double u_dst = model.utility(new_dst);
          if (u_src + u_dst < utility[src] + utility[target] - kMinGain) {
            groups[src] = std::move(new_src);
            groups[target] = std::move(new_dst);
            utility[src] = u_src;
            utility[target] = u_dst;
            owner[static_cast<std::size_t>(a)] = static_cast<int>(target);
            owner[static_cast<std::size_t>(b)] = static_cast<int>(src);
            ++accepted;
            improved = true;
            break;
          }
        }
      }
    }
  }

  GroupPlan plan = describe_plan(std::move(groups), input, options.lambda);
  plan.accepted_moves = accepted;
  plan.evaluated_moves = static_cast<int>(evaluated);
  return plan;
}

}  // namespace hierfed
