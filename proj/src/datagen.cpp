// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include "hierfed/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hierfed/errors.hpp"

namespace hierfed {

LabelDistribution::LabelDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw ConfigError("label distribution needs at least one class");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("label probability outside [0, 1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError(fmt::format("label distribution sums to {}, not 1", sum));
  }
}

LabelDistribution LabelDistribution::uniform(int num_classes) {
  return LabelDistribution(std::vector<double>(static_cast<std::size_t>(num_classes),
                                               1.0 / num_classes));
}

LabelDistribution LabelDistribution::from_counts(std::span<const int> counts) {
  const long total = std::accumulate(counts.begin(), counts.end(), 0L);
  if (total <= 0) throw ConfigError("label counts must have a positive total");
  std::vector<double> probs(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    probs[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
  }
  return LabelDistribution(std::move(probs));
}

TaskGenerator::TaskGenerator(int num_classes, int input_dim, double noise_sigma,
                             std::uint64_t seed)
    : num_classes_(num_classes), input_dim_(input_dim), noise_sigma_(noise_sigma) {
  if (num_classes < 2) throw ConfigError("task needs at least two classes");
  if (input_dim < 1) throw ConfigError("input dimension must be positive");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be nonnegative");

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  means_.resize(num_classes, input_dim);
  for (int c = 0; c < num_classes; ++c) {
    // Redraw until the mean is usable and differs from earlier ones.
    for (;;) {
      Vector v(input_dim);
      for (int j = 0; j < input_dim; ++j) v(j) = normal(rng);
      const double norm = v.norm();
      if (norm < 1e-8) continue;
      v /= norm;
      bool distinct = true;
      for (int prev = 0; prev < c && distinct; ++prev) {
        distinct = (means_.row(prev).transpose() - v).norm() > 1e-6;
      }
      if (!distinct) continue;
      means_.row(c) = v.transpose();
      break;
    }
  }
}

Vector TaskGenerator::sample_features(int label, Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector x = means_.row(label).transpose();
  if (noise_sigma_ > 0.0) {
    for (int j = 0; j < input_dim_; ++j) x(j) += noise_sigma_ * normal(rng);
  }
  return x;
}

std::pair<Vector, int> TaskGenerator::sample(const LabelDistribution& prior, Rng& rng) const {
  if (prior.num_classes() != num_classes_) throw ConfigError("prior has wrong class count");
  std::discrete_distribution<int> pick(prior.probs().begin(), prior.probs().end());
  const int y = pick(rng);
  return {sample_features(y, rng), y};
}

Batch TaskGenerator::make_dataset(std::span<const int> labels, Rng& rng) const {
  Batch batch;
  batch.inputs.resize(static_cast<Eigen::Index>(labels.size()), input_dim_);
  batch.labels.assign(labels.begin(), labels.end());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    batch.inputs.row(static_cast<Eigen::Index>(i)) = sample_features(labels[i], rng).transpose();
  }
  return batch;
}

Batch TaskGenerator::balanced_dataset(int total, Rng& rng) const {
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) labels.push_back(i % num_classes_);
  std::shuffle(labels.begin(), labels.end(), rng);
  return make_dataset(labels, rng);
}

TaskGenerator generate_task(int num_classes, int input_dim, std::uint64_t seed,
                            double noise_sigma) {
  return TaskGenerator(num_classes, input_dim, noise_sigma, seed);
}

std::vector<int> largest_remainder(std::span<const double> weights, int total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<int> counts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    const double exact = weights[c] / sum * total;
    counts[c] = static_cast<int>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - counts[c], c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) {
    ++counts[remainders[i % remainders.size()].second];
  }
  return counts;
}

std::vector<double> sample_dirichlet(std::span<const double> concentration, Rng& rng) {
  // Gamma(a) = Gamma(a + 1) * U^(1/a), taken in logs.
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> logs(concentration.size());
  for (std::size_t c = 0; c < concentration.size(); ++c) {
    const double a = concentration[c];
    if (!(a > 0.0)) throw ConfigError("Dirichlet concentration must be positive");
    std::gamma_distribution<double> gamma(a + 1.0, 1.0);
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    logs[c] = std::log(gamma(rng)) + std::log(u) / a;
  }
  const double mx = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  for (auto& v : logs) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : logs) v /= sum;
  return logs;
}

std::vector<DeviceDataset> partition(const PartitionSpec& spec, const TaskGenerator& task) {
  if (spec.num_devices < 1) throw ConfigError("partition needs at least one device");
  if (spec.num_classes != task.num_classes()) {
    throw ConfigError("partition class count differs from the task");
  }
  if (spec.samples_per_device < 1) throw ConfigError("samples_per_device must be positive");
  if (!(spec.non_iid_level >= 0.0)) throw ConfigError("non-IID level must be nonnegative");
  if (spec.samples_per_device < spec.num_classes) {
    spdlog::warn("samples_per_device={} < C={}: label mixes are coarsely rounded",
                 spec.samples_per_device, spec.num_classes);
  }

  const std::size_t C = static_cast<std::size_t>(spec.num_classes);
  const std::vector<double> prior(C, 1.0 / static_cast<double>(C));
  std::vector<DeviceDataset> out;
  out.reserve(static_cast<std::size_t>(spec.num_devices));
  for (int i = 0; i < spec.num_devices; ++i) {
    Rng rng = make_rng(spec.seed, "partition", static_cast<std::uint64_t>(i));
    std::vector<double> mix = prior;
    if (spec.non_iid_level > 0.0) {
      const double delta = 1.0 / spec.non_iid_level;
      std::vector<double> conc(C);
      for (std::size_t c = 0; c < C; ++c) conc[c] = delta * prior[c];
      mix = sample_dirichlet(conc, rng);
    }
    auto counts = largest_remainder(mix, spec.samples_per_device);

    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(spec.samples_per_device));
    for (std::size_t c = 0; c < C; ++c) labels.insert(labels.end(), counts[c], static_cast<int>(c));
    std::shuffle(labels.begin(), labels.end(), rng);

    DeviceDataset dev;
    dev.device_id = i;
    dev.data = task.make_dataset(labels, rng);
    dev.class_counts = counts;
    dev.distribution = LabelDistribution::from_counts(counts);
    dev.dirichlet_draw = LabelDistribution(mix);
    out.push_back(std::move(dev));
  }
  return out;
}

std::string dataset_csv(std::span<const DeviceDataset> devices) {
  std::string out = "device_id,class";
  if (!devices.empty()) {
    for (Eigen::Index j = 0; j < devices.front().data.inputs.cols(); ++j) {
      out += fmt::format(",f{}", j);
    }
  }
  out += '\n';
  for (const auto& dev : devices) {
    for (int i = 0; i < dev.data.size(); ++i) {
      out += fmt::format("{},{}", dev.device_id, dev.data.labels[static_cast<std::size_t>(i)]);
      for (Eigen::Index j = 0; j < dev.data.inputs.cols(); ++j) {
        out += fmt::format(",{}", dev.data.inputs(i, j));
      }
      out += '\n';
    }
  }
  return out;
}

}  // namespace hierfed
