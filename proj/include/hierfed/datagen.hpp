// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hierfed/model.hpp"
#include "hierfed/rng.hpp"

namespace hierfed {

// Categorical distribution over C class labels.
class LabelDistribution {
 public:
  LabelDistribution() = default;
  // Throws ConfigError unless every entry is in [0, 1] and the sum is 1
  // within 1e-9.
  explicit LabelDistribution(std::vector<double> probs);

  static LabelDistribution uniform(int num_classes);
  static LabelDistribution from_counts(std::span<const int> counts);

  int num_classes() const { return static_cast<int>(probs_.size()); }
  double operator[](int c) const { return probs_[static_cast<std::size_t>(c)]; }
  std::span<const double> probs() const { return probs_; }

 private:
  std::vector<double> probs_;
};

// Gaussian class-conditional task: x | y=c ~ N(mean_c, noise^2 I) with
// unit-norm, pairwise-distinct class means.
class TaskGenerator {
 public:
  TaskGenerator(int num_classes, int input_dim, double noise_sigma, std::uint64_t seed);

  int num_classes() const { return num_classes_; }
  int input_dim() const { return input_dim_; }
  double noise_sigma() const { return noise_sigma_; }
  const Matrix& class_means() const { return means_; }  // C x input_dim

  Vector sample_features(int label, Rng& rng) const;
  // Draws a label from `prior`, then its features.
  std::pair<Vector, int> sample(const LabelDistribution& prior, Rng& rng) const;
  // Dataset with the given labels, in the given order.
  Batch make_dataset(std::span<const int> labels, Rng& rng) const;
  // Exactly balanced dataset of `total` samples (remainder spread over the
  // lowest class ids), shuffled.
  Batch balanced_dataset(int total, Rng& rng) const;

 private:
  int num_classes_;
  int input_dim_;
  double noise_sigma_;
  Matrix means_;
};

TaskGenerator generate_task(int num_classes, int input_dim, std::uint64_t seed,
                            double noise_sigma = 0.35);

struct PartitionSpec {
  int num_devices = 100;
  int num_classes = 10;
  double non_iid_level = 0.0;  // p = 1/delta; 0 means IID
  int samples_per_device = 160;
  std::uint64_t seed = 1;
};

struct DeviceDataset {
  int device_id = 0;
  Batch data;
  std::vector<int> class_counts;
  LabelDistribution distribution;  // empirical frequencies of `data`
  LabelDistribution dirichlet_draw;
};

// Largest-remainder rounding of `weights * total`; ties go to the lower index.
std::vector<int> largest_remainder(std::span<const double> weights, int total);

// Dirichlet(concentration) draw computed in log space so that very small
// concentrations (delta/C ~ 1e-3) do not underflow to an all-zero vector.
std::vector<double> sample_dirichlet(std::span<const double> concentration, Rng& rng);

std::vector<DeviceDataset> partition(const PartitionSpec& spec, const TaskGenerator& task);

// CSV rows: device_id,class,f0,f1,...
std::string dataset_csv(std::span<const DeviceDataset> devices);

}  // namespace hierfed
