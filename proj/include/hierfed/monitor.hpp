// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <vector>

#include "hierfed/datagen.hpp"
#include "hierfed/rng.hpp"

namespace hierfed {

// Ground truth for one simulated device. The scheduler never reads this;
// it only sees CapacityEstimate values built from sampled measurements.
struct DeviceProfile {
  int device_id = 0;
  double compute_time_per_step = 1.0;   // seconds per step at unit work
  double upload_time_per_layer = 0.1;   // seconds per layer of adapters
  std::vector<double> mode_multipliers; // one per mode period
  int mode_period = 20;
  LabelDistribution label_distribution;

  // Multiplier in effect for 1-based round `round`; 1 when no schedule.
  double mode_multiplier(int round) const;
};

struct TimingModel {
  double forward_fraction = 0.4;
  double backprop_fraction = 0.05;  // per tuned layer
  double noise_sigma = 0.1;         // lognormal, mean 1

  // Work units of one local step at depth d.
  double step_work(int depth) const { return forward_fraction + depth * backprop_fraction; }
};

struct RoundTimes {
  double compute = 0.0;
  double upload = 0.0;
};

// compute = steps * mu * mode * (fwd + d * bwd) * noise
// upload  = d * beta * mode * noise
RoundTimes sample_round_times(const DeviceProfile& profile, const TimingModel& timing, int depth,
                              int steps, int round, Rng& rng);

struct ProfileOptions {
  double compute_min = 0.05;  // per-step time range, log-uniform
  double compute_max = 0.5;
  double upload_min = 0.02;   // per-layer upload time range, log-uniform
  double upload_max = 0.2;
  double mode_min = 1.0;      // mode multiplier range, log-uniform
  double mode_max = 2.0;
  int mode_period = 20;
  int num_rounds = 100;       // schedule length
};

std::vector<DeviceProfile> make_profiles(std::span<const DeviceDataset> devices,
                                         const ProfileOptions& options, std::uint64_t seed);

// Exponential moving average of a device's per-unit compute time and
// per-layer upload time.
class CapacityEstimate {
 public:
  explicit CapacityEstimate(double alpha = 0.8);

  // Returns false (and leaves the estimate untouched) for nonpositive or
  // non-finite measurements. The first accepted observation initializes.
  bool observe(double measured_compute, double measured_upload);

  bool initialized() const { return compute_.has_value(); }
  double compute() const;
  double upload() const;
  double alpha() const { return alpha_; }

 private:
  double alpha_;
  std::optional<double> compute_;
  std::optional<double> upload_;
};

class StatusMonitor {
 public:
  StatusMonitor(int num_devices, double alpha);

  bool observe(int device, double measured_compute, double measured_upload);
  const CapacityEstimate& estimate(int device) const;
  int num_devices() const { return static_cast<int>(estimates_.size()); }

  // Predicted round time mu + beta under T steps at (frequency, depth).
  double predicted_round_time(int device, const TimingModel& timing, int steps, int frequency,
                              int depth) const;

 private:
  std::vector<CapacityEstimate> estimates_;
};

}  // namespace hierfed
