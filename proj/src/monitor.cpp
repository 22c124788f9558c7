// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include "hierfed/monitor.hpp"

#include <algorithm>
#include <cmath>

#include "hierfed/errors.hpp"

namespace hierfed {

double DeviceProfile::mode_multiplier(int round) const {
  if (mode_multipliers.empty() || mode_period <= 0) return 1.0;
  const auto idx = static_cast<std::size_t>(std::max(round - 1, 0) / mode_period);
  return mode_multipliers[std::min(idx, mode_multipliers.size() - 1)];
}

namespace {

double lognormal_noise(double sigma, Rng& rng) {
  if (sigma <= 0.0) return 1.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  return std::exp(sigma * normal(rng) - 0.5 * sigma * sigma);
}

double log_uniform(double lo, double hi, Rng& rng) {
  if (hi <= lo) return lo;
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(rng));
}

}  // namespace

RoundTimes sample_round_times(const DeviceProfile& profile, const TimingModel& timing, int depth,
                              int steps, int round, Rng& rng) {
  if (depth < 1) throw ConfigError("depth must be at least 1");
  const double mode = profile.mode_multiplier(round);
  RoundTimes t;
  t.compute = steps * profile.compute_time_per_step * mode * timing.step_work(depth) *
              lognormal_noise(timing.noise_sigma, rng);
  t.upload = depth * profile.upload_time_per_layer * mode * lognormal_noise(timing.noise_sigma, rng);
  return t;
}

std::vector<DeviceProfile> make_profiles(std::span<const DeviceDataset> devices,
                                         const ProfileOptions& options, std::uint64_t seed) {
  if (!(options.compute_min > 0.0 && options.upload_min > 0.0 && options.mode_min > 0.0)) {
    throw ConfigError("device profile ranges must be positive");
  }
  const int periods = options.mode_period > 0
                          ? (std::max(options.num_rounds, 1) + options.mode_period - 1) /
                                options.mode_period
                          : 1;
  std::vector<DeviceProfile> out;
  out.reserve(devices.size());
  for (const auto& dev : devices) {
    Rng rng = make_rng(seed, "profile", static_cast<std::uint64_t>(dev.device_id));
    DeviceProfile p;
    p.device_id = dev.device_id;
    p.compute_time_per_step = log_uniform(options.compute_min, options.compute_max, rng);
    p.upload_time_per_layer = log_uniform(options.upload_min, options.upload_max, rng);
    p.mode_period = options.mode_period;
    for (int k = 0; k < periods; ++k) {
      p.mode_multipliers.push_back(log_uniform(options.mode_min, options.mode_max, rng));
    }
    p.label_distribution = dev.distribution;
    out.push_back(std::move(p));
  }
  return out;
}

CapacityEstimate::CapacityEstimate(double alpha) : alpha_(alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("EMA alpha must lie in [0, 1]");
}

bool CapacityEstimate::observe(double measured_compute, double measured_upload) {
  if (!(measured_compute > 0.0) || !(measured_upload > 0.0) || !std::isfinite(measured_compute) ||
      !std::isfinite(measured_upload)) {
    return false;
  }
  if (!compute_) {
    compute_ = measured_compute;
    upload_ = measured_upload;
    return true;
  }
  compute_ = alpha_ * *compute_ + (1.0 - alpha_) * measured_compute;
  upload_ = alpha_ * *upload_ + (1.0 - alpha_) * measured_upload;
  return true;
}

double CapacityEstimate::compute() const {
  if (!compute_) throw ConfigError("capacity estimate read before any observation");
  return *compute_;
}

double CapacityEstimate::upload() const {
  if (!upload_) throw ConfigError("capacity estimate read before any observation");
  return *upload_;
}

StatusMonitor::StatusMonitor(int num_devices, double alpha)
    : estimates_(static_cast<std::size_t>(num_devices), CapacityEstimate(alpha)) {}

bool StatusMonitor::observe(int device, double measured_compute, double measured_upload) {
  return estimates_.at(static_cast<std::size_t>(device)).observe(measured_compute, measured_upload);
}

const CapacityEstimate& StatusMonitor::estimate(int device) const {
  return estimates_.at(static_cast<std::size_t>(device));
}

double StatusMonitor::predicted_round_time(int device, const TimingModel& timing, int steps,
                                           int frequency, int depth) const {
  const auto& e = estimate(device);
  return steps * e.compute() * timing.step_work(depth) + frequency * depth * e.upload();
}

}  // namespace hierfed
