// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace hierfed {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ModelShape {
  int input_dim = 16;
  int hidden_dim = 32;
  int num_classes = 10;
  int num_layers = 4;
  int rank = 4;
};

// One layer: frozen weight M (m x q) and bias, plus the trainable low-rank
// pair B (m x r), A (r x q). The effective weight is M + B*A.
struct LayerBlock {
  Matrix frozen_weight;
  Vector frozen_bias;
  Matrix adapter_down;  // B
  Matrix adapter_up;    // A

  Matrix effective_weight() const { return frozen_weight + adapter_down * adapter_up; }
  int out_dim() const { return static_cast<int>(frozen_weight.rows()); }
  int in_dim() const { return static_cast<int>(frozen_weight.cols()); }
};

class LayeredAdapterModel {
 public:
  // Frozen weights ~ N(0, 1/q), biases ~ N(0, 0.01), B = 0,
  // A ~ U(-1/sqrt(q), 1/sqrt(q)).
  static LayeredAdapterModel create(const ModelShape& shape, std::uint64_t seed);

  // Validates that the blocks chain (out_dim of l == in_dim of l+1) and
  // that every adapter pair has rank `rank`.
  LayeredAdapterModel(std::vector<LayerBlock> layers, int rank);

  int num_layers() const { return static_cast<int>(layers_.size()); }
  int rank() const { return rank_; }
  int input_dim() const { return layers_.front().in_dim(); }
  int num_classes() const { return layers_.back().out_dim(); }

  const LayerBlock& layer(int l) const { return layers_.at(static_cast<std::size_t>(l)); }
  LayerBlock& layer(int l) { return layers_.at(static_cast<std::size_t>(l)); }
  std::span<const LayerBlock> layers() const { return layers_; }

  // Index of the lowest layer trained at `depth`; throws ConfigError when
  // depth is outside [1, L].
  int first_tuned_layer(int depth) const;

  void zero_adapters();

 private:
  std::vector<LayerBlock> layers_;
  int rank_;
};

// Rows of `inputs` are samples.
struct Batch {
  Matrix inputs;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
};

struct ForwardResult {
  double loss = 0.0;
  Matrix logits;  // batch x C
};

ForwardResult forward(const LayeredAdapterModel& model, const Batch& batch);

struct AdapterGradient {
  Matrix down;
  Matrix up;
};

struct GradientResult {
  double loss = 0.0;
  int first_layer = 0;                     // gradients[i] belongs to layer first_layer + i
  std::vector<AdapterGradient> gradients;
};

// Exact gradient of the mean cross-entropy w.r.t. the adapters of the
// `depth` output-most layers.
GradientResult adapter_gradients(const LayeredAdapterModel& model, const Batch& batch,
                                 int depth);

// One SGD step on the adapters of the top `depth` layers. Returns the loss
// before the step.
double local_step(LayeredAdapterModel& model, const Batch& batch, int depth,
                  double learning_rate);

struct AdapterPair {
  Matrix down;
  Matrix up;
};

struct DeltaIds {
  int round = 0;
  int group = 0;
  int device = 0;
};

// Adapter payload for the top `depth` layers; lower entries are empty.
struct AdapterDelta {
  std::vector<std::optional<AdapterPair>> layers;
  DeltaIds ids;

  int depth() const;
  int num_layers() const { return static_cast<int>(layers.size()); }
};

AdapterDelta extract_delta(const LayeredAdapterModel& model, int depth, DeltaIds ids = {});

// Overwrites the adapters present in `delta`. Throws ProtocolError when the
// layer count or any matrix shape disagrees with the model.
void apply_params(LayeredAdapterModel& model, const AdapterDelta& delta);

// Element-wise mean of deltas with identical coverage, summed in span order.
AdapterDelta average_deltas(std::span<const AdapterDelta> deltas);

}  // namespace hierfed
