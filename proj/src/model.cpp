// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#include "hierfed/model.hpp"

#include <cmath>
#include <string>

#include <fmt/format.h>

#include "hierfed/errors.hpp"
#include "hierfed/rng.hpp"

namespace hierfed {

LayeredAdapterModel LayeredAdapterModel::create(const ModelShape& shape, std::uint64_t seed) {
  if (shape.num_layers < 1 || shape.input_dim < 1 || shape.hidden_dim < 1 ||
      shape.num_classes < 2 || shape.rank < 1) {
    throw ConfigError("model shape must have L >= 1, dims >= 1, C >= 2, r >= 1");
  }
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<LayerBlock> layers;
  layers.reserve(static_cast<std::size_t>(shape.num_layers));
  for (int l = 0; l < shape.num_layers; ++l) {
    const int q = l == 0 ? shape.input_dim : shape.hidden_dim;
    const int m = l == shape.num_layers - 1 ? shape.num_classes : shape.hidden_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(q));
    std::uniform_real_distribution<double> up_init(-scale, scale);

    LayerBlock block;
    block.frozen_weight.resize(m, q);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < q; ++j) block.frozen_weight(i, j) = normal(rng) * scale;
    block.frozen_bias.resize(m);
    for (int i = 0; i < m; ++i) block.frozen_bias(i) = 0.1 * normal(rng);
    block.adapter_down = Matrix::Zero(m, shape.rank);
    block.adapter_up.resize(shape.rank, q);
    for (int i = 0; i < shape.rank; ++i)
      for (int j = 0; j < q; ++j) block.adapter_up(i, j) = up_init(rng);
    layers.push_back(std::move(block));
  }
  return LayeredAdapterModel(std::move(layers), shape.rank);
}

LayeredAdapterModel::LayeredAdapterModel(std::vector<LayerBlock> layers, int rank)
    : layers_(std::move(layers)), rank_(rank) {
  if (layers_.empty()) throw ConfigError("model needs at least one layer");
  if (rank_ < 1) throw ConfigError("adapter rank must be positive");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& b = layers_[l];
    const auto m = b.frozen_weight.rows();
    const auto q = b.frozen_weight.cols();
    if (b.frozen_bias.size() != m || b.adapter_down.rows() != m ||
        b.adapter_down.cols() != rank_ || b.adapter_up.rows() != rank_ ||
        b.adapter_up.cols() != q) {
      throw ConfigError(fmt::format("layer {} has inconsistent block shapes", l));
    }
    if (l + 1 < layers_.size() && layers_[l + 1].frozen_weight.cols() != m) {
      throw ConfigError(fmt::format("layer {} output does not feed layer {}", l, l + 1));
    }
  }
}

int LayeredAdapterModel::first_tuned_layer(int depth) const {
  if (depth < 1 || depth > num_layers()) {
    throw ConfigError(
        fmt::format("fine-tuning depth {} outside [1, {}]", depth, num_layers()));
  }
  return num_layers() - depth;
}

void LayeredAdapterModel::zero_adapters() {
  for (auto& b : layers_) {
    b.adapter_down.setZero();
    b.adapter_up.setZero();
  }
}

namespace {

void check_batch(const LayeredAdapterModel& model, const Batch& batch) {
  if (batch.size() < 1) throw ConfigError("batch must contain at least one sample");
  if (batch.inputs.rows() != batch.size()) {
    throw ConfigError("batch inputs and labels disagree on sample count");
  }
  if (batch.inputs.cols() != model.input_dim()) {
    throw ConfigError(fmt::format("batch input dim {} != model input dim {}",
                                  batch.inputs.cols(), model.input_dim()));
  }
  for (int y : batch.labels) {
    if (y < 0 || y >= model.num_classes()) {
      throw ConfigError(fmt::format("label {} outside [0, {})", y, model.num_classes()));
    }
  }
}

// activations[0] = inputs; activations[l + 1] = output of layer l.
// The last entry holds the logits (no tanh).
std::vector<Matrix> run_layers(const LayeredAdapterModel& model, const Matrix& inputs) {
  std::vector<Matrix> acts;
  acts.reserve(static_cast<std::size_t>(model.num_layers()) + 1);
  acts.push_back(inputs);
  for (int l = 0; l < model.num_layers(); ++l) {
    const auto& b = model.layer(l);
    Matrix z = acts.back() * b.effective_weight().transpose();
    z.rowwise() += b.frozen_bias.transpose();
    if (l + 1 < model.num_layers()) z = z.array().tanh().matrix();
    acts.push_back(std::move(z));
  }
  return acts;
}

// Mean cross-entropy; fills `probs` with the row softmax when non-null.
double cross_entropy(const Matrix& logits, const std::vector<int>& labels, Matrix* probs) {
  const auto n = logits.rows();
  double total = 0.0;
  if (probs) probs->resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - mx).exp();
    const double sum = shifted.sum();
    total += std::log(sum) + mx - logits(i, labels[static_cast<std::size_t>(i)]);
    if (probs) probs->row(i) = shifted / sum;
  }
  return total / static_cast<double>(n);
}

}  // namespace

ForwardResult forward(const LayeredAdapterModel& model, const Batch& batch) {
  check_batch(model, batch);
  auto acts = run_layers(model, batch.inputs);
  ForwardResult out;
  out.loss = cross_entropy(acts.back(), batch.labels, nullptr);
  out.logits = std::move(acts.back());
  return out;
}

GradientResult adapter_gradients(const LayeredAdapterModel& model, const Batch& batch,
                                 int depth) {
  const int first = model.first_tuned_layer(depth);
  check_batch(model, batch);
  const auto acts = run_layers(model, batch.inputs);

  GradientResult out;
  Matrix grad;  // dLoss/dz for the current layer, batch x m
  out.loss = cross_entropy(acts.back(), batch.labels, &grad);
  for (int i = 0; i < batch.size(); ++i) grad(i, batch.labels[static_cast<std::size_t>(i)]) -= 1.0;
  grad /= static_cast<double>(batch.size());

  out.first_layer = first;
  out.gradients.resize(static_cast<std::size_t>(depth));
  for (int l = model.num_layers() - 1; l >= first; --l) {
    const auto& b = model.layer(l);
    const Matrix& input = acts[static_cast<std::size_t>(l)];
    const Matrix weight_grad = grad.transpose() * input;  // m x q
    auto& g = out.gradients[static_cast<std::size_t>(l - first)];
    g.down = weight_grad * b.adapter_up.transpose();
    g.up = b.adapter_down.transpose() * weight_grad;
    if (l > first) {
      Matrix back = grad * b.effective_weight();
      grad = (back.array() * (1.0 - input.array().square())).matrix();
    }
  }
  return out;
}

double local_step(LayeredAdapterModel& model, const Batch& batch, int depth,
                  double learning_rate) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  auto result = adapter_gradients(model, batch, depth);
  for (std::size_t i = 0; i < result.gradients.size(); ++i) {
    auto& b = model.layer(result.first_layer + static_cast<int>(i));
    b.adapter_down -= learning_rate * result.gradients[i].down;
    b.adapter_up -= learning_rate * result.gradients[i].up;
  }
  return result.loss;
}

int AdapterDelta::depth() const {
  int d = 0;
  for (auto it = layers.rbegin(); it != layers.rend() && it->has_value(); ++it) ++d;
  return d;
}

AdapterDelta extract_delta(const LayeredAdapterModel& model, int depth, DeltaIds ids) {
  const int first = model.first_tuned_layer(depth);
  AdapterDelta delta;
  delta.ids = ids;
  delta.layers.resize(static_cast<std::size_t>(model.num_layers()));
  for (int l = first; l < model.num_layers(); ++l) {
    const auto& b = model.layer(l);
    delta.layers[static_cast<std::size_t>(l)] = AdapterPair{b.adapter_down, b.adapter_up};
  }
  return delta;
}

void apply_params(LayeredAdapterModel& model, const AdapterDelta& delta) {
  if (delta.num_layers() != model.num_layers()) {
    throw ProtocolError(fmt::format("delta carries {} layers, model has {}",
                                    delta.num_layers(), model.num_layers()));
  }
  for (int l = 0; l < model.num_layers(); ++l) {
    const auto& entry = delta.layers[static_cast<std::size_t>(l)];
    if (!entry) continue;
    auto& b = model.layer(l);
    if (entry->down.rows() != b.adapter_down.rows() ||
        entry->down.cols() != b.adapter_down.cols() ||
        entry->up.rows() != b.adapter_up.rows() || entry->up.cols() != b.adapter_up.cols()) {
      throw ProtocolError(fmt::format("delta layer {} shape mismatch", l));
    }
  }
  for (int l = 0; l < model.num_layers(); ++l) {
    const auto& entry = delta.layers[static_cast<std::size_t>(l)];
    if (!entry) continue;
    model.layer(l).adapter_down = entry->down;
    model.layer(l).adapter_up = entry->up;
  }
}

AdapterDelta average_deltas(std::span<const AdapterDelta> deltas) {
  if (deltas.empty()) throw ProtocolError("cannot average an empty set of deltas");
  AdapterDelta out = deltas.front();
  for (std::size_t k = 1; k < deltas.size(); ++k) {
    const auto& d = deltas[k];
    if (d.num_layers() != out.num_layers()) throw ProtocolError("delta layer counts differ");
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
      if (out.layers[l].has_value() != d.layers[l].has_value()) {
        throw ProtocolError("deltas cover different layers");
      }
      if (!out.layers[l]) continue;
      out.layers[l]->down += d.layers[l]->down;
      out.layers[l]->up += d.layers[l]->up;
    }
  }
  const auto count = static_cast<double>(deltas.size());
  for (auto& entry : out.layers) {
    if (!entry) continue;
    entry->down /= count;
    entry->up /= count;
  }
  return out;
}

}  // namespace hierfed
