// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fbm/layers.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fbm::nn {

/// Ordered layer table. Chained architectures can be trained; tables with
/// explicit branch inputs (e.g. residual downsample convs) are for
/// simulation only.
struct Architecture {
    std::string name;
    std::vector<LayerSpec> layers;

    /// True when every layer's input shape equals its predecessor's output.
    bool is_chain() const;
    std::size_t num_quantizable() const;
    /// Layer-table indices of the quantizable layers, in order.
    std::vector<std::size_t> quantizable_indices() const;
};

/// Static list of layers with reverse-mode gradients. Quantizable layers
/// (those with parameters) are addressed 0..N-1 in order.
class Model {
public:
    Model() = default;
    /// Builds the layers with He-normal weights and zero biases.
    Model(const Architecture& arch, std::uint64_t seed);

    Model(const Model& other);
    Model& operator=(const Model& other);
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;

    const std::string& name() const { return name_; }
    std::size_t num_layers() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }
    const Layer& layer(std::size_t i) const { return *layers_.at(i); }
    std::size_t num_quantizable() const { return quantizable_.size(); }
    ParamLayer& quantizable(std::size_t q);
    const ParamLayer& quantizable(std::size_t q) const;
    std::size_t num_classes() const;
    std::size_t parameter_count() const;
    std::vector<LayerSpec> specs() const;
    Architecture architecture() const;

    /// Logits of shape (batch, K). Caches activations for backward.
    Tensor forward(const Tensor& batch);
    /// Back-propagates dL/dlogits, accumulating parameter gradients.
    void backward(const Tensor& grad_logits);
    void zero_grad();

    /// Per-quantizable-layer bitwidths (0 = full precision).
    std::vector<int> bits() const;
    void set_bits(std::span<const int> bits);
    /// Sets bits and recalibrates activation scales from one forward pass.
    void requantize(std::span<const int> bits, const Tensor& calibration_batch);

private:
    void index_layers();

    std::string name_;
    std::vector<std::unique_ptr<Layer>> layers_;
    std::vector<std::size_t> quantizable_;
    bool forward_done_ = false;
};

struct LossResult {
    double loss = 0.0;
    Tensor grad;  ///< dL/dlogits, mean-reduced
};

/// Mean cross-entropy in nats, log-sum-exp stabilized.
double cross_entropy(const Tensor& logits, std::span<const int> labels);
LossResult cross_entropy_with_grad(const Tensor& logits, std::span<const int> labels);
/// Per-sample cross-entropy values.
std::vector<double> cross_entropy_per_sample(const Tensor& logits, std::span<const int> labels);
std::vector<int> argmax_rows(const Tensor& logits);

/// SGD with momentum and coupled L2 weight decay:
/// v = mu*v + (g + wd*theta), theta -= lr*v. `lr_per_layer` has one entry
/// per quantizable layer.
void sgd_step(Model& model, std::span<const double> lr_per_layer, double momentum,
              double weight_decay);

} // namespace fbm::nn
