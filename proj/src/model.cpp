// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace fbm::nn {

bool Architecture::is_chain() const {
    for (std::size_t i = 1; i < layers.size(); ++i) {
        if (layers[i].input != layers[i - 1].output) return false;
    }
    return true;
}

std::size_t Architecture::num_quantizable() const {
    return static_cast<std::size_t>(
        std::count_if(layers.begin(), layers.end(), [](const LayerSpec& s) { return s.quantizable(); }));
}

std::vector<std::size_t> Architecture::quantizable_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].quantizable()) out.push_back(i);
    }
    return out;
}

Model::Model(const Architecture& arch, std::uint64_t seed) : name_(arch.name) {
    if (arch.layers.empty()) throw std::invalid_argument("model: empty architecture");
    if (!arch.is_chain()) {
        throw std::invalid_argument("model '" + arch.name +
                                    "': layer shapes do not chain; table is simulation-only");
    }
    std::mt19937_64 rng(seed);
    for (const auto& spec : arch.layers) {
        auto layer = make_layer(spec);
        if (auto* p = dynamic_cast<ParamLayer*>(layer.get())) {
            const std::size_t fan_in = spec.kind == LayerKind::dense
                                           ? spec.input[0]
                                           : spec.input[0] * spec.kernel * spec.kernel;
            std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
            for (double& w : p->weight().value.values()) w = init(rng);
        }
        layers_.push_back(std::move(layer));
    }
    index_layers();
}

Model::Model(const Model& other) : name_(other.name_), forward_done_(false) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
    index_layers();
}

Model& Model::operator=(const Model& other) {
    if (this != &other) {
        Model copy(other);
        *this = std::move(copy);
    }
    return *this;
}

void Model::index_layers() {
    quantizable_.clear();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i]->spec().quantizable()) quantizable_.push_back(i);
    }
}

ParamLayer& Model::quantizable(std::size_t q) {
    return static_cast<ParamLayer&>(*layers_.at(quantizable_.at(q)));
}

const ParamLayer& Model::quantizable(std::size_t q) const {
    return static_cast<const ParamLayer&>(*layers_.at(quantizable_.at(q)));
}

std::size_t Model::num_classes() const {
    return layers_.empty() ? 0 : layers_.back()->spec().output_elements();
}

std::size_t Model::parameter_count() const {
    std::size_t total = 0;
    for (const auto& l : layers_) total += l->spec().params;
    return total;
}

std::vector<LayerSpec> Model::specs() const {
    std::vector<LayerSpec> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) out.push_back(l->spec());
    return out;
}

Architecture Model::architecture() const { return {name_, specs()}; }

Tensor Model::forward(const Tensor& batch) {
    Tensor x = batch;
    for (auto& l : layers_) x = l->forward(x);
    forward_done_ = true;
    return x;
}

void Model::backward(const Tensor& grad_logits) {
    if (!forward_done_) throw std::logic_error("model: backward before forward");
    Tensor g = grad_logits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
}

void Model::zero_grad() {
    for (std::size_t q = 0; q < num_quantizable(); ++q) {
        for (auto& p : quantizable(q).parameters()) p.value.zero_grad();
    }
}

std::vector<int> Model::bits() const {
    std::vector<int> out;
    out.reserve(num_quantizable());
    for (std::size_t q = 0; q < num_quantizable(); ++q) out.push_back(quantizable(q).bits());
    return out;
}

void Model::set_bits(std::span<const int> bits) {
    if (bits.size() != num_quantizable()) {
        throw std::invalid_argument("set_bits: got " + std::to_string(bits.size()) + " bitwidths for " +
                                    std::to_string(num_quantizable()) + " quantizable layers");
    }
    for (std::size_t q = 0; q < bits.size(); ++q) quantizable(q).set_bits(bits[q]);
}

void Model::requantize(std::span<const int> bits, const Tensor& calibration_batch) {
    set_bits(bits);
    for (std::size_t q = 0; q < num_quantizable(); ++q) quantizable(q).request_calibration();
    forward(calibration_batch);
}

// ---------------------------------------------------------------------------
// Losses

namespace {

void check_logits(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be (batch, K)");
    if (logits.dim(0) != labels.size()) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(logits.dim(0)) + " rows");
    }
    const auto k = static_cast<int>(logits.dim(1));
    for (int y : labels) {
        if (y < 0 || y >= k) throw std::invalid_argument("cross_entropy: label out of range");
    }
}

} // namespace

std::vector<double> cross_entropy_per_sample(const Tensor& logits, std::span<const int> labels) {
    check_logits(logits, labels);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<double> out(n);
    const auto v = logits.values();
    for (std::size_t b = 0; b < n; ++b) {
        const double* row = v.data() + b * k;
        const double m = *std::max_element(row, row + k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
        out[b] = (m + std::log(s)) - row[labels[b]];
    }
    return out;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
    const auto per = cross_entropy_per_sample(logits, labels);
    double s = 0.0;
    for (double v : per) s += v;
    return per.empty() ? 0.0 : s / static_cast<double>(per.size());
}

LossResult cross_entropy_with_grad(const Tensor& logits, std::span<const int> labels) {
    check_logits(logits, labels);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    LossResult r{0.0, Tensor(logits.shape())};
    const auto v = logits.values();
    auto g = r.grad.values();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t b = 0; b < n; ++b) {
        const double* row = v.data() + b * k;
        const double m = *std::max_element(row, row + k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
        const double lse = m + std::log(s);
        r.loss += lse - row[labels[b]];
        for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(row[j] - lse);
            g[b * k + j] = (p - (static_cast<int>(j) == labels[b] ? 1.0 : 0.0)) * inv_n;
        }
    }
    r.loss *= inv_n;
    return r;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(n);
    const auto v = logits.values();
    for (std::size_t b = 0; b < n; ++b) {
        const double* row = v.data() + b * k;
        out[b] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer

void sgd_step(Model& model, std::span<const double> lr_per_layer, double momentum,
              double weight_decay) {
    if (lr_per_layer.size() != model.num_quantizable()) {
        throw std::invalid_argument("sgd_step: need one learning rate per quantizable layer");
    }
    for (std::size_t q = 0; q < model.num_quantizable(); ++q) {
        for (auto& p : model.quantizable(q).parameters()) {
            if (!p.value.has_grad() || p.value.empty()) {
                throw std::logic_error("sgd_step: parameter '" + p.name + "' of layer " +
                                       std::to_string(q + 1) + " has no gradient");
            }
        }
    }
    for (std::size_t q = 0; q < model.num_quantizable(); ++q) {
        const double lr = lr_per_layer[q];
        for (auto& p : model.quantizable(q).parameters()) {
            auto theta = p.value.values();
            const auto g = p.value.grad();
            if (p.velocity.size() != theta.size()) p.velocity.assign(theta.size(), 0.0);
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double d = g[i] + weight_decay * theta[i];
                p.velocity[i] = momentum * p.velocity[i] + d;
                theta[i] -= lr * p.velocity[i];
            }
        }
    }
}

} // namespace fbm::nn
