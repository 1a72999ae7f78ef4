// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fbm/quant.hpp"
#include "fbm/tensor.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fbm::nn {

enum class LayerKind { dense, conv2d, relu, flatten, avgpool };

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

/// Static description of one layer. Shapes exclude the batch axis; `macs`
/// is per sample.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::string name;
    Shape input;
    Shape output;
    std::size_t params = 0;
    std::size_t macs = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    bool bias = false;

    bool quantizable() const { return params > 0; }
    /// One bias per output channel (conv) or output feature (dense).
    std::size_t bias_params() const { return bias && !output.empty() ? output[0] : 0; }
    std::size_t weight_params() const { return params - bias_params(); }
    std::size_t input_elements() const { return shape_size(input); }
    std::size_t output_elements() const { return shape_size(output); }
};

LayerSpec dense_spec(std::size_t in_features, std::size_t out_features, bool bias);
/// `input` is (channels, height, width).
LayerSpec conv2d_spec(const Shape& input, std::size_t out_channels, std::size_t kernel,
                      std::size_t stride, std::size_t padding, bool bias);
LayerSpec relu_spec(const Shape& input);
LayerSpec flatten_spec(const Shape& input);
LayerSpec avgpool_spec(const Shape& input, std::size_t kernel);

struct Parameter {
    std::string name;
    Tensor value;
    std::vector<double> velocity;
};

class Layer {
public:
    explicit Layer(LayerSpec spec) : spec_(std::move(spec)) {}
    virtual ~Layer() = default;

    const LayerSpec& spec() const { return spec_; }
    LayerSpec& mutable_spec() { return spec_; }

    /// `x` carries a leading batch axis. Caches what backward needs.
    virtual Tensor forward(const Tensor& x) = 0;
    /// Accumulates parameter gradients and returns dL/dx.
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual std::unique_ptr<Layer> clone() const = 0;

protected:
    void check_input(const Tensor& x) const;
    Shape batched_output(std::size_t batch) const;

    LayerSpec spec_;
};

/// Dense and conv2d layers: shadow float parameters plus a quantizer slot
/// shared by weights and input activations.
class ParamLayer : public Layer {
public:
    using Layer::Layer;

    std::span<Parameter> parameters() { return params_; }
    std::span<const Parameter> parameters() const { return params_; }
    Parameter& weight() { return params_[0]; }
    const Parameter& weight() const { return params_[0]; }
    bool has_bias() const { return params_.size() > 1; }

    int bits() const { return activation_quant_.bits; }
    /// 0 disables quantization. Clears the activation scale until the next
    /// calibration.
    void set_bits(int bits);
    const quant::QuantizerState& activation_quantizer() const { return activation_quant_; }
    void set_activation_scale(double scale) { activation_quant_.scale = scale; }
    /// When set, the next forward recomputes the activation scale from its input.
    void request_calibration() { calibrate_next_ = true; }
    /// Sets bits and activation scale verbatim, without recalibration.
    void restore_quantizer(int bits, double scale) {
        activation_quant_.bits = bits;
        activation_quant_.scale = scale;
        calibrate_next_ = false;
    }

    /// Weight and bias as seen by the forward pass. The bias stays at full
    /// precision (accumulator width).
    std::vector<double> effective_weight() const;
    std::vector<double> effective_bias() const;

protected:
    /// Quantizes the input in place per the activation quantizer and records
    /// the STE mask.
    Tensor quantize_input(const Tensor& x);
    void apply_input_mask(Tensor& grad_in) const;
    void prepare_weights();

    std::vector<Parameter> params_;
    quant::QuantizerState activation_quant_{0, 1.0, quant::QuantTarget::activations};
    bool calibrate_next_ = false;

    // forward cache
    Tensor cached_input_;
    std::vector<unsigned char> input_mask_;
    std::vector<double> w_eff_;
    std::vector<double> b_eff_;
    bool has_cache_ = false;
};

class Dense final : public ParamLayer {
public:
    Dense(std::size_t in_features, std::size_t out_features, bool bias);
    explicit Dense(LayerSpec spec);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
};

/// Stride-1 square-kernel convolution with zero padding.
class Conv2d final : public ParamLayer {
public:
    explicit Conv2d(LayerSpec spec);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
};

class Relu final : public Layer {
public:
    explicit Relu(LayerSpec spec) : Layer(std::move(spec)) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }

private:
    Tensor cached_input_;
    bool has_cache_ = false;
};

class Flatten final : public Layer {
public:
    explicit Flatten(LayerSpec spec) : Layer(std::move(spec)) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }

private:
    std::size_t batch_ = 0;
    bool has_cache_ = false;
};

/// Non-overlapping average pooling (stride == kernel).
class AvgPool final : public Layer {
public:
    explicit AvgPool(LayerSpec spec);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool>(*this); }

private:
    std::size_t batch_ = 0;
    bool has_cache_ = false;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec);

} // namespace fbm::nn
