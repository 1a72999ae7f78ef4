// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/layers.hpp"

#include <algorithm>
#include <stdexcept>

namespace fbm::nn {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::flatten: return "flatten";
        case LayerKind::avgpool: return "avgpool";
    }
    return "unknown";
}

LayerKind parse_layer_kind(const std::string& name) {
    if (name == "dense") return LayerKind::dense;
    if (name == "conv2d") return LayerKind::conv2d;
    if (name == "relu") return LayerKind::relu;
    if (name == "flatten") return LayerKind::flatten;
    if (name == "avgpool") return LayerKind::avgpool;
    throw std::invalid_argument("unknown layer kind '" + name + "'");
}

LayerSpec dense_spec(std::size_t in_features, std::size_t out_features, bool bias) {
    if (in_features == 0 || out_features == 0) throw std::invalid_argument("dense: zero-sized layer");
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.input = {in_features};
    s.output = {out_features};
    s.params = in_features * out_features + (bias ? out_features : 0);
    s.macs = in_features * out_features;
    s.bias = bias;
    return s;
}

LayerSpec conv2d_spec(const Shape& input, std::size_t out_channels, std::size_t kernel,
                      std::size_t stride, std::size_t padding, bool bias) {
    if (input.size() != 3) throw std::invalid_argument("conv2d: input must be (C, H, W)");
    if (kernel == 0 || stride == 0 || out_channels == 0) {
        throw std::invalid_argument("conv2d: kernel, stride and channels must be positive");
    }
    const std::size_t c_in = input[0];
    const std::size_t padded_h = input[1] + 2 * padding;
    const std::size_t padded_w = input[2] + 2 * padding;
    if (padded_h < kernel || padded_w < kernel) {
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    }
    const std::size_t h_out = (padded_h - kernel) / stride + 1;
    const std::size_t w_out = (padded_w - kernel) / stride + 1;
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.input = input;
    s.output = {out_channels, h_out, w_out};
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.bias = bias;
    const std::size_t weights = kernel * kernel * c_in * out_channels;
    s.params = weights + (bias ? out_channels : 0);
    s.macs = weights * h_out * w_out;
    return s;
}

LayerSpec relu_spec(const Shape& input) {
    LayerSpec s;
    s.kind = LayerKind::relu;
    s.input = input;
    s.output = input;
    return s;
}

LayerSpec flatten_spec(const Shape& input) {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    s.input = input;
    s.output = {shape_size(input)};
    return s;
}

LayerSpec avgpool_spec(const Shape& input, std::size_t kernel) {
    if (input.size() != 3) throw std::invalid_argument("avgpool: input must be (C, H, W)");
    if (kernel == 0 || input[1] % kernel != 0 || input[2] % kernel != 0) {
        throw std::invalid_argument("avgpool: kernel must divide the spatial dims");
    }
    LayerSpec s;
    s.kind = LayerKind::avgpool;
    s.input = input;
    s.output = {input[0], input[1] / kernel, input[2] / kernel};
    s.kernel = kernel;
    s.stride = kernel;
    return s;
}

void Layer::check_input(const Tensor& x) const {
    if (x.rank() != spec_.input.size() + 1 ||
        !std::equal(spec_.input.begin(), spec_.input.end(), x.shape().begin() + 1)) {
        throw std::invalid_argument("layer '" + spec_.name + "': expected input (batch, " +
                                    shape_to_string(spec_.input).substr(1) + " but got " +
                                    shape_to_string(x.shape()));
    }
}

Shape Layer::batched_output(std::size_t batch) const {
    Shape out{batch};
    out.insert(out.end(), spec_.output.begin(), spec_.output.end());
    return out;
}

// ---------------------------------------------------------------------------
// ParamLayer

void ParamLayer::set_bits(int bits) {
    if (bits < 0) throw std::invalid_argument("set_bits: negative bitwidth");
    activation_quant_.bits = bits;
    activation_quant_.scale = 1.0;
    calibrate_next_ = bits > 0;
}

std::vector<double> ParamLayer::effective_weight() const {
    const auto w = weight().value.values();
    if (!activation_quant_.enabled()) return {w.begin(), w.end()};
    quant::QuantizerState st{activation_quant_.bits, quant::calibrate_scale(w, activation_quant_.bits),
                             quant::QuantTarget::weights};
    return quant::quantize(w, st);
}

std::vector<double> ParamLayer::effective_bias() const {
    if (!has_bias()) return {};
    const auto b = params_[1].value.values();
    return {b.begin(), b.end()};
}

void ParamLayer::prepare_weights() {
    w_eff_ = effective_weight();
    b_eff_ = effective_bias();
}

Tensor ParamLayer::quantize_input(const Tensor& x) {
    input_mask_.assign(x.size(), 1);
    if (!activation_quant_.enabled()) return x;
    if (calibrate_next_) {
        activation_quant_.scale = quant::calibrate_scale(x.values(), activation_quant_.bits);
        calibrate_next_ = false;
    }
    Tensor q(x.shape());
    const auto in = x.values();
    auto out = q.values();
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = quant::quantize_value(in[i], activation_quant_);
        input_mask_[i] = quant::in_clamp_range(in[i], activation_quant_) ? 1 : 0;
    }
    return q;
}

void ParamLayer::apply_input_mask(Tensor& grad_in) const {
    auto g = grad_in.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!input_mask_[i]) g[i] = 0.0;
    }
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::size_t in_features, std::size_t out_features, bool bias)
    : Dense(dense_spec(in_features, out_features, bias)) {}

Dense::Dense(LayerSpec spec) : ParamLayer(std::move(spec)) {
    if (spec_.kind != LayerKind::dense) throw std::invalid_argument("Dense: wrong spec kind");
    const std::size_t in = spec_.input.at(0);
    const std::size_t out = spec_.output.at(0);
    params_.push_back({"weight", Tensor({out, in}), {}});
    if (spec_.bias) params_.push_back({"bias", Tensor({out}), {}});
}

Tensor Dense::forward(const Tensor& x) {
    check_input(x);
    const std::size_t batch = x.dim(0);
    const std::size_t in = spec_.input[0];
    const std::size_t out = spec_.output[0];
    prepare_weights();
    cached_input_ = quantize_input(x);
    has_cache_ = true;

    Tensor y(batched_output(batch));
    const auto xv = cached_input_.values();
    auto yv = y.values();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* xr = xv.data() + b * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wr = w_eff_.data() + o * in;
            double acc = b_eff_.empty() ? 0.0 : b_eff_[o];
            for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
            yv[b * out + o] = acc;
        }
    }
    return y;
}

Tensor Dense::backward(const Tensor& grad_out) {
    if (!has_cache_) throw std::logic_error("layer '" + spec_.name + "': backward before forward");
    const std::size_t batch = cached_input_.dim(0);
    const std::size_t in = spec_.input[0];
    const std::size_t out = spec_.output[0];
    if (grad_out.size() != batch * out) throw std::invalid_argument("dense backward: grad shape mismatch");

    weight().value.ensure_grad();
    auto gw = weight().value.grad();
    const auto xv = cached_input_.values();
    const auto gy = grad_out.values();
    Tensor grad_in(cached_input_.shape());
    auto gx = grad_in.values();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* xr = xv.data() + b * in;
        double* gxr = gx.data() + b * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double g = gy[b * out + o];
            if (g == 0.0) continue;
            double* gwr = gw.data() + o * in;
            const double* wr = w_eff_.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) {
                gwr[i] += g * xr[i];
                gxr[i] += g * wr[i];
            }
        }
    }
    if (has_bias()) {
        params_[1].value.ensure_grad();
        auto gb = params_[1].value.grad();
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t o = 0; o < out; ++o) gb[o] += gy[b * out + o];
        }
    }
    apply_input_mask(grad_in);
    return grad_in;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(LayerSpec spec) : ParamLayer(std::move(spec)) {
    if (spec_.kind != LayerKind::conv2d) throw std::invalid_argument("Conv2d: wrong spec kind");
    if (spec_.stride != 1) {
        throw std::invalid_argument("layer '" + spec_.name + "': trainable conv2d supports stride 1 only");
    }
    const std::size_t k = spec_.kernel;
    params_.push_back({"weight", Tensor({spec_.output[0], spec_.input[0], k, k}), {}});
    if (spec_.bias) params_.push_back({"bias", Tensor({spec_.output[0]}), {}});
}

Tensor Conv2d::forward(const Tensor& x) {
    check_input(x);
    const std::size_t batch = x.dim(0);
    const std::size_t cin = spec_.input[0], h = spec_.input[1], w = spec_.input[2];
    const std::size_t cout = spec_.output[0], ho = spec_.output[1], wo = spec_.output[2];
    const std::size_t k = spec_.kernel;
    const auto pad = static_cast<std::ptrdiff_t>(spec_.padding);
    prepare_weights();
    cached_input_ = quantize_input(x);
    has_cache_ = true;

    Tensor y(batched_output(batch));
    const auto xv = cached_input_.values();
    auto yv = y.values();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            double* yp = yv.data() + ((b * cout + co) * ho) * wo;
            const double bias = b_eff_.empty() ? 0.0 : b_eff_[co];
            std::fill(yp, yp + ho * wo, bias);
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* xp = xv.data() + ((b * cin + ci) * h) * w;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const double wv = w_eff_[((co * cin + ci) * k + ky) * k + kx];
                        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                        const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
                        const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(ho, static_cast<std::ptrdiff_t>(h) - dy);
                        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
                        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(wo, static_cast<std::ptrdiff_t>(w) - dx);
                        for (std::ptrdiff_t oy = y0; oy < y1; ++oy) {
                            double* yrow = yp + oy * static_cast<std::ptrdiff_t>(wo);
                            const double* xrow = xp + (oy + dy) * static_cast<std::ptrdiff_t>(w) + dx;
                            for (std::ptrdiff_t ox = x0; ox < x1; ++ox) yrow[ox] += wv * xrow[ox];
                        }
                    }
                }
            }
        }
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    if (!has_cache_) throw std::logic_error("layer '" + spec_.name + "': backward before forward");
    const std::size_t batch = cached_input_.dim(0);
    const std::size_t cin = spec_.input[0], h = spec_.input[1], w = spec_.input[2];
    const std::size_t cout = spec_.output[0], ho = spec_.output[1], wo = spec_.output[2];
    const std::size_t k = spec_.kernel;
    const auto pad = static_cast<std::ptrdiff_t>(spec_.padding);
    if (grad_out.size() != batch * cout * ho * wo) {
        throw std::invalid_argument("conv2d backward: grad shape mismatch");
    }

    weight().value.ensure_grad();
    auto gw = weight().value.grad();
    const auto xv = cached_input_.values();
    const auto gy = grad_out.values();
    Tensor grad_in(cached_input_.shape());
    auto gx = grad_in.values();

    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            const double* gyp = gy.data() + ((b * cout + co) * ho) * wo;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* xp = xv.data() + ((b * cin + ci) * h) * w;
                double* gxp = gx.data() + ((b * cin + ci) * h) * w;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::size_t widx = ((co * cin + ci) * k + ky) * k + kx;
                        const double wv = w_eff_[widx];
                        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                        const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
                        const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(ho, static_cast<std::ptrdiff_t>(h) - dy);
                        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
                        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(wo, static_cast<std::ptrdiff_t>(w) - dx);
                        double acc = 0.0;
                        for (std::ptrdiff_t oy = y0; oy < y1; ++oy) {
                            const double* grow = gyp + oy * static_cast<std::ptrdiff_t>(wo);
                            const std::ptrdiff_t off = (oy + dy) * static_cast<std::ptrdiff_t>(w) + dx;
                            const double* xrow = xp + off;
                            double* gxrow = gxp + off;
                            for (std::ptrdiff_t ox = x0; ox < x1; ++ox) {
                                acc += grow[ox] * xrow[ox];
                                gxrow[ox] += grow[ox] * wv;
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    if (has_bias()) {
        params_[1].value.ensure_grad();
        auto gb = params_[1].value.grad();
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t co = 0; co < cout; ++co) {
                const double* gyp = gy.data() + ((b * cout + co) * ho) * wo;
                double acc = 0.0;
                for (std::size_t i = 0; i < ho * wo; ++i) acc += gyp[i];
                gb[co] += acc;
            }
        }
    }
    apply_input_mask(grad_in);
    return grad_in;
}

// ---------------------------------------------------------------------------
// Parameterless layers

Tensor Relu::forward(const Tensor& x) {
    check_input(x);
    cached_input_ = x;
    has_cache_ = true;
    Tensor y(x.shape());
    const auto xv = x.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return y;
}

Tensor Relu::backward(const Tensor& grad_out) {
    if (!has_cache_) throw std::logic_error("layer '" + spec_.name + "': backward before forward");
    Tensor g(cached_input_.shape());
    const auto xv = cached_input_.values();
    const auto gy = grad_out.values();
    auto gv = g.values();
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = xv[i] > 0.0 ? gy[i] : 0.0;
    return g;
}

Tensor Flatten::forward(const Tensor& x) {
    check_input(x);
    batch_ = x.dim(0);
    has_cache_ = true;
    return x.reshaped(batched_output(batch_));
}

Tensor Flatten::backward(const Tensor& grad_out) {
    if (!has_cache_) throw std::logic_error("layer '" + spec_.name + "': backward before forward");
    Shape in{batch_};
    in.insert(in.end(), spec_.input.begin(), spec_.input.end());
    return grad_out.reshaped(std::move(in));
}

AvgPool::AvgPool(LayerSpec spec) : Layer(std::move(spec)) {
    if (spec_.kind != LayerKind::avgpool) throw std::invalid_argument("AvgPool: wrong spec kind");
}

Tensor AvgPool::forward(const Tensor& x) {
    check_input(x);
    batch_ = x.dim(0);
    has_cache_ = true;
    const std::size_t c = spec_.input[0], h = spec_.input[1], w = spec_.input[2];
    const std::size_t k = spec_.kernel, ho = h / k, wo = w / k;
    const double inv = 1.0 / static_cast<double>(k * k);
    Tensor y(batched_output(batch_));
    const auto xv = x.values();
    auto yv = y.values();
    for (std::size_t bc = 0; bc < batch_ * c; ++bc) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        acc += xv[(bc * h + oy * k + ky) * w + ox * k + kx];
                    }
                }
                yv[(bc * ho + oy) * wo + ox] = acc * inv;
            }
        }
    }
    return y;
}

Tensor AvgPool::backward(const Tensor& grad_out) {
    if (!has_cache_) throw std::logic_error("layer '" + spec_.name + "': backward before forward");
    const std::size_t c = spec_.input[0], h = spec_.input[1], w = spec_.input[2];
    const std::size_t k = spec_.kernel, ho = h / k, wo = w / k;
    const double inv = 1.0 / static_cast<double>(k * k);
    Shape in{batch_, c, h, w};
    Tensor g(in);
    const auto gy = grad_out.values();
    auto gv = g.values();
    for (std::size_t bc = 0; bc < batch_ * c; ++bc) {
        for (std::size_t iy = 0; iy < h; ++iy) {
            for (std::size_t ix = 0; ix < w; ++ix) {
                gv[(bc * h + iy) * w + ix] = gy[(bc * ho + iy / k) * wo + ix / k] * inv;
            }
        }
    }
    return g;
}

std::unique_ptr<Layer> make_layer(const LayerSpec& spec) {
    switch (spec.kind) {
        case LayerKind::dense: return std::make_unique<Dense>(spec);
        case LayerKind::conv2d: return std::make_unique<Conv2d>(spec);
        case LayerKind::relu: return std::make_unique<Relu>(spec);
        case LayerKind::flatten: return std::make_unique<Flatten>(spec);
        case LayerKind::avgpool: return std::make_unique<AvgPool>(spec);
    }
    throw std::invalid_argument("make_layer: unknown kind");
}

} // namespace fbm::nn
