// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/quant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fbm::quant {

BitPalette::BitPalette() : bits_{2, 3, 4, 8, 16} {}

BitPalette::BitPalette(std::vector<int> bits) : bits_(std::move(bits)) {
    if (bits_.size() < 2) throw std::invalid_argument("palette: needs at least two bitwidths");
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        if (bits_[i] < 2 || bits_[i] > 32) {
            throw std::invalid_argument("palette: bitwidth " + std::to_string(bits_[i]) +
                                        " outside [2, 32]");
        }
        if (i > 0 && bits_[i] <= bits_[i - 1]) {
            throw std::invalid_argument("palette: bitwidths must be strictly increasing");
        }
    }
}

bool BitPalette::contains(int bits) const {
    return std::find(bits_.begin(), bits_.end(), bits) != bits_.end();
}

std::size_t BitPalette::index_of(int bits) const {
    auto it = std::find(bits_.begin(), bits_.end(), bits);
    if (it == bits_.end()) {
        throw std::out_of_range("palette: bitwidth " + std::to_string(bits) + " not in palette");
    }
    return static_cast<std::size_t>(it - bits_.begin());
}

std::int64_t QuantizerState::min_level() const {
    return -(std::int64_t{1} << (bits - 1));
}

std::int64_t QuantizerState::max_level() const {
    return (std::int64_t{1} << (bits - 1)) - 1;
}

double calibrate_scale(std::span<const double> values, int bits) {
    if (bits < 2) throw std::invalid_argument("calibrate_scale: bits must be >= 2");
    double max_abs = 0.0;
    for (double v : values) max_abs = std::max(max_abs, std::abs(v));
    if (max_abs == 0.0) return 1.0;
    return max_abs / static_cast<double>((std::int64_t{1} << (bits - 1)) - 1);
}

double quantize_value(double x, const QuantizerState& state) {
    if (!state.enabled()) return x;
    // std::round rounds half away from zero.
    double level = std::round(x / state.scale);
    level = std::clamp(level, static_cast<double>(state.min_level()),
                       static_cast<double>(state.max_level()));
    return level * state.scale;
}

void quantize(std::span<const double> in, std::span<double> out, const QuantizerState& state) {
    if (in.size() != out.size()) throw std::invalid_argument("quantize: size mismatch");
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = quantize_value(in[i], state);
}

std::vector<double> quantize(std::span<const double> in, const QuantizerState& state) {
    std::vector<double> out(in.size());
    quantize(in, out, state);
    return out;
}

bool in_clamp_range(double x, const QuantizerState& state) {
    if (!state.enabled()) return true;
    const double r = x / state.scale;
    return r >= static_cast<double>(state.min_level()) && r <= static_cast<double>(state.max_level());
}

void ste_gradient(std::span<const double> upstream, std::span<const double> x,
                  const QuantizerState& state, std::span<double> out) {
    if (upstream.size() != x.size() || out.size() != x.size()) {
        throw std::invalid_argument("ste_gradient: size mismatch");
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = in_clamp_range(x[i], state) ? upstream[i] : 0.0;
    }
}

std::vector<double> ste_gradient(std::span<const double> upstream, std::span<const double> x,
                                 const QuantizerState& state) {
    std::vector<double> out(x.size());
    ste_gradient(upstream, x, state, out);
    return out;
}

} // namespace fbm::quant
