// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fbm::quant {

/// Ordered set of admissible bitwidths. Strictly increasing, at least two
/// entries.
class BitPalette {
public:
    BitPalette();
    explicit BitPalette(std::vector<int> bits);

    std::size_t size() const { return bits_.size(); }
    int operator[](std::size_t i) const { return bits_[i]; }
    const std::vector<int>& bits() const { return bits_; }
    bool contains(int bits) const;
    /// Palette index of `bits`; throws if absent.
    std::size_t index_of(int bits) const;
    int min_bits() const { return bits_.front(); }
    int max_bits() const { return bits_.back(); }

    bool operator==(const BitPalette&) const = default;

private:
    std::vector<int> bits_;
};

enum class QuantTarget { weights, activations };

/// Symmetric signed uniform quantizer. `bits == 0` means full precision.
struct QuantizerState {
    int bits = 0;
    double scale = 1.0;
    QuantTarget target = QuantTarget::weights;

    bool enabled() const { return bits > 0; }
    std::int64_t min_level() const;
    std::int64_t max_level() const;
};

/// max|x| / (2^(b-1) - 1); returns 1 for an all-zero tensor.
double calibrate_scale(std::span<const double> values, int bits);

/// Round half away from zero, then clamp to the signed level range.
double quantize_value(double x, const QuantizerState& state);

void quantize(std::span<const double> in, std::span<double> out, const QuantizerState& state);
std::vector<double> quantize(std::span<const double> in, const QuantizerState& state);

/// True when x/s lies inside [min_level, max_level].
bool in_clamp_range(double x, const QuantizerState& state);

/// Clipped straight-through estimator: passes `upstream` where x is inside
/// the clamp range, zero elsewhere.
void ste_gradient(std::span<const double> upstream, std::span<const double> x,
                  const QuantizerState& state, std::span<double> out);
std::vector<double> ste_gradient(std::span<const double> upstream, std::span<const double> x,
                                 const QuantizerState& state);

} // namespace fbm::quant
