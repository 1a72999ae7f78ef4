// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fbm/bit_allocation.hpp"
#include "fbm/layers.hpp"
#include "fbm/quant.hpp"

#include <filesystem>
#include <span>
#include <vector>

// Analytic edge-device model. Per layer:
//
//   t_compute = MACs * alu(w_bits) * alu(a_bits) / (cores * peak_bitops)
//   t_memory  = bytes_moved / dram_bandwidth
//   t         = max(t_compute, t_memory) + control_overhead
//
// bytes_moved = parameter bytes (always streamed)
//             + input-activation bytes not resident on chip
//             + output-activation bytes spilled beyond on-chip capacity.
//
// Only the previous layer's output activations persist on chip. A layer's
// activations are stored at its own bitwidth; parameterless layers inherit
// the bitwidth of the closest preceding quantizable layer (or the first
// quantizable layer when none precedes them). alu(b) maps b up to the next
// natively supported width; memory traffic always uses the stored width.

namespace fbm::hw {

struct HardwareModel {
    int cores = 4;
    double peak_bitops_per_core = 1e12;
    double onchip_bytes = 16.0 * 1024.0 * 1024.0;
    double dram_bandwidth = 64e9;
    int bus_width_bits = 32;
    double bus_clock_hz = 50e6;
    /// Fixed per-layer cost standing in for bus/control traffic.
    double control_overhead_s = 0.0;
    std::vector<int> alu_bits = {2, 4, 8, 16, 32};

    void validate() const;
    /// Smallest supported ALU width >= bits; throws if none.
    int compute_bits(int bits) const;
};

struct CacheState {
    double resident_bytes = 0.0;    ///< bytes of the held tensor on chip
    double activation_bytes = 0.0;  ///< full size of the held tensor

    double resident_fraction() const {
        return activation_bytes > 0.0 ? resident_bytes / activation_bytes : 0.0;
    }
    auto operator<=>(const CacheState&) const = default;
};

enum class Bound { compute, memory, idle };
const char* to_string(Bound b);

struct LayerLatency {
    double seconds = 0.0;
    double compute_s = 0.0;
    double memory_s = 0.0;
    double bytes_moved = 0.0;
    Bound bound = Bound::idle;
    int w_bits = 0;
    int a_bits = 0;
    CacheState cache_after;
};

LayerLatency layer_latency(const nn::LayerSpec& layer, int w_bits, int a_bits, const HardwareModel& hw,
                           const CacheState& cache);

struct LatencyReport {
    std::vector<std::string> layer_names;
    std::vector<LayerLatency> layers;  ///< one per layer-table entry
    double total_s = 0.0;
    double relative = 0.0;  ///< total / total at uniform 8-bit
    double size_bytes = 0.0;

    bool operator==(const LatencyReport& other) const;
};

/// For each layer-table entry, the ordinal of the quantizable layer whose
/// bitwidth it uses.
std::vector<std::size_t> bit_owner(std::span<const nn::LayerSpec> layers);

/// Bitwidth applied to each layer-table entry (0 weight bits for
/// parameterless layers).
std::vector<int> expand_bits(std::span<const nn::LayerSpec> layers, const BitAllocation& alloc);

/// Stored parameter bytes of one layer: weights at `w_bits`, biases at
/// 32 bits.
double parameter_bytes(const nn::LayerSpec& layer, int w_bits);

/// Sum of parameter_bytes over quantizable layers.
double model_size_bytes(std::span<const nn::LayerSpec> layers, const BitAllocation& alloc);

/// Total seconds only; same arithmetic as model_latency.
double total_latency(std::span<const nn::LayerSpec> layers, const BitAllocation& alloc,
                     const HardwareModel& hw);

LatencyReport model_latency(std::span<const nn::LayerSpec> layers, const BitAllocation& alloc,
                            const HardwareModel& hw);

/// Columns: layer, w_bits, a_bits, latency_s, bound, bytes_moved.
void write_latency_csv(const LatencyReport& report, const std::filesystem::path& path);

struct SearchConstraints {
    std::vector<int> floor;  ///< per-layer minimum bits; empty or 0 = none
    std::vector<int> fixed;  ///< per-layer forced bits; empty or 0 = free
};

struct AllocationCost {
    BitAllocation allocation;
    double total_s = 0.0;
};

inline constexpr double kMaxSearchSpace = 1e6;

/// Every admissible allocation with its total latency, in lexicographic
/// palette-index order. Throws std::length_error beyond 1e6 allocations.
std::vector<AllocationCost> enumerate_allocations(std::span<const nn::LayerSpec> layers,
                                                  const HardwareModel& hw, const quant::BitPalette& palette,
                                                  const SearchConstraints& constraints = {});

/// Exhaustive minimum; ties resolve to the lexicographically first allocation.
AllocationCost brute_force_optimal(std::span<const nn::LayerSpec> layers, const HardwareModel& hw,
                                   const quant::BitPalette& palette,
                                   const SearchConstraints& constraints = {});

/// Stage-wise dynamic program over the cache state left by each quantizable
/// layer (at most M states per stage, O(N * M^2) layer evaluations). Same
/// tie-break as brute_force_optimal.
AllocationCost dp_optimal(std::span<const nn::LayerSpec> layers, const HardwareModel& hw,
                          const quant::BitPalette& palette, const SearchConstraints& constraints = {});

} // namespace fbm::hw
