// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace fbm {

/// Per-quantizable-layer bitwidth vector.
struct BitAllocation {
    std::vector<int> bits;

    std::size_t size() const { return bits.size(); }
    int operator[](std::size_t i) const { return bits[i]; }
    int& operator[](std::size_t i) { return bits[i]; }
    double mean_bits() const;
    std::string to_string() const;  ///< space separated

    static BitAllocation uniform(std::size_t n, int bits);
    bool operator==(const BitAllocation&) const = default;
};

inline constexpr int kPinnedBits = 8;

/// Forces the first and last entries to 8 bits.
void pin_endpoints(BitAllocation& alloc);
bool is_pinned(std::size_t layer, std::size_t n);

/// Text format, one `layer_index bits` line per layer, 1-based indices.
/// Blank lines and lines starting with '#' are ignored.
BitAllocation read_allocation(const std::filesystem::path& path);
void write_allocation(const BitAllocation& alloc, const std::filesystem::path& path);
BitAllocation parse_allocation(const std::string& text);

} // namespace fbm
