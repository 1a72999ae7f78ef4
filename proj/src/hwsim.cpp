// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/hwsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace fbm::hw {

void HardwareModel::validate() const {
    if (cores <= 0) throw std::invalid_argument("hardware.cores must be positive");
    if (!(peak_bitops_per_core > 0.0)) throw std::invalid_argument("hardware.peak_bitops_per_core must be positive");
    if (!(onchip_bytes >= 0.0)) throw std::invalid_argument("hardware.onchip_bytes must be nonnegative");
    if (!(dram_bandwidth > 0.0)) throw std::invalid_argument("hardware.dram_bandwidth must be positive");
    if (bus_width_bits <= 0) throw std::invalid_argument("hardware.bus_width_bits must be positive");
    if (!(bus_clock_hz > 0.0)) throw std::invalid_argument("hardware.bus_clock_hz must be positive");
    if (!(control_overhead_s >= 0.0)) throw std::invalid_argument("hardware.control_overhead_s must be nonnegative");
    if (alu_bits.empty()) throw std::invalid_argument("hardware.alu_bits must not be empty");
    for (std::size_t i = 0; i < alu_bits.size(); ++i) {
        if (alu_bits[i] <= 0 || (i > 0 && alu_bits[i] <= alu_bits[i - 1])) {
            throw std::invalid_argument("hardware.alu_bits must be positive and strictly increasing");
        }
    }
}

int HardwareModel::compute_bits(int bits) const {
    auto it = std::lower_bound(alu_bits.begin(), alu_bits.end(), bits);
    if (it == alu_bits.end()) {
        throw std::invalid_argument("hardware: no ALU width supports " + std::to_string(bits) + "-bit operands");
    }
    return *it;
}

const char* to_string(Bound b) {
    switch (b) {
        case Bound::compute: return "compute";
        case Bound::memory: return "memory";
        case Bound::idle: return "idle";
    }
    return "idle";
}

LayerLatency layer_latency(const nn::LayerSpec& layer, int w_bits, int a_bits, const HardwareModel& hw,
                           const CacheState& cache) {
    if (a_bits <= 0 || (layer.quantizable() && w_bits <= 0)) {
        throw std::invalid_argument("layer_latency: bitwidths must be positive");
    }
    LayerLatency r;
    r.w_bits = layer.quantizable() ? w_bits : 0;
    r.a_bits = a_bits;

    const double weight_bytes = layer.quantizable() ? parameter_bytes(layer, w_bits) : 0.0;
    const double in_bytes = static_cast<double>(layer.input_elements()) * static_cast<double>(a_bits) / 8.0;
    const double out_bytes = static_cast<double>(layer.output_elements()) * static_cast<double>(a_bits) / 8.0;
    const double missing_in = (1.0 - cache.resident_fraction()) * in_bytes;
    const double spill = std::max(0.0, out_bytes - hw.onchip_bytes);
    r.bytes_moved = weight_bytes + missing_in + spill;

    if (layer.macs > 0) {
        const double op_bits = static_cast<double>(hw.compute_bits(w_bits)) * static_cast<double>(hw.compute_bits(a_bits));
        r.compute_s = static_cast<double>(layer.macs) * op_bits /
                      (static_cast<double>(hw.cores) * hw.peak_bitops_per_core);
    }
    r.memory_s = r.bytes_moved / hw.dram_bandwidth;
    r.seconds = std::max(r.compute_s, r.memory_s) + hw.control_overhead_s;
    if (r.compute_s == 0.0 && r.memory_s == 0.0) {
        r.bound = Bound::idle;
    } else {
        r.bound = r.compute_s >= r.memory_s ? Bound::compute : Bound::memory;
    }
    r.cache_after.activation_bytes = out_bytes;
    r.cache_after.resident_bytes = std::min(out_bytes, hw.onchip_bytes);
    return r;
}

bool LatencyReport::operator==(const LatencyReport& o) const {
    if (layers.size() != o.layers.size() || layer_names != o.layer_names) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& a = layers[i];
        const auto& b = o.layers[i];
        if (a.seconds != b.seconds || a.bytes_moved != b.bytes_moved || a.bound != b.bound ||
            a.w_bits != b.w_bits || a.a_bits != b.a_bits || a.cache_after != b.cache_after) {
            return false;
        }
    }
    return total_s == o.total_s && relative == o.relative && size_bytes == o.size_bytes;
}

namespace {

std::vector<std::size_t> quantizable_of(std::span<const nn::LayerSpec> layers) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].quantizable()) out.push_back(i);
    }
    return out;
}

void check_allocation(std::span<const nn::LayerSpec> layers, const BitAllocation& alloc) {
    const auto n = quantizable_of(layers).size();
    if (n == 0) throw std::invalid_argument("simulator: model has no quantizable layers");
    if (alloc.size() != n) {
        throw std::invalid_argument("simulator: allocation has " + std::to_string(alloc.size()) +
                                    " entries but the model has " + std::to_string(n) + " quantizable layers");
    }
}

std::string layer_label(const nn::LayerSpec& s, std::size_t i) {
    return s.name.empty() ? nn::to_string(s.kind) + std::to_string(i + 1) : s.name;
}

struct Sweep {
    std::vector<LayerLatency> layers;
    double total = 0.0;
};

Sweep sweep(std::span<const nn::LayerSpec> layers, const BitAllocation& alloc, const HardwareModel& hw) {
    const auto owner = bit_owner(layers);
    Sweep s;
    s.layers.reserve(layers.size());
    CacheState cache;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const int b = alloc.bits[owner[i]];
        auto l = layer_latency(layers[i], b, b, hw, cache);
        cache = l.cache_after;
        s.total += l.seconds;
        s.layers.push_back(l);
    }
    return s;
}

} // namespace

std::vector<std::size_t> bit_owner(std::span<const nn::LayerSpec> layers) {
    std::vector<std::size_t> owner(layers.size(), 0);
    std::size_t current = 0;
    bool seen = false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].quantizable()) {
            if (seen) ++current;
            seen = true;
        }
        owner[i] = current;
    }
    return owner;
}

std::vector<int> expand_bits(std::span<const nn::LayerSpec> layers, const BitAllocation& alloc) {
    check_allocation(layers, alloc);
    const auto owner = bit_owner(layers);
    std::vector<int> out(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) out[i] = alloc.bits[owner[i]];
    return out;
}

double parameter_bytes(const nn::LayerSpec& layer, int w_bits) {
    return static_cast<double>(layer.weight_params()) * static_cast<double>(w_bits) / 8.0 +
           static_cast<double>(layer.bias_params()) * 4.0;
}

double model_size_bytes(std::span<const nn::LayerSpec> layers, const BitAllocation& alloc) {
    check_allocation(layers, alloc);
    double total = 0.0;
    std::size_t q = 0;
    for (const auto& l : layers) {
        if (!l.quantizable()) continue;
        total += parameter_bytes(l, alloc.bits[q++]);
    }
    return total;
}

double total_latency(std::span<const nn::LayerSpec> layers, const BitAllocation& alloc,
                     const HardwareModel& hw) {
    check_allocation(layers, alloc);
    return sweep(layers, alloc, hw).total;
}

LatencyReport model_latency(std::span<const nn::LayerSpec> layers, const BitAllocation& alloc,
                            const HardwareModel& hw) {
    check_allocation(layers, alloc);
    hw.validate();
    LatencyReport r;
    auto s = sweep(layers, alloc, hw);
    r.layers = std::move(s.layers);
    r.total_s = s.total;
    for (std::size_t i = 0; i < layers.size(); ++i) r.layer_names.push_back(layer_label(layers[i], i));
    const double baseline = sweep(layers, BitAllocation::uniform(alloc.size(), 8), hw).total;
    r.relative = baseline > 0.0 ? r.total_s / baseline : 1.0;
    r.size_bytes = model_size_bytes(layers, alloc);
    return r;
}

void write_latency_csv(const LatencyReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "layer,w_bits,a_bits,latency_s,bound,bytes_moved\n";
    char buf[64];
    for (std::size_t i = 0; i < report.layers.size(); ++i) {
        const auto& l = report.layers[i];
        out << report.layer_names[i] << ',' << l.w_bits << ',' << l.a_bits << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", l.seconds);
        out << buf << ',' << to_string(l.bound) << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", l.bytes_moved);
        out << buf << '\n';
    }
}

// ---------------------------------------------------------------------------
// Search

namespace {

std::vector<std::vector<std::size_t>> admissible(std::size_t n, const quant::BitPalette& palette,
                                                 const SearchConstraints& c) {
    if ((!c.floor.empty() && c.floor.size() != n) || (!c.fixed.empty() && c.fixed.size() != n)) {
        throw std::invalid_argument("search: constraint vectors must have one entry per quantizable layer");
    }
    std::vector<std::vector<std::size_t>> out(n);
    for (std::size_t l = 0; l < n; ++l) {
        const int fixed = c.fixed.empty() ? 0 : c.fixed[l];
        const int floor = c.floor.empty() ? 0 : c.floor[l];
        for (std::size_t i = 0; i < palette.size(); ++i) {
            if (fixed > 0 ? palette[i] == fixed : palette[i] >= floor) out[l].push_back(i);
        }
        if (out[l].empty()) {
            throw std::invalid_argument("search: layer " + std::to_string(l + 1) + " has no admissible bitwidth");
        }
    }
    return out;
}

double space_size(const std::vector<std::vector<std::size_t>>& choices) {
    double s = 1.0;
    for (const auto& c : choices) s *= static_cast<double>(c.size());
    return s;
}

BitAllocation to_allocation(const std::vector<std::size_t>& idx, const quant::BitPalette& palette) {
    BitAllocation a;
    for (auto i : idx) a.bits.push_back(palette[i]);
    return a;
}

} // namespace

std::vector<AllocationCost> enumerate_allocations(std::span<const nn::LayerSpec> layers,
                                                  const HardwareModel& hw, const quant::BitPalette& palette,
                                                  const SearchConstraints& constraints) {
    const std::size_t n = quantizable_of(layers).size();
    if (n == 0) throw std::invalid_argument("search: model has no quantizable layers");
    const auto choices = admissible(n, palette, constraints);
    if (space_size(choices) > kMaxSearchSpace) {
        throw std::length_error("search: " + std::to_string(space_size(choices)) +
                                " allocations exceed the enumeration limit of 1e6");
    }
    std::vector<AllocationCost> out;
    std::vector<std::size_t> pos(n, 0);
    while (true) {
        std::vector<std::size_t> idx(n);
        for (std::size_t l = 0; l < n; ++l) idx[l] = choices[l][pos[l]];
        auto alloc = to_allocation(idx, palette);
        const double t = total_latency(layers, alloc, hw);
        out.push_back({std::move(alloc), t});
        // odometer, last layer fastest
        std::size_t l = n;
        while (l > 0) {
            --l;
            if (++pos[l] < choices[l].size()) break;
            pos[l] = 0;
            if (l == 0) return out;
        }
    }
}

AllocationCost brute_force_optimal(std::span<const nn::LayerSpec> layers, const HardwareModel& hw,
                                   const quant::BitPalette& palette, const SearchConstraints& constraints) {
    auto all = enumerate_allocations(layers, hw, palette, constraints);
    // Enumeration order is lexicographic, so the first strict minimum wins ties.
    std::size_t best = 0;
    for (std::size_t i = 1; i < all.size(); ++i) {
        if (all[i].total_s < all[best].total_s) best = i;
    }
    return all[best];
}

AllocationCost dp_optimal(std::span<const nn::LayerSpec> layers, const HardwareModel& hw,
                          const quant::BitPalette& palette, const SearchConstraints& constraints) {
    const auto qidx = quantizable_of(layers);
    const std::size_t n = qidx.size();
    if (n == 0) throw std::invalid_argument("search: model has no quantizable layers");
    const auto choices = admissible(n, palette, constraints);

    // Segment q covers the table entries whose bits are owned by layer q.
    const auto owner = bit_owner(layers);
    std::vector<std::pair<std::size_t, std::size_t>> segment(n, {layers.size(), 0});
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& s = segment[owner[i]];
        s.first = std::min(s.first, i);
        s.second = std::max(s.second, i + 1);
    }

    struct Node {
        double cost = 0.0;
        std::vector<std::size_t> path;
    };
    auto better = [](double cost, const std::vector<std::size_t>& path, const Node& incumbent) {
        return cost < incumbent.cost || (cost == incumbent.cost && path < incumbent.path);
    };

    std::map<CacheState, Node> states{{CacheState{}, Node{}}};
    for (std::size_t q = 0; q < n; ++q) {
        std::map<CacheState, Node> next;
        for (const auto& [cache, node] : states) {
            for (std::size_t choice : choices[q]) {
                const int b = palette[choice];
                double cost = node.cost;
                CacheState c = cache;
                for (std::size_t i = segment[q].first; i < segment[q].second; ++i) {
                    auto l = layer_latency(layers[i], b, b, hw, c);
                    cost += l.seconds;
                    c = l.cache_after;
                }
                auto path = node.path;
                path.push_back(choice);
                auto it = next.find(c);
                if (it == next.end()) {
                    next.emplace(c, Node{cost, std::move(path)});
                } else if (better(cost, path, it->second)) {
                    it->second = Node{cost, std::move(path)};
                }
            }
        }
        states = std::move(next);
    }
    const Node* best = nullptr;
    for (const auto& [cache, node] : states) {
        if (!best || better(node.cost, node.path, *best)) best = &node;
    }
    return {to_allocation(best->path, palette), best->cost};
}

} // namespace fbm::hw
