// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/bit_allocation.hpp"

#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fbm {

double BitAllocation::mean_bits() const {
    if (bits.empty()) return 0.0;
    return static_cast<double>(std::accumulate(bits.begin(), bits.end(), 0)) / static_cast<double>(bits.size());
}

std::string BitAllocation::to_string() const {
    std::string out;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(bits[i]);
    }
    return out;
}

BitAllocation BitAllocation::uniform(std::size_t n, int bits) {
    return {std::vector<int>(n, bits)};
}

void pin_endpoints(BitAllocation& alloc) {
    if (alloc.bits.empty()) return;
    alloc.bits.front() = kPinnedBits;
    alloc.bits.back() = kPinnedBits;
}

bool is_pinned(std::size_t layer, std::size_t n) {
    return n > 0 && (layer == 0 || layer + 1 == n);
}

BitAllocation parse_allocation(const std::string& text) {
    std::istringstream in(text);
    std::map<long, int> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        long index = 0;
        int bits = 0;
        std::string rest;
        if (!(ls >> index >> bits) || (ls >> rest)) {
            throw std::runtime_error("allocation: line " + std::to_string(line_no) +
                                     " is not `layer_index bits`");
        }
        if (index < 1 || bits < 1) {
            throw std::runtime_error("allocation: line " + std::to_string(line_no) + " has a non-positive value");
        }
        if (!entries.emplace(index, bits).second) {
            throw std::runtime_error("allocation: layer " + std::to_string(index) + " listed twice");
        }
    }
    BitAllocation alloc;
    long expected = 1;
    for (const auto& [index, bits] : entries) {
        if (index != expected) {
            throw std::runtime_error("allocation: missing layer " + std::to_string(expected));
        }
        alloc.bits.push_back(bits);
        ++expected;
    }
    return alloc;
}

BitAllocation read_allocation(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("allocation: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_allocation(ss.str());
}

void write_allocation(const BitAllocation& alloc, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("allocation: cannot open " + path.string());
    for (std::size_t i = 0; i < alloc.size(); ++i) out << (i + 1) << ' ' << alloc.bits[i] << '\n';
}

} // namespace fbm
