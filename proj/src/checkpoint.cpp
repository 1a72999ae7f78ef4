// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fbm::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'F', 'B', 'M', 'C', 'K', 'P', 'T', '1'};

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw std::runtime_error("checkpoint: truncated file " + path.string());
    }
    return v;
}

} // namespace

void write_tensors(const TensorMap& tensors, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
        const auto v = t.values();
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

TensorMap read_tensors(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    }
    TensorMap out;
    const auto count = get<std::uint32_t>(in, path);
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto name_len = get<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw std::runtime_error("checkpoint: truncated name");
        const auto rank = get<std::uint32_t>(in, path);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, path));
        std::vector<double> values(shape_size(shape));
        if (!in.read(reinterpret_cast<char*>(values.data()),
                     static_cast<std::streamsize>(values.size() * sizeof(double)))) {
            throw std::runtime_error("checkpoint: truncated tensor '" + name + "'");
        }
        out.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    return out;
}

TensorMap model_state(const Model& model) {
    TensorMap out;
    for (std::size_t q = 0; q < model.num_quantizable(); ++q) {
        const auto& layer = model.quantizable(q);
        const std::string prefix = "layer" + std::to_string(q + 1) + ".";
        for (const auto& p : layer.parameters()) {
            const auto v = p.value.values();
            out.emplace(prefix + p.name, Tensor(p.value.shape(), std::vector<double>(v.begin(), v.end())));
        }
        const std::string qp = "quant" + std::to_string(q + 1) + ".";
        out.emplace(qp + "bits", Tensor({1}, {static_cast<double>(layer.bits())}));
        out.emplace(qp + "act_scale", Tensor({1}, {layer.activation_quantizer().scale}));
    }
    return out;
}

void load_model_state(Model& model, const TensorMap& state) {
    for (std::size_t q = 0; q < model.num_quantizable(); ++q) {
        auto& layer = model.quantizable(q);
        const std::string prefix = "layer" + std::to_string(q + 1) + ".";
        for (auto& p : layer.parameters()) {
            auto it = state.find(prefix + p.name);
            if (it == state.end()) throw std::runtime_error("checkpoint: missing tensor '" + prefix + p.name + "'");
            if (it->second.shape() != p.value.shape()) {
                throw std::runtime_error("checkpoint: shape mismatch for '" + prefix + p.name + "'");
            }
            std::copy(it->second.values().begin(), it->second.values().end(), p.value.values().begin());
            p.velocity.clear();
        }
        const std::string qp = "quant" + std::to_string(q + 1) + ".";
        auto bits = state.find(qp + "bits");
        auto scale = state.find(qp + "act_scale");
        if (bits != state.end() && scale != state.end()) {
            layer.restore_quantizer(static_cast<int>(bits->second[0]), scale->second[0]);
        }
    }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    write_tensors(model_state(model), path);
}

void load_checkpoint(Model& model, const std::filesystem::path& path) {
    load_model_state(model, read_tensors(path));
}

} // namespace fbm::nn
