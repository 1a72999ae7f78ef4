// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/hessian.hpp"

#include "fbm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace fbm::hessian {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

PowerResult power_iteration(const MatVec& op, std::size_t dim, int max_iters, double tol, std::uint64_t seed) {
    PowerResult r;
    if (dim == 0 || max_iters <= 0) {
        r.degenerate = dim == 0;
        return r;
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(dim), w(dim);
    for (auto& x : v) x = normal(rng);
    double norm = std::sqrt(dot(v, v));
    for (auto& x : v) x /= norm;

    double prev = 0.0;
    for (int it = 1; it <= max_iters; ++it) {
        op(v, w);
        const double lambda = dot(v, w);
        r.history.push_back(lambda);
        r.lambda = lambda;
        r.iterations = it;
        norm = std::sqrt(dot(w, w));
        if (!(norm > 0.0)) {
            r.lambda = 0.0;
            r.degenerate = true;
            break;
        }
        for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] / norm;
        if (it > 1 && std::abs(lambda - prev) <= tol * std::abs(lambda)) {
            r.converged = true;
            break;
        }
        prev = lambda;
    }
    r.vector = std::move(v);
    return r;
}

void GradientMatrix::fisher_vector(std::span<const double> v, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    if (samples == 0) return;
    for (std::size_t i = 0; i < samples; ++i) {
        const auto g = row(i);
        const double c = dot(g, v);
        for (std::size_t j = 0; j < params; ++j) out[j] += c * g[j];
    }
    const double inv = 1.0 / static_cast<double>(samples);
    for (auto& x : out) x *= inv;
}

std::vector<GradientMatrix> per_sample_gradients(nn::Model& model, const nn::Dataset& data,
                                                 std::span<const std::size_t> rows) {
    const std::size_t n_layers = model.num_quantizable();
    std::vector<GradientMatrix> out(n_layers);
    for (std::size_t q = 0; q < n_layers; ++q) {
        std::size_t p = 0;
        for (const auto& param : model.quantizable(q).parameters()) p += param.value.size();
        out[q].samples = rows.size();
        out[q].params = p;
        out[q].values.assign(rows.size() * p, 0.0);
    }
    for (std::size_t s = 0; s < rows.size(); ++s) {
        const std::size_t idx[1] = {rows[s]};
        const auto x = data.batch_features(idx);
        const auto y = data.batch_labels(idx);
        model.zero_grad();
        const auto logits = model.forward(x);
        const auto loss = nn::cross_entropy_with_grad(logits, y);
        model.backward(loss.grad);
        for (std::size_t q = 0; q < n_layers; ++q) {
            double* dst = out[q].values.data() + s * out[q].params;
            for (const auto& param : model.quantizable(q).parameters()) {
                const auto g = param.value.grad();
                dst = std::copy(g.begin(), g.end(), dst);
            }
        }
    }
    model.zero_grad();
    return out;
}

std::vector<std::size_t> fisher_rows(std::size_t dataset_size, std::size_t samples, std::uint64_t seed) {
    if (samples == 0) throw std::invalid_argument("fisher: sample count must be positive");
    if (dataset_size < samples) {
        throw std::invalid_argument("fisher: dataset has " + std::to_string(dataset_size) + " rows, need " +
                                    std::to_string(samples));
    }
    std::vector<std::size_t> idx(dataset_size);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, 0xF15E));
    for (std::size_t i = 0; i < samples; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, dataset_size - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(samples);
    return idx;
}

namespace {

LayerEigen eigen_of(const GradientMatrix& g, const FisherOptions& options, std::size_t layer) {
    auto op = [&g](std::span<const double> x, std::span<double> y) { g.fisher_vector(x, y); };
    const auto r = power_iteration(op, g.params, options.iters, options.tol, derive_seed(options.seed, layer));
    return {std::max(0.0, r.lambda), r.iterations, r.degenerate};
}

} // namespace

LayerEigen fisher_top_eigenvalue(nn::Model& model, const nn::Dataset& data, std::size_t layer,
                                 const FisherOptions& options) {
    if (layer >= model.num_quantizable()) throw std::out_of_range("fisher: layer index out of range");
    const auto rows = fisher_rows(data.size(), options.samples, options.seed);
    const auto grads = per_sample_gradients(model, data, rows);
    return eigen_of(grads[layer], options, layer);
}

SensitivityProfile sensitivity_profile(nn::Model& model, const nn::Dataset& data, const FisherOptions& options,
                                       int threads) {
    const auto rows = fisher_rows(data.size(), options.samples, options.seed);
    const auto grads = per_sample_gradients(model, data, rows);
    const std::size_t n = grads.size();
    std::vector<LayerEigen> eig(n);
    const std::size_t workers = std::clamp<std::size_t>(threads > 0 ? static_cast<std::size_t>(threads) : 1, 1, n);
    if (workers <= 1) {
        for (std::size_t l = 0; l < n; ++l) eig[l] = eigen_of(grads[l], options, l);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t l = w; l < n; l += workers) eig[l] = eigen_of(grads[l], options, l);
            });
        }
        for (auto& t : pool) t.join();
    }
    SensitivityProfile p;
    p.samples = rows.size();
    for (const auto& e : eig) {
        p.lambda.push_back(e.lambda);
        p.iterations.push_back(e.iterations);
        p.degenerate.push_back(e.degenerate);
    }
    return p;
}

void write_profile_csv(const SensitivityProfile& profile, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "layer,lambda,iters\n";
    char buf[64];
    for (std::size_t l = 0; l < profile.size(); ++l) {
        std::snprintf(buf, sizeof(buf), "%.17g", profile.lambda[l]);
        out << (l + 1) << ',' << buf << ',' << profile.iterations[l] << '\n';
    }
}

SensitivityProfile read_profile_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("layer,lambda,iters", 0) != 0) {
        throw std::runtime_error(path.string() + ": not a sensitivity profile");
    }
    SensitivityProfile p;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string layer, lambda, iters;
        if (!std::getline(ls, layer, ',') || !std::getline(ls, lambda, ',') || !std::getline(ls, iters)) {
            throw std::runtime_error(path.string() + ": malformed row `" + line + "`");
        }
        if (std::stoul(layer) != p.size() + 1) throw std::runtime_error(path.string() + ": layers out of order");
        p.lambda.push_back(std::stod(lambda));
        p.iterations.push_back(std::stoi(iters));
        p.degenerate.push_back(false);
    }
    return p;
}

std::vector<std::size_t> sensitivity_order(const SensitivityProfile& profile) {
    std::vector<std::size_t> order(profile.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return profile.lambda[a] > profile.lambda[b]; });
    return order;
}

std::vector<std::size_t> sensitivity_groups(const SensitivityProfile& profile, std::size_t groups) {
    if (groups == 0) throw std::invalid_argument("sensitivity_groups: need at least one group");
    const auto order = sensitivity_order(profile);
    const std::size_t n = order.size();
    std::vector<std::size_t> group(n, 0);
    for (std::size_t r = 0; r < n; ++r) group[order[r]] = r * groups / n;
    return group;
}

std::vector<double> peaked_row(std::size_t m, std::size_t peak, double peak_logit, double decay) {
    if (peak >= m) throw std::out_of_range("peaked_row: peak index out of range");
    std::vector<double> row(m);
    std::size_t rank = 0;
    row[peak] = peak_logit;
    for (std::size_t d = 1; d < m; ++d) {
        if (peak + d < m) row[peak + d] = peak_logit - decay * static_cast<double>(++rank);
        if (peak >= d) row[peak - d] = peak_logit - decay * static_cast<double>(++rank);
    }
    return row;
}

alloc::AllocationMatrix init_allocation(const SensitivityProfile& profile, const quant::BitPalette& palette,
                                        double peak_logit, double decay, double temperature,
                                        alloc::GumbelForm form) {
    const std::size_t m = palette.size();
    alloc::AllocationMatrix a(profile.size(), palette, temperature, form);
    const auto group = sensitivity_groups(profile, m);
    for (std::size_t l = 0; l < profile.size(); ++l) {
        const auto row = peaked_row(m, m - 1 - group[l], peak_logit, decay);
        std::copy(row.begin(), row.end(), a.row(l).begin());
    }
    return a;
}

std::string to_string(MaskMode mode) {
    return mode == MaskMode::highest ? "highest" : "lowest";
}

MaskMode parse_mask_mode(const std::string& name) {
    if (name == "highest") return MaskMode::highest;
    if (name == "lowest") return MaskMode::lowest;
    throw std::invalid_argument("mask_mode must be `highest` or `lowest`, got `" + name + "`");
}

std::vector<int> layer_mask(const SensitivityProfile& profile, double h, MaskMode mode) {
    if (!(h >= 0.0 && h <= 1.0)) throw std::invalid_argument("layer_mask: h must lie in [0, 1]");
    const std::size_t n = profile.size();
    // h * N within 1e-9 of an integer counts as that integer.
    const auto count = std::min(n, static_cast<std::size_t>(std::ceil(h * static_cast<double>(n) - 1e-9)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return mode == MaskMode::highest ? profile.lambda[a] > profile.lambda[b]
                                         : profile.lambda[a] < profile.lambda[b];
    });
    std::vector<int> mask(n, 1);
    for (std::size_t i = 0; i < count; ++i) mask[order[i]] = 0;
    return mask;
}

} // namespace fbm::hessian
