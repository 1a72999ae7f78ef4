// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/alloc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace fbm::alloc {

std::string to_string(GumbelForm form) {
    return form == GumbelForm::scaled_noise ? "scaled_noise" : "standard";
}

GumbelForm parse_gumbel_form(const std::string& name) {
    if (name == "standard") return GumbelForm::standard;
    if (name == "scaled_noise") return GumbelForm::scaled_noise;
    throw std::invalid_argument("gumbel_form must be `standard` or `scaled_noise`, got `" + name + "`");
}

void FBMHyperParams::validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(alpha) || alpha < 0.0) throw std::invalid_argument("alpha must be finite and >= 0");
    if (!finite(beta) || beta < 0.0) throw std::invalid_argument("beta must be finite and >= 0");
    if (alpha == 0.0 && beta == 0.0) throw std::invalid_argument("alpha and beta must not both be 0");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
    if (!finite(temperature) || !(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
    if (!finite(lr) || !(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (!(h >= 0.0 && h <= 1.0)) throw std::invalid_argument("h must lie in [0, 1]");
    if (!finite(epsilon) || epsilon < 0.0) throw std::invalid_argument("epsilon must be >= 0");
}

double open_uniform(std::mt19937_64& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

std::vector<double> gumbel_noise(std::size_t m, std::mt19937_64& rng) {
    std::vector<double> g(m);
    for (auto& v : g) v = -std::log(-std::log(open_uniform(rng)));
    return g;
}

std::vector<double> probs(std::span<const double> a, double temperature, std::span<const double> noise,
                          GumbelForm form) {
    if (!(temperature > 0.0)) throw std::invalid_argument("probs: temperature must be > 0");
    if (!noise.empty() && noise.size() != a.size()) throw std::invalid_argument("probs: noise length mismatch");
    std::vector<double> z(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double g = noise.empty() ? 0.0 : noise[i];
        z[i] = form == GumbelForm::standard ? (a[i] + g) / temperature : a[i] + g / temperature;
    }
    if (z.empty()) return z;
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (auto& v : z) v /= sum;
    return z;
}

AllocationMatrix::AllocationMatrix(std::size_t layers, quant::BitPalette palette, double temperature,
                                   GumbelForm form)
    : rows_(layers), palette_(std::move(palette)), form_(form), logits_(layers * palette_.size(), 0.0) {
    set_temperature(temperature);
}

void AllocationMatrix::set_temperature(double t) {
    if (!std::isfinite(t) || !(t > 0.0)) throw std::invalid_argument("temperature must be > 0");
    temperature_ = t;
}

std::span<const double> AllocationMatrix::row(std::size_t l) const {
    if (l >= rows_) throw std::out_of_range("allocation matrix row out of range");
    return {logits_.data() + l * cols(), cols()};
}

std::span<double> AllocationMatrix::row(std::size_t l) {
    if (l >= rows_) throw std::out_of_range("allocation matrix row out of range");
    return {logits_.data() + l * cols(), cols()};
}

std::vector<double> AllocationMatrix::probabilities(std::size_t l) const {
    return probs(row(l), temperature_, {}, form_);
}

double AllocationMatrix::expected_bits(std::size_t l) const {
    const auto f = probabilities(l);
    double e = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) e += f[i] * palette_[i];
    return e;
}

std::size_t sample_index(const AllocationMatrix& a, std::size_t l, std::mt19937_64& rng) {
    const auto r = a.row(l);
    const double t = a.temperature();
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double g = -std::log(-std::log(open_uniform(rng)));
        const double score = a.form() == GumbelForm::standard ? r[i] / t + g : r[i] + g / t;
        if (score > best_score) {
            best_score = score;
            best = i;
        }
    }
    return best;
}

BitAllocation sample_allocation(const AllocationMatrix& a, std::mt19937_64& rng, bool pin) {
    if (pin && !a.palette().contains(kPinnedBits)) {
        throw std::invalid_argument("sample_allocation: pinned layers need 8 in the palette");
    }
    BitAllocation out;
    out.bits.reserve(a.rows());
    for (std::size_t l = 0; l < a.rows(); ++l) {
        // Pinned rows still consume noise so the stream does not depend on pinning.
        const std::size_t k = sample_index(a, l, rng);
        out.bits.push_back(pin && is_pinned(l, a.rows()) ? kPinnedBits : a.palette()[k]);
    }
    return out;
}

double delta_a(double ce_loss, double lat_loss, double alpha, double beta, double epsilon) {
    return 1.0 / (alpha * ce_loss + beta * lat_loss + epsilon);
}

void update(AllocationMatrix& a, const BitAllocation& sampled, double delta, double gamma,
            std::span<const int> mask) {
    if (sampled.size() != a.rows() || mask.size() != a.rows()) {
        throw std::invalid_argument("update: allocation and mask must have one entry per layer");
    }
    const std::size_t m = a.cols();
    std::vector<double> weight(m);
    for (std::size_t d = 0; d < m; ++d) weight[d] = std::pow(gamma, static_cast<double>(d));
    for (std::size_t l = 0; l < a.rows(); ++l) {
        if (mask[l] == 0) continue;
        const std::size_t k = a.palette().index_of(sampled[l]);
        auto r = a.row(l);
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t d = i > k ? i - k : k - i;
            r[i] += weight[d] * delta;
        }
    }
}

void write_matrix_csv_header(std::ostream& out) {
    out << "epoch,layer,bits,logit,prob\n";
}

void write_matrix_csv(const AllocationMatrix& a, int epoch, std::ostream& out) {
    char buf[96];
    for (std::size_t l = 0; l < a.rows(); ++l) {
        const auto f = a.probabilities(l);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            std::snprintf(buf, sizeof(buf), "%d,%zu,%d,%.17g,%.17g\n", epoch, l + 1, a.palette()[i],
                          a.logit(l, i), f[i]);
            out << buf;
        }
    }
}

} // namespace fbm::alloc
