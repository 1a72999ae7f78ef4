// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fbm/bit_allocation.hpp"
#include "fbm/quant.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fbm::alloc {

/// standard: f = softmax((a + g) / T). scaled_noise: f = softmax(a + g / T).
enum class GumbelForm { standard, scaled_noise };
std::string to_string(GumbelForm form);
GumbelForm parse_gumbel_form(const std::string& name);

struct FBMHyperParams {
    double alpha = 0.1;
    double beta = 10.0;
    double gamma = 0.5;
    double temperature = 1.0;
    double lr = 0.01;
    double h = 0.25;
    double epsilon = 1e-8;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

/// Uniform draw in the open interval (0, 1) from the top 53 bits.
double open_uniform(std::mt19937_64& rng);
/// i.i.d. Gumbel(0, 1) samples.
std::vector<double> gumbel_noise(std::size_t m, std::mt19937_64& rng);

/// Probability row for logits `a` under temperature T. `noise` may be empty
/// (zero noise). Log-sum-exp stabilized.
std::vector<double> probs(std::span<const double> a, double temperature, std::span<const double> noise = {},
                          GumbelForm form = GumbelForm::standard);

/// N x M logits over the palette.
class AllocationMatrix {
public:
    AllocationMatrix() = default;
    AllocationMatrix(std::size_t layers, quant::BitPalette palette, double temperature,
                     GumbelForm form = GumbelForm::standard);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return palette_.size(); }
    const quant::BitPalette& palette() const { return palette_; }
    double temperature() const { return temperature_; }
    void set_temperature(double t);
    GumbelForm form() const { return form_; }

    double logit(std::size_t l, std::size_t i) const { return logits_[l * cols() + i]; }
    double& logit(std::size_t l, std::size_t i) { return logits_[l * cols() + i]; }
    std::span<const double> row(std::size_t l) const;
    std::span<double> row(std::size_t l);
    const std::vector<double>& logits() const { return logits_; }

    /// Zero-noise probability row.
    std::vector<double> probabilities(std::size_t l) const;
    /// Zero-noise expected bitwidth of row l.
    double expected_bits(std::size_t l) const;

    bool operator==(const AllocationMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    quant::BitPalette palette_;
    double temperature_ = 1.0;
    GumbelForm form_ = GumbelForm::standard;
    std::vector<double> logits_;
};

/// Draws one palette index from row l. Standard form: argmax_i(a_i/T + g_i),
/// whose law is the zero-noise probability row. scaled_noise form: argmax_i(a_i + g_i/T).
std::size_t sample_index(const AllocationMatrix& a, std::size_t l, std::mt19937_64& rng);

/// Independent draw per layer; with `pin`, the first and last layers are
/// forced to 8 bits.
BitAllocation sample_allocation(const AllocationMatrix& a, std::mt19937_64& rng, bool pin = true);

/// 1 / (alpha * ce + beta * lat + epsilon).
double delta_a(double ce_loss, double lat_loss, double alpha, double beta, double epsilon = 1e-8);

/// a[l][i] += gamma^|i - k| * delta for every layer with mask[l] != 0, where
/// k is the palette index of sampled[l]. Rows with mask 0 are untouched.
void update(AllocationMatrix& a, const BitAllocation& sampled, double delta, double gamma,
            std::span<const int> mask);

/// One row per (layer, palette entry) for the given epoch. Columns: epoch,
/// layer, bits, logit, prob (zero noise).
void write_matrix_csv(const AllocationMatrix& a, int epoch, std::ostream& out);
void write_matrix_csv_header(std::ostream& out);

} // namespace fbm::alloc
