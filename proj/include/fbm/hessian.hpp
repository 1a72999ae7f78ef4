// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fbm/alloc.hpp"
#include "fbm/dataset.hpp"
#include "fbm/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fbm::hessian {

/// y = M x for a symmetric operator of dimension `dim`.
using MatVec = std::function<void(std::span<const double> x, std::span<double> y)>;

struct PowerResult {
    double lambda = 0.0;
    int iterations = 0;
    bool converged = false;
    bool degenerate = false;  ///< operator annihilated the iterate
    std::vector<double> history;  ///< Rayleigh quotient per iteration
    std::vector<double> vector;   ///< final unit iterate
};

/// Power iteration from a seeded Gaussian start. Stops after `max_iters` or
/// when |lambda_k - lambda_{k-1}| <= tol * |lambda_k|.
PowerResult power_iteration(const MatVec& op, std::size_t dim, int max_iters, double tol,
                            std::uint64_t seed);

/// Row-major (samples x params) per-sample gradient matrix.
struct GradientMatrix {
    std::size_t samples = 0;
    std::size_t params = 0;
    std::vector<double> values;

    std::span<const double> row(std::size_t i) const { return {values.data() + i * params, params}; }
    /// F v = (1/n) sum_i (g_i . v) g_i.
    void fisher_vector(std::span<const double> v, std::span<double> out) const;
};

/// Per-sample cross-entropy gradients of every quantizable layer's
/// parameters (weights then bias), evaluated under the model's current
/// quantizers. One matrix per quantizable layer.
std::vector<GradientMatrix> per_sample_gradients(nn::Model& model, const nn::Dataset& data,
                                                 std::span<const std::size_t> rows);

struct FisherOptions {
    std::size_t samples = 512;
    int iters = 200;
    double tol = 1e-6;
    std::uint64_t seed = 0;
};

/// Sample rows: the first `samples` entries of a seeded permutation of the
/// dataset. Throws if the dataset is smaller.
std::vector<std::size_t> fisher_rows(std::size_t dataset_size, std::size_t samples, std::uint64_t seed);

struct LayerEigen {
    double lambda = 0.0;
    int iterations = 0;
    bool degenerate = false;
};

LayerEigen fisher_top_eigenvalue(nn::Model& model, const nn::Dataset& data, std::size_t layer,
                                 const FisherOptions& options);

struct SensitivityProfile {
    std::vector<double> lambda;  ///< one per quantizable layer, >= 0
    std::vector<int> iterations;
    std::vector<bool> degenerate;
    std::size_t samples = 0;

    std::size_t size() const { return lambda.size(); }
};

/// Top Fisher eigenvalue of every quantizable layer from one pass of
/// per-sample gradients. Layer l uses seed stream l; `threads` > 1 runs the
/// layers concurrently with identical results.
SensitivityProfile sensitivity_profile(nn::Model& model, const nn::Dataset& data, const FisherOptions& options,
                                       int threads = 1);

/// Columns: layer, lambda, iters.
void write_profile_csv(const SensitivityProfile& profile, const std::filesystem::path& path);
SensitivityProfile read_profile_csv(const std::filesystem::path& path);

/// Layer indices ordered by lambda descending; equal lambdas keep layer order.
std::vector<std::size_t> sensitivity_order(const SensitivityProfile& profile);

/// Group of each layer when the sensitivity order is cut into M contiguous
/// groups (0 = most sensitive).
std::vector<std::size_t> sensitivity_groups(const SensitivityProfile& profile, std::size_t groups);

/// Logit row peaked at palette index `peak`: entry i gets
/// peak_logit - decay * r_i, where r_i ranks the indices by distance from
/// the peak (the higher index first on equal distance). Every row is a
/// permutation of the same values.
std::vector<double> peaked_row(std::size_t m, std::size_t peak, double peak_logit, double decay);

/// Group j (0 = most sensitive) peaks at palette index M-1-j.
alloc::AllocationMatrix init_allocation(const SensitivityProfile& profile, const quant::BitPalette& palette,
                                        double peak_logit, double decay, double temperature = 1.0,
                                        alloc::GumbelForm form = alloc::GumbelForm::standard);

enum class MaskMode { highest, lowest };
std::string to_string(MaskMode mode);
MaskMode parse_mask_mode(const std::string& name);

/// 0 for the ceil(h * N) layers with the highest (or lowest) lambda, 1
/// elsewhere. Ties select the earlier layer.
std::vector<int> layer_mask(const SensitivityProfile& profile, double h, MaskMode mode = MaskMode::highest);

} // namespace fbm::hessian
