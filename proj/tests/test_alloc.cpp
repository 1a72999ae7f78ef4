// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/alloc.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

using namespace fbm;
using namespace fbm::alloc;

TEST(Probs, EqualLogitsAreUniform) {
    const std::vector<double> a(5, 1.3);
    for (double t : {0.1, 1.0, 50.0}) {
        for (double p : probs(a, t)) EXPECT_NEAR(p, 0.2, 1e-15);
    }
}

TEST(Probs, HighTemperatureFlattens) {
    const std::vector<double> a{3.0, -1.0, 0.5, 2.0};
    const auto p = probs(a, 1e9);
    for (double v : p) EXPECT_NEAR(v, 0.25, 1e-8);
}

TEST(Probs, PeakedRowValue) {
    const std::vector<double> a{2, 0, 0, 0, 0};
    const auto p = probs(a, 1.0);
    EXPECT_NEAR(p[0], std::exp(2.0) / (std::exp(2.0) + 4.0), 1e-15);
    EXPECT_NEAR(p[0], 0.6488, 5e-5);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-15);
}

TEST(Probs, StableForLargeLogits) {
    const std::vector<double> a{1000.0, 999.0, -1000.0};
    const auto p = probs(a, 1.0);
    EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
    EXPECT_EQ(p[2], 0.0);
}

TEST(Probs, FormsDifferOnlyWithNoise) {
    const std::vector<double> a{1.0, 0.0, -0.5};
    const std::vector<double> g{0.3, -0.2, 1.1};
    const auto s0 = probs(a, 2.0, {}, GumbelForm::standard);
    const auto p0 = probs(a, 2.0, {}, GumbelForm::scaled_noise);
    const auto s = probs(a, 2.0, g, GumbelForm::standard);
    const auto p = probs(a, 2.0, g, GumbelForm::scaled_noise);
    // standard: softmax((a+g)/T); scaled_noise: softmax(a + g/T)
    double zs = 0, zp = 0;
    for (int i = 0; i < 3; ++i) zs += std::exp((a[i] + g[i]) / 2.0), zp += std::exp(a[i] + g[i] / 2.0);
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(s[i], std::exp((a[i] + g[i]) / 2.0) / zs, 1e-15);
        EXPECT_NEAR(p[i], std::exp(a[i] + g[i] / 2.0) / zp, 1e-15);
    }
    EXPECT_NE(s0, p0);
}

TEST(Sampling, DominantLogitIsDeterministic) {
    AllocationMatrix a(4, quant::BitPalette(), 1.0);
    for (std::size_t l = 0; l < 4; ++l) a.logit(l, 1) = 200.0;
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(sample_allocation(a, rng, false), BitAllocation::uniform(4, 3));
    }
}

TEST(Sampling, PinsFirstAndLastLayer) {
    AllocationMatrix a(5, quant::BitPalette(), 1.0);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 50; ++i) {
        const auto s = sample_allocation(a, rng, true);
        EXPECT_EQ(s[0], 8);
        EXPECT_EQ(s[4], 8);
    }
}

TEST(Sampling, SeededStreamIsReproducible) {
    AllocationMatrix a(6, quant::BitPalette(), 1.0);
    a.logit(2, 4) = 1.0;
    std::mt19937_64 r1(42), r2(42);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_allocation(a, r1), sample_allocation(a, r2));
}

TEST(Sampling, FrequenciesMatchProbabilities) {
    AllocationMatrix a(1, quant::BitPalette(), 0.7);
    const std::vector<double> logits{0.4, -1.0, 1.2, 0.0, 0.3};
    std::copy(logits.begin(), logits.end(), a.row(0).begin());
    const auto f = a.probabilities(0);
    std::mt19937_64 rng(8);
    std::vector<int> counts(5, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[sample_index(a, 0, rng)];
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(counts[i] / static_cast<double>(n), f[i], 0.01);
}

TEST(Sampling, OpenUniformStaysInside) {
    std::mt19937_64 rng(0);
    for (int i = 0; i < 100000; ++i) {
        const double u = open_uniform(rng);
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(DeltaA, Values) {
    EXPECT_NEAR(delta_a(1.0, 1.0, 0.1, 10.0, 0.0), 1.0 / 10.1, 1e-15);
    EXPECT_NEAR(delta_a(1.0, 1.0, 0.1, 10.0, 0.0), 0.09901, 5e-6);
    EXPECT_DOUBLE_EQ(delta_a(1.0, 123.0, 1.0, 0.0, 0.0), 1.0);
    EXPECT_LT(delta_a(1e12, 1e12, 0.1, 10.0), 1e-12);
}

TEST(Update, ExponentPattern) {
    AllocationMatrix a(1, quant::BitPalette({2, 3, 4, 8, 16}), 1.0);
    const std::vector<int> mask{1};
    update(a, BitAllocation{{8}}, 0.1, 0.5, mask);
    const std::vector<double> expected{0.0125, 0.025, 0.05, 0.1, 0.05};
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.logit(0, i), expected[i]);
}

TEST(Update, MaskedRowsUntouched) {
    AllocationMatrix a(3, quant::BitPalette(), 1.0);
    for (std::size_t i = 0; i < a.logits().size(); ++i) a.row(i / 5)[i % 5] = std::sin(static_cast<double>(i));
    const auto before = a;
    const std::vector<int> mask{0, 1, 0};
    update(a, BitAllocation{{2, 4, 16}}, 0.37, 0.5, mask);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(a.logit(0, i), before.logit(0, i));
        EXPECT_EQ(a.logit(2, i), before.logit(2, i));
    }
    EXPECT_NE(a.logit(1, 2), before.logit(1, 2));
}

TEST(Update, SmallGammaConcentratesOnSampledBit) {
    AllocationMatrix a(1, quant::BitPalette(), 1.0);
    const std::vector<int> mask{1};
    update(a, BitAllocation{{4}}, 1.0, 1e-300, mask);
    const std::vector<double> expected{0.0, 1e-300, 1.0, 1e-300, 0.0};
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.logit(0, i), expected[i]);
}

TEST(Hyper, ValidationNamesField) {
    FBMHyperParams h;
    h.gamma = 1.5;
    try {
        h.validate();
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("gamma"), std::string::npos);
    }
}

TEST(MatrixCsv, OneRowPerEntry) {
    AllocationMatrix a(2, quant::BitPalette(), 1.0);
    std::ostringstream out;
    write_matrix_csv_header(out);
    write_matrix_csv(a, 3, out);
    const std::string s = out.str();
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 11);
    EXPECT_EQ(s.substr(0, s.find('\n')), "epoch,layer,bits,logit,prob");
}
