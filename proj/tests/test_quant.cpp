// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/layers.hpp"
#include "fbm/quant.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace fbm::quant;

TEST(Scale, MaxAbsOverLevelCount) {
    const std::vector<double> x{0.5, -3.0, 2.0};
    EXPECT_DOUBLE_EQ(calibrate_scale(x, 4), 3.0 / 7.0);
    EXPECT_NEAR(calibrate_scale(x, 4), 0.428571, 1e-6);
    const std::vector<double> one{1.0, -0.25};
    EXPECT_DOUBLE_EQ(calibrate_scale(one, 2), 1.0);
}

TEST(Scale, AllZeroIsOne) {
    const std::vector<double> z(5, 0.0);
    for (int b : {2, 3, 4, 8, 16}) EXPECT_EQ(calibrate_scale(z, b), 1.0);
}

TEST(Quantize, ZeroIsALevel) {
    for (int b : {2, 3, 8, 16})
        for (double s : {0.01, 1.0, 7.5}) EXPECT_EQ(quantize_value(0.0, {b, s}), 0.0);
}

TEST(Quantize, ClampsAtTopLevel) {
    EXPECT_EQ(quantize_value(1.7, {2, 1.0}), 1.0);
    EXPECT_EQ(quantize_value(-1.7, {2, 1.0}), -2.0);
    EXPECT_EQ(quantize_value(-2.9, {2, 1.0}), -2.0);
}

TEST(Quantize, RoundsHalfAwayFromZero) {
    EXPECT_EQ(quantize_value(0.5, {8, 1.0}), 1.0);
    EXPECT_EQ(quantize_value(-0.5, {8, 1.0}), -1.0);
    EXPECT_EQ(quantize_value(2.5, {8, 1.0}), 3.0);
}

TEST(Quantize, FullPrecisionWhenDisabled) {
    EXPECT_EQ(quantize_value(0.123456789, {0, 1.0}), 0.123456789);
}

TEST(Quantize, NearestLevelByEnumeration) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int b : {2, 3, 4, 8}) {
        std::vector<double> x(500);
        for (auto& v : x) v = n(rng);
        const QuantizerState st{b, calibrate_scale(x, b) * 0.8};
        const auto q = quantize(x, st);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double best = INFINITY;
            for (auto k = st.min_level(); k <= st.max_level(); ++k) {
                best = std::min(best, std::abs(x[i] - static_cast<double>(k) * st.scale));
            }
            if (in_clamp_range(x[i], st)) {
                EXPECT_LE(std::abs(x[i] - q[i]), st.scale / 2 + 1e-12);
                EXPECT_NEAR(std::abs(x[i] - q[i]), best, 1e-12);
            } else {
                const auto edge = x[i] < 0 ? st.min_level() : st.max_level();
                EXPECT_NEAR(q[i], static_cast<double>(edge) * st.scale, 1e-12);
            }
        }
    }
}

TEST(Quantize, LevelRange) {
    const QuantizerState st{3, 1.0};
    EXPECT_EQ(st.max_level(), 3);
    EXPECT_EQ(st.min_level(), -4);
}

TEST(Ste, PassesInsideRange) {
    const QuantizerState st{4, 0.5};
    const std::vector<double> x{0.1, -2.0, 3.4};
    const std::vector<double> g{1.0, 2.0, 3.0};
    EXPECT_EQ(ste_gradient(g, x, st), g);
}

TEST(Ste, BlocksFarAboveClamp) {
    const QuantizerState st{4, 0.5};
    const std::vector<double> x{100.0, -100.0};
    const std::vector<double> g{1.0, 1.0};
    EXPECT_EQ(ste_gradient(g, x, st), (std::vector<double>{0.0, 0.0}));
}

TEST(Ste, MaskIsClampIntervalIndicator) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    const QuantizerState st{3, 0.7};
    std::vector<double> x(1000), g(1000);
    for (auto& v : x) v = u(rng);
    for (auto& v : g) v = u(rng);
    const auto out = ste_gradient(g, x, st);
    const double lo = -4 * 0.7, hi = 3 * 0.7;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool inside = x[i] / 0.7 >= -4.0 && x[i] / 0.7 <= 3.0;
        EXPECT_EQ(out[i], inside ? g[i] : 0.0) << x[i] << " in [" << lo << ", " << hi << "]";
    }
}

TEST(Palette, OrderedAndIndexed) {
    const BitPalette p;
    EXPECT_EQ(p.bits(), (std::vector<int>{2, 3, 4, 8, 16}));
    EXPECT_EQ(p.index_of(8), 3u);
    EXPECT_THROW(p.index_of(5), std::out_of_range);
    EXPECT_THROW(BitPalette({4, 2}), std::invalid_argument);
    EXPECT_THROW(BitPalette({4}), std::invalid_argument);
}

TEST(ParamLayer, WeightsQuantizedBiasFullPrecision) {
    fbm::nn::Dense d(3, 2, true);
    const std::vector<double> w{0.3, -0.9, 0.1, 0.45, 0.0, -0.2};
    std::copy(w.begin(), w.end(), d.weight().value.values().begin());
    d.parameters()[1].value[0] = 0.123;
    d.set_bits(2);
    const auto we = d.effective_weight();
    const double s = calibrate_scale(w, 2);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_DOUBLE_EQ(we[i], quantize_value(w[i], {2, s}));
    EXPECT_EQ(d.effective_bias()[0], 0.123);
}
