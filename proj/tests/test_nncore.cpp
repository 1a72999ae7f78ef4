// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/checkpoint.hpp"
#include "fbm/dataset.hpp"
#include "fbm/fbm.hpp"
#include "fbm/model.hpp"
#include "test_util.hpp"

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

using namespace fbm;
using namespace fbm::testing;

TEST(Dense, IdentityWeightsPassInputThrough) {
    nn::Architecture a;
    a.layers.push_back(nn::dense_spec(3, 3, false));
    nn::Model m(a, 0);
    auto& w = m.quantizable(0).weight().value;
    for (std::size_t i = 0; i < 9; ++i) w[i] = (i % 4 == 0) ? 1.0 : 0.0;
    nn::Tensor x({2, 3}, {1.5, -2.0, 0.25, 3.0, 0.0, -7.0});
    EXPECT_EQ(m.forward(x).values()[0], 1.5);
    EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), m.forward(x).values().begin()));
}

TEST(Dense, ZeroWeightsGiveZeroLogits) {
    nn::Architecture a;
    a.layers.push_back(nn::dense_spec(4, 2, true));
    nn::Model m(a, 3);
    for (auto& p : m.quantizable(0).parameters()) std::fill(p.value.values().begin(), p.value.values().end(), 0.0);
    std::mt19937_64 rng(1);
    const auto y = m.forward(random_tensor({5, 4}, rng));
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Model, TwoLayerMlpMatchesMatrixOracle) {
    nn::Model m(mlp({4, 6, 3}), 0);
    std::mt19937_64 rng(11);
    const auto x = random_tensor({5, 4}, rng);
    const auto logits = m.forward(x);

    auto mat = [](const nn::Tensor& t, std::size_t r, std::size_t c) {
        Eigen::MatrixXd out(r, c);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out(i, j) = t[i * c + j];
        return out;
    };
    auto vec = [](const nn::Tensor& t) {
        Eigen::VectorXd v(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) v(i) = t[i];
        return v;
    };
    const Eigen::MatrixXd w1 = mat(m.quantizable(0).weight().value, 6, 4);
    const Eigen::VectorXd b1 = vec(m.quantizable(0).parameters()[1].value);
    const Eigen::MatrixXd w2 = mat(m.quantizable(1).weight().value, 3, 6);
    const Eigen::VectorXd b2 = vec(m.quantizable(1).parameters()[1].value);
    const Eigen::MatrixXd xs = mat(x, 5, 4);
    for (int s = 0; s < 5; ++s) {
        const Eigen::VectorXd h = (w1 * xs.row(s).transpose() + b1).cwiseMax(0.0);
        const Eigen::VectorXd o = w2 * h + b2;
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(logits[s * 3 + k], o(k), 1e-12);
    }
}

TEST(Conv2d, MatchesDirectConvolution) {
    const nn::Shape in{2, 5, 4};
    nn::Architecture a;
    a.layers.push_back(nn::conv2d_spec(in, 3, 3, 1, 1, true));
    nn::Model m(a, 5);
    auto& b = m.quantizable(0).parameters()[1].value;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.1 * static_cast<double>(i + 1);
    std::mt19937_64 rng(2);
    const auto x = random_tensor({2, 2, 5, 4}, rng);
    const auto y = m.forward(x);
    const auto& w = m.quantizable(0).weight().value;
    ASSERT_EQ(y.shape(), (nn::Shape{2, 3, 5, 4}));
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 3; ++o)
            for (int r = 0; r < 5; ++r)
                for (int c = 0; c < 4; ++c) {
                    double acc = b[o];
                    for (std::size_t i = 0; i < 2; ++i)
                        for (int kr = 0; kr < 3; ++kr)
                            for (int kc = 0; kc < 3; ++kc) {
                                const int rr = r + kr - 1, cc = c + kc - 1;
                                if (rr < 0 || rr >= 5 || cc < 0 || cc >= 4) continue;
                                acc += w[((o * 2 + i) * 3 + kr) * 3 + kc] * x[((n * 2 + i) * 5 + rr) * 4 + cc];
                            }
                    EXPECT_NEAR(y[((n * 3 + o) * 5 + r) * 4 + c], acc, 1e-12);
                }
}

TEST(AvgPool, AveragesNonOverlappingWindows) {
    nn::AvgPool pool(nn::avgpool_spec({1, 4, 4}, 2));
    nn::Tensor x({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
    const auto y = pool.forward(x);
    EXPECT_EQ(y.shape(), (nn::Shape{1, 1, 2, 2}));
    EXPECT_DOUBLE_EQ(y[0], (0 + 1 + 4 + 5) / 4.0);
    EXPECT_DOUBLE_EQ(y[3], (10 + 11 + 14 + 15) / 4.0);
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
    nn::Tensor logits({1, 10}, 0.0);
    const std::vector<int> y{3};
    EXPECT_NEAR(nn::cross_entropy(logits, y), std::log(10.0), 1e-15);
    EXPECT_NEAR(nn::cross_entropy(logits, y), 2.302585, 1e-6);
}

TEST(CrossEntropy, ConfidentCorrectTendsToZero) {
    const std::vector<int> y{0};
    double prev = INFINITY;
    for (double z : {1.0, 5.0, 10.0, 20.0}) {
        const double l = nn::cross_entropy(nn::Tensor({1, 3}, {z, 0.0, 0.0}), y);
        EXPECT_LT(l, prev);
        prev = l;
    }
    const double saturated = nn::cross_entropy(nn::Tensor({1, 3}, {1000.0, 0.0, 0.0}), y);
    EXPECT_GE(saturated, 0.0);
    EXPECT_LT(saturated, 1e-12);
}

TEST(CrossEntropy, ThreeClassValue) {
    const double l = nn::cross_entropy(nn::Tensor({1, 3}, {2.0, 0.0, 0.0}), std::vector<int>{0});
    EXPECT_NEAR(l, -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0)), 1e-15);
    EXPECT_NEAR(l, 0.2395, 5e-5);
}

TEST(Backward, SingleNeuronClosedForm) {
    nn::Dense d(1, 1, true);
    d.weight().value[0] = 0.7;
    d.parameters()[1].value[0] = -0.2;
    const double x = 1.5, t = 2.0;
    const auto y = d.forward(nn::Tensor({1, 1}, {x}));
    // L = (y - t)^2
    const double dy = 2.0 * (y[0] - t);
    d.weight().value.ensure_grad();
    d.parameters()[1].value.ensure_grad();
    const auto dx = d.backward(nn::Tensor({1, 1}, {dy}));
    EXPECT_DOUBLE_EQ(d.weight().value.grad()[0], dy * x);
    EXPECT_DOUBLE_EQ(d.parameters()[1].value.grad()[0], dy);
    EXPECT_DOUBLE_EQ(dx[0], dy * 0.7);
}

TEST(Backward, MlpMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        nn::Model m(mlp({8, 16, 16, 3}), seed);
        ASSERT_LE(m.parameter_count(), 500u);
        std::mt19937_64 rng(seed + 100);
        nn::Tensor x;
        do x = random_tensor({4, 8}, rng);
        while (relu_margin(m, x) < 1e-2);
        const auto y = random_labels(4, 3, rng);
        EXPECT_LT(max_gradient_error(m, x, y), 1e-4) << "seed " << seed;
    }
}

TEST(Backward, CnnMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        nn::Model m(small_cnn(), seed);
        std::mt19937_64 rng(seed + 200);
        nn::Tensor x;
        do x = random_tensor({3, 1, 4, 4}, rng);
        while (relu_margin(m, x) < 1e-2);
        const auto y = random_labels(3, 3, rng);
        EXPECT_LT(max_gradient_error(m, x, y), 1e-4) << "seed " << seed;
    }
}

TEST(Backward, SaturatedCorrectPredictionHasZeroGradient) {
    nn::Architecture a;
    a.layers.push_back(nn::dense_spec(2, 2, false));
    nn::Model m(a, 0);
    auto& w = m.quantizable(0).weight().value;
    w[0] = 1000.0, w[1] = 0.0, w[2] = -1000.0, w[3] = 0.0;
    m.zero_grad();
    const auto r = nn::cross_entropy_with_grad(m.forward(nn::Tensor({1, 2}, {1.0, 0.0})), std::vector<int>{0});
    m.backward(r.grad);
    EXPECT_LT(r.loss, 1e-300);
    for (double g : w.grad()) EXPECT_EQ(g, 0.0);
}

namespace {

void fill_grad(nn::Model& m, double g) {
    for (std::size_t q = 0; q < m.num_quantizable(); ++q)
        for (auto& p : m.quantizable(q).parameters()) {
            p.value.ensure_grad();
            std::fill(p.value.grad().begin(), p.value.grad().end(), g);
        }
}

std::vector<double> flat_params(const nn::Model& m) {
    std::vector<double> out;
    for (std::size_t q = 0; q < m.num_quantizable(); ++q)
        for (const auto& p : m.quantizable(q).parameters())
            out.insert(out.end(), p.value.values().begin(), p.value.values().end());
    return out;
}

} // namespace

TEST(Sgd, ZeroLearningRateLeavesParameters) {
    nn::Model m(mlp({3, 4, 2}), 1);
    const auto before = flat_params(m);
    fill_grad(m, 0.37);
    const std::vector<double> lr(2, 0.0);
    nn::sgd_step(m, lr, 0.9, 1e-3);
    EXPECT_EQ(flat_params(m), before);
}

TEST(Sgd, VanillaStep) {
    nn::Model m(mlp({3, 4, 2}), 1);
    const auto before = flat_params(m);
    fill_grad(m, 0.5);
    const std::vector<double> lr(2, 0.1);
    nn::sgd_step(m, lr, 0.0, 0.0);
    const auto after = flat_params(m);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_DOUBLE_EQ(after[i], before[i] - 0.1 * 0.5);
}

TEST(Sgd, MomentumUnrollsOverTwoSteps) {
    nn::Model m(mlp({3, 4, 2}), 1);
    const auto before = flat_params(m);
    const std::vector<double> lr(2, 0.01);
    const double g = 0.3;
    for (int s = 0; s < 2; ++s) {
        fill_grad(m, g);
        nn::sgd_step(m, lr, 0.9, 0.0);
    }
    const auto after = flat_params(m);
    for (std::size_t i = 0; i < before.size(); ++i) {
        EXPECT_NEAR(before[i] - after[i], 0.01 * g * (1.0 + 1.9), 1e-15);
    }
}

TEST(Dataset, BlobsAreSeeded) {
    const auto a = nn::make_blobs(3, 300, 7);
    const auto b = nn::make_blobs(3, 300, 7);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.labels, b.labels);
    const auto c = nn::make_blobs(3, 300, 8);
    EXPECT_FALSE(a.features == c.features);
}

TEST(Dataset, IdxRoundTripAndBadMagic) {
    const auto dir = scratch_dir("idx");
    nn::Dataset d;
    d.features = nn::Tensor({3, 1, 2, 2}, {0, 1, 0.5, 1, 0, 0, 1, 1, 0.25, 0.75, 1, 0});
    d.labels = {2, 0, 1};
    d.num_classes = 3;
    nn::write_idx(d, dir / "img", dir / "lbl");
    const auto r = nn::load_idx(dir / "img", dir / "lbl");
    EXPECT_EQ(r.labels, d.labels);
    ASSERT_EQ(r.features.size(), d.features.size());
    for (std::size_t i = 0; i < d.features.size(); ++i) EXPECT_NEAR(r.features[i], d.features[i], 0.5 / 255);

    std::ofstream(dir / "bad", std::ios::binary) << std::string("\x00\x00\x08\x04\x00\x00\x00\x01", 8);
    EXPECT_THROW(nn::load_idx(dir / "bad", dir / "lbl"), std::runtime_error);
}

TEST(Dataset, ValidationSplitIsSeededAndDisjoint) {
    const auto d = nn::make_patterns(4, 400, 1, 8, 8, 0.5, 3);
    auto [tr, va] = nn::split_validation(d, 0.1, 9);
    auto [tr2, va2] = nn::split_validation(d, 0.1, 9);
    EXPECT_EQ(va.size(), 40u);
    EXPECT_EQ(tr.size(), 360u);
    EXPECT_EQ(va.features, va2.features);
    EXPECT_EQ(tr.labels, tr2.labels);
}

TEST(Training, TwoMoonsDepthTwoMlpFits) {
    const auto data = nn::make_two_moons(200, 0.1, 1);
    nn::Model m(mlp({2, 16, 2}), 1);
    std::mt19937_64 rng(1);
    const std::vector<double> lr(2, 0.1);
    for (int e = 0; e < 200; ++e) train_epoch(m, data, lr, 32, 0.9, 0.0, rng);
    EXPECT_GT(evaluate(m, data).accuracy, 95.0);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
    const auto dir = scratch_dir("ckpt");
    nn::Model m(small_cnn(), 4);
    m.set_bits(std::vector<int>{8, 4, 8});
    nn::save_checkpoint(m, dir / "a.bin");
    nn::Model r(small_cnn(), 99);
    nn::load_checkpoint(r, dir / "a.bin");
    nn::save_checkpoint(r, dir / "b.bin");
    std::ifstream fa(dir / "a.bin", std::ios::binary), fb(dir / "b.bin", std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_EQ(sa, sb);
    EXPECT_EQ(r.bits(), m.bits());
    EXPECT_EQ(flat_params(r), flat_params(m));
}
