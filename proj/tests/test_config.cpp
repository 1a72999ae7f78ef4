// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/config.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

using namespace fbm;
using namespace fbm::config;

namespace {

const char* kArch = R"(
name = "tiny"
input = [4]

[[layer]]
kind = "dense"
out_features = 8

[[layer]]
kind = "relu"

[[layer]]
kind = "dense"
out_features = 3
)";

std::filesystem::path arch_dir() {
    static const auto dir = [] {
        auto d = fbm::testing::scratch_dir("config");
        std::ofstream(d / "tiny.toml") << kArch;
        return d;
    }();
    return dir;
}

std::string base_text(const std::string& extra = "") {
    return "model = \"tiny.toml\"\nalpha = 0.1\nbeta = 10.0\ntemperature = 1.0\nh = 0.25\nseed = 3\n" + extra;
}

std::string error_of(const std::string& text, const std::vector<Override>& o = {}) {
    try {
        parse_config(text, arch_dir(), o);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST(Config, MinimalConfigLoads) {
    const auto c = parse_config(base_text(), arch_dir());
    EXPECT_EQ(c.run.hyper.alpha, 0.1);
    EXPECT_EQ(c.run.hyper.beta, 10.0);
    EXPECT_EQ(c.run.hyper.h, 0.25);
    EXPECT_EQ(c.run.seed, 3u);
    EXPECT_EQ(c.run.architecture.name, "tiny");
    EXPECT_EQ(c.run.architecture.num_quantizable(), 2u);
    EXPECT_EQ(c.sweep.alpha, std::vector<double>{0.1});
    EXPECT_EQ(c.sweep.seeds, std::vector<std::uint64_t>{3});
}

TEST(Config, MissingKeyIsNamed) {
    const std::string text = "model = \"tiny.toml\"\nalpha = 0.1\ntemperature = 1.0\nh = 0.25\nseed = 1\n";
    EXPECT_NE(error_of(text).find("beta"), std::string::npos);
}

TEST(Config, UnknownKeyIsNamed) {
    EXPECT_NE(error_of(base_text("colour = 3\n")).find("colour"), std::string::npos);
    EXPECT_NE(error_of(base_text("[hardware]\nwarp = 2\n")).find("hardware.warp"), std::string::npos);
}

TEST(Config, OutOfRangeValueIsNamed) {
    EXPECT_NE(error_of(base_text("gamma = 1.5\n")).find("gamma"), std::string::npos);
    EXPECT_NE(error_of(base_text("epochs = -1\n")).find("epochs"), std::string::npos);
    EXPECT_NE(error_of(base_text("palette = [2, 4]\n")).find("8"), std::string::npos);
}

TEST(Config, WrongTypeIsNamed) {
    EXPECT_NE(error_of(base_text("epochs = \"many\"\n")).find("epochs"), std::string::npos);
}

TEST(Config, SyntaxErrorHasLocation) {
    EXPECT_NE(error_of("alpha = = 1\n").find("config:1"), std::string::npos);
}

TEST(Config, OverridesApply) {
    const auto c = parse_config(base_text(), arch_dir(),
                                {parse_override("beta=0"), parse_override("hardware.cores=8"),
                                 parse_override("gumbel_form=scaled_noise")});
    EXPECT_EQ(c.run.hyper.beta, 0.0);
    EXPECT_EQ(c.run.hardware.cores, 8);
    EXPECT_EQ(c.run.gumbel_form, alloc::GumbelForm::scaled_noise);
    EXPECT_THROW(parse_override("novalue"), ConfigError);
    EXPECT_NE(error_of(base_text(), {parse_override("bogus=1")}).find("bogus"), std::string::npos);
}

TEST(Config, SeedPrecedence) {
    const std::string no_seed = "model = \"tiny.toml\"\nalpha = 0.1\nbeta = 1\ntemperature = 1\nh = 0\n";
    EXPECT_EQ(parse_config(base_text(), arch_dir(), {}, 9).run.seed, 9u);
    ::setenv("FBM_SEED", "17", 1);
    EXPECT_EQ(parse_config(no_seed, arch_dir()).run.seed, 17u);
    EXPECT_EQ(parse_config(base_text(), arch_dir()).run.seed, 3u);
    ::unsetenv("FBM_SEED");
    EXPECT_NE(error_of(no_seed).find("seed"), std::string::npos);
}

TEST(Config, DatasetSeedFollowsRunSeedUnlessSet) {
    const auto a = parse_config(base_text(), arch_dir());
    EXPECT_EQ(a.run.data_seed(), 3u);
    const auto b = parse_config(base_text("[dataset]\nseed = 11\n"), arch_dir());
    EXPECT_EQ(b.run.data_seed(), 11u);
}

TEST(Config, SweepTable) {
    const auto c = parse_config(base_text("[sweep]\nbeta = [0.1, 1.0, 10.0]\nseeds = [1, 2]\n"), arch_dir());
    EXPECT_EQ(c.sweep.beta, (std::vector<double>{0.1, 1.0, 10.0}));
    EXPECT_EQ(c.sweep.seeds, (std::vector<std::uint64_t>{1, 2}));
    EXPECT_EQ(c.sweep.h, std::vector<double>{0.25});
}

TEST(Architecture, ParsesBranchInput) {
    const auto a = parse_architecture(R"(
name = "branch"
input = [4, 8, 8]
[[layer]]
kind = "conv2d"
out_channels = 8
kernel = 3
stride = 2
padding = 1
[[layer]]
kind = "conv2d"
input = [4, 8, 8]
out_channels = 8
kernel = 1
stride = 2
bias = false
)");
    ASSERT_EQ(a.layers.size(), 2u);
    EXPECT_EQ(a.layers[0].output, (nn::Shape{8, 4, 4}));
    EXPECT_EQ(a.layers[1].params, 32u);
    EXPECT_FALSE(a.is_chain());
}

TEST(Architecture, DenseNeedsFlatInput) {
    EXPECT_THROW(parse_architecture("name = \"x\"\ninput = [1, 4, 4]\n[[layer]]\nkind = \"dense\"\nout_features = 2\n"),
                 ConfigError);
    EXPECT_THROW(parse_architecture("name = \"x\"\ninput = [4]\n[[layer]]\nkind = \"pool\"\n"), ConfigError);
}

TEST(Architecture, ShippedFilesLoad) {
    const auto resnet = load_architecture(fbm::testing::source_path("configs/models/resnet18.toml"));
    EXPECT_EQ(resnet.num_quantizable(), 21u);
    std::size_t params = 0;
    for (const auto& l : resnet.layers) params += l.params;
    EXPECT_EQ(params, 11679912u);
    for (const char* f : {"default.toml", "recovery.toml", "toy3.toml", "resnet18.toml"}) {
        EXPECT_NO_THROW(load_config(fbm::testing::source_path(std::string("configs/") + f))) << f;
    }
}
