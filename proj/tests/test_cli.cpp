// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/cli.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace fbm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome fbm_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    EXPECT_TRUE(in.good()) << p;
    return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t lines(const fs::path& p) {
    const auto s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

const std::string kDefault = fbm::testing::source_path("configs/default.toml");

/// The default config shrunk to a few seconds of work.
std::vector<std::string> quick(std::vector<std::string> args) {
    for (const char* o : {"epochs=2", "dataset.n=600", "pretrain_epochs=2", "fisher_samples=64", "fisher_iters=10"}) {
        args.push_back("--override");
        args.push_back(o);
    }
    return args;
}

void write_allocation_file(const fs::path& p, const std::vector<int>& bits) {
    std::ofstream out(p);
    for (std::size_t i = 0; i < bits.size(); ++i) out << (i + 1) << ' ' << bits[i] << '\n';
}

std::vector<std::string> dir_listing(const fs::path& d) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(d)) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

} // namespace

TEST(Cli, UsageErrors) {
    EXPECT_EQ(fbm_cli({}).code, cli::kExitInvalid);
    EXPECT_EQ(fbm_cli({"launch"}).code, cli::kExitInvalid);
    EXPECT_EQ(fbm_cli({"search"}).code, cli::kExitInvalid);
    EXPECT_EQ(fbm_cli({"--help"}).code, cli::kExitOk);
}

TEST(Cli, MissingKeyFailsBeforeWork) {
    const auto dir = fbm::testing::scratch_dir("cli_missing");
    std::ofstream(dir / "bad.toml") << "model = \"" << fbm::testing::source_path("configs/models/toy_mlp.toml")
                                    << "\"\nalpha = 0.1\ntemperature = 1\nh = 0.25\nseed = 1\n";
    const auto r = fbm_cli({"search", "--config", (dir / "bad.toml").string(), "--out", (dir / "run").string()});
    EXPECT_EQ(r.code, cli::kExitInvalid);
    EXPECT_NE(r.err.find("beta"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST(Cli, HessianIsDeterministicWithOneRowPerLayer) {
    const auto dir = fbm::testing::scratch_dir("cli_hessian");
    for (const char* sub : {"a", "b"}) {
        ASSERT_EQ(fbm_cli(quick({"hessian", "--config", kDefault, "--out", (dir / sub).string()})).code, 0);
    }
    EXPECT_EQ(slurp(dir / "a/sensitivity.csv"), slurp(dir / "b/sensitivity.csv"));
    EXPECT_EQ(lines(dir / "a/sensitivity.csv"), 1u + 5u);
}

TEST(Cli, HessianLambdaNonnegativeOverRandomConfigs) {
    const auto dir = fbm::testing::scratch_dir("cli_fuzz");
    std::mt19937_64 rng(2026);
    for (int i = 0; i < 100; ++i) {
        std::uniform_int_distribution<int> pe(0, 2), width(2, 24), fs_(8, 64);
        std::uniform_real_distribution<double> noise(0.1, 2.0);
        const auto arch = dir / ("arch" + std::to_string(i) + ".toml");
        std::ofstream(arch) << "name = \"fuzz\"\ninput = [1, 8, 8]\n[[layer]]\nkind = \"flatten\"\n"
                            << "[[layer]]\nkind = \"dense\"\nout_features = " << width(rng)
                            << "\n[[layer]]\nkind = \"relu\"\n[[layer]]\nkind = \"dense\"\nout_features = "
                            << width(rng) << "\n[[layer]]\nkind = \"relu\"\n[[layer]]\nkind = \"dense\"\n"
                            << "out_features = 4\n";
        const auto out = dir / ("run" + std::to_string(i));
        const auto r = fbm_cli({"hessian", "--config", kDefault, "--out", out.string(), "--seed",
                                std::to_string(i), "--override", "model=" + arch.string(), "--override",
                                "dataset.n=200", "--override", "pretrain_epochs=" + std::to_string(pe(rng)),
                                "--override", "dataset.noise=" + std::to_string(noise(rng)), "--override",
                                "fisher_samples=" + std::to_string(fs_(rng)), "--override", "fisher_iters=10"});
        ASSERT_EQ(r.code, 0) << r.err;
        std::ifstream in(out / "sensitivity.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            const double lambda = std::stod(line.substr(line.find(',') + 1));
            EXPECT_GE(lambda, 0.0) << "config " << i;
        }
    }
}

TEST(Cli, SearchWritesArtifactsDeterministically) {
    const auto dir = fbm::testing::scratch_dir("cli_search");
    for (const char* sub : {"a", "b"}) {
        const auto r = fbm_cli(quick({"search", "--config", kDefault, "--out", (dir / sub).string()}));
        ASSERT_EQ(r.code, 0) << r.err;
    }
    const auto files = dir_listing(dir / "a");
    EXPECT_EQ(files, (std::vector<std::string>{"allocation.txt", "epoch_log.csv", "epoch_log.jsonl", "events.txt",
                                               "matrix.csv", "model.bin", "sensitivity.csv", "summary.json"}));
    for (const auto& f : files) EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    EXPECT_EQ(lines(dir / "a/allocation.txt"), 5u);
    EXPECT_EQ(lines(dir / "a/epoch_log.csv"), 3u);
    EXPECT_EQ(lines(dir / "a/matrix.csv"), 1u + 3u * 5u * 5u);
}

TEST(Cli, DivergenceExitCode) {
    const auto dir = fbm::testing::scratch_dir("cli_diverge");
    const auto r = fbm_cli(quick({"search", "--config", kDefault, "--out", dir.string(), "--override", "lr=1e12"}));
    EXPECT_EQ(r.code, cli::kExitDiverged) << r.err;
}

TEST(Cli, SimulateUniformEightIsRelativeOne) {
    const auto dir = fbm::testing::scratch_dir("cli_sim8");
    write_allocation_file(dir / "a.txt", {8, 8, 8, 8, 8});
    const auto r = fbm_cli({"simulate", "--config", kDefault, "--allocation", (dir / "a.txt").string(), "--out",
                            dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("relative_latency 1\n"), std::string::npos);
    EXPECT_EQ(lines(dir / "latency.csv"), 1u + 10u);
}

TEST(Cli, SimulateRejectsLayerCountMismatch) {
    const auto dir = fbm::testing::scratch_dir("cli_simbad");
    write_allocation_file(dir / "a.txt", {8, 8, 8});
    const auto r = fbm_cli({"simulate", "--config", kDefault, "--allocation", (dir / "a.txt").string(), "--out",
                            dir.string()});
    EXPECT_EQ(r.code, cli::kExitInvalid);
    EXPECT_NE(r.err.find("3 layers"), std::string::npos);
}

TEST(Cli, SimulateResnet18Size) {
    const auto dir = fbm::testing::scratch_dir("cli_resnet");
    std::vector<int> bits(21, 4);
    bits.front() = bits.back() = 8;
    write_allocation_file(dir / "a.txt", bits);
    const auto r = fbm_cli({"simulate", "--config", fbm::testing::source_path("configs/resnet18.toml"), "--allocation",
                            (dir / "a.txt").string(), "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto pos = r.out.find("size_mb ");
    ASSERT_NE(pos, std::string::npos);
    EXPECT_NEAR(std::stod(r.out.substr(pos + 8)), 6.11, 0.01);
}

TEST(Cli, EnumerationMatchesOracleTable) {
    const auto dir = fbm::testing::scratch_dir("cli_enum");
    const auto cfg = fbm::testing::source_path("configs/toy3.toml");
    ASSERT_EQ(fbm_cli({"simulate", "--config", cfg, "--enumerate", "--out", dir.string()}).code, 0);
    const auto loaded = config::load_config(cfg);
    const auto table = hw::enumerate_allocations(loaded.run.architecture.layers, loaded.run.hardware,
                                                 loaded.run.palette);
    ASSERT_EQ(table.size(), 27u);
    std::ifstream in(dir / "enumeration.csv");
    std::string line;
    std::getline(in, line);
    for (const auto& row : table) {
        ASSERT_TRUE(std::getline(in, line));
        const auto parts = [&] {
            std::vector<std::string> v;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) v.push_back(cell);
            return v;
        }();
        EXPECT_EQ(parts[1], row.allocation.to_string());
        EXPECT_EQ(std::stod(parts[2]), row.total_s);
    }
}

TEST(Cli, OnePointSweepEqualsSearch) {
    const auto dir = fbm::testing::scratch_dir("cli_sweep1");
    ASSERT_EQ(fbm_cli(quick({"search", "--config", kDefault, "--out", (dir / "search").string()})).code, 0);
    const auto r = fbm_cli(quick({"sweep", "--config", kDefault, "--out", (dir / "sweep").string(), "--grid",
                                  "alpha=0.1", "beta=10", "h=0.25", "seed=1"}));
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto& f : dir_listing(dir / "search")) {
        EXPECT_EQ(slurp(dir / "search" / f), slurp(dir / "sweep/point_0000" / f)) << f;
    }
    EXPECT_EQ(lines(dir / "sweep/sweep.csv"), 2u);
}

TEST(Cli, SweepRowsAreGridTimesSeeds) {
    const auto dir = fbm::testing::scratch_dir("cli_sweep6");
    ::setenv("FBM_THREADS", "2", 1);
    const auto r = fbm_cli(quick({"sweep", "--config", kDefault, "--out", dir.string(), "--grid", "beta=1,10",
                                  "seed=1,2,3", "--override", "epochs=1"}));
    ::unsetenv("FBM_THREADS");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines(dir / "sweep.csv"), 1u + 6u);
    ASSERT_EQ(fbm_cli({"report", dir.string()}).code, 0);
    EXPECT_EQ(lines(dir / "tradeoff.csv"), 1u + 6u);
}

TEST(Cli, ReportOnEmptyDirectoryFailsWithoutOutput) {
    const auto dir = fbm::testing::scratch_dir("cli_report_empty");
    const auto r = fbm_cli({"report", dir.string()});
    EXPECT_EQ(r.code, cli::kExitFailure);
    EXPECT_TRUE(fs::is_empty(dir));
}

TEST(Cli, ReportShapes) {
    const auto dir = fbm::testing::scratch_dir("cli_report");
    auto args = quick({"search", "--config", kDefault, "--out", dir.string()});
    args.insert(args.end(), {"--override", "epochs=3"});
    ASSERT_EQ(fbm_cli(args).code, 0);
    const auto r = fbm_cli({"report", dir.string(), "--out", (dir / "report").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines(dir / "report/heatmap.csv"), 1u + 3u * 5u * 5u);
    EXPECT_EQ(lines(dir / "report/eigenvalues.csv"), 1u + 5u);
    EXPECT_EQ(lines(dir / "report/tradeoff.csv"), 2u);
}

TEST(Cli, RecoveryCurveColumns) {
    const auto dir = fbm::testing::scratch_dir("cli_recovery");
    write_allocation_file(dir / "a.txt", {8, 2, 8, 8, 8});
    const auto r = fbm_cli(quick({"finetune", "--config", kDefault, "--allocation", (dir / "a.txt").string(),
                                  "--recovery", "--epochs", "2", "--out", dir.string()}));
    ASSERT_EQ(r.code, 0) << r.err;
    ASSERT_EQ(fbm_cli({"report", dir.string()}).code, 0);
    const auto csv = slurp(dir / "recovery.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,delta_accuracy,scaled");
    EXPECT_EQ(lines(dir / "recovery.csv"), 1u + 4u);
}

TEST(Cli, FinetuneFromCheckpoint) {
    const auto dir = fbm::testing::scratch_dir("cli_finetune");
    ASSERT_EQ(fbm_cli(quick({"search", "--config", kDefault, "--out", (dir / "s").string()})).code, 0);
    const auto r = fbm_cli(quick({"finetune", "--config", kDefault, "--allocation",
                                  (dir / "s/allocation.txt").string(), "--checkpoint", (dir / "s/model.bin").string(),
                                  "--epochs", "2", "--out", (dir / "f").string()}));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines(dir / "f/finetune.csv"), 3u);
}

TEST(Cli, DefaultConfigReproducesGoldenEpochLog) {
    const auto dir = fbm::testing::scratch_dir("cli_golden");
    const auto r = fbm_cli({"search", "--config", kDefault, "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(dir / "epoch_log.csv"), slurp(fbm::testing::source_path("tests/golden/default_epoch_log.csv")));
}
