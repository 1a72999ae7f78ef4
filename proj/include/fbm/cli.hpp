// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fbm/config.hpp"
#include "fbm/fbm.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

// `fbm <command> --config <path> [--override k=v ...] [--out <dir>] [--seed n]`
//
// Commands: hessian, search, finetune, simulate, sweep, report. Every
// output file is a pure function of the config, the seed and the command's
// inputs. FBM_SEED supplies a missing seed; FBM_THREADS bounds the sweep
// worker pool and the Fisher workers.

namespace fbm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalid = 2;  ///< bad arguments, config or input file
inline constexpr int kExitDiverged = 3;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// FBM_THREADS, or 1 when unset. Throws config::ConfigError when malformed.
int env_threads();

/// Files written by `search` into `dir`: sensitivity.csv, epoch_log.csv,
/// epoch_log.jsonl, matrix.csv, allocation.txt, events.txt, summary.json,
/// model.bin, plus finetune.csv when finetune_epochs > 0.
void write_search_outputs(const std::filesystem::path& dir, const RunConfig& config, RunResult& result);

/// Runs a full search (and the optional fine-tune) into `dir`.
RunResult search_into(const std::filesystem::path& dir, const RunConfig& config, int threads);

struct SweepPoint {
    double alpha = 0.0;
    double beta = 0.0;
    double h = 0.0;
    std::uint64_t seed = 0;
};

/// alpha-major, then beta, h, seed.
std::vector<SweepPoint> expand_grid(const config::SweepGrid& grid);

/// Applies `key=v1,v2,...` to one axis of `grid`.
void apply_grid_option(config::SweepGrid& grid, const std::string& text);

/// Reads the run artifacts in `run_dir` and writes tradeoff.csv,
/// heatmap.csv, eigenvalues.csv and recovery.csv (those whose inputs exist)
/// into `out_dir`. Throws std::runtime_error before writing anything when
/// no input is present. Returns the files written.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& run_dir,
                                                const std::filesystem::path& out_dir);

} // namespace fbm::cli
