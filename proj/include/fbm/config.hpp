// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fbm/fbm.hpp"
#include "fbm/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

// Run configuration and architecture files (TOML).
//
// Run config: top-level scalars mirror RunConfig; `model` names an
// architecture file relative to the config's directory. Optional tables
// [hardware], [dataset] and [sweep]. Unknown keys are rejected by name.
//
// Architecture file: `name`, `input = [c, h, w]` (or `[features]`) and one
// [[layer]] table per layer with `kind` (dense | conv2d | relu | flatten |
// avgpool) plus the kind's fields. A layer's input defaults to the previous
// layer's output; an explicit `input` describes branches.

namespace fbm::config {

/// Thrown for parse errors and schema violations; the message names the key.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SweepGrid {
    std::vector<double> alpha;
    std::vector<double> beta;
    std::vector<double> h;
    std::vector<std::uint64_t> seeds;
};

struct LoadedConfig {
    RunConfig run;
    std::filesystem::path model_path;
    SweepGrid sweep;  ///< each axis defaults to the run's own value
};

nn::Architecture parse_architecture(const std::string& text, const std::string& source = "architecture");
nn::Architecture load_architecture(const std::filesystem::path& path);

/// `key=value` with a dotted key. A value that is not valid TOML is taken
/// as a string.
struct Override {
    std::vector<std::string> path;
    std::string value;
};
Override parse_override(const std::string& text);

/// Seed precedence: `seed` argument, the config's `seed`, then FBM_SEED.
/// Throws ConfigError when none is present.
LoadedConfig load_config(const std::filesystem::path& path, const std::vector<Override>& overrides = {},
                         std::optional<std::uint64_t> seed = std::nullopt);

/// Same as load_config for in-memory text; relative model paths resolve
/// against `base_dir`.
LoadedConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                          const std::vector<Override>& overrides = {},
                          std::optional<std::uint64_t> seed = std::nullopt,
                          const std::string& source = "config");

} // namespace fbm::config
