// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fbm/model.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace fbm::nn {

/// Flat container of named tensors. Little-endian layout:
///
///   "FBMCKPT1"                      8-byte magic
///   u32 entry count
///   per entry, in name order:
///     u32 name length, name bytes (UTF-8)
///     u32 rank, u64 dims[rank]
///     f64 values[prod(dims)]
///
/// Writing then reading a container reproduces it byte for byte.
using TensorMap = std::map<std::string, Tensor>;

void write_tensors(const TensorMap& tensors, const std::filesystem::path& path);
TensorMap read_tensors(const std::filesystem::path& path);

/// Parameters as `layer<i>.<param>` plus quantizer state as
/// `quant<q>.bits` and `quant<q>.act_scale` (q = 1..N).
TensorMap model_state(const Model& model);
/// Restores parameters and quantizer state; shapes must match.
void load_model_state(Model& model, const TensorMap& state);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
void load_checkpoint(Model& model, const std::filesystem::path& path);

} // namespace fbm::nn
