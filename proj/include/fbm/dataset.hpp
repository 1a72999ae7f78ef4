// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fbm/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fbm::nn {

enum class Split { train, val };

struct Dataset {
    Tensor features;  ///< (n, ...) rows
    std::vector<int> labels;
    int num_classes = 0;
    Split split = Split::train;

    std::size_t size() const { return labels.size(); }
    Shape sample_shape() const;
    /// Throws unless labels are in [0, K) and rows match the label count.
    void validate() const;
    /// Rows at `indices`, in that order.
    Dataset subset(std::span<const std::size_t> indices) const;
    Tensor batch_features(std::span<const std::size_t> indices) const;
    std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

/// Synthetic source description, or an IDX image/label file pair.
struct DatasetSpec {
    std::string kind = "patterns";  ///< patterns | blobs | moons | idx
    std::size_t n = 3000;
    int classes = 4;
    double noise = 0.6;
    std::uint64_t seed = 0;
    std::size_t channels = 1;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t dims = 2;          ///< blobs feature dimension
    std::filesystem::path images;  ///< idx only
    std::filesystem::path labels;  ///< idx only
};

/// Isotropic Gaussian clusters with seeded centers.
Dataset make_blobs(int classes, std::size_t n, std::uint64_t seed, std::size_t dims = 2,
                   double spread = 1.0);
/// Two interleaved half circles with Gaussian noise.
Dataset make_two_moons(std::size_t n, double noise, std::uint64_t seed);
/// (C, H, W) images: a per-class random block pattern, shifted by up to one
/// pixel, plus Gaussian noise.
Dataset make_patterns(int classes, std::size_t n, std::size_t channels, std::size_t height,
                      std::size_t width, double noise, std::uint64_t seed);

/// IDX pair: images with magic 0x00000803 (u8, scaled to [0,1]) and labels
/// with magic 0x00000801.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
void write_idx(const Dataset& data, const std::filesystem::path& images,
               const std::filesystem::path& labels);

Dataset load_dataset(const DatasetSpec& spec);

/// Seeded split of `fraction` of the rows into a validation set.
std::pair<Dataset, Dataset> split_validation(const Dataset& data, double fraction, std::uint64_t seed);

/// One CSV row per sample: label followed by the flattened features.
void write_csv(const Dataset& data, const std::filesystem::path& path);

} // namespace fbm::nn
