// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace fbm::nn {

Shape Dataset::sample_shape() const {
    return Shape(features.shape().begin() + 1, features.shape().end());
}

void Dataset::validate() const {
    if (features.rank() < 2) throw std::invalid_argument("dataset: features need a row axis");
    if (features.dim(0) != labels.size()) {
        throw std::invalid_argument("dataset: " + std::to_string(features.dim(0)) + " feature rows but " +
                                    std::to_string(labels.size()) + " labels");
    }
    if (num_classes <= 0) throw std::invalid_argument("dataset: class count must be positive");
    for (int y : labels) {
        if (y < 0 || y >= num_classes) {
            throw std::invalid_argument("dataset: label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(num_classes) + ")");
        }
    }
}

Tensor Dataset::batch_features(std::span<const std::size_t> indices) const {
    Shape shape{indices.size()};
    const Shape row = sample_shape();
    shape.insert(shape.end(), row.begin(), row.end());
    const std::size_t stride = shape_size(row);
    Tensor out(shape);
    const auto src = features.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * stride), stride,
                    dst.begin() + static_cast<std::ptrdiff_t>(i * stride));
    }
    return out;
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
    return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    return {batch_features(indices), batch_labels(indices), num_classes, split};
}

Dataset make_blobs(int classes, std::size_t n, std::uint64_t seed, std::size_t dims, double spread) {
    if (classes <= 0 || n == 0 || dims == 0) throw std::invalid_argument("blobs: empty configuration");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> center(-10.0, 10.0);
    std::vector<double> centers(static_cast<std::size_t>(classes) * dims);
    for (double& c : centers) c = center(rng);
    std::normal_distribution<double> noise(0.0, spread);
    Dataset d{Tensor({n, dims}), std::vector<int>(n), classes, Split::train};
    auto f = d.features.values();
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % static_cast<std::size_t>(classes));
        d.labels[i] = y;
        for (std::size_t j = 0; j < dims; ++j) {
            f[i * dims + j] = centers[static_cast<std::size_t>(y) * dims + j] + noise(rng);
        }
    }
    return d;
}

Dataset make_two_moons(std::size_t n, double noise, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("two-moons: need at least two samples");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::normal_distribution<double> jitter(0.0, noise);
    Dataset d{Tensor({n, 2}), std::vector<int>(n), 2, Split::train};
    auto f = d.features.values();
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        const double t = angle(rng);
        double x0 = y == 0 ? std::cos(t) : 1.0 - std::cos(t);
        double x1 = y == 0 ? std::sin(t) : 0.5 - std::sin(t);
        f[2 * i] = x0 + jitter(rng);
        f[2 * i + 1] = x1 + jitter(rng);
        d.labels[i] = y;
    }
    return d;
}

Dataset make_patterns(int classes, std::size_t n, std::size_t channels, std::size_t height,
                      std::size_t width, double noise, std::uint64_t seed) {
    if (classes <= 0 || n == 0 || channels == 0 || height < 2 || width < 2) {
        throw std::invalid_argument("patterns: empty configuration");
    }
    std::mt19937_64 rng(seed);
    const std::size_t plane = height * width;
    const std::size_t row = channels * plane;
    // 2x2 blocks of +-1.
    std::vector<double> protos(static_cast<std::size_t>(classes) * row);
    std::bernoulli_distribution coin(0.5);
    for (int c = 0; c < classes; ++c) {
        for (std::size_t ch = 0; ch < channels; ++ch) {
            for (std::size_t by = 0; by < (height + 1) / 2; ++by) {
                for (std::size_t bx = 0; bx < (width + 1) / 2; ++bx) {
                    const double v = coin(rng) ? 1.0 : -1.0;
                    for (std::size_t y = 2 * by; y < std::min(height, 2 * by + 2); ++y) {
                        for (std::size_t x = 2 * bx; x < std::min(width, 2 * bx + 2); ++x) {
                            protos[static_cast<std::size_t>(c) * row + ch * plane + y * width + x] = v;
                        }
                    }
                }
            }
        }
    }
    std::uniform_int_distribution<int> label(0, classes - 1);
    std::uniform_int_distribution<int> shift(-1, 1);
    std::normal_distribution<double> jitter(0.0, noise);
    Dataset d{Tensor({n, channels, height, width}), std::vector<int>(n), classes, Split::train};
    auto f = d.features.values();
    for (std::size_t i = 0; i < n; ++i) {
        const int y = label(rng);
        const int dy = shift(rng);
        const int dx = shift(rng);
        d.labels[i] = y;
        const double* proto = protos.data() + static_cast<std::size_t>(y) * row;
        for (std::size_t ch = 0; ch < channels; ++ch) {
            for (std::size_t yy = 0; yy < height; ++yy) {
                const std::size_t sy = (yy + height + static_cast<std::size_t>(dy + 1) - 1) % height;
                for (std::size_t xx = 0; xx < width; ++xx) {
                    const std::size_t sx = (xx + width + static_cast<std::size_t>(dx + 1) - 1) % width;
                    f[i * row + ch * plane + yy * width + xx] = proto[ch * plane + sy * width + sx] + jitter(rng);
                }
            }
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error("idx: truncated header in " + path.string());
    }
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<unsigned char> read_body(std::istream& in, std::size_t count, const std::filesystem::path& path) {
    std::vector<unsigned char> out(count);
    if (!in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(count))) {
        throw std::runtime_error("idx: truncated data in " + path.string());
    }
    return out;
}

} // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    std::ifstream fi(images, std::ios::binary);
    if (!fi) throw std::runtime_error("idx: cannot open " + images.string());
    std::ifstream fl(labels, std::ios::binary);
    if (!fl) throw std::runtime_error("idx: cannot open " + labels.string());

    const std::uint32_t mi = read_be32(fi, images);
    if (mi != kIdxImagesMagic) {
        throw std::runtime_error("idx: bad image magic in " + images.string() + " (expected 0x00000803)");
    }
    const std::uint32_t ml = read_be32(fl, labels);
    if (ml != kIdxLabelsMagic) {
        throw std::runtime_error("idx: bad label magic in " + labels.string() + " (expected 0x00000801)");
    }
    const std::size_t n = read_be32(fi, images);
    const std::size_t rows = read_be32(fi, images);
    const std::size_t cols = read_be32(fi, images);
    const std::size_t nl = read_be32(fl, labels);
    if (n != nl) {
        throw std::runtime_error("idx: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
    }
    const auto pixels = read_body(fi, n * rows * cols, images);
    const auto raw_labels = read_body(fl, nl, labels);

    Dataset d{Tensor({n, 1, rows, cols}), std::vector<int>(n), 0, Split::train};
    auto f = d.features.values();
    for (std::size_t i = 0; i < pixels.size(); ++i) f[i] = static_cast<double>(pixels[i]) / 255.0;
    int max_label = -1;
    for (std::size_t i = 0; i < n; ++i) {
        d.labels[i] = raw_labels[i];
        max_label = std::max(max_label, d.labels[i]);
    }
    d.num_classes = max_label + 1;
    d.validate();
    return d;
}

void write_idx(const Dataset& data, const std::filesystem::path& images,
               const std::filesystem::path& labels) {
    if (data.features.rank() != 4 || data.features.dim(1) != 1) {
        throw std::invalid_argument("write_idx: features must be (n, 1, rows, cols)");
    }
    std::ofstream fi(images, std::ios::binary);
    std::ofstream fl(labels, std::ios::binary);
    if (!fi || !fl) throw std::runtime_error("write_idx: cannot open output files");
    write_be32(fi, kIdxImagesMagic);
    write_be32(fi, static_cast<std::uint32_t>(data.size()));
    write_be32(fi, static_cast<std::uint32_t>(data.features.dim(2)));
    write_be32(fi, static_cast<std::uint32_t>(data.features.dim(3)));
    for (double v : data.features.values()) {
        fi.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
    write_be32(fl, kIdxLabelsMagic);
    write_be32(fl, static_cast<std::uint32_t>(data.size()));
    for (int y : data.labels) fl.put(static_cast<char>(static_cast<unsigned char>(y)));
}

Dataset load_dataset(const DatasetSpec& spec) {
    Dataset d;
    if (spec.kind == "patterns") {
        d = make_patterns(spec.classes, spec.n, spec.channels, spec.height, spec.width, spec.noise, spec.seed);
    } else if (spec.kind == "blobs") {
        d = make_blobs(spec.classes, spec.n, spec.seed, spec.dims, spec.noise);
    } else if (spec.kind == "moons") {
        d = make_two_moons(spec.n, spec.noise, spec.seed);
    } else if (spec.kind == "idx") {
        d = load_idx(spec.images, spec.labels);
    } else {
        throw std::invalid_argument("dataset: unknown kind '" + spec.kind + "'");
    }
    d.validate();
    return d;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& data, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0) throw std::invalid_argument("split: fraction must be in (0, 1)");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    Dataset tr = data.subset(train);
    Dataset va = data.subset(val);
    tr.split = Split::train;
    va.split = Split::val;
    return {std::move(tr), std::move(va)};
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
    const std::size_t stride = shape_size(data.sample_shape());
    out << "label";
    for (std::size_t j = 0; j < stride; ++j) out << ",f" << j;
    out << '\n';
    out.precision(17);
    const auto f = data.features.values();
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << data.labels[i];
        for (std::size_t j = 0; j < stride; ++j) out << ',' << f[i * stride + j];
        out << '\n';
    }
}

} // namespace fbm::nn
