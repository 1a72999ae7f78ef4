// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fbm/alloc.hpp"
#include "fbm/bit_allocation.hpp"
#include "fbm/dataset.hpp"
#include "fbm/hessian.hpp"
#include "fbm/hwsim.hpp"
#include "fbm/model.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbm {

/// ratio: b_prev / b_next. step_size: (2^b_prev - 1) / (2^b_next - 1).
enum class LrRule { ratio, step_size };
/// sampled: simulator on the sampled allocation. expected: per-layer cost
/// averaged over the zero-noise probability rows.
enum class LatencyMode { sampled, expected };
enum class InitMode { hessian, uniform };
/// epoch: sensitivity profile recomputed at the start of every epoch after
/// the first. once: the initial profile is reused.
enum class MaskRefresh { epoch, once };

std::string to_string(LrRule v);
std::string to_string(LatencyMode v);
std::string to_string(InitMode v);
std::string to_string(MaskRefresh v);
LrRule parse_lr_rule(const std::string& s);
LatencyMode parse_latency_mode(const std::string& s);
InitMode parse_init_mode(const std::string& s);
MaskRefresh parse_mask_refresh(const std::string& s);

struct RunConfig {
    alloc::FBMHyperParams hyper;
    hw::HardwareModel hardware;
    quant::BitPalette palette;
    nn::Architecture architecture;
    nn::DatasetSpec dataset;
    bool dataset_seed_set = false;  ///< otherwise the dataset follows `seed`
    std::uint64_t seed = 0;

    int epochs = 40;
    std::size_t batch_size = 32;
    double momentum = 0.9;
    double weight_decay = 1e-4;

    hessian::MaskMode mask_mode = hessian::MaskMode::highest;
    MaskRefresh mask_refresh = MaskRefresh::epoch;
    alloc::GumbelForm gumbel_form = alloc::GumbelForm::standard;
    LrRule lr_rule = LrRule::ratio;
    double lr_bound = 8.0;
    int lr_decay_epochs = 1;
    LatencyMode latency_mode = LatencyMode::sampled;
    InitMode init = InitMode::hessian;
    double peak_logit = 2.0;
    double init_decay = 1.0;
    std::size_t fisher_samples = 512;
    int fisher_iters = 200;
    double size_weight = 0.0;
    std::optional<double> temperature_final;

    int pretrain_epochs = 10;
    double pretrain_lr = 0.05;
    int finetune_epochs = 0;
    double finetune_lr = 0.005;
    int lr_step_epochs = 6;
    double val_fraction = 0.1;
    int checkpoint_every = 0;

    /// Throws std::invalid_argument naming the offending key.
    void validate() const;
    std::uint64_t data_seed() const;
};

/// Aborted run: NaN loss or sustained divergence.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Weighted mean of loss terms; weights must be nonnegative and sum to 1
/// (within 1e-9).
double combined_loss(std::span<const double> losses, std::span<const double> weights);

/// Bitwidths that trigger LR scaling when a layer moves between the groups.
bool scaled_transition(int b_prev, int b_next);
/// Per-layer multiplier for a transition, clamped to [1/bound, bound]; 1
/// for non-transitions.
double lr_multiplier(int b_prev, int b_next, LrRule rule = LrRule::ratio, double bound = 8.0);
/// base_lr * lr_multiplier per layer.
std::vector<double> scaled_lr(const BitAllocation& prev, const BitAllocation& next, double base_lr,
                              LrRule rule = LrRule::ratio, double bound = 8.0);

/// Per-layer multipliers that decay linearly back to 1 over `decay_epochs`
/// epochs after each transition.
class LrScaler {
public:
    LrScaler(std::size_t layers, LrRule rule, double bound, int decay_epochs);
    /// Starts a fresh decay for every layer that transitions.
    void transition(const BitAllocation& prev, const BitAllocation& next);
    /// Multipliers for the coming epoch.
    std::vector<double> multipliers() const;
    /// Ages every active multiplier by one epoch.
    void advance();

private:
    LrRule rule_;
    double bound_;
    int decay_epochs_;
    std::vector<double> peak_;
    std::vector<int> age_;
};

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;  ///< percent
};

Evaluation evaluate(nn::Model& model, const nn::Dataset& data, std::size_t batch_size = 256);

/// One pass of shuffled mini-batch SGD. Returns the mean training loss.
double train_epoch(nn::Model& model, const nn::Dataset& data, std::span<const double> lr_per_layer,
                   std::size_t batch_size, double momentum, double weight_decay, std::mt19937_64& rng);

/// Rows used to calibrate activation scales after every requantization.
nn::Tensor calibration_batch(const nn::Dataset& data, std::size_t rows = 256);

/// Latency loss of an allocation: simulated latency relative to uniform 8-bit.
double relative_latency(const nn::Architecture& arch, const BitAllocation& a, const hw::HardwareModel& hw);
/// sum_l sum_i f_{l,i} t_l(b_i) / total(uniform 8), where t_l(b) is layer
/// l's stage latency when the whole model runs at b bits.
double expected_relative_latency(const nn::Architecture& arch, const alloc::AllocationMatrix& a,
                                 const hw::HardwareModel& hw);
/// Model size relative to uniform 8-bit.
double relative_size(const nn::Architecture& arch, const BitAllocation& a);

struct EpochRecord {
    int epoch = 0;
    BitAllocation allocation;  ///< allocation trained and evaluated this epoch
    double train_loss = 0.0;
    double ce_loss = 0.0;  ///< validation cross-entropy
    double lat_loss = 0.0;
    double size_bytes = 0.0;
    double combined = 0.0;
    double delta_a = 0.0;
    double temperature = 0.0;
    std::vector<double> lr_multipliers;
    std::vector<int> mask;
    double val_accuracy = 0.0;
    BitAllocation next_allocation;  ///< sampled at the end of the epoch
};

/// Columns of the epoch CSV, in order.
std::string epoch_csv_header();
std::string epoch_csv_row(const EpochRecord& r);
/// One JSON object per line.
std::string epoch_json(const EpochRecord& r);

struct PreparedData {
    nn::Dataset train;
    nn::Dataset val;
};
PreparedData prepare_data(const RunConfig& config);

/// Fisher settings of the initial sensitivity profile.
hessian::FisherOptions fisher_options(const RunConfig& config);

/// Float model trained for `pretrain_epochs` at `pretrain_lr`.
nn::Model pretrain(const RunConfig& config, const nn::Dataset& train);

struct RunResult {
    nn::Model model;  ///< quantized to `allocation`
    BitAllocation allocation;
    std::vector<EpochRecord> log;
    std::vector<std::string> events;  ///< "epoch:step" in execution order
    hessian::SensitivityProfile initial_profile;
    alloc::AllocationMatrix initial_matrix;
    alloc::AllocationMatrix matrix;
    std::vector<alloc::AllocationMatrix> matrix_history;  ///< after each epoch's update
    double float_accuracy = 0.0;
    double final_accuracy = 0.0;
    double final_relative_latency = 0.0;
};

struct RunOptions {
    std::optional<std::filesystem::path> checkpoint_dir;
    int threads = 1;
    std::ostream* progress = nullptr;
};

/// Pretrain, quantize to uniform 8-bit, profile, initialize the matrix,
/// then per epoch: mask, SGD, evaluate, a-update, sample, requantize,
/// LR scale.
RunResult run_fbm(const RunConfig& config, const RunOptions& options = {});

/// Search loop on an already prepared model and data; `model` must be
/// quantized to uniform 8 bits.
RunResult search(const RunConfig& config, nn::Model model, const PreparedData& data,
                 const RunOptions& options = {});

struct DriftTrace {
    std::vector<BitAllocation> samples;     ///< A_0 .. A_K
    std::vector<double> sampled_latency;    ///< relative latency of each sample
    std::vector<double> expected_latency;   ///< expected relative latency of the matrix each sample came from
};

/// Allocation search with frozen weights: `iterations` rounds of evaluate,
/// a-update, sample and requantize on a copy of `model`. The mask comes
/// from `profile` and stays fixed; `config.init` selects the initial matrix.
DriftTrace allocation_drift(const RunConfig& config, const nn::Model& model, const PreparedData& data,
                            const hessian::SensitivityProfile& profile, int iterations);

struct FinetuneRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

/// QAT at a fixed allocation with lr * 0.1^floor((epoch-1) / step_epochs).
std::vector<FinetuneRecord> finetune(nn::Model& model, const BitAllocation& allocation, const PreparedData& data,
                                     int epochs, double lr, int step_epochs, const RunConfig& config);

struct RecoveryTrial {
    double reference_accuracy = 0.0;  ///< uniform 8-bit accuracy before the drop
    std::vector<double> accuracy;     ///< after each recovery epoch
    int epochs_to_recover = -1;       ///< first epoch within `tolerance`, or -1
};

/// Moves a uniform 8-bit model to `target` and retrains for `max_epochs`,
/// with or without the transition LR multipliers.
RecoveryTrial recovery_trial(const nn::Model& model8, const PreparedData& data, const BitAllocation& target,
                             bool scaled, int max_epochs, double tolerance, const RunConfig& config,
                             std::uint64_t seed);

} // namespace fbm
