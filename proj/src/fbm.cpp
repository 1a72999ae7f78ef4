// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/fbm.hpp"

#include "fbm/checkpoint.hpp"
#include "fbm/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace fbm {

namespace {

// Seed streams derived from RunConfig::seed.
enum Stream : std::uint64_t {
    kSampleStream = 1,
    kSgdStream = 2,
    kInitStream = 3,
    kFinetuneStream = 4,
    kFisherStream = 5,
    kSplitStream = 7,
};

template <class E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* key) {
    std::string options;
    for (const auto& [name, value] : table) {
        if (s == name) return value;
        options += options.empty() ? "" : ", ";
        options += name;
    }
    throw std::invalid_argument(std::string(key) + " must be one of {" + options + "}, got `" + s + "`");
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ' ';
        if constexpr (std::is_floating_point_v<T>) {
            out += fmt(v[i]);
        } else {
            out += std::to_string(v[i]);
        }
    }
    return out;
}

} // namespace

std::string to_string(LrRule v) { return v == LrRule::ratio ? "ratio" : "step_size"; }
std::string to_string(LatencyMode v) { return v == LatencyMode::sampled ? "sampled" : "expected"; }
std::string to_string(InitMode v) { return v == InitMode::hessian ? "hessian" : "uniform"; }
std::string to_string(MaskRefresh v) { return v == MaskRefresh::epoch ? "epoch" : "once"; }

LrRule parse_lr_rule(const std::string& s) {
    return parse_enum<LrRule>(s, {{"ratio", LrRule::ratio}, {"step_size", LrRule::step_size}}, "lr_rule");
}
LatencyMode parse_latency_mode(const std::string& s) {
    return parse_enum<LatencyMode>(s, {{"sampled", LatencyMode::sampled}, {"expected", LatencyMode::expected}},
                                   "latency_mode");
}
InitMode parse_init_mode(const std::string& s) {
    return parse_enum<InitMode>(s, {{"hessian", InitMode::hessian}, {"uniform", InitMode::uniform}}, "init");
}
MaskRefresh parse_mask_refresh(const std::string& s) {
    return parse_enum<MaskRefresh>(s, {{"epoch", MaskRefresh::epoch}, {"once", MaskRefresh::once}},
                                   "mask_refresh");
}

void RunConfig::validate() const {
    hyper.validate();
    hardware.validate();
    if (architecture.layers.empty()) throw std::invalid_argument("model: architecture has no layers");
    if (architecture.num_quantizable() == 0) throw std::invalid_argument("model: no quantizable layers");
    if (!palette.contains(kPinnedBits)) throw std::invalid_argument("palette must contain 8 for the pinned layers");
    for (int b : palette.bits()) {
        if (b > hardware.alu_bits.back()) {
            throw std::invalid_argument("palette: " + std::to_string(b) + " bits exceeds the widest hardware ALU");
        }
    }
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
    if (!(lr_bound >= 1.0)) throw std::invalid_argument("lr_bound must be >= 1");
    if (lr_decay_epochs < 1) throw std::invalid_argument("lr_decay_epochs must be >= 1");
    if (!std::isfinite(peak_logit)) throw std::invalid_argument("peak_logit must be finite");
    if (!(init_decay >= 0.0) || !std::isfinite(init_decay)) throw std::invalid_argument("init_decay must be >= 0");
    if (fisher_samples == 0) throw std::invalid_argument("fisher_samples must be > 0");
    if (fisher_iters < 1) throw std::invalid_argument("fisher_iters must be >= 1");
    if (!(size_weight >= 0.0)) throw std::invalid_argument("size_weight must be >= 0");
    if (temperature_final && !(*temperature_final > 0.0)) {
        throw std::invalid_argument("temperature_final must be > 0");
    }
    if (pretrain_epochs < 0) throw std::invalid_argument("pretrain_epochs must be >= 0");
    if (!(pretrain_lr > 0.0)) throw std::invalid_argument("pretrain_lr must be > 0");
    if (finetune_epochs < 0) throw std::invalid_argument("finetune_epochs must be >= 0");
    if (!(finetune_lr > 0.0)) throw std::invalid_argument("finetune_lr must be > 0");
    if (lr_step_epochs < 1) throw std::invalid_argument("lr_step_epochs must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must lie in (0, 1)");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
}

std::uint64_t RunConfig::data_seed() const {
    return dataset_seed_set ? dataset.seed : seed;
}

// ---------------------------------------------------------------------------
// Losses and LR scaling

double combined_loss(std::span<const double> losses, std::span<const double> weights) {
    if (losses.size() != weights.size() || losses.empty()) {
        throw std::invalid_argument("combined_loss: need one weight per loss term");
    }
    double wsum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("combined_loss: weights must be nonnegative");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("combined_loss: weights must sum to 1");
    double total = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) total += weights[i] * losses[i];
    return total;
}

bool scaled_transition(int b_prev, int b_next) {
    auto high = [](int b) { return b == 8 || b == 16; };
    auto low = [](int b) { return b == 2 || b == 3; };
    return (high(b_prev) && low(b_next)) || (low(b_prev) && high(b_next));
}

double lr_multiplier(int b_prev, int b_next, LrRule rule, double bound) {
    if (!scaled_transition(b_prev, b_next)) return 1.0;
    double m = 1.0;
    if (rule == LrRule::ratio) {
        m = static_cast<double>(b_prev) / static_cast<double>(b_next);
    } else {
        m = (std::ldexp(1.0, b_prev) - 1.0) / (std::ldexp(1.0, b_next) - 1.0);
    }
    return std::clamp(m, 1.0 / bound, bound);
}

std::vector<double> scaled_lr(const BitAllocation& prev, const BitAllocation& next, double base_lr, LrRule rule,
                              double bound) {
    if (prev.size() != next.size()) throw std::invalid_argument("scaled_lr: allocation lengths differ");
    std::vector<double> lr(prev.size());
    for (std::size_t l = 0; l < lr.size(); ++l) lr[l] = base_lr * lr_multiplier(prev[l], next[l], rule, bound);
    return lr;
}

LrScaler::LrScaler(std::size_t layers, LrRule rule, double bound, int decay_epochs)
    : rule_(rule), bound_(bound), decay_epochs_(decay_epochs), peak_(layers, 1.0), age_(layers, 0) {
    if (decay_epochs < 1) throw std::invalid_argument("LrScaler: decay_epochs must be >= 1");
}

void LrScaler::transition(const BitAllocation& prev, const BitAllocation& next) {
    if (prev.size() != peak_.size() || next.size() != peak_.size()) {
        throw std::invalid_argument("LrScaler: allocation length mismatch");
    }
    for (std::size_t l = 0; l < peak_.size(); ++l) {
        if (scaled_transition(prev[l], next[l])) {
            peak_[l] = lr_multiplier(prev[l], next[l], rule_, bound_);
            age_[l] = 0;
        }
    }
}

std::vector<double> LrScaler::multipliers() const {
    std::vector<double> m(peak_.size(), 1.0);
    for (std::size_t l = 0; l < m.size(); ++l) {
        if (age_[l] < decay_epochs_) {
            const double remaining = 1.0 - static_cast<double>(age_[l]) / static_cast<double>(decay_epochs_);
            m[l] = 1.0 + (peak_[l] - 1.0) * remaining;
        }
    }
    return m;
}

void LrScaler::advance() {
    for (std::size_t l = 0; l < age_.size(); ++l) {
        if (age_[l] < decay_epochs_) ++age_[l];
        if (age_[l] >= decay_epochs_) peak_[l] = 1.0;
    }
}

// ---------------------------------------------------------------------------
// Training primitives

Evaluation evaluate(nn::Model& model, const nn::Dataset& data, std::size_t batch_size) {
    Evaluation ev;
    if (data.size() == 0) return ev;
    double loss = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t end = std::min(data.size(), start + batch_size);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const auto logits = model.forward(data.batch_features(idx));
        const auto labels = data.batch_labels(idx);
        for (double l : nn::cross_entropy_per_sample(logits, labels)) loss += l;
        const auto pred = nn::argmax_rows(logits);
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
    }
    const auto n = static_cast<double>(data.size());
    ev.loss = loss / n;
    ev.accuracy = 100.0 * static_cast<double>(correct) / n;
    return ev;
}

double train_epoch(nn::Model& model, const nn::Dataset& data, std::span<const double> lr_per_layer,
                   std::size_t batch_size, double momentum, double weight_decay, std::mt19937_64& rng) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        std::span<const std::size_t> idx(order.data() + start, end - start);
        model.zero_grad();
        const auto logits = model.forward(data.batch_features(idx));
        const auto loss = nn::cross_entropy_with_grad(logits, data.batch_labels(idx));
        model.backward(loss.grad);
        nn::sgd_step(model, lr_per_layer, momentum, weight_decay);
        total += loss.loss * static_cast<double>(idx.size());
    }
    return data.size() ? total / static_cast<double>(data.size()) : 0.0;
}

nn::Tensor calibration_batch(const nn::Dataset& data, std::size_t rows) {
    std::vector<std::size_t> idx(std::min(rows, data.size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return data.batch_features(idx);
}

double relative_latency(const nn::Architecture& arch, const BitAllocation& a, const hw::HardwareModel& hw) {
    return hw::model_latency(arch.layers, a, hw).relative;
}

double expected_relative_latency(const nn::Architecture& arch, const alloc::AllocationMatrix& a,
                                 const hw::HardwareModel& hw) {
    const std::size_t n = a.rows();
    const auto owner = hw::bit_owner(arch.layers);
    // stage[i][l]: seconds of layer l's stage with the whole model at palette[i].
    std::vector<std::vector<double>> stage(a.cols(), std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < a.cols(); ++i) {
        const auto rep = hw::model_latency(arch.layers, BitAllocation::uniform(n, a.palette()[i]), hw);
        for (std::size_t k = 0; k < rep.layers.size(); ++k) stage[i][owner[k]] += rep.layers[k].seconds;
    }
    const double baseline = hw::total_latency(arch.layers, BitAllocation::uniform(n, 8), hw);
    double expected = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
        if (is_pinned(l, n)) {
            expected += stage[a.palette().index_of(kPinnedBits)][l];
            continue;
        }
        const auto f = a.probabilities(l);
        for (std::size_t i = 0; i < f.size(); ++i) expected += f[i] * stage[i][l];
    }
    return baseline > 0.0 ? expected / baseline : 1.0;
}

double relative_size(const nn::Architecture& arch, const BitAllocation& a) {
    const double base = hw::model_size_bytes(arch.layers, BitAllocation::uniform(a.size(), 8));
    return base > 0.0 ? hw::model_size_bytes(arch.layers, a) / base : 1.0;
}

// ---------------------------------------------------------------------------
// Epoch log

std::string epoch_csv_header() {
    return "epoch,allocation,train_loss,ce_loss,lat_loss,size_bytes,combined,delta_a,temperature,"
           "lr_multipliers,mask,val_accuracy,next_allocation";
}

std::string epoch_csv_row(const EpochRecord& r) {
    std::string s = std::to_string(r.epoch);
    s += ',' + r.allocation.to_string();
    for (double v : {r.train_loss, r.ce_loss, r.lat_loss, r.size_bytes, r.combined, r.delta_a, r.temperature}) {
        s += ',' + fmt(v);
    }
    s += ',' + join(r.lr_multipliers);
    s += ',' + join(r.mask);
    s += ',' + fmt(r.val_accuracy);
    s += ',' + r.next_allocation.to_string();
    return s;
}

std::string epoch_json(const EpochRecord& r) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["allocation"] = r.allocation.bits;
    j["train_loss"] = r.train_loss;
    j["ce_loss"] = r.ce_loss;
    j["lat_loss"] = r.lat_loss;
    j["size_bytes"] = r.size_bytes;
    j["combined"] = r.combined;
    j["delta_a"] = r.delta_a;
    j["temperature"] = r.temperature;
    j["lr_multipliers"] = r.lr_multipliers;
    j["mask"] = r.mask;
    j["val_accuracy"] = r.val_accuracy;
    j["next_allocation"] = r.next_allocation.bits;
    return j.dump();
}

// ---------------------------------------------------------------------------
// Runs

PreparedData prepare_data(const RunConfig& config) {
    auto spec = config.dataset;
    spec.seed = config.data_seed();
    const auto all = nn::load_dataset(spec);
    auto [train, val] = nn::split_validation(all, config.val_fraction, derive_seed(spec.seed, kSplitStream));
    return {std::move(train), std::move(val)};
}

nn::Model pretrain(const RunConfig& config, const nn::Dataset& train) {
    nn::Model model(config.architecture, derive_seed(config.seed, kInitStream));
    std::mt19937_64 rng(derive_seed(config.seed, kInitStream + 100));
    const std::vector<double> lr(model.num_quantizable(), config.pretrain_lr);
    for (int e = 0; e < config.pretrain_epochs; ++e) {
        const double loss =
            train_epoch(model, train, lr, config.batch_size, config.momentum, config.weight_decay, rng);
        if (!std::isfinite(loss)) throw DivergenceError("pretraining produced a non-finite loss");
    }
    return model;
}

namespace {

double anneal(const RunConfig& c, int epoch) {
    if (!c.temperature_final || c.epochs <= 1) return c.hyper.temperature;
    const double t = static_cast<double>(epoch - 1) / static_cast<double>(c.epochs - 1);
    return c.hyper.temperature + (*c.temperature_final - c.hyper.temperature) * t;
}

hessian::FisherOptions fisher_stream(const RunConfig& c, std::uint64_t stream) {
    hessian::FisherOptions o;
    o.samples = c.fisher_samples;
    o.iters = c.fisher_iters;
    o.seed = derive_seed(c.seed, stream);
    return o;
}

} // namespace

hessian::FisherOptions fisher_options(const RunConfig& config) {
    return fisher_stream(config, kFisherStream);
}

RunResult search(const RunConfig& config, nn::Model model, const PreparedData& data, const RunOptions& options) {
    config.validate();
    const std::size_t n = model.num_quantizable();
    if (n != config.architecture.num_quantizable()) {
        throw std::invalid_argument("search: model does not match the configured architecture");
    }
    const auto& hyper = config.hyper;
    const auto calib = calibration_batch(data.train);
    std::mt19937_64 sample_rng(derive_seed(config.seed, kSampleStream));
    std::mt19937_64 sgd_rng(derive_seed(config.seed, kSgdStream));

    RunResult result;
    const double initial_loss = evaluate(model, data.val).loss;
    if (!std::isfinite(initial_loss)) throw DivergenceError("initial validation loss is not finite");
    // Floor at the chance-level loss ln K so a near-zero start does not trip the guard.
    const double reference_loss = std::max(initial_loss, std::log(static_cast<double>(model.num_classes())));

    auto profile = hessian::sensitivity_profile(model, data.train, fisher_stream(config, kFisherStream),
                                                options.threads);
    result.initial_profile = profile;
    auto a = config.init == InitMode::hessian
                 ? hessian::init_allocation(profile, config.palette, config.peak_logit, config.init_decay,
                                            hyper.temperature, config.gumbel_form)
                 : alloc::AllocationMatrix(n, config.palette, hyper.temperature, config.gumbel_form);
    result.initial_matrix = a;
    result.events.push_back("0:init");

    LrScaler scaler(n, config.lr_rule, config.lr_bound, config.lr_decay_epochs);
    auto current = alloc::sample_allocation(a, sample_rng);
    model.requantize(current.bits, calib);
    scaler.transition(BitAllocation::uniform(n, 8), current);
    result.events.push_back("0:sample");

    const double wsum = hyper.alpha + hyper.beta + config.size_weight;
    const std::vector<double> weights = {hyper.alpha / wsum, hyper.beta / wsum, config.size_weight / wsum};

    int diverged_epochs = 0;
    for (int e = 1; e <= config.epochs; ++e) {
        const std::string tag = std::to_string(e) + ":";
        EpochRecord rec;
        rec.epoch = e;
        rec.allocation = current;
        rec.temperature = anneal(config, e);
        a.set_temperature(rec.temperature);

        // (1) mask
        if (e > 1 && config.mask_refresh == MaskRefresh::epoch && hyper.h > 0.0) {
            profile = hessian::sensitivity_profile(model, data.train,
                                                   fisher_stream(config, kFisherStream + 100 + e), options.threads);
        }
        rec.mask = hessian::layer_mask(profile, hyper.h, config.mask_mode);
        for (std::size_t l = 0; l < n; ++l) {
            if (is_pinned(l, n)) rec.mask[l] = 0;
        }
        result.events.push_back(tag + "mask");

        // (2) SGD under the current quantizers
        rec.lr_multipliers = scaler.multipliers();
        std::vector<double> lr(n);
        for (std::size_t l = 0; l < n; ++l) lr[l] = hyper.lr * rec.lr_multipliers[l];
        rec.train_loss = train_epoch(model, data.train, lr, config.batch_size, config.momentum,
                                     config.weight_decay, sgd_rng);
        result.events.push_back(tag + "sgd");

        // (3) losses
        const auto ev = evaluate(model, data.val);
        rec.ce_loss = ev.loss;
        rec.val_accuracy = ev.accuracy;
        rec.lat_loss = config.latency_mode == LatencyMode::sampled
                           ? relative_latency(config.architecture, current, config.hardware)
                           : expected_relative_latency(config.architecture, a, config.hardware);
        rec.size_bytes = hw::model_size_bytes(config.architecture.layers, current);
        const double size_loss = relative_size(config.architecture, current);
        rec.combined = combined_loss(std::vector<double>{rec.ce_loss, rec.lat_loss, size_loss}, weights);
        if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.ce_loss)) {
            throw DivergenceError("epoch " + std::to_string(e) + ": loss is NaN or infinite");
        }
        diverged_epochs = rec.ce_loss > 10.0 * reference_loss ? diverged_epochs + 1 : 0;
        if (diverged_epochs >= 3) {
            throw DivergenceError("epoch " + std::to_string(e) +
                                  ": validation loss above 10x its initial value for 3 consecutive epochs");
        }
        result.events.push_back(tag + "evaluate");

        // (4) allocation update
        rec.delta_a = 1.0 / (hyper.alpha * rec.ce_loss + hyper.beta * rec.lat_loss + config.size_weight * size_loss +
                             hyper.epsilon);
        alloc::update(a, current, rec.delta_a, hyper.gamma, rec.mask);
        result.matrix_history.push_back(a);
        result.events.push_back(tag + "a_update");

        // (5) sample
        rec.next_allocation = alloc::sample_allocation(a, sample_rng);
        result.events.push_back(tag + "sample");

        // (6) requantize
        model.requantize(rec.next_allocation.bits, calib);
        result.events.push_back(tag + "requantize");

        // (7) LR scaling for the transition
        scaler.advance();
        scaler.transition(current, rec.next_allocation);
        result.events.push_back(tag + "lr_scale");

        current = rec.next_allocation;
        if (options.progress) {
            *options.progress << "epoch " << e << " alloc [" << rec.allocation.to_string() << "] val_acc "
                              << fmt(rec.val_accuracy) << " lat " << fmt(rec.lat_loss) << '\n';
        }
        result.log.push_back(std::move(rec));
        if (options.checkpoint_dir && config.checkpoint_every > 0 && e % config.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "checkpoint_e%03d.bin", e);
            nn::save_checkpoint(model, *options.checkpoint_dir / name);
        }
    }

    result.allocation = current;
    result.final_accuracy = evaluate(model, data.val).accuracy;
    result.final_relative_latency = relative_latency(config.architecture, current, config.hardware);
    result.matrix = std::move(a);
    result.model = std::move(model);
    return result;
}

RunResult run_fbm(const RunConfig& config, const RunOptions& options) {
    config.validate();
    const auto data = prepare_data(config);
    auto model = pretrain(config, data.train);
    const double float_accuracy = evaluate(model, data.val).accuracy;
    const std::size_t n = model.num_quantizable();
    model.requantize(BitAllocation::uniform(n, 8).bits, calibration_batch(data.train));
    auto result = search(config, std::move(model), data, options);
    result.float_accuracy = float_accuracy;
    return result;
}

DriftTrace allocation_drift(const RunConfig& config, const nn::Model& model, const PreparedData& data,
                            const hessian::SensitivityProfile& profile, int iterations) {
    config.validate();
    if (iterations < 0) throw std::invalid_argument("allocation_drift: iterations must be >= 0");
    nn::Model m(model);
    const std::size_t n = m.num_quantizable();
    if (profile.size() != n) throw std::invalid_argument("allocation_drift: profile does not match the model");
    const auto& hyper = config.hyper;
    const auto calib = calibration_batch(data.train);
    std::mt19937_64 sample_rng(derive_seed(config.seed, kSampleStream));
    auto a = config.init == InitMode::hessian
                 ? hessian::init_allocation(profile, config.palette, config.peak_logit, config.init_decay,
                                            hyper.temperature, config.gumbel_form)
                 : alloc::AllocationMatrix(n, config.palette, hyper.temperature, config.gumbel_form);
    auto mask = hessian::layer_mask(profile, hyper.h, config.mask_mode);
    for (std::size_t l = 0; l < n; ++l) {
        if (is_pinned(l, n)) mask[l] = 0;
    }

    DriftTrace trace;
    auto record = [&](BitAllocation s) {
        trace.expected_latency.push_back(expected_relative_latency(config.architecture, a, config.hardware));
        trace.sampled_latency.push_back(relative_latency(config.architecture, s, config.hardware));
        trace.samples.push_back(std::move(s));
    };
    record(alloc::sample_allocation(a, sample_rng));
    for (int k = 1; k <= iterations; ++k) {
        const auto& current = trace.samples.back();
        m.requantize(current.bits, calib);
        const double ce = evaluate(m, data.val).loss;
        if (!std::isfinite(ce)) throw DivergenceError("allocation_drift: loss is NaN or infinite");
        const double size_loss = relative_size(config.architecture, current);
        const double delta = 1.0 / (hyper.alpha * ce + hyper.beta * trace.sampled_latency.back() +
                                    config.size_weight * size_loss + hyper.epsilon);
        alloc::update(a, current, delta, hyper.gamma, mask);
        record(alloc::sample_allocation(a, sample_rng));
    }
    return trace;
}

std::vector<FinetuneRecord> finetune(nn::Model& model, const BitAllocation& allocation, const PreparedData& data,
                                     int epochs, double lr, int step_epochs, const RunConfig& config) {
    if (epochs < 0) throw std::invalid_argument("finetune: epochs must be >= 0");
    if (step_epochs < 1) throw std::invalid_argument("finetune: step_epochs must be >= 1");
    std::vector<FinetuneRecord> log;
    if (epochs == 0) return log;
    if (allocation.size() != model.num_quantizable()) {
        throw std::invalid_argument("finetune: allocation does not match the model");
    }
    if (model.bits() != allocation.bits) model.requantize(allocation.bits, calibration_batch(data.train));
    std::mt19937_64 rng(derive_seed(config.seed, kFinetuneStream));
    for (int e = 1; e <= epochs; ++e) {
        FinetuneRecord rec;
        rec.epoch = e;
        rec.lr = lr * std::pow(0.1, (e - 1) / step_epochs);
        const std::vector<double> lrs(model.num_quantizable(), rec.lr);
        rec.train_loss = train_epoch(model, data.train, lrs, config.batch_size, config.momentum,
                                     config.weight_decay, rng);
        if (!std::isfinite(rec.train_loss)) throw DivergenceError("finetune: loss is NaN or infinite");
        rec.val_accuracy = evaluate(model, data.val).accuracy;
        log.push_back(rec);
    }
    return log;
}

RecoveryTrial recovery_trial(const nn::Model& model8, const PreparedData& data, const BitAllocation& target,
                             bool scaled, int max_epochs, double tolerance, const RunConfig& config,
                             std::uint64_t seed) {
    nn::Model model(model8);
    const std::size_t n = model.num_quantizable();
    if (target.size() != n) throw std::invalid_argument("recovery_trial: allocation does not match the model");
    RecoveryTrial trial;
    trial.reference_accuracy = evaluate(model, data.val).accuracy;
    const auto before = BitAllocation::uniform(n, 8);
    const auto& after = target;
    model.requantize(after.bits, calibration_batch(data.train));
    LrScaler scaler(n, config.lr_rule, config.lr_bound, config.lr_decay_epochs);
    if (scaled) scaler.transition(before, after);
    std::mt19937_64 rng(seed);
    for (int e = 1; e <= max_epochs; ++e) {
        const auto m = scaler.multipliers();
        std::vector<double> lr(n);
        for (std::size_t l = 0; l < n; ++l) lr[l] = config.hyper.lr * m[l];
        train_epoch(model, data.train, lr, config.batch_size, config.momentum, config.weight_decay, rng);
        scaler.advance();
        const double acc = evaluate(model, data.val).accuracy;
        trial.accuracy.push_back(acc);
        if (trial.epochs_to_recover < 0 && acc >= trial.reference_accuracy - tolerance) trial.epochs_to_recover = e;
    }
    return trial;
}

} // namespace fbm
