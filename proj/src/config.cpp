// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/config.hpp"

#include <toml.hpp>

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace fbm::config {

namespace {

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

toml::table parse_toml(const std::string& text, const std::string& source) {
    try {
        return toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": "
            << e.description();
        throw ConfigError(msg.str());
    }
}

// Typed access to one table. Every key read is recorded; finish() rejects
// the rest.
class Reader {
public:
    Reader(const toml::table& table, std::string prefix) : table_(table), prefix_(std::move(prefix)) {}

    std::string name(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

    const toml::node* node(const std::string& key) {
        seen_.insert(key);
        return table_.get(key);
    }

    bool has(const std::string& key) const { return table_.contains(key); }

    std::optional<double> number(const std::string& key) {
        const auto* n = node(key);
        if (!n) return std::nullopt;
        if (auto v = n->value_exact<double>()) return *v;
        if (auto v = n->value_exact<std::int64_t>()) return static_cast<double>(*v);
        throw ConfigError("`" + name(key) + "` must be a number");
    }

    std::optional<std::int64_t> integer(const std::string& key, std::int64_t lo = std::numeric_limits<std::int64_t>::min()) {
        const auto* n = node(key);
        if (!n) return std::nullopt;
        auto v = n->value_exact<std::int64_t>();
        if (!v) throw ConfigError("`" + name(key) + "` must be an integer");
        if (*v < lo) throw ConfigError("`" + name(key) + "` must be >= " + std::to_string(lo));
        return *v;
    }

    std::optional<bool> boolean(const std::string& key) {
        const auto* n = node(key);
        if (!n) return std::nullopt;
        auto v = n->value_exact<bool>();
        if (!v) throw ConfigError("`" + name(key) + "` must be true or false");
        return *v;
    }

    std::optional<std::string> string(const std::string& key) {
        const auto* n = node(key);
        if (!n) return std::nullopt;
        auto v = n->value_exact<std::string>();
        if (!v) throw ConfigError("`" + name(key) + "` must be a string");
        return *v;
    }

    std::optional<std::vector<std::int64_t>> integers(const std::string& key, std::int64_t lo) {
        const auto* n = node(key);
        if (!n) return std::nullopt;
        const auto* arr = n->as_array();
        if (!arr) throw ConfigError("`" + name(key) + "` must be an array of integers");
        std::vector<std::int64_t> out;
        for (const auto& el : *arr) {
            auto v = el.value_exact<std::int64_t>();
            if (!v || *v < lo) {
                throw ConfigError("`" + name(key) + "` must hold integers >= " + std::to_string(lo));
            }
            out.push_back(*v);
        }
        return out;
    }

    std::optional<std::vector<double>> numbers(const std::string& key) {
        const auto* n = node(key);
        if (!n) return std::nullopt;
        const auto* arr = n->as_array();
        if (!arr) throw ConfigError("`" + name(key) + "` must be an array of numbers");
        std::vector<double> out;
        for (const auto& el : *arr) {
            if (auto d = el.value_exact<double>()) {
                out.push_back(*d);
            } else if (auto i = el.value_exact<std::int64_t>()) {
                out.push_back(static_cast<double>(*i));
            } else {
                throw ConfigError("`" + name(key) + "` must hold numbers");
            }
        }
        return out;
    }

    const toml::table* table(const std::string& key) {
        const auto* n = node(key);
        if (!n) return nullptr;
        const auto* t = n->as_table();
        if (!t) throw ConfigError("`" + name(key) + "` must be a table");
        return t;
    }

    void finish() const {
        for (const auto& [key, value] : table_) {
            const std::string k(key.str());
            if (!seen_.count(k)) throw ConfigError("unknown key `" + name(k) + "`");
        }
    }

private:
    const toml::table& table_;
    std::string prefix_;
    std::set<std::string> seen_;
};

template <typename Parse>
auto enum_value(Reader& r, const std::string& key, Parse parse) -> std::optional<decltype(parse(std::string{}))> {
    auto s = r.string(key);
    if (!s) return std::nullopt;
    try {
        return parse(*s);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("`" + r.name(key) + "`: " + e.what());
    }
}

nn::Shape to_shape(const std::vector<std::int64_t>& v) {
    return nn::Shape(v.begin(), v.end());
}

nn::LayerSpec parse_layer(const toml::table& t, std::size_t index, const nn::Shape& prev) {
    Reader r(t, "layer[" + std::to_string(index + 1) + "]");
    const auto kind_name = r.string("kind");
    if (!kind_name) throw ConfigError("missing required key `" + r.name("kind") + "`");
    nn::LayerKind kind;
    try {
        kind = nn::parse_layer_kind(*kind_name);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("`" + r.name("kind") + "`: " + e.what());
    }
    const auto input_override = r.integers("input", 1);
    const nn::Shape input = input_override ? to_shape(*input_override) : prev;
    if (input.empty()) throw ConfigError("`" + r.name("input") + "` is required for the first layer");

    auto required = [&](const std::string& key) {
        auto v = r.integer(key, 1);
        if (!v) throw ConfigError("missing required key `" + r.name(key) + "`");
        return static_cast<std::size_t>(*v);
    };
    nn::LayerSpec spec;
    try {
        switch (kind) {
            case nn::LayerKind::dense: {
                if (input.size() != 1) {
                    throw ConfigError(r.name("kind") + ": dense needs a flat input, got " + nn::shape_to_string(input));
                }
                const auto out = required("out_features");
                spec = nn::dense_spec(input[0], out, r.boolean("bias").value_or(true));
                break;
            }
            case nn::LayerKind::conv2d: {
                const auto out = required("out_channels");
                const auto kernel = required("kernel");
                const auto stride = static_cast<std::size_t>(r.integer("stride", 1).value_or(1));
                const auto padding = static_cast<std::size_t>(r.integer("padding", 0).value_or(0));
                spec = nn::conv2d_spec(input, out, kernel, stride, padding, r.boolean("bias").value_or(true));
                break;
            }
            case nn::LayerKind::avgpool:
                spec = nn::avgpool_spec(input, required("kernel"));
                break;
            case nn::LayerKind::relu:
                spec = nn::relu_spec(input);
                break;
            case nn::LayerKind::flatten:
                spec = nn::flatten_spec(input);
                break;
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(r.name("kind") + ": " + e.what());
    }
    spec.name = r.string("name").value_or("");
    r.finish();
    return spec;
}

void apply_override(toml::table& root, const Override& o) {
    toml::table* t = &root;
    for (std::size_t i = 0; i + 1 < o.path.size(); ++i) {
        auto* n = t->get(o.path[i]);
        if (!n) {
            t->insert(o.path[i], toml::table{});
            n = t->get(o.path[i]);
        }
        t = n->as_table();
        if (!t) throw ConfigError("override `" + o.path[i] + "` is not a table");
    }
    const std::string& key = o.path.back();
    try {
        auto parsed = toml::parse("v = " + o.value);
        parsed.get("v")->visit([&](const auto& v) { t->insert_or_assign(key, v); });
    } catch (const toml::parse_error&) {
        t->insert_or_assign(key, o.value);
    }
}

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("FBM_SEED");
    if (!s || !*s) return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (errno != 0 || *end != '\0' || s[0] == '-') throw ConfigError("FBM_SEED must be a nonnegative integer");
    return v;
}

void read_hardware(Reader& r, hw::HardwareModel& h) {
    if (auto v = r.integer("cores", 1)) h.cores = static_cast<int>(*v);
    if (auto v = r.number("peak_bitops_per_core")) h.peak_bitops_per_core = *v;
    if (auto v = r.number("onchip_bytes")) h.onchip_bytes = *v;
    if (auto v = r.number("dram_bandwidth")) h.dram_bandwidth = *v;
    if (auto v = r.integer("bus_width_bits", 1)) h.bus_width_bits = static_cast<int>(*v);
    if (auto v = r.number("bus_clock_hz")) h.bus_clock_hz = *v;
    if (auto v = r.number("control_overhead_s")) h.control_overhead_s = *v;
    if (auto v = r.integers("alu_bits", 1)) h.alu_bits.assign(v->begin(), v->end());
    r.finish();
}

void read_dataset(Reader& r, RunConfig& c, const std::filesystem::path& base_dir) {
    auto& d = c.dataset;
    if (auto v = r.string("kind")) d.kind = *v;
    if (auto v = r.integer("n", 1)) d.n = static_cast<std::size_t>(*v);
    if (auto v = r.integer("classes", 2)) d.classes = static_cast<int>(*v);
    if (auto v = r.number("noise")) d.noise = *v;
    if (auto v = r.integer("seed", 0)) {
        d.seed = static_cast<std::uint64_t>(*v);
        c.dataset_seed_set = true;
    }
    if (auto v = r.integer("channels", 1)) d.channels = static_cast<std::size_t>(*v);
    if (auto v = r.integer("height", 1)) d.height = static_cast<std::size_t>(*v);
    if (auto v = r.integer("width", 1)) d.width = static_cast<std::size_t>(*v);
    if (auto v = r.integer("dims", 1)) d.dims = static_cast<std::size_t>(*v);
    if (auto v = r.string("images")) d.images = base_dir / *v;
    if (auto v = r.string("labels")) d.labels = base_dir / *v;
    r.finish();
    if (d.kind != "patterns" && d.kind != "blobs" && d.kind != "moons" && d.kind != "idx") {
        throw ConfigError("`dataset.kind` must be one of patterns, blobs, moons, idx; got `" + d.kind + "`");
    }
    if (!(d.noise >= 0.0)) throw ConfigError("`dataset.noise` must be >= 0");
    if (d.kind == "idx" && (d.images.empty() || d.labels.empty())) {
        throw ConfigError("`dataset.images` and `dataset.labels` are required for idx data");
    }
}

} // namespace

nn::Architecture parse_architecture(const std::string& text, const std::string& source) {
    const auto root = parse_toml(text, source);
    Reader r(root, "");
    nn::Architecture arch;
    arch.name = r.string("name").value_or("model");
    const auto input = r.integers("input", 1);
    if (!input) throw ConfigError(source + ": missing required key `input`");
    const auto* layers = r.node("layer");
    r.finish();
    if (!layers || !layers->as_array() || layers->as_array()->empty()) {
        throw ConfigError(source + ": at least one [[layer]] table is required");
    }
    nn::Shape prev = to_shape(*input);
    std::size_t i = 0;
    for (const auto& el : *layers->as_array()) {
        const auto* t = el.as_table();
        if (!t) throw ConfigError(source + ": `layer` entries must be tables");
        arch.layers.push_back(parse_layer(*t, i++, prev));
        prev = arch.layers.back().output;
    }
    return arch;
}

nn::Architecture load_architecture(const std::filesystem::path& path) {
    return parse_architecture(read_text(path), path.string());
}

Override parse_override(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override `" + text + "` must look like key=value");
    Override o;
    std::stringstream key(text.substr(0, eq));
    std::string part;
    while (std::getline(key, part, '.')) {
        if (part.empty()) throw ConfigError("override `" + text + "` has an empty key segment");
        o.path.push_back(part);
    }
    o.value = text.substr(eq + 1);
    return o;
}

LoadedConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                          const std::vector<Override>& overrides, std::optional<std::uint64_t> seed,
                          const std::string& source) {
    auto root = parse_toml(text, source);
    for (const auto& o : overrides) apply_override(root, o);

    LoadedConfig out;
    RunConfig& c = out.run;
    Reader r(root, "");

    for (const char* key : {"model", "alpha", "beta", "temperature", "h"}) {
        if (!r.has(key)) throw ConfigError("missing required key `" + std::string(key) + "`");
    }
    out.model_path = base_dir / *r.string("model");
    c.hyper.alpha = *r.number("alpha");
    c.hyper.beta = *r.number("beta");
    c.hyper.temperature = *r.number("temperature");
    c.hyper.h = *r.number("h");
    if (auto v = r.number("gamma")) c.hyper.gamma = *v;
    if (auto v = r.number("lr")) c.hyper.lr = *v;
    if (auto v = r.number("epsilon")) c.hyper.epsilon = *v;

    const auto file_seed = r.integer("seed", 0);
    if (seed) {
        c.seed = *seed;
    } else if (file_seed) {
        c.seed = static_cast<std::uint64_t>(*file_seed);
    } else if (auto e = env_seed()) {
        c.seed = *e;
    } else {
        throw ConfigError("missing required key `seed` (set it in the config, pass --seed or set FBM_SEED)");
    }

    if (auto v = r.integers("palette", 1)) {
        try {
            c.palette = quant::BitPalette(std::vector<int>(v->begin(), v->end()));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("`palette`: ") + e.what());
        }
    }
    if (auto v = r.integer("epochs", 0)) c.epochs = static_cast<int>(*v);
    if (auto v = r.integer("batch_size", 1)) c.batch_size = static_cast<std::size_t>(*v);
    if (auto v = r.number("momentum")) c.momentum = *v;
    if (auto v = r.number("weight_decay")) c.weight_decay = *v;
    if (auto v = enum_value(r, "mask_mode", hessian::parse_mask_mode)) c.mask_mode = *v;
    if (auto v = enum_value(r, "mask_refresh", parse_mask_refresh)) c.mask_refresh = *v;
    if (auto v = enum_value(r, "gumbel_form", alloc::parse_gumbel_form)) c.gumbel_form = *v;
    if (auto v = enum_value(r, "lr_rule", parse_lr_rule)) c.lr_rule = *v;
    if (auto v = r.number("lr_bound")) c.lr_bound = *v;
    if (auto v = r.integer("lr_decay_epochs", 1)) c.lr_decay_epochs = static_cast<int>(*v);
    if (auto v = enum_value(r, "latency_mode", parse_latency_mode)) c.latency_mode = *v;
    if (auto v = enum_value(r, "init", parse_init_mode)) c.init = *v;
    if (auto v = r.number("peak_logit")) c.peak_logit = *v;
    if (auto v = r.number("init_decay")) c.init_decay = *v;
    if (auto v = r.integer("fisher_samples", 1)) c.fisher_samples = static_cast<std::size_t>(*v);
    if (auto v = r.integer("fisher_iters", 1)) c.fisher_iters = static_cast<int>(*v);
    if (auto v = r.number("size_weight")) c.size_weight = *v;
    if (auto v = r.number("temperature_final")) c.temperature_final = *v;
    if (auto v = r.integer("pretrain_epochs", 0)) c.pretrain_epochs = static_cast<int>(*v);
    if (auto v = r.number("pretrain_lr")) c.pretrain_lr = *v;
    if (auto v = r.integer("finetune_epochs", 0)) c.finetune_epochs = static_cast<int>(*v);
    if (auto v = r.number("finetune_lr")) c.finetune_lr = *v;
    if (auto v = r.integer("lr_step_epochs", 1)) c.lr_step_epochs = static_cast<int>(*v);
    if (auto v = r.number("val_fraction")) c.val_fraction = *v;
    if (auto v = r.integer("checkpoint_every", 0)) c.checkpoint_every = static_cast<int>(*v);

    if (const auto* t = r.table("hardware")) {
        Reader hr(*t, "hardware");
        read_hardware(hr, c.hardware);
    }
    if (const auto* t = r.table("dataset")) {
        Reader dr(*t, "dataset");
        read_dataset(dr, c, base_dir);
    }
    const toml::table* sweep = r.table("sweep");
    r.finish();

    out.sweep = {{c.hyper.alpha}, {c.hyper.beta}, {c.hyper.h}, {c.seed}};
    if (sweep) {
        Reader sr(*sweep, "sweep");
        if (auto v = sr.numbers("alpha")) out.sweep.alpha = *v;
        if (auto v = sr.numbers("beta")) out.sweep.beta = *v;
        if (auto v = sr.numbers("h")) out.sweep.h = *v;
        if (auto v = sr.integers("seeds", 0)) out.sweep.seeds.assign(v->begin(), v->end());
        sr.finish();
        for (const auto* axis : {&out.sweep.alpha, &out.sweep.beta, &out.sweep.h}) {
            if (axis->empty()) throw ConfigError("sweep axes must not be empty");
        }
        if (out.sweep.seeds.empty()) throw ConfigError("`sweep.seeds` must not be empty");
    }

    c.architecture = load_architecture(out.model_path);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return out;
}

LoadedConfig load_config(const std::filesystem::path& path, const std::vector<Override>& overrides,
                         std::optional<std::uint64_t> seed) {
    return parse_config(read_text(path), path.parent_path(), overrides, seed, path.string());
}

} // namespace fbm::config
