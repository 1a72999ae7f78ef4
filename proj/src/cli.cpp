// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/cli.hpp"

#include "fbm/checkpoint.hpp"
#include "fbm/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace fbm::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kRecoveryStream = 6;

/// Input the user must fix; maps to kExitInvalid.
class InvalidInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) parts.push_back(cur);
    if (!s.empty() && s.back() == sep) parts.emplace_back();
    return parts;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name, const fs::path& path) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw std::runtime_error(path.string() + ": missing column `" + name + "`");
    }
};

/// Comma-separated, no quoting.
CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
    t.header = split(line, ',');
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto row = split(line, ',');
        if (row.size() != t.header.size()) {
            throw std::runtime_error(path.string() + ": row has " + std::to_string(row.size()) + " fields, expected " +
                                     std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

struct CommonOptions {
    std::string config;
    std::vector<std::string> overrides;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App& app, CommonOptions& o, bool config_required) {
    auto* c = app.add_option("--config", o.config, "run configuration (TOML)");
    if (config_required) c->required();
    app.add_option("--override", o.overrides, "dotted key=value applied to the config")->take_all();
    app.add_option("--out", o.out, "output directory")->capture_default_str();
    app.add_option("--seed", o.seed, "seed; overrides the config and FBM_SEED");
}

config::LoadedConfig load(const CommonOptions& o) {
    std::vector<config::Override> overrides;
    for (const auto& text : o.overrides) overrides.push_back(config::parse_override(text));
    return config::load_config(o.config, overrides, o.seed);
}

fs::path make_out(const CommonOptions& o) {
    fs::path dir(o.out);
    fs::create_directories(dir);
    return dir;
}

BitAllocation load_allocation(const std::string& path, const RunConfig& config) {
    BitAllocation a;
    try {
        a = read_allocation(path);
    } catch (const std::exception& e) {
        throw InvalidInput(e.what());
    }
    const std::size_t n = config.architecture.num_quantizable();
    if (a.size() != n) {
        throw InvalidInput(path + ": allocation has " + std::to_string(a.size()) + " layers, model `" +
                           config.architecture.name + "` has " + std::to_string(n));
    }
    return a;
}

nn::Model prepared_model(const RunConfig& config, const PreparedData& data, const std::string& checkpoint) {
    if (checkpoint.empty()) return pretrain(config, data.train);
    nn::Model model(config.architecture, derive_seed(config.seed, 3));
    nn::load_checkpoint(model, checkpoint);
    return model;
}

ordered_json summary_json(const RunConfig& config, const RunResult& result) {
    const double size = hw::model_size_bytes(config.architecture.layers, result.allocation);
    ordered_json j;
    j["model"] = config.architecture.name;
    j["seed"] = config.seed;
    j["alpha"] = config.hyper.alpha;
    j["beta"] = config.hyper.beta;
    j["h"] = config.hyper.h;
    j["epochs"] = config.epochs;
    j["allocation"] = result.allocation.bits;
    j["float_accuracy"] = result.float_accuracy;
    j["final_accuracy"] = result.final_accuracy;
    j["relative_latency"] = result.final_relative_latency;
    j["size_bytes"] = size;
    j["size_mb"] = size / 1e6;
    return j;
}

// ---------------------------------------------------------------- commands

int cmd_hessian(const CommonOptions& o, std::ostream& out) {
    const auto loaded = load(o);
    const auto& config = loaded.run;
    const int threads = env_threads();
    const auto data = prepare_data(config);
    auto model = pretrain(config, data.train);
    model.requantize(BitAllocation::uniform(model.num_quantizable(), 8).bits, calibration_batch(data.train));
    const auto profile = hessian::sensitivity_profile(model, data.train, fisher_options(config), threads);
    const auto dir = make_out(o);
    hessian::write_profile_csv(profile, dir / "sensitivity.csv");
    for (std::size_t l = 0; l < profile.size(); ++l) {
        out << "layer " << (l + 1) << " lambda " << num(profile.lambda[l]) << '\n';
    }
    return kExitOk;
}

int cmd_search(const CommonOptions& o, std::ostream& out) {
    const auto loaded = load(o);
    const auto dir = make_out(o);
    const auto result = search_into(dir, loaded.run, env_threads());
    out << "allocation " << result.allocation.to_string() << '\n'
        << "float_accuracy " << num(result.float_accuracy) << '\n'
        << "final_accuracy " << num(result.final_accuracy) << '\n'
        << "relative_latency " << num(result.final_relative_latency) << '\n';
    return kExitOk;
}

struct FinetuneOptions {
    std::string allocation;
    std::string checkpoint;
    std::optional<int> epochs;
    bool recovery = false;
    double tolerance = 1.0;
};

int cmd_finetune(const CommonOptions& o, const FinetuneOptions& f, std::ostream& out) {
    const auto loaded = load(o);
    const auto& config = loaded.run;
    const auto target = load_allocation(f.allocation, config);
    const int epochs = f.epochs.value_or(config.finetune_epochs);
    if (epochs < 1) throw InvalidInput("finetune: epochs must be >= 1 (set --epochs or finetune_epochs)");
    if (!f.checkpoint.empty() && !fs::exists(f.checkpoint)) throw InvalidInput("cannot open " + f.checkpoint);
    const auto data = prepare_data(config);
    auto model = prepared_model(config, data, f.checkpoint);
    const auto dir = make_out(o);

    if (f.recovery) {
        model.requantize(BitAllocation::uniform(model.num_quantizable(), 8).bits, calibration_batch(data.train));
        const std::uint64_t seed = derive_seed(config.seed, kRecoveryStream);
        auto log = open_out(dir / "recovery_log.csv");
        log << "scaled,epoch,accuracy,delta_accuracy\n";
        for (bool scaled : {true, false}) {
            const auto trial = recovery_trial(model, data, target, scaled, epochs, f.tolerance, config, seed);
            for (std::size_t e = 0; e < trial.accuracy.size(); ++e) {
                log << (scaled ? 1 : 0) << ',' << (e + 1) << ',' << num(trial.accuracy[e]) << ','
                    << num(trial.reference_accuracy - trial.accuracy[e]) << '\n';
            }
            out << (scaled ? "scaled" : "unscaled") << " reference " << num(trial.reference_accuracy)
                << " epochs_to_recover " << trial.epochs_to_recover << '\n';
        }
        return kExitOk;
    }

    const auto log = finetune(model, target, data, epochs, config.finetune_lr, config.lr_step_epochs, config);
    auto csv = open_out(dir / "finetune.csv");
    csv << "epoch,lr,train_loss,val_accuracy\n";
    for (const auto& r : log) {
        csv << r.epoch << ',' << num(r.lr) << ',' << num(r.train_loss) << ',' << num(r.val_accuracy) << '\n';
    }
    nn::save_checkpoint(model, dir / "model.bin");
    out << "final_accuracy " << num(log.back().val_accuracy) << '\n';
    return kExitOk;
}

struct SimulateOptions {
    std::string allocation;
    bool enumerate = false;
    bool pin = false;
};

int cmd_simulate(const CommonOptions& o, const SimulateOptions& s, std::ostream& out) {
    const auto loaded = load(o);
    const auto& config = loaded.run;
    const auto& layers = config.architecture.layers;
    if (!s.enumerate && s.allocation.empty()) throw InvalidInput("simulate: --allocation or --enumerate is required");
    const auto dir = make_out(o);

    if (!s.allocation.empty()) {
        const auto a = load_allocation(s.allocation, config);
        const auto report = hw::model_latency(layers, a, config.hardware);
        hw::write_latency_csv(report, dir / "latency.csv");
        auto csv = open_out(dir / "simulation.csv");
        csv << "latency_ms,relative_latency,size_mb\n"
            << num(report.total_s * 1e3) << ',' << num(report.relative) << ',' << num(report.size_bytes / 1e6)
            << '\n';
        out << "latency_ms " << num(report.total_s * 1e3) << '\n'
            << "relative_latency " << num(report.relative) << '\n'
            << "size_mb " << num(report.size_bytes / 1e6) << '\n';
    }

    if (s.enumerate) {
        hw::SearchConstraints constraints;
        const std::size_t n = config.architecture.num_quantizable();
        if (s.pin) {
            constraints.fixed.assign(n, 0);
            constraints.fixed.front() = kPinnedBits;
            constraints.fixed.back() = kPinnedBits;
        }
        const auto all = hw::enumerate_allocations(layers, config.hardware, config.palette, constraints);
        const double base = hw::total_latency(layers, BitAllocation::uniform(n, 8), config.hardware);
        auto csv = open_out(dir / "enumeration.csv");
        csv << "index,allocation,total_s,relative_latency\n";
        for (std::size_t i = 0; i < all.size(); ++i) {
            csv << i << ',' << all[i].allocation.to_string() << ',' << num(all[i].total_s) << ','
                << num(all[i].total_s / base) << '\n';
        }
        const auto brute = hw::brute_force_optimal(layers, config.hardware, config.palette, constraints);
        const auto dp = hw::dp_optimal(layers, config.hardware, config.palette, constraints);
        auto opt = open_out(dir / "optimum.csv");
        opt << "method,allocation,total_s\n"
            << "brute_force," << brute.allocation.to_string() << ',' << num(brute.total_s) << '\n'
            << "dp," << dp.allocation.to_string() << ',' << num(dp.total_s) << '\n';
        out << "allocations " << all.size() << '\n'
            << "brute_force " << brute.allocation.to_string() << ' ' << num(brute.total_s) << '\n'
            << "dp " << dp.allocation.to_string() << ' ' << num(dp.total_s) << '\n';
        if (brute.allocation != dp.allocation || brute.total_s != dp.total_s) {
            throw std::runtime_error("simulate: dynamic program disagrees with exhaustive search");
        }
    }
    return kExitOk;
}

struct PointOutcome {
    std::string status;
    ordered_json summary;
};

int cmd_sweep(const CommonOptions& o, const std::vector<std::string>& grid_options, std::ostream& out) {
    auto loaded = load(o);
    for (const auto& g : grid_options) apply_grid_option(loaded.sweep, g);
    const auto points = expand_grid(loaded.sweep);
    const int threads = env_threads();
    const auto dir = make_out(o);

    std::vector<RunConfig> configs;
    std::vector<fs::path> dirs;
    for (std::size_t i = 0; i < points.size(); ++i) {
        RunConfig c = loaded.run;
        c.hyper.alpha = points[i].alpha;
        c.hyper.beta = points[i].beta;
        c.hyper.h = points[i].h;
        c.seed = points[i].seed;
        try {
            c.validate();
        } catch (const std::exception& e) {
            throw config::ConfigError(std::string("sweep point ") + std::to_string(i) + ": " + e.what());
        }
        char name[32];
        std::snprintf(name, sizeof(name), "point_%04zu", i);
        configs.push_back(std::move(c));
        dirs.push_back(dir / name);
    }

    std::vector<PointOutcome> outcomes(points.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < points.size(); i = next++) {
            fs::create_directories(dirs[i]);
            try {
                const auto r = search_into(dirs[i], configs[i], 1);
                outcomes[i] = {"ok", summary_json(configs[i], r)};
            } catch (const DivergenceError& e) {
                outcomes[i].status = "diverged";
                open_out(dirs[i] / "error.txt") << e.what() << '\n';
            } catch (const std::exception& e) {
                outcomes[i].status = "error";
                open_out(dirs[i] / "error.txt") << e.what() << '\n';
            }
        }
    };
    const std::size_t pool = std::min<std::size_t>(static_cast<std::size_t>(threads), points.size());
    std::vector<std::thread> workers;
    for (std::size_t t = 1; t < pool; ++t) workers.emplace_back(worker);
    worker();
    for (auto& t : workers) t.join();

    auto csv = open_out(dir / "sweep.csv");
    csv << "point,alpha,beta,h,seed,status,float_accuracy,final_accuracy,relative_latency,size_mb,allocation\n";
    std::size_t failed = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        const auto& r = outcomes[i];
        csv << i << ',' << num(p.alpha) << ',' << num(p.beta) << ',' << num(p.h) << ',' << p.seed << ',' << r.status;
        if (r.status == "ok") {
            BitAllocation a{r.summary["allocation"].get<std::vector<int>>()};
            csv << ',' << num(r.summary["float_accuracy"].get<double>()) << ','
                << num(r.summary["final_accuracy"].get<double>()) << ','
                << num(r.summary["relative_latency"].get<double>()) << ','
                << num(r.summary["size_mb"].get<double>()) << ',' << a.to_string();
        } else {
            ++failed;
            csv << ",,,,,";
        }
        csv << '\n';
        out << "point " << i << ' ' << r.status << '\n';
    }
    if (failed > 0) {
        out << failed << " of " << points.size() << " points failed\n";
        return kExitFailure;
    }
    return kExitOk;
}

} // namespace

// ---------------------------------------------------------------- library

int env_threads() {
    const char* v = std::getenv("FBM_THREADS");
    if (v == nullptr || *v == '\0') return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1 || n > 1024) {
        throw config::ConfigError(std::string("FBM_THREADS: expected an integer in [1, 1024], got `") + v + "`");
    }
    return static_cast<int>(n);
}

void write_search_outputs(const fs::path& dir, const RunConfig& config, RunResult& result) {
    hessian::write_profile_csv(result.initial_profile, dir / "sensitivity.csv");
    {
        auto csv = open_out(dir / "epoch_log.csv");
        csv << epoch_csv_header() << '\n';
        for (const auto& r : result.log) csv << epoch_csv_row(r) << '\n';
        auto jsonl = open_out(dir / "epoch_log.jsonl");
        for (const auto& r : result.log) jsonl << epoch_json(r) << '\n';
    }
    {
        auto csv = open_out(dir / "matrix.csv");
        alloc::write_matrix_csv_header(csv);
        alloc::write_matrix_csv(result.initial_matrix, 0, csv);
        for (std::size_t e = 0; e < result.matrix_history.size(); ++e) {
            alloc::write_matrix_csv(result.matrix_history[e], static_cast<int>(e + 1), csv);
        }
    }
    write_allocation(result.allocation, dir / "allocation.txt");
    {
        auto ev = open_out(dir / "events.txt");
        for (const auto& e : result.events) ev << e << '\n';
    }
    auto summary = summary_json(config, result);
    if (config.finetune_epochs > 0) {
        PreparedData data = prepare_data(config);
        const auto log = finetune(result.model, result.allocation, data, config.finetune_epochs, config.finetune_lr,
                                  config.lr_step_epochs, config);
        auto csv = open_out(dir / "finetune.csv");
        csv << "epoch,lr,train_loss,val_accuracy\n";
        for (const auto& r : log) {
            csv << r.epoch << ',' << num(r.lr) << ',' << num(r.train_loss) << ',' << num(r.val_accuracy) << '\n';
        }
        summary["finetuned_accuracy"] = log.back().val_accuracy;
    }
    nn::save_checkpoint(result.model, dir / "model.bin");
    open_out(dir / "summary.json") << summary.dump(2) << '\n';
}

RunResult search_into(const fs::path& dir, const RunConfig& config, int threads) {
    RunOptions options;
    options.threads = threads;
    if (config.checkpoint_every > 0) {
        options.checkpoint_dir = dir / "checkpoints";
        fs::create_directories(*options.checkpoint_dir);
    }
    auto result = run_fbm(config, options);
    write_search_outputs(dir, config, result);
    return result;
}

std::vector<SweepPoint> expand_grid(const config::SweepGrid& grid) {
    std::vector<SweepPoint> points;
    for (double a : grid.alpha) {
        for (double b : grid.beta) {
            for (double h : grid.h) {
                for (auto s : grid.seeds) points.push_back({a, b, h, s});
            }
        }
    }
    return points;
}

void apply_grid_option(config::SweepGrid& grid, const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw config::ConfigError("--grid: expected key=v1,v2,... got `" + text + "`");
    const std::string key = text.substr(0, eq);
    const auto values = split(text.substr(eq + 1), ',');
    if (values.empty()) throw config::ConfigError("--grid " + key + ": no values");
    auto parse_double = [&](const std::string& v) {
        char* end = nullptr;
        const double d = std::strtod(v.c_str(), &end);
        if (v.empty() || *end != '\0') throw config::ConfigError("--grid " + key + ": not a number `" + v + "`");
        return d;
    };
    if (key == "alpha" || key == "beta" || key == "h") {
        std::vector<double> axis;
        for (const auto& v : values) axis.push_back(parse_double(v));
        (key == "alpha" ? grid.alpha : key == "beta" ? grid.beta : grid.h) = axis;
    } else if (key == "seed" || key == "seeds") {
        grid.seeds.clear();
        for (const auto& v : values) {
            char* end = nullptr;
            const auto s = std::strtoull(v.c_str(), &end, 10);
            if (v.empty() || *end != '\0') throw config::ConfigError("--grid seed: not an integer `" + v + "`");
            grid.seeds.push_back(s);
        }
    } else {
        throw config::ConfigError("--grid: unknown key `" + key + "`");
    }
}

std::vector<fs::path> write_report(const fs::path& run_dir, const fs::path& out_dir) {
    if (!fs::is_directory(run_dir)) throw std::runtime_error("report: not a directory: " + run_dir.string());
    std::map<std::string, std::string> files;  // output name -> content

    const auto sweep = run_dir / "sweep.csv";
    const auto summary = run_dir / "summary.json";
    if (fs::exists(sweep)) {
        const auto t = read_csv(sweep);
        const auto c_status = t.column("status", sweep);
        const std::vector<std::string> keep = {"alpha", "beta", "h", "seed", "final_accuracy", "relative_latency",
                                               "size_mb"};
        std::vector<std::size_t> cols;
        for (const auto& k : keep) cols.push_back(t.column(k, sweep));
        std::ostringstream s;
        s << "alpha,beta,h,seed,accuracy,relative_latency,size_mb\n";
        for (const auto& row : t.rows) {
            if (row[c_status] != "ok") continue;
            for (std::size_t i = 0; i < cols.size(); ++i) s << (i ? "," : "") << row[cols[i]];
            s << '\n';
        }
        files["tradeoff.csv"] = s.str();
    } else if (fs::exists(summary)) {
        std::ifstream in(summary);
        const auto j = nlohmann::json::parse(in);
        std::ostringstream s;
        s << "alpha,beta,h,seed,accuracy,relative_latency,size_mb\n"
          << num(j.at("alpha").get<double>()) << ',' << num(j.at("beta").get<double>()) << ','
          << num(j.at("h").get<double>()) << ',' << j.at("seed").get<std::uint64_t>() << ','
          << num(j.at("final_accuracy").get<double>()) << ',' << num(j.at("relative_latency").get<double>()) << ','
          << num(j.at("size_mb").get<double>()) << '\n';
        files["tradeoff.csv"] = s.str();
    }

    const auto matrix = run_dir / "matrix.csv";
    if (fs::exists(matrix)) {
        const auto t = read_csv(matrix);
        const auto ce = t.column("epoch", matrix), cl = t.column("layer", matrix), cb = t.column("bits", matrix),
                   cp = t.column("prob", matrix);
        std::ostringstream s;
        s << "epoch,layer,bits,prob\n";
        for (const auto& row : t.rows) {
            if (std::stoi(row[ce]) < 1) continue;
            s << row[ce] << ',' << row[cl] << ',' << row[cb] << ',' << row[cp] << '\n';
        }
        files["heatmap.csv"] = s.str();
    }

    const auto sens = run_dir / "sensitivity.csv";
    if (fs::exists(sens)) {
        const auto profile = hessian::read_profile_csv(sens);
        std::ostringstream s;
        s << "layer,lambda\n";
        for (std::size_t l = 0; l < profile.size(); ++l) s << (l + 1) << ',' << num(profile.lambda[l]) << '\n';
        files["eigenvalues.csv"] = s.str();
    }

    const auto recovery = run_dir / "recovery_log.csv";
    if (fs::exists(recovery)) {
        const auto t = read_csv(recovery);
        const auto ce = t.column("epoch", recovery), cd = t.column("delta_accuracy", recovery),
                   cs = t.column("scaled", recovery);
        std::ostringstream s;
        s << "epoch,delta_accuracy,scaled\n";
        for (const auto& row : t.rows) s << row[ce] << ',' << row[cd] << ',' << row[cs] << '\n';
        files["recovery.csv"] = s.str();
    }

    if (files.empty()) {
        throw std::runtime_error("report: " + run_dir.string() +
                                 " has none of sweep.csv, summary.json, matrix.csv, sensitivity.csv, recovery_log.csv");
    }
    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    for (const auto& [name, content] : files) {
        open_out(out_dir / name) << content;
        written.push_back(out_dir / name);
    }
    return written;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mixed-precision bit allocation search", "fbm"};
    app.require_subcommand(1);

    CommonOptions common;
    auto* hessian_cmd = app.add_subcommand("hessian", "per-layer Fisher sensitivity -> sensitivity.csv");
    add_common(*hessian_cmd, common, true);

    auto* search_cmd = app.add_subcommand("search", "full allocation search");
    add_common(*search_cmd, common, true);

    FinetuneOptions ft;
    auto* finetune_cmd = app.add_subcommand("finetune", "fine-tune at a fixed allocation");
    add_common(*finetune_cmd, common, true);
    finetune_cmd->add_option("--allocation", ft.allocation, "allocation file")->required();
    finetune_cmd->add_option("--checkpoint", ft.checkpoint, "start from these weights instead of pretraining");
    finetune_cmd->add_option("--epochs", ft.epochs, "defaults to finetune_epochs");
    finetune_cmd->add_flag("--recovery", ft.recovery, "compare scaled and unscaled LR from uniform 8-bit");
    finetune_cmd->add_option("--tolerance", ft.tolerance, "recovery tolerance in accuracy points")
        ->capture_default_str();

    SimulateOptions sim;
    auto* simulate_cmd = app.add_subcommand("simulate", "hardware latency and size");
    add_common(*simulate_cmd, common, true);
    simulate_cmd->add_option("--allocation", sim.allocation, "allocation file");
    simulate_cmd->add_flag("--enumerate", sim.enumerate, "every allocation over the palette plus the optimum");
    simulate_cmd->add_flag("--pin", sim.pin, "fix the first and last layers at 8 bits when enumerating");

    std::vector<std::string> grid;
    auto* sweep_cmd = app.add_subcommand("sweep", "search over an (alpha, beta, h, seed) grid");
    add_common(*sweep_cmd, common, true);
    sweep_cmd->add_option("--grid", grid, "axis=v1,v2,... (alpha, beta, h, seed)")->take_all();

    std::string run_dir;
    std::optional<std::string> report_out;
    auto* report_cmd = app.add_subcommand("report", "plot-ready CSVs from a run directory");
    report_cmd->add_option("run_dir", run_dir, "run or sweep output directory")->required();
    report_cmd->add_option("--out", report_out, "defaults to run_dir");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "fbm: " << e.what() << '\n';
        return kExitInvalid;
    }

    try {
        if (*hessian_cmd) return cmd_hessian(common, out);
        if (*search_cmd) return cmd_search(common, out);
        if (*finetune_cmd) return cmd_finetune(common, ft, out);
        if (*simulate_cmd) return cmd_simulate(common, sim, out);
        if (*sweep_cmd) return cmd_sweep(common, grid, out);
        if (*report_cmd) {
            for (const auto& p : write_report(run_dir, report_out.value_or(run_dir))) out << p.string() << '\n';
            return kExitOk;
        }
    } catch (const config::ConfigError& e) {
        err << "fbm: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const InvalidInput& e) {
        err << "fbm: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const DivergenceError& e) {
        err << "fbm: diverged: " << e.what() << '\n';
        return kExitDiverged;
    } catch (const std::exception& e) {
        err << "fbm: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, out, err);
}

} // namespace fbm::cli
