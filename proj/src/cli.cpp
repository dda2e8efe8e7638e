#include "bess/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "bess/oracle.hpp"
#include "bess/ppo.hpp"
#include "bess/run_config.hpp"

namespace bess::cli {

namespace fs = std::filesystem;
using config::ConfigError;
using config::RunConfig;
using nlohmann::json;

namespace {

/// Values collected from flags; applied on top of file and environment layers.
struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string mode;
    bool smoke = false;
    bool show_config = false;
};

struct DataFlags {
    std::string input;
    bool synth = false;
    std::optional<std::size_t> slots;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

RunConfig resolve(const CommonFlags& flags) {
    RunConfig cfg = flags.smoke ? config::smoke_config() : RunConfig{};
    if (!flags.config_path.empty()) cfg = config::load_config_file(flags.config_path, cfg);
    config::apply_environment(cfg);
    if (flags.seed) cfg.seed = *flags.seed;
    if (!flags.out.empty()) cfg.out = flags.out;
    if (!flags.mode.empty()) {
        try {
            cfg.env.mode = env::market_mode_from_string(flags.mode);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("--mode: ") + e.what());
        }
    }
    cfg.ppo.seed = cfg.seed;
    cfg.oracle.mode = cfg.env.mode;
    cfg.oracle.initial_energy = cfg.env.initial_energy;
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path.string());
    f << text;
}

void write_resolved_config(const RunConfig& cfg) { write_text(cfg.out / "resolved_config.json", to_json(cfg).dump(2) + "\n"); }

std::shared_ptr<const market::PriceSeries> load_series(const RunConfig& cfg, const DataFlags& data,
                                                       const std::optional<fs::path>& configured) {
    if (!data.input.empty() && data.synth) throw ConfigError("--data/--input and --synth are mutually exclusive");
    std::optional<fs::path> path;
    if (!data.input.empty()) path = data.input;
    else if (!data.synth) path = configured;
    if (path) {
        if (!fs::exists(*path)) throw ConfigError("data file not found: " + path->string());
        return std::make_shared<const market::PriceSeries>(market::load_price_csv(*path, cfg.data.schema));
    }
    const std::size_t slots = data.slots.value_or(cfg.synth.slots);
    if (slots == 0) throw ConfigError("--slots must be positive");
    return std::make_shared<const market::PriceSeries>(market::synth_price_series(cfg.seed, slots, cfg.synth.model));
}

void add_data_flags(CLI::App* cmd, DataFlags& data, const char* path_flag) {
    cmd->add_option(path_flag, data.input, "Price CSV to read");
    cmd->add_flag("--synth", data.synth, "Use the synthetic price generator");
    cmd->add_option("--slots", data.slots, "Synthetic series length in slots");
}

// ---------------------------------------------------------------------------

struct Stats {
    double min = 0, mean = 0, max = 0;
};

Stats column_stats(const market::PriceSeries& s, double market::PriceRecord::*field) {
    Stats st{s[0].*field, 0.0, s[0].*field};
    for (const auto& r : s.records()) {
        st.min = std::min(st.min, r.*field);
        st.max = std::max(st.max, r.*field);
        st.mean += r.*field;
    }
    st.mean /= static_cast<double>(s.size());
    return st;
}

int cmd_ingest(const RunConfig& cfg, const DataFlags& data, const std::string& output, std::ostream& out) {
    if (data.input.empty() && !data.synth) throw ConfigError("ingest needs --input or --synth");
    const auto series = load_series(cfg, data, std::nullopt);
    const fs::path target = output.empty() ? cfg.out / "prices.csv" : fs::path(output);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    market::write_price_csv(target, *series);
    write_resolved_config(cfg);

    out << "slots " << series->size() << "\n";
    out << "first " << market::format_timestamp((*series)[0].timestamp) << "\n";
    out << "last " << market::format_timestamp((*series)[series->size() - 1].timestamp) << "\n";
    const std::pair<const char*, double market::PriceRecord::*> columns[] = {
        {"energy_price", &market::PriceRecord::energy_price},
        {"raise_price", &market::PriceRecord::raise_price},
        {"lower_price", &market::PriceRecord::lower_price}};
    for (const auto& [name, field] : columns) {
        const auto st = column_stats(*series, field);
        out << name << " min " << fmt(st.min) << " mean " << fmt(st.mean) << " max " << fmt(st.max) << "\n";
    }
    out << "wrote " << target.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& cfg, const DataFlags& data, const std::string& resume, std::ostream& out) {
    cfg.validate();
    const auto series = load_series(cfg, data, cfg.data.train);
    fs::create_directories(cfg.out);
    write_resolved_config(cfg);

    ppo::TrainOptions options;
    if (!resume.empty()) {
        if (!fs::exists(resume)) throw ConfigError("checkpoint not found: " + resume);
        auto ckpt = ppo::load_checkpoint(resume);
        ppo::check_compatible(ckpt, cfg.ppo, cfg.env);
        out << "resuming from iteration " << ckpt.iteration << "\n";
        options.resume_from = std::move(ckpt);
    }

    const fs::path metrics_path = cfg.out / "metrics.csv";
    const bool append = options.resume_from && fs::exists(metrics_path);
    std::ofstream metrics(metrics_path, append ? std::ios::app : std::ios::trunc);
    if (!metrics) throw ConfigError("cannot write " + metrics_path.string());
    if (!append) ppo::write_metrics_header(metrics);
    options.on_iteration = [&](const ppo::IterationMetrics& m) {
        ppo::write_metrics_row(metrics, m, cfg.record_wall_time);
        metrics.flush();
    };
    options.on_checkpoint = [&](const ppo::Checkpoint& c) {
        char name[64];
        std::snprintf(name, sizeof name, "iter_%06llu.ckpt", static_cast<unsigned long long>(c.iteration));
        fs::create_directories(cfg.out / "checkpoints");
        ppo::save_checkpoint(cfg.out / "checkpoints" / name, c);
    };

    try {
        const auto result = ppo::train(cfg.ppo, series, cfg.battery, cfg.env, options);
        ppo::save_checkpoint(cfg.out / "final.ckpt", result.checkpoint);
        out << "iterations " << result.checkpoint.iteration << "\n";
        if (!result.metrics.empty()) out << "final mean_return " << fmt(result.metrics.back().mean_return) << "\n";
    } catch (const ppo::NonFiniteLoss& e) {
        const fs::path dump = cfg.out / "nonfinite_dump.json";
        write_text(dump, e.diagnostic() + "\n");
        throw;
    }
    out << "wrote " << (cfg.out / "final.ckpt").string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

/// Per-slot cumulative oracle profit over the same episode windows the agent is evaluated on.
std::vector<double> oracle_profit(const RunConfig& cfg, const std::shared_ptr<const market::PriceSeries>& series) {
    const env::MarketEnv layout(series, cfg.battery, cfg.env, 0);
    std::vector<double> cumulative;
    double total = 0.0;
    auto oc = cfg.oracle;
    oc.signal_policy = oracle::SignalPolicy::expected_value;
    for (std::size_t w = 0; w < layout.num_episodes(); ++w) {
        const auto window = series->slice(w * layout.episode_length(), layout.episode_length());
        const auto sol = oracle::solve(window, cfg.battery, oc);
        for (const double r : sol.slot_rewards) cumulative.push_back(total += r);
    }
    return cumulative;
}

ppo::Checkpoint load_for_eval(const fs::path& path, const RunConfig& cfg) {
    if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
    auto ckpt = ppo::load_checkpoint(path);
    ppo::check_compatible(ckpt, cfg.ppo, cfg.env);
    return ckpt;
}

struct EvalFlags {
    std::string checkpoint;
    std::string energy_checkpoint;
    std::string fcas_checkpoint;
    std::string output;
    bool compare = false;
    bool stochastic = false;
};

int cmd_eval(const RunConfig& cfg, const DataFlags& data, const EvalFlags& flags, std::ostream& out) {
    cfg.validate();
    const auto series = load_series(cfg, data, cfg.data.eval ? cfg.data.eval : cfg.data.train);
    const fs::path ckpt_path = flags.checkpoint.empty() ? cfg.out / "final.ckpt" : fs::path(flags.checkpoint);
    const auto ckpt = load_for_eval(ckpt_path, cfg);
    const bool deterministic = !flags.stochastic;

    auto result = ppo::evaluate(ckpt, series, cfg.battery, cfg.env, deterministic, cfg.seed);
    auto restricted = [&](const std::string& path, env::MarketMode mode, std::vector<double>& column) {
        if (path.empty()) return;
        auto other = load_for_eval(path, cfg);
        auto ec = cfg.env;
        ec.mode = mode;
        column = ppo::rollout_profit(other.policy, series, cfg.battery, ec, deterministic, cfg.seed);
    };
    restricted(flags.energy_checkpoint, env::MarketMode::energy_only, result.energy_only);
    restricted(flags.fcas_checkpoint, env::MarketMode::fcas_only, result.fcas_only);

    std::vector<double> oracle_column;
    if (flags.compare) oracle_column = oracle_profit(cfg, series);

    const fs::path target = flags.output.empty() ? cfg.out / "eval.csv" : fs::path(flags.output);
    std::ostringstream csv;
    csv << "slot,joint,energy_only,fcas_only" << (flags.compare ? ",oracle" : "") << "\n";
    for (std::size_t i = 0; i < result.joint.size(); ++i) {
        csv << i << "," << fmt(result.joint[i]) << "," << fmt(result.energy_only[i]) << "," << fmt(result.fcas_only[i]);
        if (flags.compare) csv << "," << fmt(oracle_column[i]);
        csv << "\n";
    }
    write_text(target, csv.str());
    write_resolved_config(cfg);

    const auto last = [](const std::vector<double>& v) { return v.empty() ? 0.0 : v.back(); };
    out << "slots " << result.joint.size() << "\n";
    out << "joint " << fmt(last(result.joint)) << "\n";
    out << "energy_only " << fmt(last(result.energy_only)) << "\n";
    out << "fcas_only " << fmt(last(result.fcas_only)) << "\n";
    out << "joint_minus_sum " << fmt(last(result.joint) - last(result.energy_only) - last(result.fcas_only)) << "\n";
    if (flags.compare) out << "oracle " << fmt(last(oracle_column)) << "\n";
    out << "wrote " << target.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct OracleFlags {
    std::optional<std::size_t> soc_levels;
    bool refine = false;
    std::optional<double> initial_energy;
    std::optional<std::uint64_t> signal_seed;
};

json objective_json(const oracle::OracleSolution& sol) {
    return {{"objective", sol.objective}, {"soc_levels", sol.soc_levels}, {"slots", sol.schedule.size()}};
}

int cmd_oracle(RunConfig cfg, const DataFlags& data, const OracleFlags& flags, std::ostream& out) {
    if (flags.soc_levels) cfg.oracle.soc_levels = *flags.soc_levels;
    if (flags.initial_energy) cfg.oracle.initial_energy = cfg.env.initial_energy = *flags.initial_energy;
    cfg.validate();
    const auto series = load_series(cfg, data, cfg.data.train);

    if (flags.signal_seed) {
        market::Rng rng(*flags.signal_seed);
        cfg.oracle.signal_policy = oracle::SignalPolicy::fixed_scenario;
        cfg.oracle.scenario.clear();
        for (std::size_t t = 0; t < series->size(); ++t)
            cfg.oracle.scenario.push_back(market::sample_regulation_signal(rng).value());
    } else if (cfg.oracle.signal_policy == oracle::SignalPolicy::fixed_scenario) {
        throw ConfigError("fixed-scenario oracle runs need --signal-seed");
    }

    auto sol = oracle::solve(*series, cfg.battery, cfg.oracle);
    json summary = objective_json(sol);
    summary["mode"] = env::to_string(cfg.oracle.mode);
    summary["signal_policy"] = flags.signal_seed ? "fixed-scenario" : "expected-value";
    out << "objective " << fmt(sol.objective) << " (" << sol.soc_levels << " levels)\n";
    if (flags.refine) {
        auto fine_cfg = cfg.oracle;
        fine_cfg.soc_levels = oracle::refine_levels(cfg.oracle.soc_levels);
        const auto fine = oracle::solve(*series, cfg.battery, fine_cfg);
        summary["refined"] = objective_json(fine);
        out << "refined objective " << fmt(fine.objective) << " (" << fine.soc_levels << " levels)\n";
    }

    fs::create_directories(cfg.out);
    std::ofstream sched(cfg.out / "schedule.csv", std::ios::binary);
    if (!sched) throw ConfigError("cannot write " + (cfg.out / "schedule.csv").string());
    oracle::write_schedule_csv(sched, sol);
    write_text(cfg.out / "objective.json", summary.dump(2) + "\n");
    write_resolved_config(cfg);
    out << "wrote " << (cfg.out / "schedule.csv").string() << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Battery bidding agent for joint energy and regulation markets", "bess"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "bess 1.0.0");

    CommonFlags common;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", common.config_path, "JSON configuration file")->check(CLI::ExistingFile);
        cmd->add_option("--seed", common.seed, "Random seed");
        cmd->add_option("--out", common.out, "Output directory");
        cmd->add_flag("--smoke", common.smoke, "Start from the small smoke-test defaults");
        cmd->add_flag("--show-config", common.show_config, "Print the resolved configuration and exit");
    };

    DataFlags data;
    std::string ingest_output;
    auto* ingest = app.add_subcommand("ingest", "Validate and normalize a price series");
    add_common(ingest);
    add_data_flags(ingest, data, "--input");
    ingest->add_option("--output", ingest_output, "Normalized CSV path (default OUT/prices.csv)");

    std::string resume;
    std::optional<std::size_t> iters;
    bool no_wall_time = false;
    auto* train = app.add_subcommand("train", "Train a PPO bidding agent");
    add_common(train);
    add_data_flags(train, data, "--data");
    train->add_option("--resume", resume, "Checkpoint to continue from");
    train->add_option("--iters", iters, "Total iterations");
    train->add_option("--mode", common.mode, "joint | energy-only | fcas-only");
    train->add_flag("--no-wall-time", no_wall_time, "Write 0 in the wall_time_s metrics column");

    EvalFlags eval_flags;
    auto* eval = app.add_subcommand("eval", "Cumulative profit of a trained agent");
    add_common(eval);
    add_data_flags(eval, data, "--data");
    eval->add_option("--checkpoint", eval_flags.checkpoint, "Checkpoint (default OUT/final.ckpt)");
    eval->add_option("--energy-checkpoint", eval_flags.energy_checkpoint, "Separately trained energy-only agent");
    eval->add_option("--fcas-checkpoint", eval_flags.fcas_checkpoint, "Separately trained FCAS-only agent");
    eval->add_option("--output", eval_flags.output, "Report CSV (default OUT/eval.csv)");
    eval->add_flag("--compare", eval_flags.compare, "Add the perfect-foresight oracle column");
    eval->add_flag("--stochastic", eval_flags.stochastic, "Sample actions instead of using the mean");

    OracleFlags oracle_flags;
    auto* orc = app.add_subcommand("oracle", "Perfect-foresight optimal schedule");
    add_common(orc);
    add_data_flags(orc, data, "--data");
    orc->add_option("--soc-levels", oracle_flags.soc_levels, "SoC discretization levels");
    orc->add_flag("--refine", oracle_flags.refine, "Also solve with halved level spacing");
    orc->add_option("--initial-energy", oracle_flags.initial_energy, "Starting SoC in MWh");
    orc->add_option("--mode", common.mode, "joint | energy-only | fcas-only");
    orc->add_option("--signal-seed", oracle_flags.signal_seed, "Solve against one sampled signal scenario");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig cfg = resolve(common);
        if (iters) cfg.ppo.total_iters = *iters;
        if (no_wall_time) cfg.record_wall_time = false;
        if (common.show_config) {
            cfg.validate();
            out << to_json(cfg).dump(2) << "\n";
            return kExitOk;
        }
        if (*ingest) return cmd_ingest(cfg, data, ingest_output, out);
        if (*train) return cmd_train(cfg, data, resume, out);
        if (*eval) return cmd_eval(cfg, data, eval_flags, out);
        return cmd_oracle(std::move(cfg), data, oracle_flags, out);
    } catch (const ppo::NonFiniteLoss& e) {
        err << "error: " << e.what() << "\n";
        err << "diagnostic dump: " << (resolve(common).out / "nonfinite_dump.json").string() << "\n";
        return kExitNumerical;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const market::MarketDataError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ppo::CheckpointMismatch& e) {
        err << "error: checkpoint mismatch: " << e.what() << "\n";
        return kExitUsage;
    } catch (const battery::InvalidParams& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const oracle::InfeasibleConfig& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

}  // namespace bess::cli
