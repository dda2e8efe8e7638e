#include "bess/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>

namespace bess::config {

using nlohmann::json;

namespace {

/// Reads members of one JSON object, tracking which keys were consumed.
class ObjectReader {
public:
    ObjectReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    const json* find(const std::string& key) {
        const auto it = node_.find(key);
        if (it == node_.end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    std::string at(const std::string& key) const { return path_ + "." + key; }

    void number(const std::string& key, double& out) {
        if (const auto* v = find(key)) {
            if (!v->is_number()) throw ConfigError(at(key) + ": expected a number");
            out = v->get<double>();
        }
    }
    void optional_number(const std::string& key, double& out, double when_null) {
        if (const auto* v = find(key)) {
            if (v->is_null()) out = when_null;
            else if (v->is_number()) out = v->get<double>();
            else throw ConfigError(at(key) + ": expected a number or null");
        }
    }
    template <typename Int>
    void count(const std::string& key, Int& out) {
        if (const auto* v = find(key)) {
            if (!v->is_number_integer() || v->get<long long>() < 0)
                throw ConfigError(at(key) + ": expected a non-negative integer");
            out = static_cast<Int>(v->get<unsigned long long>());
        }
    }
    void boolean(const std::string& key, bool& out) {
        if (const auto* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(at(key) + ": expected true or false");
            out = v->get<bool>();
        }
    }
    void string(const std::string& key, std::string& out) {
        if (const auto* v = find(key)) {
            if (!v->is_string()) throw ConfigError(at(key) + ": expected a string");
            out = v->get<std::string>();
        }
    }
    void optional_path(const std::string& key, std::optional<std::filesystem::path>& out) {
        if (const auto* v = find(key)) {
            if (v->is_null()) out.reset();
            else if (v->is_string()) out = v->get<std::string>();
            else throw ConfigError(at(key) + ": expected a path string or null");
        }
    }

    void finish() const {
        for (const auto& [key, _] : node_.items())
            if (!seen_.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
    }

private:
    const json& node_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename Fn>
void section(ObjectReader& parent, const std::string& key, Fn&& fn) {
    if (const auto* v = parent.find(key)) {
        ObjectReader r(*v, parent.at(key));
        fn(r);
        r.finish();
    }
}

void read_sinusoid(ObjectReader& r, market::SinusoidModel& m) {
    r.number("base", m.base);
    r.number("amplitude", m.amplitude);
    r.number("period_slots", m.period_slots);
    r.number("phase_slots", m.phase_slots);
    r.number("noise_std", m.noise_std);
    r.number("spike_probability", m.spike_probability);
    r.number("spike_magnitude", m.spike_magnitude);
}

json sinusoid_json(const market::SinusoidModel& m) {
    return {{"base", m.base},
            {"amplitude", m.amplitude},
            {"period_slots", m.period_slots},
            {"phase_slots", m.phase_slots},
            {"noise_std", m.noise_std},
            {"spike_probability", m.spike_probability},
            {"spike_magnitude", m.spike_magnitude}};
}

std::string value_loss_name(ppo::ValueLossKind k) { return k == ppo::ValueLossKind::squared ? "squared" : "smooth_l1"; }
std::string update_order_name(ppo::UpdateOrder o) {
    return o == ppo::UpdateOrder::sequential ? "sequential" : "interleaved";
}
std::string signal_policy_name(oracle::SignalPolicy p) {
    return p == oracle::SignalPolicy::expected_value ? "expected-value" : "fixed-scenario";
}

}  // namespace

void RunConfig::validate() const {
    try {
        battery.validate();
        ppo.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (env.episode_slots == 0) throw ConfigError("env.episode_slots must be positive");
    if (!(env.price_scale > 0.0)) throw ConfigError("env.price_scale must be positive");
    if (!std::isfinite(env.energy_price_offset)) throw ConfigError("env.energy_price_offset must be finite");
    if (env.initial_energy >= 0.0 && (env.initial_energy < battery.e_min || env.initial_energy > battery.e_max))
        throw ConfigError("env.initial_energy must lie within [e_min, e_max]");
    if (oracle.soc_levels < 2) throw ConfigError("oracle.soc_levels must be at least 2");
    if (synth.slots < 2) throw ConfigError("synth.slots must be at least 2");
    for (const auto* p : {&data.train, &data.eval})
        if (*p && !std::filesystem::exists(**p)) throw ConfigError("data file not found: " + (*p)->string());
}

RunConfig from_json(const json& tree, RunConfig cfg) {
    ObjectReader root(tree, "config");
    if (const auto* v = root.find("seed")) {
        if (!v->is_number_integer()) throw ConfigError("config.seed: expected an integer");
        cfg.seed = v->get<std::uint64_t>();
    }
    if (const auto* v = root.find("out")) {
        if (!v->is_string()) throw ConfigError("config.out: expected a path string");
        cfg.out = v->get<std::string>();
    }
    if (const auto* v = root.find("mode")) {
        if (!v->is_string()) throw ConfigError("config.mode: expected a string");
        try {
            cfg.env.mode = env::market_mode_from_string(v->get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config.mode: ") + e.what());
        }
    }
    section(root, "battery", [&](ObjectReader& r) {
        auto& b = cfg.battery;
        r.number("capacity", b.capacity);
        r.number("e_min", b.e_min);
        r.number("e_max", b.e_max);
        r.number("eta_c", b.eta_c);
        r.number("eta_d", b.eta_d);
        r.number("alpha", b.alpha);
        r.optional_number("power_cap", b.power_cap, std::numeric_limits<double>::infinity());
        r.boolean("signed_raise_degradation", b.signed_raise_degradation);
    });
    section(root, "env", [&](ObjectReader& r) {
        r.count("episode_slots", cfg.env.episode_slots);
        r.boolean("carry_soc", cfg.env.carry_soc);
        r.optional_number("initial_energy", cfg.env.initial_energy, -1.0);
        r.number("price_scale", cfg.env.price_scale);
        r.number("energy_price_offset", cfg.env.energy_price_offset);
        r.boolean("exploring_starts", cfg.env.exploring_starts);
    });
    section(root, "ppo", [&](ObjectReader& r) {
        auto& p = cfg.ppo;
        r.number("gamma", p.gamma);
        r.number("lambda", p.lambda);
        r.number("clip_epsilon", p.clip_epsilon);
        r.count("trajectories_per_iter", p.trajectories_per_iter);
        r.count("horizon", p.horizon);
        r.count("epochs_per_iter", p.epochs_per_iter);
        r.count("minibatch_size", p.minibatch_size);
        r.number("actor_lr", p.actor_lr);
        r.number("critic_lr", p.critic_lr);
        r.number("entropy_coef", p.entropy_coef);
        r.count("total_iters", p.total_iters);
        if (const auto* v = r.find("hidden")) {
            if (!v->is_array() || v->empty()) throw ConfigError(r.at("hidden") + ": expected a non-empty array");
            p.hidden.clear();
            for (const auto& w : *v) {
                if (!w.is_number_integer() || w.get<int>() <= 0)
                    throw ConfigError(r.at("hidden") + ": widths must be positive integers");
                p.hidden.push_back(w.get<int>());
            }
        }
        r.number("log_std_init", p.log_std_init);
        r.number("max_grad_norm", p.max_grad_norm);
        r.number("reward_scale", p.reward_scale);
        r.boolean("normalize_advantages", p.normalize_advantages);
        std::string s;
        if (r.find("value_loss")) {
            r.string("value_loss", s);
            if (s == "squared") p.value_loss = ppo::ValueLossKind::squared;
            else if (s == "smooth_l1") p.value_loss = ppo::ValueLossKind::smooth_l1;
            else throw ConfigError(r.at("value_loss") + ": expected 'squared' or 'smooth_l1'");
        }
        if (r.find("update_order")) {
            r.string("update_order", s);
            if (s == "sequential") p.update_order = ppo::UpdateOrder::sequential;
            else if (s == "interleaved") p.update_order = ppo::UpdateOrder::interleaved;
            else throw ConfigError(r.at("update_order") + ": expected 'sequential' or 'interleaved'");
        }
        r.count("checkpoint_every", p.checkpoint_every);
        r.count("workers", p.workers);
    });
    section(root, "oracle", [&](ObjectReader& r) {
        r.count("soc_levels", cfg.oracle.soc_levels);
        r.count("workers", cfg.oracle.workers);
        std::string s;
        if (r.find("signal_policy")) {
            r.string("signal_policy", s);
            if (s == "expected-value") cfg.oracle.signal_policy = oracle::SignalPolicy::expected_value;
            else if (s == "fixed-scenario") cfg.oracle.signal_policy = oracle::SignalPolicy::fixed_scenario;
            else throw ConfigError(r.at("signal_policy") + ": expected 'expected-value' or 'fixed-scenario'");
        }
    });
    section(root, "data", [&](ObjectReader& r) {
        r.optional_path("train", cfg.data.train);
        r.optional_path("eval", cfg.data.eval);
        section(r, "schema", [&](ObjectReader& s) {
            s.string("timestamp", cfg.data.schema.timestamp);
            s.string("energy_price", cfg.data.schema.energy_price);
            s.string("raise_price", cfg.data.schema.raise_price);
            s.string("lower_price", cfg.data.schema.lower_price);
        });
    });
    section(root, "synth", [&](ObjectReader& r) {
        r.count("slots", cfg.synth.slots);
        section(r, "energy", [&](ObjectReader& s) { read_sinusoid(s, cfg.synth.model.energy); });
        section(r, "raise", [&](ObjectReader& s) { read_sinusoid(s, cfg.synth.model.raise); });
        section(r, "lower", [&](ObjectReader& s) { read_sinusoid(s, cfg.synth.model.lower); });
    });
    section(root, "train", [&](ObjectReader& r) { r.boolean("record_wall_time", cfg.record_wall_time); });
    root.finish();

    cfg.ppo.seed = cfg.seed;
    cfg.oracle.initial_energy = cfg.env.initial_energy;
    cfg.oracle.mode = cfg.env.mode;
    return cfg;
}

json to_json(const RunConfig& c) {
    const auto& b = c.battery;
    const auto& p = c.ppo;
    json j;
    j["seed"] = c.seed;
    j["out"] = c.out.string();
    j["mode"] = env::to_string(c.env.mode);
    j["battery"] = {{"capacity", b.capacity},
                    {"e_min", b.e_min},
                    {"e_max", b.e_max},
                    {"eta_c", b.eta_c},
                    {"eta_d", b.eta_d},
                    {"alpha", b.alpha},
                    {"power_cap", std::isfinite(b.power_cap) ? json(b.power_cap) : json(nullptr)},
                    {"signed_raise_degradation", b.signed_raise_degradation}};
    j["env"] = {{"episode_slots", c.env.episode_slots},
                {"carry_soc", c.env.carry_soc},
                {"initial_energy", c.env.initial_energy >= 0.0 ? json(c.env.initial_energy) : json(nullptr)},
                {"price_scale", c.env.price_scale},
                {"energy_price_offset", c.env.energy_price_offset},
                {"exploring_starts", c.env.exploring_starts}};
    j["ppo"] = {{"gamma", p.gamma},
                {"lambda", p.lambda},
                {"clip_epsilon", p.clip_epsilon},
                {"trajectories_per_iter", p.trajectories_per_iter},
                {"horizon", p.horizon},
                {"epochs_per_iter", p.epochs_per_iter},
                {"minibatch_size", p.minibatch_size},
                {"actor_lr", p.actor_lr},
                {"critic_lr", p.critic_lr},
                {"entropy_coef", p.entropy_coef},
                {"total_iters", p.total_iters},
                {"hidden", p.hidden},
                {"log_std_init", p.log_std_init},
                {"max_grad_norm", p.max_grad_norm},
                {"reward_scale", p.reward_scale},
                {"normalize_advantages", p.normalize_advantages},
                {"value_loss", value_loss_name(p.value_loss)},
                {"update_order", update_order_name(p.update_order)},
                {"checkpoint_every", p.checkpoint_every},
                {"workers", p.workers}};
    j["oracle"] = {{"soc_levels", c.oracle.soc_levels},
                   {"signal_policy", signal_policy_name(c.oracle.signal_policy)},
                   {"workers", c.oracle.workers}};
    j["data"] = {{"train", c.data.train ? json(c.data.train->string()) : json(nullptr)},
                 {"eval", c.data.eval ? json(c.data.eval->string()) : json(nullptr)},
                 {"schema",
                  {{"timestamp", c.data.schema.timestamp},
                   {"energy_price", c.data.schema.energy_price},
                   {"raise_price", c.data.schema.raise_price},
                   {"lower_price", c.data.schema.lower_price}}}};
    j["synth"] = {{"slots", c.synth.slots},
                  {"energy", sinusoid_json(c.synth.model.energy)},
                  {"raise", sinusoid_json(c.synth.model.raise)},
                  {"lower", sinusoid_json(c.synth.model.lower)}};
    j["train"] = {{"record_wall_time", c.record_wall_time}};
    return j;
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json tree;
    try {
        tree = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(tree, std::move(base));
}

void apply_environment(RunConfig& config) {
    const auto parse_u64 = [](const char* name, const char* text) {
        char* end = nullptr;
        const auto v = std::strtoull(text, &end, 10);
        if (end == text || *end != '\0') throw ConfigError(std::string(name) + ": expected an integer");
        return static_cast<std::uint64_t>(v);
    };
    if (const char* v = std::getenv("BESS_SEED")) {
        config.seed = parse_u64("BESS_SEED", v);
        config.ppo.seed = config.seed;
    }
    if (const char* v = std::getenv("BESS_OUT")) config.out = v;
    if (const char* v = std::getenv("BESS_TOTAL_ITERS")) config.ppo.total_iters = parse_u64("BESS_TOTAL_ITERS", v);
    if (const char* v = std::getenv("BESS_MODE")) {
        try {
            config.env.mode = env::market_mode_from_string(v);
            config.oracle.mode = config.env.mode;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("BESS_MODE: ") + e.what());
        }
    }
}

RunConfig smoke_config() {
    RunConfig c;
    c.ppo.hidden = {64, 64};
    c.ppo.total_iters = 4;
    c.ppo.trajectories_per_iter = 2;
    c.ppo.horizon = 288;
    c.ppo.epochs_per_iter = 2;
    c.synth.slots = 288 * 2 + 1;
    c.oracle.soc_levels = 81;
    return c;
}

}  // namespace bess::config
