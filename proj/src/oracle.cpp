#include "bess/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <thread>

namespace bess::oracle {

using battery::Bid;
using market::RegulationSignal;

double expected_signal_magnitude(double noise_std_hz, double band_hz) {
    if (!(noise_std_hz > 0.0) || !(band_hz > 0.0)) throw std::invalid_argument("expected_signal_magnitude");
    const auto density = [&](double x) {
        const double z = x / noise_std_hz;
        return std::exp(-0.5 * z * z) / (noise_std_hz * std::sqrt(2.0 * std::numbers::pi));
    };
    constexpr int n = 4000;  // even
    const double h = band_hz / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += w * (x / band_hz) * density(x);
    }
    const double inside = acc * h / 3.0;
    const double tail = 0.5 * std::erfc(band_hz / (noise_std_hz * std::numbers::sqrt2));
    return inside + tail;
}

std::size_t refine_levels(std::size_t soc_levels) { return 2 * soc_levels - 1; }

namespace {

struct Model {
    const market::PriceSeries* series = nullptr;
    battery::BatteryParams params;
    OracleConfig config;
    std::size_t levels = 0;
    std::size_t slots = 0;
    double delta = 0.0;  // MWh per level
    std::size_t start_level = 0;
    std::vector<double> raise_response, lower_response;  // per slot
    std::vector<double> scenario_signal;                 // per slot, fixed_scenario only

    double raise_quantum(std::size_t t) const {
        return raise_response[t] > 0.0 ? delta / raise_response[t] : delta;
    }
    double lower_quantum(std::size_t t) const {
        return lower_response[t] > 0.0 ? delta / lower_response[t] : delta;
    }
    /// SoC levels moved by one FCAS quantum (0 when the signal never triggers that side).
    int raise_shift(std::size_t t) const { return raise_response[t] > 0.0 ? 1 : 0; }
    int lower_shift(std::size_t t) const { return lower_response[t] > 0.0 ? 1 : 0; }

    RegulationSignal response_signal(std::size_t t, const Bid& bid) const {
        if (config.signal_policy == SignalPolicy::fixed_scenario) return RegulationSignal(scenario_signal[t]);
        if (bid.raise_cap > 0.0) return RegulationSignal(raise_response[t]);
        if (bid.lower_cap > 0.0) return RegulationSignal(-lower_response[t]);
        return RegulationSignal(0.0);
    }

    Bid bid_for(std::size_t t, GridPoint p) const {
        env::Action a;
        a.a_f = p.fcas > 0 ? p.fcas * lower_quantum(t) : p.fcas * raise_quantum(t);
        a.a_e = p.energy * delta;
        return env::action_to_bid(a);
    }

    bool allowed_by_mode(GridPoint p) const {
        if (config.mode == env::MarketMode::energy_only && p.fcas != 0) return false;
        if (config.mode == env::MarketMode::fcas_only && p.energy != 0) return false;
        return true;
    }
};

Model make_model(const market::PriceSeries& series, const battery::BatteryParams& params,
                 const OracleConfig& config) {
    try {
        params.validate();
    } catch (const battery::InvalidParams& e) {
        throw InfeasibleConfig(e.what());
    }
    if (config.soc_levels < 2) throw InfeasibleConfig("soc_levels must be at least 2");
    if (config.soc_levels > 100001) throw InfeasibleConfig("soc_levels unreasonably large");

    Model m;
    m.series = &series;
    m.params = params;
    m.config = config;
    m.levels = config.soc_levels;
    m.slots = series.size();
    m.delta = (params.e_max - params.e_min) / static_cast<double>(m.levels - 1);

    const double e0 = config.initial_energy >= 0.0 ? config.initial_energy : params.midpoint();
    if (e0 < params.e_min || e0 > params.e_max) throw InfeasibleConfig("initial energy outside [e_min, e_max]");
    const double pos = (e0 - params.e_min) / m.delta;
    const double rounded = std::round(pos);
    if (std::abs(pos - rounded) > 1e-9) throw InfeasibleConfig("initial energy does not lie on a SoC level");
    m.start_level = static_cast<std::size_t>(rounded);

    m.raise_response.resize(m.slots);
    m.lower_response.resize(m.slots);
    if (config.signal_policy == SignalPolicy::expected_value) {
        const double g = expected_signal_magnitude();
        std::fill(m.raise_response.begin(), m.raise_response.end(), g);
        std::fill(m.lower_response.begin(), m.lower_response.end(), g);
    } else {
        if (config.scenario.size() < m.slots) throw InfeasibleConfig("signal scenario shorter than the series");
        m.scenario_signal.assign(config.scenario.begin(), config.scenario.begin() + static_cast<std::ptrdiff_t>(m.slots));
        for (std::size_t t = 0; t < m.slots; ++t) {
            const double s = m.scenario_signal[t];
            if (!(s >= -1.0 && s <= 1.0)) throw InfeasibleConfig("scenario signal outside [-1, 1]");
            m.raise_response[t] = std::max(s, 0.0);
            m.lower_response[t] = std::max(-s, 0.0);
        }
    }
    return m;
}

struct Move {
    GridPoint point;
    std::size_t next = 0;
    double reward = 0.0;
};

constexpr double kIndexTolerance = 1e-9;

/// Resolves a grid point at (slot, level) into a feasible move, or returns false.
bool make_move(const Model& m, std::size_t t, std::size_t level, GridPoint p, Move& out) {
    if (!m.allowed_by_mode(p)) return false;
    if (static_cast<long long>(p.fcas) * p.energy < 0) return false;
    const double below = static_cast<double>(level);                      // levels above e_min
    const double above = static_cast<double>(m.levels - 1 - level);       // levels below e_max
    const int ke = std::abs(p.energy);
    const int mf = std::abs(p.fcas);
    long long next = static_cast<long long>(level);
    double fcas_mwh = 0.0;
    if (p.fcas < 0 || (p.fcas == 0 && p.energy < 0)) {
        fcas_mwh = mf * m.raise_quantum(t);
        if (mf * m.raise_quantum(t) / m.delta + ke > below + kIndexTolerance) return false;
        next -= ke + static_cast<long long>(mf) * m.raise_shift(t);
    } else {
        fcas_mwh = mf * m.lower_quantum(t);
        if (mf * m.lower_quantum(t) / m.delta + ke > above + kIndexTolerance) return false;
        next += ke + static_cast<long long>(mf) * m.lower_shift(t);
    }
    if (fcas_mwh + ke * m.delta > m.params.power_cap * (1.0 + kIndexTolerance)) return false;
    if (next < 0 || next >= static_cast<long long>(m.levels)) return false;

    const Bid bid = m.bid_for(t, p);
    const auto state = env::state_at(*m.series, t, m.params.e_min + static_cast<double>(level) * m.delta);
    out.point = p;
    out.next = static_cast<std::size_t>(next);
    out.reward = env::reward(state, bid, m.response_signal(t, bid), m.params);
    return true;
}

template <typename Fn>
void for_each_move(const Model& m, std::size_t t, std::size_t level, Fn&& fn) {
    Move mv;
    if (make_move(m, t, level, {0, 0}, mv)) fn(mv);
    if (!m.config.grid.empty()) {
        for (const auto& p : m.config.grid)
            if (!(p.fcas == 0 && p.energy == 0) && make_move(m, t, level, p, mv)) fn(mv);
        return;
    }
    const int span = static_cast<int>(m.levels - 1);
    // Pure energy moves.
    for (int k = -span; k <= span; ++k)
        if (k != 0 && make_move(m, t, level, {0, k}, mv)) fn(mv);
    // FCAS moves with a same-signed energy leg; quanta grow monotonically so stop at the first infeasible.
    for (const int dir : {-1, 1}) {
        for (int f = 1; f <= span * 4 + 4; ++f) {
            if (!make_move(m, t, level, {dir * f, 0}, mv)) break;
            fn(mv);
            for (int k = 1; k <= span; ++k) {
                if (!make_move(m, t, level, {dir * f, dir * k}, mv)) break;
                fn(mv);
            }
        }
    }
}

template <typename Fn>
void parallel_levels(std::size_t levels, std::size_t workers, Fn&& fn) {
    if (workers <= 1 || levels < 64) {
        for (std::size_t i = 0; i < levels; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < levels; i += workers) fn(i);
        });
}

OracleSolution assemble(const Model& m, const std::vector<GridPoint>& plan) {
    OracleSolution sol;
    sol.soc_levels = m.levels;
    std::size_t level = m.start_level;
    sol.soc.push_back(m.params.e_min + static_cast<double>(level) * m.delta);
    for (std::size_t t = 0; t < m.slots; ++t) {
        Move mv;
        if (!make_move(m, t, level, plan[t], mv)) throw std::logic_error("oracle plan is infeasible");
        const Bid bid = m.bid_for(t, plan[t]);
        sol.schedule.push_back(bid);
        sol.signals.push_back(m.response_signal(t, bid));
        sol.slot_rewards.push_back(mv.reward);
        level = mv.next;
        sol.soc.push_back(m.params.e_min + static_cast<double>(level) * m.delta);
    }
    return sol;
}

}  // namespace

OracleSolution solve(const market::PriceSeries& series, const battery::BatteryParams& params,
                     const OracleConfig& config) {
    const Model m = make_model(series, params, config);
    const std::size_t K = m.levels;
    std::vector<double> value((m.slots + 1) * K, 0.0);
    std::vector<GridPoint> best((m.slots) * K);

    for (std::size_t t = m.slots; t-- > 0;) {
        const double* next_row = value.data() + (t + 1) * K;
        double* row = value.data() + t * K;
        parallel_levels(K, config.workers, [&](std::size_t i) {
            double best_value = -std::numeric_limits<double>::infinity();
            GridPoint best_point{};
            for_each_move(m, t, i, [&](const Move& mv) {
                const double v = mv.reward + next_row[mv.next];
                if (v > best_value) {
                    best_value = v;
                    best_point = mv.point;
                }
            });
            row[i] = best_value;
            best[t * K + i] = best_point;
        });
    }

    std::vector<GridPoint> plan;
    std::size_t level = m.start_level;
    for (std::size_t t = 0; t < m.slots; ++t) {
        plan.push_back(best[t * K + level]);
        Move mv;
        make_move(m, t, level, plan.back(), mv);
        level = mv.next;
    }
    auto sol = assemble(m, plan);
    sol.objective = value[m.start_level];
    sol.value_table = std::move(value);
    return sol;
}

OracleSolution brute_force(const market::PriceSeries& series, const battery::BatteryParams& params,
                           const OracleConfig& config) {
    if (series.size() > kBruteForceMaxSlots) throw TooLarge("brute_force: too many slots");
    if (config.soc_levels > kBruteForceMaxLevels) throw TooLarge("brute_force: too many SoC levels");
    if (config.grid.empty() || config.grid.size() > kBruteForceMaxGrid)
        throw TooLarge("brute_force: needs an explicit action grid of at most 5 points");
    const Model m = make_model(series, params, config);

    std::vector<GridPoint> options{{0, 0}};
    options.insert(options.end(), config.grid.begin(), config.grid.end());
    const std::size_t T = m.slots;
    const double tol = params.soc_tolerance();

    std::vector<std::size_t> odo(T, 0);
    std::vector<double> rewards(T);
    double best_value = -std::numeric_limits<double>::infinity();
    std::vector<GridPoint> best_plan;

    for (;;) {
        // Simulate the sequence in continuous MWh through the battery and reward models.
        bool feasible = true;
        battery::BatteryState state{m.params.e_min + static_cast<double>(m.start_level) * m.delta};
        for (std::size_t t = 0; t < T && feasible; ++t) {
            const GridPoint p = options[odo[t]];
            if (!m.allowed_by_mode(p) || static_cast<long long>(p.fcas) * p.energy < 0) {
                feasible = false;
                break;
            }
            const Bid bid = m.bid_for(t, p);
            const auto bounds = battery::feasible_action_bounds(state, m.params);
            const double a_f = bid.lower_cap - bid.raise_cap;
            const double a_e = bid.charge - bid.discharge;
            const auto e_range = bounds.energy_given(a_f);
            if (a_f < bounds.fcas().lo - tol || a_f > bounds.fcas().hi + tol || a_e < e_range.lo - tol ||
                a_e > e_range.hi + tol) {
                feasible = false;
                break;
            }
            const auto signal = m.response_signal(t, bid);
            rewards[t] = env::reward(env::state_at(series, t, state.energy), bid, signal, m.params);
            try {
                state = battery::step(state, bid, signal, m.params).state;
            } catch (const battery::InfeasibleBid&) {
                feasible = false;
            }
        }
        if (feasible) {
            double total = 0.0;
            for (std::size_t t = T; t-- > 0;) total = rewards[t] + total;
            if (total > best_value) {
                best_value = total;
                best_plan.clear();
                for (std::size_t t = 0; t < T; ++t) best_plan.push_back(options[odo[t]]);
            }
        }
        std::size_t pos = 0;
        while (pos < T && ++odo[pos] == options.size()) odo[pos++] = 0;
        if (pos == T) break;
    }

    auto sol = assemble(m, best_plan);
    sol.objective = best_value;
    return sol;
}

double replay_objective(const market::PriceSeries& series, const battery::BatteryParams& params,
                        const OracleSolution& solution) {
    if (solution.schedule.size() > series.size() || solution.soc.empty())
        throw std::invalid_argument("replay_objective: schedule does not fit the series");
    battery::BatteryState state{solution.soc.front()};
    double total = 0.0;
    for (std::size_t t = 0; t < solution.schedule.size(); ++t) {
        const auto& bid = solution.schedule[t];
        total += env::reward(env::state_at(series, t, state.energy), bid, solution.signals[t], params);
        state = battery::step(state, bid, solution.signals[t], params).state;
    }
    return total;
}

void write_schedule_csv(std::ostream& out, const OracleSolution& solution) {
    out << "slot,charge,discharge,raise_cap,lower_cap,soc\n";
    char buf[256];
    for (std::size_t t = 0; t < solution.schedule.size(); ++t) {
        const auto& b = solution.schedule[t];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", t, b.charge, b.discharge, b.raise_cap,
                      b.lower_cap, solution.soc[t + 1]);
        out << buf;
    }
}

}  // namespace bess::oracle
