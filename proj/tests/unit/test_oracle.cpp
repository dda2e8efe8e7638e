#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "bess/oracle.hpp"

using namespace bess;
using namespace bess::oracle;
using battery::BatteryParams;

namespace {

market::PriceSeries prices(std::vector<std::array<double, 3>> rows) {
    std::vector<market::PriceRecord> recs;
    for (std::size_t i = 0; i < rows.size(); ++i)
        recs.push_back({market::Timestamp{} + static_cast<int>(i) * market::kSlotLength, rows[i][0], rows[i][1],
                        rows[i][2]});
    return market::PriceSeries(recs);
}

/// E[max(S, 0)] in closed form: with Z = X / 0.5 ~ N(0, 1), S = clip(Z, -1, 1),
/// E[S+] = (phi(0) - phi(1)) + P(Z > 1).
double closed_form_signal_magnitude() {
    const double phi0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const double phi1 = phi0 * std::exp(-0.5);
    return phi0 - phi1 + 0.5 * std::erfc(1.0 / std::numbers::sqrt2);
}

BatteryParams unit_battery() {
    BatteryParams p;
    p.capacity = 1;
    p.e_min = 0;
    p.e_max = 1;
    p.eta_c = p.eta_d = 1;
    p.alpha = 0;
    return p;
}

}  // namespace

TEST(ExpectedSignalMagnitude, MatchesClosedForm) {
    EXPECT_NEAR(expected_signal_magnitude(), closed_form_signal_magnitude(), 1e-10);
    EXPECT_NEAR(expected_signal_magnitude(), 0.31563, 1e-5);
}

TEST(ExpectedSignalMagnitude, MonteCarloAgrees) {
    market::Rng rng(3);
    double s = 0;
    constexpr int n = 400000;
    for (int i = 0; i < n; ++i) s += market::sample_regulation_signal(rng).raise_part();
    EXPECT_NEAR(s / n, expected_signal_magnitude(), 3e-3);
}

TEST(Solve, TwoSlotArbitrage) {
    const auto s = prices({{10, 0, 0}, {100, 0, 0}});
    OracleConfig cfg;
    cfg.soc_levels = 2;
    cfg.initial_energy = 0;
    const auto sol = solve(s, unit_battery(), cfg);
    EXPECT_NEAR(sol.objective, 90.0, 1e-12);
    EXPECT_DOUBLE_EQ(sol.schedule[0].charge, 1.0);
    EXPECT_DOUBLE_EQ(sol.schedule[1].discharge, 1.0);
    EXPECT_EQ(sol.soc, (std::vector<double>{0, 1, 0}));
}

TEST(Solve, ConstantPricesEarnNothingFromEmpty) {
    BatteryParams p;
    p.alpha = 0;
    const auto s = prices(std::vector<std::array<double, 3>>(12, {50, 0, 0}));
    OracleConfig cfg;
    cfg.soc_levels = 17;
    cfg.initial_energy = p.e_min;
    cfg.mode = env::MarketMode::energy_only;
    const auto sol = solve(s, p, cfg);
    EXPECT_DOUBLE_EQ(sol.objective, 0.0);
    for (const auto& b : sol.schedule) EXPECT_TRUE(b.empty());
}

TEST(Solve, FcasOnlyClosedForm) {
    const BatteryParams p;
    const auto s = prices({{0, 10, 0}, {0, 10, 0}, {0, 10, 0}});
    OracleConfig cfg;
    cfg.soc_levels = 641;
    cfg.initial_energy = p.e_max;
    const auto sol = solve(s, p, cfg);

    // Headroom-maximal raise each slot on the grid: f quanta of delta / g, f <= g * level.
    const double g = closed_form_signal_magnitude();
    const double delta = (p.e_max - p.e_min) / 640.0;
    long level = 640;
    double expected = 0.0;
    for (int t = 0; t < 3; ++t) {
        const long f = static_cast<long>(std::floor(g * static_cast<double>(level) + 1e-9));
        const double r = f * delta / g;
        expected += 10.0 * r - p.alpha * g * r;
        level -= f;
    }
    EXPECT_NEAR(sol.objective, expected, 1e-6);
    // Continuous optimum: R_t = 80 (1 - g)^t.
    const double continuous = 80.0 * (1 + (1 - g) + (1 - g) * (1 - g)) * (10.0 - g);
    EXPECT_NEAR(sol.objective / continuous, 1.0, 0.01);
    EXPECT_LE(sol.objective, continuous + 1e-9);
    for (const auto& b : sol.schedule) {
        EXPECT_GT(b.raise_cap, 0.0);
        EXPECT_EQ(b.charge + b.discharge + b.lower_cap, 0.0);
    }
}

TEST(Solve, ReplayReproducesObjective) {
    market::SynthModel m;
    m.energy = {50, 30, 24, 0, 8};
    m.raise = {6, 3, 12, 0, 1};
    m.lower = {4, 3, 12, 0, 1};
    const auto s = market::synth_price_series(4, 48, m);
    for (auto mode : {env::MarketMode::joint, env::MarketMode::energy_only, env::MarketMode::fcas_only}) {
        OracleConfig cfg;
        cfg.soc_levels = 41;
        cfg.mode = mode;
        const auto sol = solve(s, BatteryParams{}, cfg);
        const double replay = replay_objective(s, BatteryParams{}, sol);
        EXPECT_NEAR(replay, sol.objective, 1e-6 * std::max(1.0, std::abs(sol.objective)));
        EXPECT_EQ(sol.soc.size(), 49u);
        EXPECT_EQ(sol.value_table.size(), 49u * 41u);
        EXPECT_DOUBLE_EQ(sol.value(48, 7), 0.0);
    }
}

TEST(Solve, ModeRestrictionsRespected) {
    const auto s = market::synth_price_series(2, 24, market::SynthModel{{50, 30, 12}, {10, 5, 6}, {10, 5, 6}});
    OracleConfig cfg;
    cfg.soc_levels = 33;
    cfg.mode = env::MarketMode::energy_only;
    for (const auto& b : solve(s, {}, cfg).schedule) EXPECT_EQ(b.raise_cap + b.lower_cap, 0.0);
    cfg.mode = env::MarketMode::fcas_only;
    for (const auto& b : solve(s, {}, cfg).schedule) EXPECT_EQ(b.charge + b.discharge, 0.0);
}

TEST(Solve, JointDominatesRestricted) {
    const auto s = market::synth_price_series(2, 36, market::SynthModel{{50, 30, 12}, {10, 5, 6}, {10, 5, 6}});
    OracleConfig cfg;
    cfg.soc_levels = 33;
    const double joint = solve(s, {}, cfg).objective;
    cfg.mode = env::MarketMode::energy_only;
    const double energy = solve(s, {}, cfg).objective;
    cfg.mode = env::MarketMode::fcas_only;
    const double fcas = solve(s, {}, cfg).objective;
    EXPECT_GE(joint, energy);
    EXPECT_GE(joint, fcas);
}

TEST(Solve, RefinementIsMonotone) {
    const auto s = market::synth_price_series(8, 30, market::SynthModel{{50, 30, 10, 0, 5}, {8, 4, 7}, {8, 4, 5}});
    double prev = -1e300;
    std::size_t k = 5;
    for (int i = 0; i < 4; ++i, k = refine_levels(k)) {
        OracleConfig cfg;
        cfg.soc_levels = k;
        const double v = solve(s, {}, cfg).objective;
        EXPECT_GE(v, prev - 1e-9) << k;
        prev = v;
    }
    EXPECT_EQ(refine_levels(161), 321u);
}

TEST(Solve, WideningGridIsMonotone) {
    const auto s = market::synth_price_series(6, 6, market::SynthModel{{50, 30, 4}, {8, 4, 3}, {8, 4, 5}});
    OracleConfig cfg;
    cfg.soc_levels = 7;
    cfg.grid = {{0, 1}};
    double prev = solve(s, {}, cfg).objective;
    for (GridPoint extra : {GridPoint{0, -1}, GridPoint{-1, 0}, GridPoint{1, 1}, GridPoint{0, 3}}) {
        cfg.grid.push_back(extra);
        const double v = solve(s, {}, cfg).objective;
        EXPECT_GE(v, prev - 1e-12);
        prev = v;
    }
    cfg.grid.clear();
    EXPECT_GE(solve(s, {}, cfg).objective, prev - 1e-12);
}

TEST(Solve, FixedScenarioUsesRecordedSignals) {
    const BatteryParams p;
    const auto s = prices({{0, 10, 0}, {0, 10, 0}});
    OracleConfig cfg;
    cfg.soc_levels = 81;
    cfg.signal_policy = SignalPolicy::fixed_scenario;
    cfg.scenario = {0.5, -0.25};
    const auto sol = solve(s, p, cfg);
    EXPECT_EQ(sol.signals[0].value(), 0.5);
    EXPECT_NEAR(replay_objective(s, p, sol), sol.objective, 1e-9);
    cfg.scenario = {0.5};
    EXPECT_THROW(solve(s, p, cfg), InfeasibleConfig);
}

TEST(Solve, InfeasibleConfigs) {
    const auto s = prices({{10, 0, 0}});
    OracleConfig cfg;
    cfg.soc_levels = 1;
    EXPECT_THROW(solve(s, {}, cfg), InfeasibleConfig);
    cfg.soc_levels = 4;  // midpoint 50 is not on a 4-level grid over [10, 90]
    EXPECT_THROW(solve(s, {}, cfg), InfeasibleConfig);
    BatteryParams flat;
    flat.e_min = flat.e_max = 50;
    cfg.soc_levels = 5;
    EXPECT_THROW(solve(s, flat, cfg), InfeasibleConfig);
}

TEST(BruteForce, OneSlotIsDirectArgmax) {
    const auto s = prices({{60, 5, 2}});
    OracleConfig cfg;
    cfg.soc_levels = 5;
    cfg.grid = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};
    const auto bf = brute_force(s, {}, cfg);
    // Discharging 20 MWh at $60 dominates the other single actions.
    EXPECT_NEAR(bf.objective, 60 * 0.95 * 20 - 20, 1e-9);
    EXPECT_DOUBLE_EQ(bf.schedule[0].discharge, 20.0);
}

TEST(BruteForce, MatchesSolveOnRandomInstances) {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> slots(1, 6), quanta(-2, 2), gsize(1, 5), lv(1, 3);
    std::uniform_real_distribution<double> price(-20, 120), fprice(0, 20), u(0, 1);
    for (int trial = 0; trial < 60; ++trial) {
        std::vector<std::array<double, 3>> rows(static_cast<std::size_t>(slots(rng)));
        for (auto& r : rows) r = {price(rng), fprice(rng), fprice(rng)};
        const auto s = prices(rows);
        OracleConfig cfg;
        cfg.soc_levels = static_cast<std::size_t>(2 * lv(rng) + 1);
        const int n = gsize(rng);
        while (static_cast<int>(cfg.grid.size()) < n) cfg.grid.push_back({quanta(rng), quanta(rng)});
        BatteryParams p;
        p.alpha = 2 * u(rng);
        EXPECT_EQ(solve(s, p, cfg).objective, brute_force(s, p, cfg).objective) << trial;
    }
}

TEST(BruteForce, TooLarge) {
    OracleConfig cfg;
    cfg.soc_levels = 5;
    cfg.grid = {{0, 1}};
    EXPECT_THROW(brute_force(prices(std::vector<std::array<double, 3>>(7, {1, 1, 1})), {}, cfg), TooLarge);
    cfg.soc_levels = 9;
    EXPECT_THROW(brute_force(prices({{1, 1, 1}}), {}, cfg), TooLarge);
    cfg.soc_levels = 5;
    cfg.grid.assign(6, {0, 1});
    EXPECT_THROW(brute_force(prices({{1, 1, 1}}), {}, cfg), TooLarge);
}

TEST(WriteScheduleCsv, HeaderAndRows) {
    const auto s = prices({{10, 0, 0}, {100, 0, 0}});
    OracleConfig cfg;
    cfg.soc_levels = 2;
    cfg.initial_energy = 0;
    std::ostringstream out;
    write_schedule_csv(out, solve(s, unit_battery(), cfg));
    EXPECT_EQ(out.str(), "slot,charge,discharge,raise_cap,lower_cap,soc\n0,1,0,0,0,1\n1,0,1,0,0,0\n");
}
