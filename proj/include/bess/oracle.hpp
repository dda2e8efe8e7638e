// Perfect-foresight bidding optimum by backward induction over a discretized
// state of charge, plus an exhaustive enumerator used to check it.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "bess/battery.hpp"
#include "bess/market_data.hpp"
#include "bess/market_env.hpp"

namespace bess::oracle {

class InfeasibleConfig : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};
class TooLarge : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class SignalPolicy { expected_value, fixed_scenario };

/// One action-grid point in quanta. fcas > 0 offers Lower, < 0 Raise;
/// energy > 0 charges. Energy quanta are one SoC level; FCAS quanta are sized
/// so the expected (or scenario) regulation response moves exactly one level.
struct GridPoint {
    int fcas = 0;
    int energy = 0;
    friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

struct OracleConfig {
    std::size_t soc_levels = 161;
    SignalPolicy signal_policy = SignalPolicy::expected_value;
    /// Signal per slot for fixed_scenario.
    std::vector<double> scenario;
    /// Explicit action grid; empty means every integer point the bounds allow.
    /// The no-op is always available.
    std::vector<GridPoint> grid;
    /// Restricts the grid to one market leg.
    env::MarketMode mode = env::MarketMode::joint;
    /// Starting SoC in MWh; negative selects the midpoint. Must lie on a level.
    double initial_energy = -1.0;
    std::size_t workers = 1;
};

struct OracleSolution {
    std::vector<battery::Bid> schedule;
    std::vector<market::RegulationSignal> signals;  // response signal applied per slot
    std::vector<double> soc;                        // slots + 1 entries
    std::vector<double> slot_rewards;
    double objective = 0.0;
    std::size_t soc_levels = 0;
    /// (slots + 1) x soc_levels, row-major; row t holds the optimal value-to-go from slot t.
    std::vector<double> value_table;

    double value(std::size_t slot, std::size_t level) const { return value_table[slot * soc_levels + level]; }
};

/// E[max(S, 0)] (= E[max(-S, 0)]) for the clipped Gaussian regulation signal,
/// by composite Simpson integration plus the clipped tail mass.
double expected_signal_magnitude(double noise_std_hz = market::kFrequencyNoiseStdHz,
                                 double band_hz = market::kFrequencyBandHz);

/// Throws InfeasibleConfig.
OracleSolution solve(const market::PriceSeries& series, const battery::BatteryParams& params,
                     const OracleConfig& config = {});

inline constexpr std::size_t kBruteForceMaxSlots = 6;
inline constexpr std::size_t kBruteForceMaxLevels = 7;
inline constexpr std::size_t kBruteForceMaxGrid = 5;

/// Enumerates every feasible action sequence over `config.grid`. Throws TooLarge
/// outside the bounds above and InfeasibleConfig like solve().
OracleSolution brute_force(const market::PriceSeries& series, const battery::BatteryParams& params,
                           const OracleConfig& config);

/// Replays a schedule through the battery and reward models.
double replay_objective(const market::PriceSeries& series, const battery::BatteryParams& params,
                        const OracleSolution& solution);

/// Halves the SoC level spacing (K levels become 2K - 1), keeping every old level on the grid.
std::size_t refine_levels(std::size_t soc_levels);

void write_schedule_csv(std::ostream& out, const OracleSolution& solution);

}  // namespace bess::oracle
