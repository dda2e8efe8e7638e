// Bidding MDP over a price series: observation, action projection, reward and
// episodic stepping.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bess/battery.hpp"
#include "bess/market_data.hpp"

namespace bess::env {

using battery::BatteryParams;
using battery::Bid;
using market::PriceSeries;
using market::RegulationSignal;
using market::Rng;

class InvalidAction : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};
class EndOfSeries : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

struct MarketState {
    double energy = 0.0;
    double energy_price = 0.0;
    double raise_price = 0.0;
    double lower_price = 0.0;
    friend bool operator==(const MarketState&, const MarketState&) = default;
};

MarketState state_at(const PriceSeries& series, std::size_t slot, double energy);

/// Signed MWh quantities: a_f > 0 offers Lower, < 0 offers Raise; a_e > 0 charges.
struct Action {
    double a_f = 0.0;
    double a_e = 0.0;
    friend bool operator==(const Action&, const Action&) = default;
};

/// Policy output before projection: index 0 drives the FCAS leg, 1 the energy leg.
using RawAction = std::array<double, 2>;

enum class MarketMode { joint, energy_only, fcas_only };
std::string to_string(MarketMode mode);
MarketMode market_mode_from_string(const std::string& name);

/// Zeroes the leg a restricted market mode does not trade.
RawAction mask_action(RawAction raw, MarketMode mode) noexcept;

/// Scales raw components (clipped to [-1, 1]) onto the feasible bounds. An
/// energy leg whose sign disagrees with a non-zero FCAS leg is dropped.
Action project_action(RawAction raw, const MarketState& state, const BatteryParams& params);

/// Throws InvalidAction when a_f * a_e < 0.
Bid action_to_bid(const Action& action);

/// Per-slot profit: energy settlement on metered quantities, FCAS capacity
/// payments, minus degradation.
double reward(const MarketState& state, const Bid& bid, RegulationSignal signal, const BatteryParams& params);

struct Transition {
    MarketState state;
    Action action;
    RawAction raw_action{};
    Bid bid;
    RegulationSignal signal;
    double log_prob = 0.0;
    double reward = 0.0;
    double value_estimate = 0.0;
    MarketState next_state;
    bool terminal = false;
};

/// One MDP step at `slot`. `state` carries the slot's prices. The transition is
/// terminal when slot + 1 is the last record. Throws EndOfSeries.
Transition env_step(const MarketState& state, RawAction raw, const PriceSeries& series, std::size_t slot, Rng& rng,
                    const BatteryParams& params, MarketMode mode = MarketMode::joint);

double episode_return(std::span<const Transition> transitions);

/// Revenue components accumulated directly from settled bids and signals.
struct Accounts {
    double energy_revenue = 0.0;
    double fcas_revenue = 0.0;
    double degradation_cost = 0.0;
    double total() const noexcept { return energy_revenue + fcas_revenue - degradation_cost; }
};

Accounts settle_accounts(std::span<const Transition> transitions, const BatteryParams& params);

// ---------------------------------------------------------------------------

struct EnvConfig {
    std::size_t episode_slots = 288;
    bool carry_soc = false;
    /// Initial SoC in MWh; negative selects the midpoint of [e_min, e_max].
    double initial_energy = -1.0;
    MarketMode mode = MarketMode::joint;
    /// Prices are divided by this before being fed to networks.
    double price_scale = 100.0;
    /// Subtracted from the energy price before scaling.
    double energy_price_offset = 0.0;
    /// Randomly drawn episodes (reset() without an index) start at any slot
    /// with a uniform SoC instead of a window boundary at the initial SoC.
    bool exploring_starts = false;
};

inline constexpr std::size_t kObservationSize = 4;
using Observation = std::array<double, kObservationSize>;

/// SoC mapped to [-1, 1]; energy price shifted by `energy_price_offset`, then
/// all prices divided by `price_scale`.
Observation encode_observation(const MarketState& state, const BatteryParams& params, double price_scale,
                               double energy_price_offset = 0.0);

/// Episodic environment over fixed windows of a shared price series.
class MarketEnv {
public:
    MarketEnv(std::shared_ptr<const PriceSeries> series, BatteryParams params, EnvConfig config, std::uint64_t seed);

    std::size_t num_episodes() const noexcept { return num_episodes_; }
    std::size_t episode_length() const noexcept { return episode_length_; }

    /// Starts the given episode window, or a uniformly drawn one (see
    /// EnvConfig::exploring_starts).
    MarketState reset();
    MarketState reset(std::size_t episode);
    Transition step(RawAction raw);

    const MarketState& state() const noexcept { return state_; }
    bool done() const noexcept { return done_; }
    double initial_energy() const noexcept;
    Observation observe() const { return encode_observation(state_, params_, config_.price_scale, config_.energy_price_offset);
    }

    const BatteryParams& params() const noexcept { return params_; }
    const EnvConfig& config() const noexcept { return config_; }
    const PriceSeries& series() const noexcept { return *series_; }

private:
    std::shared_ptr<const PriceSeries> series_;
    BatteryParams params_;
    EnvConfig config_;
    Rng rng_;
    std::size_t episode_length_ = 0;
    std::size_t num_episodes_ = 0;
    std::size_t slot_ = 0;
    std::size_t episode_end_ = 0;
    bool done_ = true;
    bool started_ = false;
    MarketState state_;
};

}  // namespace bess::env
