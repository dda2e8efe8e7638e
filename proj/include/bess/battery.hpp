// Battery energy storage model: state-of-charge dynamics, degradation cost and
// the feasible action set implied by the SoC bounds.
#pragma once

#include <limits>
#include <stdexcept>

#include "bess/market_data.hpp"

namespace bess::battery {

class BatteryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class InvalidParams : public BatteryError {
public:
    using BatteryError::BatteryError;
};
class InvalidBid : public BatteryError {
public:
    using BatteryError::BatteryError;
};
class InfeasibleBid : public BatteryError {
public:
    using BatteryError::BatteryError;
};

struct BatteryParams {
    double capacity = 100.0;  // MWh
    double e_min = 10.0;      // MWh
    double e_max = 90.0;      // MWh
    double eta_c = 0.95;
    double eta_d = 0.95;
    double alpha = 1.0;  // $ per MWh discharged
    /// Per-slot cap on |FCAS| + |energy| commitment, MWh. Unlimited by default.
    double power_cap = std::numeric_limits<double>::infinity();
    /// Charge degradation on the signed S * raise_cap term instead of max(S, 0) * raise_cap.
    bool signed_raise_degradation = false;

    /// Throws InvalidParams.
    void validate() const;
    double midpoint() const noexcept { return 0.5 * (e_min + e_max); }
    /// Absolute slack accepted on SoC bound checks before clamping.
    double soc_tolerance() const noexcept { return 1e-9 * (capacity > 1.0 ? capacity : 1.0); }

    friend bool operator==(const BatteryParams&, const BatteryParams&) = default;
};

struct BatteryState {
    double energy = 0.0;  // MWh
    friend bool operator==(const BatteryState&, const BatteryState&) = default;
};

/// Settled quantities for one slot. All quantities are internal MWh.
struct Bid {
    double charge = 0.0;
    double discharge = 0.0;
    double raise_cap = 0.0;
    double lower_cap = 0.0;
    bool b_c = false;
    bool b_d = false;

    bool empty() const noexcept { return charge == 0 && discharge == 0 && raise_cap == 0 && lower_cap == 0; }
    friend bool operator==(const Bid&, const Bid&) = default;
};

/// Throws InvalidBid when any structural invariant of Bid is violated.
void validate_bid(const Bid& bid);

/// Energy leaving the cells in the slot: discharge plus the raise response.
/// Uses the signed signal when params.signed_raise_degradation is set.
double discharged_total(const Bid& bid, market::RegulationSignal signal, const BatteryParams& params);

struct StepResult {
    BatteryState state;
    double discharged_total = 0.0;
};

/// E' = E + b_c (charge + S- lower_cap) - b_d (discharge + S+ raise_cap).
/// Throws InvalidBid or InfeasibleBid.
StepResult step(BatteryState state, const Bid& bid, market::RegulationSignal signal, const BatteryParams& params);

double degradation_cost(double discharged_total, const BatteryParams& params);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double x) const noexcept { return x >= lo && x <= hi; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

/// Feasible FCAS commitment range and, for a chosen commitment, the energy
/// range that keeps the SoC inside [e_min, e_max] for every signal in [-1, 1].
/// Signs follow the action convention: FCAS + = Lower, - = Raise; energy + = charge.
class ActionBounds {
public:
    ActionBounds(double headroom_down, double headroom_up, double power_cap);

    const Interval& fcas() const noexcept { return fcas_; }
    /// Same-sign energy interval for the given FCAS commitment.
    Interval energy_given(double a_f) const noexcept;

private:
    double down_;
    double up_;
    double power_cap_;
    Interval fcas_;
};

ActionBounds feasible_action_bounds(BatteryState state, const BatteryParams& params);

}  // namespace bess::battery
