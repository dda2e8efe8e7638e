#include "bess/battery.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bess::battery {

void BatteryParams::validate() const {
    const auto bad = [](const std::string& what) { throw InvalidParams("battery: " + what); };
    if (!std::isfinite(capacity) || !std::isfinite(e_min) || !std::isfinite(e_max) || !std::isfinite(alpha))
        bad("non-finite parameter");
    if (!(0.0 <= e_min && e_min < e_max && e_max <= capacity)) bad("require 0 <= e_min < e_max <= capacity");
    if (!(eta_c > 0.0 && eta_c <= 1.0)) bad("eta_c must be in (0, 1]");
    if (!(eta_d > 0.0 && eta_d <= 1.0)) bad("eta_d must be in (0, 1]");
    if (!(alpha >= 0.0)) bad("alpha must be non-negative");
    if (!(power_cap > 0.0)) bad("power_cap must be positive");
}

void validate_bid(const Bid& bid) {
    const auto bad = [](const char* what) { throw InvalidBid(what); };
    for (const double q : {bid.charge, bid.discharge, bid.raise_cap, bid.lower_cap})
        if (!std::isfinite(q) || q < 0.0) bad("bid quantities must be finite and non-negative");
    if (bid.b_c && bid.b_d) bad("cannot charge and discharge in the same slot (b_c + b_d > 1)");
    if ((bid.charge > 0.0 || bid.lower_cap > 0.0) && !bid.b_c) bad("charge or lower capacity requires b_c = 1");
    if ((bid.discharge > 0.0 || bid.raise_cap > 0.0) && !bid.b_d) bad("discharge or raise capacity requires b_d = 1");
    if (bid.charge > 0.0 && bid.discharge > 0.0) bad("both charge and discharge positive");
    if (bid.raise_cap > 0.0 && bid.lower_cap > 0.0) bad("both raise and lower capacity positive");
}

double discharged_total(const Bid& bid, market::RegulationSignal signal, const BatteryParams& params) {
    if (!bid.b_d) return 0.0;
    const double response = params.signed_raise_degradation ? signal.value() : signal.raise_part();
    return bid.discharge + response * bid.raise_cap;
}

StepResult step(BatteryState state, const Bid& bid, market::RegulationSignal signal, const BatteryParams& params) {
    validate_bid(bid);
    double energy = state.energy;
    if (bid.b_c) energy += bid.charge + signal.lower_part() * bid.lower_cap;
    if (bid.b_d) energy -= bid.discharge + signal.raise_part() * bid.raise_cap;

    const double tol = params.soc_tolerance();
    if (energy < params.e_min - tol || energy > params.e_max + tol)
        throw InfeasibleBid("SoC " + std::to_string(energy) + " MWh outside [" + std::to_string(params.e_min) + ", " +
                            std::to_string(params.e_max) + "]");
    energy = std::clamp(energy, params.e_min, params.e_max);
    return {BatteryState{energy}, discharged_total(bid, signal, params)};
}

double degradation_cost(double discharged_total, const BatteryParams& params) {
    if (discharged_total < 0.0 && !params.signed_raise_degradation)
        throw std::invalid_argument("degradation_cost: discharged energy must be non-negative");
    return params.alpha * discharged_total;
}

ActionBounds::ActionBounds(double headroom_down, double headroom_up, double power_cap)
    : down_(std::max(headroom_down, 0.0)),
      up_(std::max(headroom_up, 0.0)),
      power_cap_(power_cap),
      fcas_{-std::min(down_, power_cap_), std::min(up_, power_cap_)} {}

Interval ActionBounds::energy_given(double a_f) const noexcept {
    const double used = std::abs(a_f);
    const double cap_left = std::max(power_cap_ - used, 0.0);
    if (a_f < 0.0) return {-std::min(std::max(down_ - used, 0.0), cap_left), 0.0};
    if (a_f > 0.0) return {0.0, std::min(std::max(up_ - used, 0.0), cap_left)};
    return {-std::min(down_, power_cap_), std::min(up_, power_cap_)};
}

ActionBounds feasible_action_bounds(BatteryState state, const BatteryParams& params) {
    return ActionBounds(state.energy - params.e_min, params.e_max - state.energy, params.power_cap);
}

}  // namespace bess::battery
