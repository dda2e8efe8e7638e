#include "bess/market_env.hpp"

#include <algorithm>
#include <cmath>

namespace bess::env {

MarketState state_at(const PriceSeries& series, std::size_t slot, double energy) {
    const auto& r = series.at(slot);
    return {energy, r.energy_price, r.raise_price, r.lower_price};
}

std::string to_string(MarketMode mode) {
    switch (mode) {
        case MarketMode::joint: return "joint";
        case MarketMode::energy_only: return "energy-only";
        case MarketMode::fcas_only: return "fcas-only";
    }
    return "joint";
}

MarketMode market_mode_from_string(const std::string& name) {
    if (name == "joint") return MarketMode::joint;
    if (name == "energy-only" || name == "energy_only" || name == "energy") return MarketMode::energy_only;
    if (name == "fcas-only" || name == "fcas_only" || name == "fcas") return MarketMode::fcas_only;
    throw std::invalid_argument("unknown market mode '" + name + "'");
}

RawAction mask_action(RawAction raw, MarketMode mode) noexcept {
    if (mode == MarketMode::energy_only) raw[0] = 0.0;
    if (mode == MarketMode::fcas_only) raw[1] = 0.0;
    return raw;
}

namespace {

double scale_onto(double u, const battery::Interval& range) {
    return u >= 0.0 ? u * range.hi : -u * range.lo;
}

}  // namespace

Action project_action(RawAction raw, const MarketState& state, const BatteryParams& params) {
    const double raw_f = std::clamp(raw[0], -1.0, 1.0);
    const double raw_e = std::clamp(raw[1], -1.0, 1.0);
    const auto bounds = battery::feasible_action_bounds(battery::BatteryState{state.energy}, params);

    Action action;
    action.a_f = scale_onto(raw_f, bounds.fcas());
    if (action.a_f != 0.0 && raw_e != 0.0 && (action.a_f > 0.0) != (raw_e > 0.0)) return action;
    action.a_e = scale_onto(raw_e, bounds.energy_given(action.a_f));
    return action;
}

Bid action_to_bid(const Action& action) {
    if (!std::isfinite(action.a_f) || !std::isfinite(action.a_e)) throw InvalidAction("non-finite action");
    if (action.a_f * action.a_e < 0.0) throw InvalidAction("FCAS and energy legs have opposite signs");
    Bid bid;
    if (action.a_f > 0.0) bid.lower_cap = action.a_f;
    if (action.a_f < 0.0) bid.raise_cap = -action.a_f;
    if (action.a_e > 0.0) bid.charge = action.a_e;
    if (action.a_e < 0.0) bid.discharge = -action.a_e;
    bid.b_c = action.a_f > 0.0 || action.a_e > 0.0;
    bid.b_d = action.a_f < 0.0 || action.a_e < 0.0;
    return bid;
}

double reward(const MarketState& state, const Bid& bid, RegulationSignal signal, const BatteryParams& params) {
    const double energy = state.energy_price * (params.eta_d * bid.discharge - bid.charge / params.eta_c);
    const double fcas = state.raise_price * bid.raise_cap + state.lower_price * bid.lower_cap;
    return energy + fcas - battery::degradation_cost(battery::discharged_total(bid, signal, params), params);
}

Transition env_step(const MarketState& state, RawAction raw, const PriceSeries& series, std::size_t slot, Rng& rng,
                    const BatteryParams& params, MarketMode mode) {
    if (slot + 1 >= series.size()) throw EndOfSeries("env_step: no price record after slot " + std::to_string(slot));

    Transition tr;
    tr.state = state;
    tr.raw_action = raw;
    tr.action = project_action(mask_action(raw, mode), state, params);
    tr.bid = action_to_bid(tr.action);
    tr.signal = market::sample_regulation_signal(rng);
    tr.reward = reward(state, tr.bid, tr.signal, params);
    const auto next = battery::step(battery::BatteryState{state.energy}, tr.bid, tr.signal, params);
    tr.next_state = state_at(series, slot + 1, next.state.energy);
    tr.terminal = slot + 2 == series.size();
    return tr;
}

double episode_return(std::span<const Transition> transitions) {
    if (transitions.empty()) throw std::invalid_argument("episode_return: no transitions");
    double total = 0.0;
    for (const auto& t : transitions) total += t.reward;
    return total;
}

Accounts settle_accounts(std::span<const Transition> transitions, const BatteryParams& params) {
    Accounts acc;
    double discharged = 0.0;
    for (const auto& t : transitions) {
        const auto& b = t.bid;
        const double bd = b.b_d ? 1.0 : 0.0;
        const double bc = b.b_c ? 1.0 : 0.0;
        acc.energy_revenue += t.state.energy_price * (bd * params.eta_d * b.discharge - bc * b.charge / params.eta_c);
        acc.fcas_revenue += t.state.raise_price * b.raise_cap + t.state.lower_price * b.lower_cap;
        const double s = params.signed_raise_degradation ? t.signal.value() : std::max(t.signal.value(), 0.0);
        discharged += b.discharge + s * b.raise_cap;
    }
    acc.degradation_cost = params.alpha * discharged;
    return acc;
}

// ---------------------------------------------------------------------------

Observation encode_observation(const MarketState& state, const BatteryParams& params, double price_scale,
                               double energy_price_offset) {
    const double soc = 2.0 * (state.energy - params.e_min) / (params.e_max - params.e_min) - 1.0;
    return {soc, (state.energy_price - energy_price_offset) / price_scale, state.raise_price / price_scale,
            state.lower_price / price_scale};
}

MarketEnv::MarketEnv(std::shared_ptr<const PriceSeries> series, BatteryParams params, EnvConfig config,
                     std::uint64_t seed)
    : series_(std::move(series)), params_(params), config_(config), rng_(seed) {
    params_.validate();
    if (!series_ || series_->size() < 2) throw std::invalid_argument("MarketEnv: series needs at least 2 records");
    if (config_.episode_slots == 0) throw std::invalid_argument("MarketEnv: episode_slots must be positive");
    if (!(config_.price_scale > 0.0)) throw std::invalid_argument("MarketEnv: price_scale must be positive");
    if (!std::isfinite(config_.energy_price_offset))
        throw std::invalid_argument("MarketEnv: energy_price_offset must be finite");
    if (config_.initial_energy >= 0.0 &&
        (config_.initial_energy < params_.e_min || config_.initial_energy > params_.e_max))
        throw std::invalid_argument("MarketEnv: initial energy outside [e_min, e_max]");
    episode_length_ = std::min(config_.episode_slots, series_->size() - 1);
    num_episodes_ = (series_->size() - 1) / episode_length_;
    state_.energy = initial_energy();
}

double MarketEnv::initial_energy() const noexcept {
    return config_.initial_energy >= 0.0 ? config_.initial_energy : params_.midpoint();
}

MarketState MarketEnv::reset() {
    if (!config_.exploring_starts) {
        std::uniform_int_distribution<std::size_t> pick(0, num_episodes_ - 1);
        return reset(pick(rng_));
    }
    std::uniform_int_distribution<std::size_t> pick(0, series_->size() - 1 - episode_length_);
    std::uniform_real_distribution<double> soc(params_.e_min, params_.e_max);
    slot_ = pick(rng_);
    episode_end_ = slot_ + episode_length_;
    state_ = state_at(*series_, slot_, soc(rng_));
    done_ = false;
    started_ = true;
    return state_;
}

MarketState MarketEnv::reset(std::size_t episode) {
    if (episode >= num_episodes_) throw std::out_of_range("MarketEnv::reset: episode index out of range");
    slot_ = episode * episode_length_;
    episode_end_ = slot_ + episode_length_;
    const double energy = config_.carry_soc && started_ ? state_.energy : initial_energy();
    state_ = state_at(*series_, slot_, energy);
    done_ = false;
    started_ = true;
    return state_;
}

Transition MarketEnv::step(RawAction raw) {
    if (done_) throw EndOfSeries("MarketEnv::step called on a finished episode");
    auto tr = env_step(state_, raw, *series_, slot_, rng_, params_, config_.mode);
    ++slot_;
    tr.terminal = tr.terminal || slot_ == episode_end_;
    state_ = tr.next_state;
    done_ = tr.terminal;
    return tr;
}

}  // namespace bess::env
