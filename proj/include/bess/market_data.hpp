// Price series ingestion, synthetic price generation and regulation signals.
#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bess::market {

using Timestamp = std::chrono::sys_seconds;

/// Settlement interval of the spot and regulation markets.
inline constexpr std::chrono::seconds kSlotLength{300};

struct PriceRecord {
    Timestamp timestamp{};
    double energy_price = 0.0;  // $/MWh
    double raise_price = 0.0;   // $/MW per slot
    double lower_price = 0.0;   // $/MW per slot

    friend bool operator==(const PriceRecord&, const PriceRecord&) = default;
};

// ---------------------------------------------------------------------------
// Errors

class MarketDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MissingColumn : public MarketDataError {
public:
    explicit MissingColumn(std::string column);
    const std::string& column() const noexcept { return column_; }

private:
    std::string column_;
};

class UnparsableRow : public MarketDataError {
public:
    UnparsableRow(std::size_t line, const std::string& detail);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class NonUniformSpacing : public MarketDataError {
public:
    /// `expected` is the timestamp that should have followed `previous`.
    NonUniformSpacing(Timestamp previous, Timestamp found, Timestamp expected);
    Timestamp expected() const noexcept { return expected_; }
    Timestamp found() const noexcept { return found_; }

private:
    Timestamp found_;
    Timestamp expected_;
};

class EmptySeries : public MarketDataError {
public:
    EmptySeries() : MarketDataError("price series is empty") {}
};

class InvalidModel : public MarketDataError {
public:
    using MarketDataError::MarketDataError;
};

// ---------------------------------------------------------------------------

/// Immutable, non-empty, uniformly spaced 5-minute price series.
class PriceSeries {
public:
    /// Validates ordering and spacing; throws EmptySeries / NonUniformSpacing.
    explicit PriceSeries(std::vector<PriceRecord> records, std::string region = "SYN");

    std::size_t size() const noexcept { return records_.size(); }
    const PriceRecord& operator[](std::size_t i) const { return records_[i]; }
    const PriceRecord& at(std::size_t i) const { return records_.at(i); }
    std::span<const PriceRecord> records() const noexcept { return records_; }
    const std::string& region() const noexcept { return region_; }

    /// Records [first, first + count). Throws std::out_of_range.
    PriceSeries slice(std::size_t first, std::size_t count) const;

    friend bool operator==(const PriceSeries&, const PriceSeries&) = default;

private:
    std::vector<PriceRecord> records_;
    std::string region_;
};

/// Column names to read from a CSV header. Extra columns are ignored.
struct CsvSchema {
    std::string timestamp = "timestamp";
    std::string energy_price = "energy_price";
    std::string raise_price = "raise_price";
    std::string lower_price = "lower_price";
};

/// Parses an ISO-8601 UTC timestamp: `YYYY-MM-DDTHH:MM[:SS][Z]`, a space or
/// 'T' separator, '-' or '/' date separators. Returns false on failure.
bool parse_timestamp(std::string_view text, Timestamp& out);
std::string format_timestamp(Timestamp ts);

PriceSeries load_price_csv(const std::filesystem::path& path, const CsvSchema& schema = {},
                           std::string region = "CSV");
PriceSeries parse_price_csv(std::istream& in, const CsvSchema& schema = {},
                            std::string region = "CSV");

void write_price_csv(const std::filesystem::path& path, const PriceSeries& series);
void write_price_csv(std::ostream& out, const PriceSeries& series);

// ---------------------------------------------------------------------------
// Synthetic prices

/// One price component: base + amplitude * sin(2*pi*(slot + phase) / period),
/// plus optional Gaussian noise, then multiplied by `spike_magnitude` with
/// probability `spike_probability`.
struct SinusoidModel {
    double base = 50.0;
    double amplitude = 0.0;
    double period_slots = 288.0;
    double phase_slots = 0.0;
    double noise_std = 0.0;
    double spike_probability = 0.0;
    double spike_magnitude = 1.0;
};

struct SynthModel {
    SinusoidModel energy{50.0, 30.0, 288.0};
    SinusoidModel raise{0.0, 0.0, 288.0};
    SinusoidModel lower{0.0, 0.0, 288.0};
    Timestamp start{};  // defaults to the Unix epoch
    std::string region = "SYN";
};

/// Deterministic in (seed, slots, model). Throws InvalidModel.
PriceSeries synth_price_series(std::uint64_t seed, std::size_t slots, const SynthModel& model);

// ---------------------------------------------------------------------------
// Regulation signal

/// Normalized regulation instruction in [-1, 1]; positive requests Raise.
class RegulationSignal {
public:
    constexpr RegulationSignal() = default;
    /// Throws std::invalid_argument outside [-1, 1].
    explicit RegulationSignal(double value);

    constexpr double value() const noexcept { return value_; }
    constexpr double raise_part() const noexcept { return value_ > 0.0 ? value_ : 0.0; }
    constexpr double lower_part() const noexcept { return value_ < 0.0 ? -value_ : 0.0; }

    friend bool operator==(const RegulationSignal&, const RegulationSignal&) = default;

private:
    double value_ = 0.0;
};

/// Frequency-deviation noise std-dev and the half-width of the band it is clipped to.
inline constexpr double kFrequencyNoiseStdHz = 0.5;
inline constexpr double kFrequencyBandHz = 0.5;

/// Clips a deviation in Hz to the band and normalizes to [-1, 1].
RegulationSignal signal_from_deviation(double deviation_hz);

using Rng = std::mt19937_64;

RegulationSignal sample_regulation_signal(Rng& rng);

}  // namespace bess::market
