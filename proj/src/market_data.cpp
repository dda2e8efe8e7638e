#include "bess/market_data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>

namespace bess::market {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

std::optional<double> parse_number(std::string_view s) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end || !std::isfinite(v)) return std::nullopt;
    return v;
}

bool parse_uint(std::string_view s, std::size_t& pos, std::size_t digits, int& out) {
    if (pos + digits > s.size()) return false;
    int v = 0;
    for (std::size_t i = 0; i < digits; ++i) {
        const char c = s[pos + i];
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    pos += digits;
    out = v;
    return true;
}

}  // namespace

MissingColumn::MissingColumn(std::string column)
    : MarketDataError("missing column '" + column + "'"), column_(std::move(column)) {}

UnparsableRow::UnparsableRow(std::size_t line, const std::string& detail)
    : MarketDataError("unparsable row at line " + std::to_string(line) + ": " + detail), line_(line) {}

NonUniformSpacing::NonUniformSpacing(Timestamp previous, Timestamp found, Timestamp expected)
    : MarketDataError(found == previous
                          ? "duplicate timestamp " + format_timestamp(found)
                          : "missing timestamp " + format_timestamp(expected) + " (series jumps from " +
                                format_timestamp(previous) + " to " + format_timestamp(found) + ")"),
      found_(found),
      expected_(expected) {}

// ---------------------------------------------------------------------------

PriceSeries::PriceSeries(std::vector<PriceRecord> records, std::string region)
    : records_(std::move(records)), region_(std::move(region)) {
    if (records_.empty()) throw EmptySeries{};
    for (std::size_t i = 1; i < records_.size(); ++i) {
        const auto prev = records_[i - 1].timestamp;
        const auto expected = prev + kSlotLength;
        if (records_[i].timestamp != expected) throw NonUniformSpacing(prev, records_[i].timestamp, expected);
    }
    for (const auto& r : records_) {
        if (!std::isfinite(r.energy_price) || !std::isfinite(r.raise_price) || !std::isfinite(r.lower_price))
            throw MarketDataError("non-finite price at " + format_timestamp(r.timestamp));
    }
}

PriceSeries PriceSeries::slice(std::size_t first, std::size_t count) const {
    if (count == 0 || first > records_.size() || count > records_.size() - first)
        throw std::out_of_range("PriceSeries::slice out of range");
    return PriceSeries({records_.begin() + static_cast<std::ptrdiff_t>(first),
                        records_.begin() + static_cast<std::ptrdiff_t>(first + count)},
                       region_);
}

// ---------------------------------------------------------------------------

bool parse_timestamp(std::string_view text, Timestamp& out) {
    using namespace std::chrono;
    text = trim(text);
    std::size_t pos = 0;
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    if (!parse_uint(text, pos, 4, y)) return false;
    if (pos >= text.size() || (text[pos] != '-' && text[pos] != '/')) return false;
    const char date_sep = text[pos++];
    if (!parse_uint(text, pos, 2, mo)) return false;
    if (pos >= text.size() || text[pos++] != date_sep) return false;
    if (!parse_uint(text, pos, 2, d)) return false;
    if (pos >= text.size() || (text[pos] != 'T' && text[pos] != ' ')) return false;
    ++pos;
    if (!parse_uint(text, pos, 2, h)) return false;
    if (pos >= text.size() || text[pos++] != ':') return false;
    if (!parse_uint(text, pos, 2, mi)) return false;
    if (pos < text.size() && text[pos] == ':') {
        ++pos;
        if (!parse_uint(text, pos, 2, s)) return false;
    }
    if (pos < text.size() && text[pos] == 'Z') ++pos;
    if (pos != text.size()) return false;

    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 59) return false;
    out = sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
    return true;
}

std::string format_timestamp(Timestamp ts) {
    using namespace std::chrono;
    const auto day_point = floor<days>(ts);
    const year_month_day ymd{day_point};
    const hh_mm_ss hms{ts - day_point};
    std::array<char, 32> buf{};
    std::snprintf(buf.data(), buf.size(), "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()));
    return buf.data();
}

PriceSeries parse_price_csv(std::istream& in, const CsvSchema& schema, std::string region) {
    std::string line;
    if (!std::getline(in, line)) throw EmptySeries{};
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM

    const auto header = split_fields(line);
    auto column_of = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw MissingColumn(name);
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_ts = column_of(schema.timestamp);
    const std::size_t c_e = column_of(schema.energy_price);
    const std::size_t c_r = column_of(schema.raise_price);
    const std::size_t c_l = column_of(schema.lower_price);
    const std::size_t needed = std::max({c_ts, c_e, c_r, c_l}) + 1;

    std::vector<PriceRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() < needed)
            throw UnparsableRow(line_no, "expected at least " + std::to_string(needed) + " fields");
        PriceRecord rec;
        if (!parse_timestamp(fields[c_ts], rec.timestamp))
            throw UnparsableRow(line_no, "bad timestamp '" + std::string(fields[c_ts]) + "'");
        auto number = [&](std::size_t col) {
            const auto v = parse_number(fields[col]);
            if (!v) throw UnparsableRow(line_no, "bad number '" + std::string(fields[col]) + "'");
            return *v;
        };
        rec.energy_price = number(c_e);
        rec.raise_price = number(c_r);
        rec.lower_price = number(c_l);
        records.push_back(rec);
    }
    if (records.empty()) throw EmptySeries{};
    std::stable_sort(records.begin(), records.end(),
                     [](const PriceRecord& a, const PriceRecord& b) { return a.timestamp < b.timestamp; });
    return PriceSeries(std::move(records), std::move(region));
}

PriceSeries load_price_csv(const std::filesystem::path& path, const CsvSchema& schema, std::string region) {
    std::ifstream in(path);
    if (!in) throw MarketDataError("cannot open " + path.string());
    return parse_price_csv(in, schema, std::move(region));
}

void write_price_csv(std::ostream& out, const PriceSeries& series) {
    out << "timestamp,energy_price,raise_price,lower_price\n";
    std::array<char, 128> buf{};
    for (const auto& r : series.records()) {
        std::snprintf(buf.data(), buf.size(), ",%.17g,%.17g,%.17g\n", r.energy_price, r.raise_price, r.lower_price);
        out << format_timestamp(r.timestamp) << buf.data();
    }
}

void write_price_csv(const std::filesystem::path& path, const PriceSeries& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MarketDataError("cannot write " + path.string());
    write_price_csv(out, series);
}

// ---------------------------------------------------------------------------

namespace {

void validate(const SinusoidModel& m, const char* name) {
    const auto bad = [&](const std::string& what) { throw InvalidModel(std::string(name) + ": " + what); };
    if (!(m.period_slots > 0.0)) bad("period must be positive");
    if (!(m.amplitude >= 0.0)) bad("amplitude must be non-negative");
    if (!(m.noise_std >= 0.0)) bad("noise_std must be non-negative");
    if (!(m.spike_probability >= 0.0 && m.spike_probability <= 1.0)) bad("spike probability must be in [0,1]");
    if (!std::isfinite(m.base) || !std::isfinite(m.spike_magnitude) || !std::isfinite(m.phase_slots))
        bad("non-finite parameter");
}

double draw(const SinusoidModel& m, std::size_t slot, Rng& rng) {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double angle = 2.0 * std::numbers::pi * (static_cast<double>(slot) + m.phase_slots) / m.period_slots;
    double price = m.base + m.amplitude * std::sin(angle);
    if (m.noise_std > 0.0) price += m.noise_std * noise(rng);
    if (m.spike_probability > 0.0 && unit(rng) < m.spike_probability) price *= m.spike_magnitude;
    return price;
}

}  // namespace

PriceSeries synth_price_series(std::uint64_t seed, std::size_t slots, const SynthModel& model) {
    if (slots == 0) throw InvalidModel("slots must be at least 1");
    validate(model.energy, "energy");
    validate(model.raise, "raise");
    validate(model.lower, "lower");

    // Independent streams per component so enabling noise on one leaves the others unchanged.
    Rng energy_rng(seed), raise_rng(seed ^ 0x9E3779B97F4A7C15ULL), lower_rng(seed ^ 0xC2B2AE3D27D4EB4FULL);
    std::vector<PriceRecord> records(slots);
    for (std::size_t t = 0; t < slots; ++t) {
        auto& r = records[t];
        r.timestamp = model.start + kSlotLength * static_cast<std::int64_t>(t);
        r.energy_price = draw(model.energy, t, energy_rng);
        r.raise_price = draw(model.raise, t, raise_rng);
        r.lower_price = draw(model.lower, t, lower_rng);
    }
    return PriceSeries(std::move(records), model.region);
}

// ---------------------------------------------------------------------------

RegulationSignal::RegulationSignal(double value) : value_(value) {
    if (!(value >= -1.0 && value <= 1.0)) throw std::invalid_argument("regulation signal outside [-1, 1]");
}

RegulationSignal signal_from_deviation(double deviation_hz) {
    const double clipped = std::clamp(deviation_hz, -kFrequencyBandHz, kFrequencyBandHz);
    return RegulationSignal(clipped / kFrequencyBandHz);
}

RegulationSignal sample_regulation_signal(Rng& rng) {
    std::normal_distribution<double> deviation(0.0, kFrequencyNoiseStdHz);
    return signal_from_deviation(deviation(rng));
}

}  // namespace bess::market
