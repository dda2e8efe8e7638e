#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "bess/market_data.hpp"

using namespace bess::market;

namespace {

PriceSeries parse(const std::string& text, const CsvSchema& schema = {}) {
    std::istringstream in(text);
    return parse_price_csv(in, schema);
}

Timestamp ts(const char* text) {
    Timestamp t;
    EXPECT_TRUE(parse_timestamp(text, t)) << text;
    return t;
}

}  // namespace

TEST(LoadPriceCsv, ThreeWellFormedRows) {
    const auto s = parse(
        "timestamp,energy_price,raise_price,lower_price\n"
        "2016-01-01T00:00:00Z,45.5,10,3\n"
        "2016-01-01T00:05:00Z,-12.25,11,4\n"
        "2016-01-01T00:10:00Z,300,12,5\n");
    ASSERT_EQ(s.size(), 3u);
    EXPECT_DOUBLE_EQ(s[1].energy_price, -12.25);
    EXPECT_DOUBLE_EQ(s[2].lower_price, 5.0);
    EXPECT_EQ(s[2].timestamp - s[0].timestamp, 2 * kSlotLength);
}

TEST(LoadPriceCsv, GapIsNonUniformSpacing) {
    try {
        parse("timestamp,energy_price,raise_price,lower_price\n"
              "2016-01-01 00:00,1,1,1\n"
              "2016-01-01 00:05,1,1,1\n"
              "2016-01-01 00:15,1,1,1\n");
        FAIL() << "expected NonUniformSpacing";
    } catch (const NonUniformSpacing& e) {
        EXPECT_EQ(format_timestamp(e.expected()), "2016-01-01T00:10:00Z");
        EXPECT_NE(std::string(e.what()).find("2016-01-01T00:10:00Z"), std::string::npos);
    }
}

TEST(LoadPriceCsv, UnparsableRowReportsFileLine) {
    try {
        parse("timestamp,energy_price,raise_price,lower_price\n"
              "2016-01-01T00:00:00Z,abc,1,1\n");
        FAIL() << "expected UnparsableRow";
    } catch (const UnparsableRow& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(LoadPriceCsv, MissingColumn) {
    EXPECT_THROW(parse("timestamp,energy_price,raise_price\n2016-01-01T00:00:00Z,1,1\n"), MissingColumn);
}

TEST(LoadPriceCsv, HeaderOnlyIsEmpty) {
    EXPECT_THROW(parse("timestamp,energy_price,raise_price,lower_price\n"), EmptySeries);
}

TEST(LoadPriceCsv, DuplicateTimestampRejected) {
    EXPECT_THROW(parse("timestamp,energy_price,raise_price,lower_price\n"
                       "2016-01-01T00:00:00Z,1,1,1\n"
                       "2016-01-01T00:00:00Z,2,2,2\n"),
                 NonUniformSpacing);
}

TEST(LoadPriceCsv, SortsUnorderedRows) {
    const auto s = parse(
        "timestamp,energy_price,raise_price,lower_price\n"
        "2016-01-01T00:05:00Z,2,0,0\n"
        "2016-01-01T00:00:00Z,1,0,0\n");
    EXPECT_DOUBLE_EQ(s[0].energy_price, 1.0);
    EXPECT_DOUBLE_EQ(s[1].energy_price, 2.0);
}

TEST(LoadPriceCsv, SchemaMapsExtraAndRenamedColumns) {
    CsvSchema schema;
    schema.timestamp = "SETTLEMENTDATE";
    schema.energy_price = "RRP";
    schema.raise_price = "RAISEREGRRP";
    schema.lower_price = "LOWERREGRRP";
    const auto s = parse(
        "REGIONID,SETTLEMENTDATE,RRP,RAISEREGRRP,LOWERREGRRP,EXTRA\n"
        "VIC1,2016/01/01 00:05:00,30.1,7.5,2.5,x\n"
        "VIC1,2016/01/01 00:10:00,31.1,7.0,2.0,y\n",
        schema);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_DOUBLE_EQ(s[0].raise_price, 7.5);
}

TEST(LoadPriceCsv, RejectsNonFinitePrice) {
    EXPECT_THROW(parse("timestamp,energy_price,raise_price,lower_price\n2016-01-01T00:00:00Z,nan,1,1\n"),
                 MarketDataError);
}

TEST(PriceCsv, RoundTripIsIdentity) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> price(-1000.0, 15000.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<PriceRecord> recs;
        const Timestamp start = ts("2016-03-01T12:00:00Z") + trial * 7 * kSlotLength;
        for (int i = 0; i < 1 + trial * 5; ++i)
            recs.push_back({start + i * kSlotLength, price(rng), price(rng), price(rng)});
        const PriceSeries original(recs);
        std::stringstream buf;
        write_price_csv(buf, original);
        const auto back = parse_price_csv(buf, {}, original.region());
        EXPECT_EQ(back, original);
    }
}

TEST(PriceSeries, SliceBounds) {
    const auto s = synth_price_series(1, 10, {});
    EXPECT_EQ(s.slice(2, 3).size(), 3u);
    EXPECT_EQ(s.slice(2, 3)[0], s[2]);
    EXPECT_THROW((void)s.slice(8, 3), std::out_of_range);
}

TEST(Timestamp, FormatParseRoundTrip) {
    const auto t = ts("2017-12-31T23:55:00Z");
    EXPECT_EQ(format_timestamp(t), "2017-12-31T23:55:00Z");
    Timestamp bad;
    EXPECT_FALSE(parse_timestamp("2017-13-01T00:00:00Z", bad));
    EXPECT_FALSE(parse_timestamp("yesterday", bad));
}

// ---------------------------------------------------------------------------

TEST(SynthPriceSeries, ZeroAmplitudeIsConstant) {
    SynthModel m;
    m.energy = {50.0, 0.0, 288.0};
    const auto s = synth_price_series(7, 288, m);
    ASSERT_EQ(s.size(), 288u);
    for (const auto& r : s.records()) EXPECT_DOUBLE_EQ(r.energy_price, 50.0);
}

TEST(SynthPriceSeries, DeterministicForSeed) {
    SynthModel m;
    m.energy.noise_std = 3.0;
    m.energy.spike_probability = 0.05;
    m.energy.spike_magnitude = 4.0;
    EXPECT_EQ(synth_price_series(3, 500, m), synth_price_series(3, 500, m));
    EXPECT_NE(synth_price_series(3, 500, m), synth_price_series(4, 500, m));
}

TEST(SynthPriceSeries, SinusoidRangeMatchesClosedForm) {
    SynthModel m;
    m.energy = {50.0, 30.0, 288.0};
    const auto s = synth_price_series(7, 288, m);
    double lo = 1e300, hi = -1e300;
    for (const auto& r : s.records()) {
        lo = std::min(lo, r.energy_price);
        hi = std::max(hi, r.energy_price);
    }
    // Slots 72 and 216 sample the crest and trough exactly.
    EXPECT_NEAR(hi - lo, 60.0, 1e-9);
    EXPECT_NEAR(s[72].energy_price, 80.0, 1e-9);
    EXPECT_NEAR(s[216].energy_price, 20.0, 1e-9);
}

TEST(SynthPriceSeries, PhaseShiftsCrest) {
    SynthModel m;
    m.energy = {50.0, 30.0, 288.0, 72.0};
    const auto s = synth_price_series(0, 289, m);
    EXPECT_NEAR(s[0].energy_price, 80.0, 1e-9);
    EXPECT_NEAR(s[144].energy_price, 20.0, 1e-9);
}

TEST(SynthPriceSeries, SpikesAreMultiplicative) {
    SynthModel m;
    m.energy = {50.0, 0.0, 288.0, 0.0, 0.0, 1.0, 3.0};
    const auto s = synth_price_series(1, 10, m);
    for (const auto& r : s.records()) EXPECT_DOUBLE_EQ(r.energy_price, 150.0);
}

TEST(SynthPriceSeries, InvalidModels) {
    SynthModel m;
    m.energy.period_slots = 0.0;
    EXPECT_THROW(synth_price_series(1, 10, m), InvalidModel);
    m = {};
    m.raise.amplitude = -1.0;
    EXPECT_THROW(synth_price_series(1, 10, m), InvalidModel);
    EXPECT_THROW(synth_price_series(1, 0, SynthModel{}), InvalidModel);
}

// ---------------------------------------------------------------------------

TEST(RegulationSignal, DeviationMapping) {
    EXPECT_DOUBLE_EQ(signal_from_deviation(0.0).value(), 0.0);
    EXPECT_DOUBLE_EQ(signal_from_deviation(0.9).value(), 1.0);
    EXPECT_DOUBLE_EQ(signal_from_deviation(-2.0).value(), -1.0);
    EXPECT_DOUBLE_EQ(signal_from_deviation(0.25).value(), 0.5);
}

TEST(RegulationSignal, PartsAndValidation) {
    const RegulationSignal up(0.4), down(-0.3);
    EXPECT_DOUBLE_EQ(up.raise_part(), 0.4);
    EXPECT_DOUBLE_EQ(up.lower_part(), 0.0);
    EXPECT_DOUBLE_EQ(down.lower_part(), 0.3);
    EXPECT_THROW(RegulationSignal(1.0000001), std::invalid_argument);
}

TEST(RegulationSignal, MonteCarloMomentsAndBounds) {
    Rng rng(2024);
    constexpr int n = 1'000'000;
    double sum = 0.0;
    int saturated = 0;
    for (int i = 0; i < n; ++i) {
        const double s = sample_regulation_signal(rng).value();
        ASSERT_GE(s, -1.0);
        ASSERT_LE(s, 1.0);
        sum += s;
        saturated += std::abs(s) == 1.0;
    }
    EXPECT_LT(std::abs(sum / n), 0.01);
    // 2 * Phi(-1)
    const double tail = std::erfc(1.0 / std::numbers::sqrt2);
    EXPECT_NEAR(static_cast<double>(saturated) / n, tail, 0.003);
    EXPECT_NEAR(tail, 0.3173, 1e-4);
}
