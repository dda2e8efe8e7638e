// Run configuration: JSON file format, schema validation and override layering.
#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "bess/battery.hpp"
#include "bess/market_data.hpp"
#include "bess/market_env.hpp"
#include "bess/oracle.hpp"
#include "bess/ppo.hpp"

namespace bess::config {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataPaths {
    std::optional<std::filesystem::path> train;
    std::optional<std::filesystem::path> eval;
    market::CsvSchema schema;
};

struct SynthSettings {
    std::size_t slots = 288 * 7 + 1;
    market::SynthModel model;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out = "runs/default";
    battery::BatteryParams battery;
    env::EnvConfig env;
    ppo::PpoConfig ppo;
    oracle::OracleConfig oracle;
    DataPaths data;
    SynthSettings synth;
    bool record_wall_time = true;

    /// Cross-field checks; throws ConfigError.
    void validate() const;
};

/// Parses and validates a configuration tree layered over the defaults.
/// Unknown keys and wrongly typed values raise ConfigError naming the JSON path.
RunConfig from_json(const nlohmann::json& tree, RunConfig base = {});
nlohmann::json to_json(const RunConfig& config);

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});

/// Applies BESS_SEED, BESS_OUT, BESS_MODE and BESS_TOTAL_ITERS when set.
void apply_environment(RunConfig& config);

/// Defaults used by the CLI smoke runs: 2x64 networks and a short synthetic series.
RunConfig smoke_config();

}  // namespace bess::config
