#pragma once

// Command-line pipeline: prepare | hypergraph | train | forecast | evaluate |
// inspect | synth. Everything is driven by one JSON run config plus
// `--set path=value` overrides; each run leaves a manifest next to its outputs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypercast/model.hpp"
#include "hypercast/train.hpp"
#include "json.hpp"

namespace hypercast::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct SynthConfig {
    std::size_t num_stations = 4;
    std::size_t num_days = 400;
    double noise_sigma = 1.0;
};

struct GridConfig {
    std::vector<std::size_t> T_r, T_w, T_f, K;  // empty axis = the base value
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";
    std::filesystem::path sessions, stations;  // prepare inputs
    std::filesystem::path panel;               // stem; default <output_dir>/panel
    std::filesystem::path checkpoint;          // stem; default <output_dir>/model
    double split_ratio = 0.8;
    bool impute_empty_days = true;
    std::size_t inspect_max_samples = 32;
    SynthConfig synth;
    model::ModelConfig model;
    train::TrainConfig train;
    std::optional<GridConfig> grid;
    // Model keys given explicitly (file or overrides); checked against checkpoints.
    nlohmann::json explicit_model = nlohmann::json::object();

    std::filesystem::path panel_stem() const;
    std::filesystem::path checkpoint_stem() const;
};

// Applies "a.b.c=value" to a JSON object; the value is parsed as JSON when it
// parses, otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Parses and validates a run config. A manifest is accepted too (its
// resolved config is used), so any run can be replayed from its manifest.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const RunConfig& c);

// 64-bit FNV-1a of the compact resolved config, as 16 hex digits.
std::string config_hash(const RunConfig& c);

// Runs one invocation; args exclude the program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hypercast::cli
