#pragma once

// Raw charging sessions -> daily demand panel -> multi-timescale windows.

#include <Eigen/Dense>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hypercast::data {

using Date = std::chrono::sys_days;
using Timestamp = std::chrono::sys_seconds;

// demand + (sin, cos) of month, day-of-month and day-of-week.
inline constexpr std::size_t kRawFeatures = 7;
inline constexpr std::size_t kCalendarFeatures = 6;
extern const char* const kFeatureNames[kRawFeatures];

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ChargingSession {
    std::string station_id;
    Timestamp start;
    double energy_kwh = 0.0;
};

struct Station {
    std::string id;
    double longitude = 0.0;
    double latitude = 0.0;
};

using StationCoords = std::map<std::string, std::pair<double, double>>;  // id -> (lon, lat)

// Dense row-major [d0, d1, d2] array.
struct Array3 {
    std::size_t d0 = 0, d1 = 0, d2 = 0;
    std::vector<double> data;

    Array3() = default;
    Array3(std::size_t a, std::size_t b, std::size_t c) : d0(a), d1(b), d2(c), data(a * b * c, 0.0) {}

    double& at(std::size_t i, std::size_t j, std::size_t k) { return data[(i * d1 + j) * d2 + k]; }
    double at(std::size_t i, std::size_t j, std::size_t k) const { return data[(i * d1 + j) * d2 + k]; }
};

struct DemandPanel {
    std::vector<Station> stations;
    std::vector<Date> dates;
    Eigen::MatrixXd demand;  // stations x days, kWh/day
    Array3 features;         // stations x days x kRawFeatures; channel 0 is demand

    std::size_t num_stations() const { return stations.size(); }
    std::size_t num_days() const { return dates.size(); }
};

// Builds the feature cube from demand and dates; validates contiguity.
DemandPanel make_panel(std::vector<Station> stations, std::vector<Date> dates, Eigen::MatrixXd demand);

struct IngestResult {
    DemandPanel panel;
    std::vector<ChargingSession> rejected;
};

// Sums session energy per (station, UTC day). Stations are ordered by id and
// every day between the first and last session appears.
IngestResult ingest_sessions(std::span<const ChargingSession> records, const StationCoords& coords);

using MissingMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Linear interpolation between observed neighbours, nearest-value fill at the
// edges. Observed cells are untouched.
DemandPanel impute_missing(const DemandPanel& panel, const MissingMask& missing);

// [T, 6] columns: sin/cos of 2*pi*month/12, 2*pi*day/31, 2*pi*weekday/7 (Monday = 0).
Eigen::MatrixXd calendar_features(std::span<const Date> dates);

struct WindowSpec {
    std::size_t recent = 14;  // T_r
    std::size_t weekly = 3;   // T_w
    std::size_t horizon = 3;  // T_f
};

struct WindowSample {
    Array3 recent;           // stations x T_r x kRawFeatures, days t-T_r+1 .. t
    Array3 weekly;           // stations x T_w x kRawFeatures, days t-7(T_w-1), ..., t-7, t
    Eigen::MatrixXd target;  // stations x T_f, days t+1 .. t+T_f
    std::size_t anchor_day = 0;
};

// Channel 0 of a stations x T x F window as a stations x T matrix.
Eigen::MatrixXd demand_channel(const Array3& window);

// (longitude, latitude) per station, in panel order.
std::vector<std::pair<double, double>> station_coords(const DemandPanel& panel);

std::size_t min_panel_length(const WindowSpec& spec);
std::vector<std::size_t> recent_indices(std::size_t anchor, const WindowSpec& spec);
std::vector<std::size_t> weekly_indices(std::size_t anchor, const WindowSpec& spec);

std::vector<WindowSample> build_windows(const DemandPanel& panel, const WindowSpec& spec);

std::pair<std::vector<WindowSample>, std::vector<WindowSample>> chronological_split(std::vector<WindowSample> samples,
                                                                                    double ratio = 0.8);

// Nominal weekly amplitude of synthetic stations (kWh/day); per-station
// amplitudes are drawn from [0.8, 1.2] times this.
inline constexpr double kSyntheticAmplitude = 10.0;

// Weekly-periodic demand around two coordinate clusters near (0,0) and (1,1).
DemandPanel synthetic_panel(std::uint64_t seed, std::size_t num_stations, std::size_t num_days, double noise_sigma);

// ---- file formats ----------------------------------------------------------

Timestamp parse_iso8601(const std::string& text);
Date parse_date(const std::string& text);
std::string format_date(Date d);

// Columns: station_id, start_iso8601, energy_kwh
std::vector<ChargingSession> read_sessions_csv(const std::filesystem::path& path);
// Columns: station_id, longitude, latitude
StationCoords read_stations_csv(const std::filesystem::path& path);

// <stem>.csv: header "date,<station ids...>", one row per day.
// <stem>.json: station metadata, date range and feature layout.
void write_panel(const DemandPanel& panel, const std::filesystem::path& csv_path,
                 const std::filesystem::path& json_path);
DemandPanel read_panel(const std::filesystem::path& csv_path, const std::filesystem::path& json_path);

}  // namespace hypercast::data
