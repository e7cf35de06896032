#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hypercast/data.hpp"
#include "json.hpp"

namespace hypercast::data {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cell));
            cell.clear();
        } else {
            cell += c;
        }
    }
    out.push_back(trim(cell));
    return out;
}

double parse_double(const std::string& s, const std::string& where) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
        throw DataError(where + ": not a number: '" + s + "'");
    return v;
}

// Shortest text that round-trips exactly.
std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

struct CsvFile {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
};

CsvFile read_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path.string());
    CsvFile csv;
    std::string line;
    std::size_t n = 0;
    while (std::getline(f, line)) {
        ++n;
        if (trim(line).empty()) continue;
        if (csv.header.empty()) {
            csv.header = split_csv(line);
            continue;
        }
        csv.rows.push_back(split_csv(line));
        csv.line_numbers.push_back(n);
    }
    if (csv.header.empty()) throw DataError(path.string() + ": empty file");
    return csv;
}

std::size_t column(const CsvFile& csv, const std::string& name, const std::filesystem::path& path) {
    for (std::size_t i = 0; i < csv.header.size(); ++i)
        if (csv.header[i] == name) return i;
    throw DataError(path.string() + ": missing column '" + name + "'");
}

}  // namespace

Date parse_date(const std::string& text) {
    using namespace std::chrono;
    int y = 0;
    unsigned m = 0, d = 0;
    char tail = 0;
    if (std::sscanf(text.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) != 3)
        throw DataError("bad date '" + text + "' (expected YYYY-MM-DD)");
    const year_month_day ymd{year{y}, month{m}, day{d}};
    if (!ymd.ok()) throw DataError("invalid calendar date '" + text + "'");
    return sys_days{ymd};
}

Timestamp parse_iso8601(const std::string& raw) {
    using namespace std::chrono;
    const std::string text = trim(raw);
    if (text.size() < 10) throw DataError("bad timestamp '" + text + "'");
    const Date day = parse_date(text.substr(0, 10));
    if (text.size() == 10) return Timestamp{day};
    if (text[10] != 'T' && text[10] != ' ') throw DataError("bad timestamp '" + text + "'");

    std::size_t pos = 11;
    auto two_digits = [&](int max) {
        if (pos + 2 > text.size() || !std::isdigit(static_cast<unsigned char>(text[pos])) ||
            !std::isdigit(static_cast<unsigned char>(text[pos + 1])))
            throw DataError("bad timestamp '" + text + "'");
        const int v = (text[pos] - '0') * 10 + (text[pos + 1] - '0');
        if (v > max) throw DataError("bad timestamp '" + text + "'");
        pos += 2;
        return v;
    };
    const int hh = two_digits(23);
    if (pos >= text.size() || text[pos] != ':') throw DataError("bad timestamp '" + text + "'");
    ++pos;
    const int mm = two_digits(59);
    int ss = 0;
    if (pos < text.size() && text[pos] == ':') {
        ++pos;
        ss = two_digits(60);
        if (pos < text.size() && text[pos] == '.') {  // fractional seconds are truncated
            ++pos;
            while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
        }
    }
    seconds offset{0};
    if (pos < text.size()) {
        const char c = text[pos];
        if (c == 'Z' && pos + 1 == text.size()) {
            ++pos;
        } else if (c == '+' || c == '-') {
            ++pos;
            const int oh = two_digits(23);
            if (pos < text.size() && text[pos] == ':') ++pos;
            const int om = two_digits(59);
            offset = hours{oh} + minutes{om};
            if (c == '-') offset = -offset;
        }
        if (pos != text.size()) throw DataError("bad timestamp '" + text + "'");
    }
    return Timestamp{day} + hours{hh} + minutes{mm} + seconds{ss} - offset;
}

std::string format_date(Date d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

std::vector<ChargingSession> read_sessions_csv(const std::filesystem::path& path) {
    const CsvFile csv = read_csv(path);
    const std::size_t c_id = column(csv, "station_id", path);
    const std::size_t c_start = column(csv, "start_iso8601", path);
    const std::size_t c_energy = column(csv, "energy_kwh", path);
    std::vector<ChargingSession> out;
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        const auto& row = csv.rows[r];
        const std::string where = path.string() + ":" + std::to_string(csv.line_numbers[r]);
        if (row.size() != csv.header.size()) throw DataError(where + ": wrong number of fields");
        out.push_back({row[c_id], parse_iso8601(row[c_start]), parse_double(row[c_energy], where)});
    }
    return out;
}

StationCoords read_stations_csv(const std::filesystem::path& path) {
    const CsvFile csv = read_csv(path);
    const std::size_t c_id = column(csv, "station_id", path);
    const std::size_t c_lon = column(csv, "longitude", path);
    const std::size_t c_lat = column(csv, "latitude", path);
    StationCoords out;
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        const auto& row = csv.rows[r];
        const std::string where = path.string() + ":" + std::to_string(csv.line_numbers[r]);
        if (row.size() != csv.header.size()) throw DataError(where + ": wrong number of fields");
        if (row[c_id].empty()) throw DataError(where + ": empty station_id");
        if (!out.emplace(row[c_id], std::make_pair(parse_double(row[c_lon], where), parse_double(row[c_lat], where)))
                 .second)
            throw DataError(where + ": duplicate station_id " + row[c_id]);
    }
    if (out.empty()) throw DataError(path.string() + ": no stations");
    return out;
}

void write_panel(const DemandPanel& panel, const std::filesystem::path& csv_path,
                 const std::filesystem::path& json_path) {
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw DataError("cannot open " + csv_path.string() + " for writing");
    csv << "date";
    for (const auto& s : panel.stations) csv << ',' << s.id;
    csv << '\n';
    for (std::size_t d = 0; d < panel.num_days(); ++d) {
        csv << format_date(panel.dates[d]);
        for (std::size_t s = 0; s < panel.num_stations(); ++s)
            csv << ',' << format_double(panel.demand(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(d)));
        csv << '\n';
    }
    if (!csv) throw DataError("write failed: " + csv_path.string());

    nlohmann::ordered_json meta;
    meta["stations"] = nlohmann::ordered_json::array();
    for (const auto& s : panel.stations)
        meta["stations"].push_back({{"id", s.id}, {"longitude", s.longitude}, {"latitude", s.latitude}});
    meta["start_date"] = panel.dates.empty() ? "" : format_date(panel.dates.front());
    meta["end_date"] = panel.dates.empty() ? "" : format_date(panel.dates.back());
    meta["num_days"] = panel.num_days();
    meta["demand_unit"] = "kWh/day";
    meta["feature_layout"] = std::vector<std::string>(std::begin(kFeatureNames), std::end(kFeatureNames));
    std::ofstream js(json_path, std::ios::trunc);
    if (!js) throw DataError("cannot open " + json_path.string() + " for writing");
    js << meta.dump(2) << '\n';
    if (!js) throw DataError("write failed: " + json_path.string());
}

DemandPanel read_panel(const std::filesystem::path& csv_path, const std::filesystem::path& json_path) {
    nlohmann::json meta;
    {
        std::ifstream js(json_path);
        if (!js) throw DataError("cannot open " + json_path.string());
        try {
            js >> meta;
        } catch (const nlohmann::json::exception& e) {
            throw DataError(json_path.string() + ": " + e.what());
        }
    }
    std::vector<Station> stations;
    try {
        for (const auto& s : meta.at("stations"))
            stations.push_back({s.at("id").get<std::string>(), s.at("longitude").get<double>(),
                                s.at("latitude").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw DataError(json_path.string() + ": bad station metadata: " + e.what());
    }

    const CsvFile csv = read_csv(csv_path);
    if (csv.header.size() != stations.size() + 1 || csv.header[0] != "date")
        throw DataError(csv_path.string() + ": header does not match " + json_path.string());
    for (std::size_t i = 0; i < stations.size(); ++i)
        if (csv.header[i + 1] != stations[i].id)
            throw DataError(csv_path.string() + ": column " + csv.header[i + 1] + " does not match station " +
                            stations[i].id);

    std::vector<Date> dates;
    Eigen::MatrixXd demand(static_cast<Eigen::Index>(stations.size()), static_cast<Eigen::Index>(csv.rows.size()));
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        const auto& row = csv.rows[r];
        const std::string where = csv_path.string() + ":" + std::to_string(csv.line_numbers[r]);
        if (row.size() != csv.header.size()) throw DataError(where + ": wrong number of fields");
        dates.push_back(parse_date(row[0]));
        for (std::size_t s = 0; s < stations.size(); ++s) {
            const double v = parse_double(row[s + 1], where);
            if (!std::isfinite(v)) throw DataError(where + ": non-finite demand");
            demand(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(r)) = v;
        }
    }
    return make_panel(std::move(stations), std::move(dates), std::move(demand));
}

}  // namespace hypercast::data
