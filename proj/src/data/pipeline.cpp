#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <random>

#include "hypercast/data.hpp"

namespace hypercast::data {

const char* const kFeatureNames[kRawFeatures] = {"demand", "month_sin", "month_cos", "day_of_month_sin",
                                                 "day_of_month_cos", "day_of_week_sin", "day_of_week_cos"};

Eigen::MatrixXd calendar_features(std::span<const Date> dates) {
    using namespace std::chrono;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(dates.size()), 6);
    for (std::size_t i = 0; i < dates.size(); ++i) {
        const year_month_day ymd{dates[i]};
        const double month = static_cast<unsigned>(ymd.month());
        const double dom = static_cast<unsigned>(ymd.day());
        const double dow = weekday{dates[i]}.iso_encoding() - 1;  // Monday = 0
        const auto r = static_cast<Eigen::Index>(i);
        out(r, 0) = std::sin(two_pi * month / 12.0);
        out(r, 1) = std::cos(two_pi * month / 12.0);
        out(r, 2) = std::sin(two_pi * dom / 31.0);
        out(r, 3) = std::cos(two_pi * dom / 31.0);
        out(r, 4) = std::sin(two_pi * dow / 7.0);
        out(r, 5) = std::cos(two_pi * dow / 7.0);
    }
    return out;
}

Eigen::MatrixXd demand_channel(const Array3& a) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(a.d0), static_cast<Eigen::Index>(a.d1));
    for (std::size_t i = 0; i < a.d0; ++i)
        for (std::size_t t = 0; t < a.d1; ++t) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = a.at(i, t, 0);
    return m;
}

std::vector<std::pair<double, double>> station_coords(const DemandPanel& panel) {
    std::vector<std::pair<double, double>> out;
    for (const auto& s : panel.stations) out.emplace_back(s.longitude, s.latitude);
    return out;
}

DemandPanel make_panel(std::vector<Station> stations, std::vector<Date> dates, Eigen::MatrixXd demand) {
    if (static_cast<std::size_t>(demand.rows()) != stations.size() ||
        static_cast<std::size_t>(demand.cols()) != dates.size())
        throw DataError("panel: demand is " + std::to_string(demand.rows()) + "x" + std::to_string(demand.cols()) +
                        " but there are " + std::to_string(stations.size()) + " stations and " +
                        std::to_string(dates.size()) + " days");
    for (std::size_t i = 1; i < dates.size(); ++i)
        if (dates[i] - dates[i - 1] != std::chrono::days{1})
            throw DataError("panel: dates are not contiguous at " + format_date(dates[i]));

    DemandPanel p;
    p.stations = std::move(stations);
    p.dates = std::move(dates);
    p.demand = std::move(demand);
    const std::size_t n = p.stations.size();
    const std::size_t t = p.dates.size();
    const Eigen::MatrixXd cal = calendar_features(p.dates);
    p.features = Array3(n, t, kRawFeatures);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t d = 0; d < t; ++d) {
            p.features.at(s, d, 0) = p.demand(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(d));
            for (std::size_t c = 0; c < kCalendarFeatures; ++c)
                p.features.at(s, d, c + 1) = cal(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c));
        }
    return p;
}

IngestResult ingest_sessions(std::span<const ChargingSession> records, const StationCoords& coords) {
    using namespace std::chrono;
    if (records.empty()) throw DataError("ingest: no session records");

    IngestResult result;
    std::vector<const ChargingSession*> accepted;
    for (const auto& r : records) {
        if (r.station_id.empty() || !(r.energy_kwh >= 0.0) || !std::isfinite(r.energy_kwh) ||
            coords.count(r.station_id) == 0) {
            result.rejected.push_back(r);
            continue;
        }
        accepted.push_back(&r);
    }
    if (accepted.empty()) throw DataError("ingest: every session record was rejected");

    // StationCoords is ordered by id, which fixes the station order.
    std::map<std::string, std::size_t> index;
    std::vector<Station> stations;
    for (const auto& [id, lonlat] : coords) {
        index.emplace(id, stations.size());
        stations.push_back({id, lonlat.first, lonlat.second});
    }

    Date first = floor<days>(accepted.front()->start);
    Date last = first;
    for (const auto* r : accepted) {
        const Date d = floor<days>(r->start);
        first = std::min(first, d);
        last = std::max(last, d);
    }
    const auto span = static_cast<std::size_t>((last - first).count()) + 1;
    std::vector<Date> dates(span);
    for (std::size_t i = 0; i < span; ++i) dates[i] = first + days{static_cast<int>(i)};

    Eigen::MatrixXd demand = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(stations.size()),
                                                   static_cast<Eigen::Index>(span));
    for (const auto* r : accepted) {
        const auto day = static_cast<Eigen::Index>((floor<days>(r->start) - first).count());
        demand(static_cast<Eigen::Index>(index.at(r->station_id)), day) += r->energy_kwh;
    }
    result.panel = make_panel(std::move(stations), std::move(dates), std::move(demand));
    return result;
}

DemandPanel impute_missing(const DemandPanel& panel, const MissingMask& missing) {
    const auto n = static_cast<Eigen::Index>(panel.num_stations());
    const auto t = static_cast<Eigen::Index>(panel.num_days());
    if (missing.rows() != n || missing.cols() != t)
        throw DataError("impute: mask shape does not match the panel");
    if (!missing.any()) return panel;

    Eigen::MatrixXd demand = panel.demand;
    for (Eigen::Index s = 0; s < n; ++s) {
        std::vector<Eigen::Index> observed;
        for (Eigen::Index d = 0; d < t; ++d)
            if (!missing(s, d)) observed.push_back(d);
        if (observed.empty())
            throw DataError("impute: station " + panel.stations[static_cast<std::size_t>(s)].id +
                            " has no observed values");
        std::size_t next = 0;  // first observed index >= d
        for (Eigen::Index d = 0; d < t; ++d) {
            while (next < observed.size() && observed[next] < d) ++next;
            if (!missing(s, d)) continue;
            if (next == 0) {
                demand(s, d) = demand(s, observed.front());
            } else if (next == observed.size()) {
                demand(s, d) = demand(s, observed.back());
            } else {
                const Eigen::Index lo = observed[next - 1];
                const Eigen::Index hi = observed[next];
                const double w = static_cast<double>(d - lo) / static_cast<double>(hi - lo);
                demand(s, d) = (1.0 - w) * demand(s, lo) + w * demand(s, hi);
            }
        }
    }
    return make_panel(panel.stations, panel.dates, std::move(demand));
}

std::size_t min_panel_length(const WindowSpec& spec) {
    const std::size_t weekly_need = 7 * (spec.weekly - 1) + spec.horizon + 1;
    const std::size_t recent_need = spec.recent + spec.horizon;
    return std::max(weekly_need, recent_need);
}

std::vector<std::size_t> recent_indices(std::size_t anchor, const WindowSpec& spec) {
    std::vector<std::size_t> idx(spec.recent);
    for (std::size_t i = 0; i < spec.recent; ++i) idx[i] = anchor + 1 + i - spec.recent;
    return idx;
}

std::vector<std::size_t> weekly_indices(std::size_t anchor, const WindowSpec& spec) {
    std::vector<std::size_t> idx(spec.weekly);
    for (std::size_t i = 0; i < spec.weekly; ++i) idx[i] = anchor - 7 * (spec.weekly - 1 - i);
    return idx;
}

std::vector<WindowSample> build_windows(const DemandPanel& panel, const WindowSpec& spec) {
    if (spec.recent == 0 || spec.weekly == 0 || spec.horizon == 0)
        throw DataError("windows: T_r, T_w and T_f must be positive");
    const std::size_t t = panel.num_days();
    const std::size_t need = min_panel_length(spec);
    if (t < need)
        throw DataError("windows: panel has " + std::to_string(t) + " days but T_r=" + std::to_string(spec.recent) +
                        ", T_w=" + std::to_string(spec.weekly) + ", T_f=" + std::to_string(spec.horizon) +
                        " need at least " + std::to_string(need));

    const std::size_t n = panel.num_stations();
    const std::size_t first = std::max(7 * (spec.weekly - 1), spec.recent - 1);
    std::vector<WindowSample> out;
    for (std::size_t anchor = first; anchor + spec.horizon < t; ++anchor) {
        WindowSample s;
        s.anchor_day = anchor;
        s.recent = Array3(n, spec.recent, kRawFeatures);
        s.weekly = Array3(n, spec.weekly, kRawFeatures);
        s.target.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.horizon));
        const auto rec = recent_indices(anchor, spec);
        const auto wek = weekly_indices(anchor, spec);
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t i = 0; i < rec.size(); ++i)
                for (std::size_t c = 0; c < kRawFeatures; ++c) s.recent.at(p, i, c) = panel.features.at(p, rec[i], c);
            for (std::size_t i = 0; i < wek.size(); ++i)
                for (std::size_t c = 0; c < kRawFeatures; ++c) s.weekly.at(p, i, c) = panel.features.at(p, wek[i], c);
            for (std::size_t h = 0; h < spec.horizon; ++h)
                s.target(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(h)) =
                    panel.demand(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(anchor + 1 + h));
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::pair<std::vector<WindowSample>, std::vector<WindowSample>> chronological_split(std::vector<WindowSample> samples,
                                                                                    double ratio) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw DataError("split: ratio must lie in (0, 1)");
    if (samples.size() < 2) throw DataError("split: need at least 2 samples, got " + std::to_string(samples.size()));
    std::stable_sort(samples.begin(), samples.end(),
                     [](const WindowSample& a, const WindowSample& b) { return a.anchor_day < b.anchor_day; });
    const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(samples.size())));
    std::vector<WindowSample> train(std::make_move_iterator(samples.begin()),
                                    std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(n_train)));
    std::vector<WindowSample> test(std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(n_train)),
                                   std::make_move_iterator(samples.end()));
    return {std::move(train), std::move(test)};
}

DemandPanel synthetic_panel(std::uint64_t seed, std::size_t num_stations, std::size_t num_days, double noise_sigma) {
    using namespace std::chrono;
    if (num_stations < 2) throw DataError("synthetic: need at least 2 stations");
    if (num_days < 60) throw DataError("synthetic: need at least 60 days");
    if (!(noise_sigma >= 0.0)) throw DataError("synthetic: noise_sigma must be non-negative");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    std::vector<Station> stations;
    std::vector<double> base(num_stations), amplitude(num_stations), phase(num_stations);
    for (std::size_t p = 0; p < num_stations; ++p) {
        const std::size_t cluster = p % 2;
        const double centre = cluster == 0 ? 0.0 : 1.0;
        char id[32];
        std::snprintf(id, sizeof id, "S%03zu", p);
        const double lon = centre + 0.02 * (unit(rng) - 0.5);
        const double lat = centre + 0.02 * (unit(rng) - 0.5);
        stations.push_back({id, lon, lat});
        base[p] = 30.0 + 20.0 * unit(rng);
        amplitude[p] = kSyntheticAmplitude * (0.8 + 0.4 * unit(rng));
        phase[p] = (cluster == 0 ? 0.0 : 0.5 * std::numbers::pi) + 0.2 * (unit(rng) - 0.5);
    }

    // 2021-01-04 is a Monday.
    const Date start = sys_days{year{2021} / January / 4};
    std::vector<Date> dates(num_days);
    for (std::size_t d = 0; d < num_days; ++d) dates[d] = start + days{static_cast<int>(d)};

    Eigen::MatrixXd demand(static_cast<Eigen::Index>(num_stations), static_cast<Eigen::Index>(num_days));
    for (std::size_t p = 0; p < num_stations; ++p)
        for (std::size_t d = 0; d < num_days; ++d) {
            const double dow = static_cast<double>(d % 7);
            double v = base[p] + amplitude[p] * std::sin(2.0 * std::numbers::pi * dow / 7.0 + phase[p]);
            if (noise_sigma > 0.0) v += noise_sigma * noise(rng);
            demand(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(d)) = v;
        }
    return make_panel(std::move(stations), std::move(dates), std::move(demand));
}

}  // namespace hypercast::data
