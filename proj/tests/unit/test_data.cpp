#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "hypercast/data.hpp"

using namespace hypercast::data;
using namespace std::chrono;

namespace {

DemandPanel panel_from_rows(const std::vector<std::vector<double>>& rows, Date start = sys_days{2022y / 3 / 1}) {
    std::vector<Station> st;
    for (std::size_t i = 0; i < rows.size(); ++i) st.push_back({"S" + std::to_string(i), double(i), double(i)});
    std::vector<Date> dates;
    for (std::size_t d = 0; d < rows[0].size(); ++d) dates.push_back(start + days{int(d)});
    Eigen::MatrixXd m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return make_panel(st, dates, m);
}

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("hypercast_test_data_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("ingest sums sessions per station and UTC day") {
    StationCoords coords{{"B", {1.0, 2.0}}, {"A", {3.0, 4.0}}};
    std::vector<ChargingSession> recs{
        {"A", parse_iso8601("2023-05-01T08:00:00Z"), 5.0},
        {"A", parse_iso8601("2023-05-01T17:30:00Z"), 3.0},
        {"B", parse_iso8601("2023-05-01T23:59:00Z"), 2.5},
        {"B", parse_iso8601("2023-05-04T00:00:00Z"), 1.0},
    };
    auto res = ingest_sessions(recs, coords);
    const auto& p = res.panel;
    REQUIRE(p.num_stations() == 2);
    CHECK(p.stations[0].id == "A");
    CHECK(p.stations[1].id == "B");
    CHECK(p.stations[0].longitude == 3.0);
    REQUIRE(p.num_days() == 4);  // days without sessions still appear
    CHECK(p.demand(0, 0) == 8.0);
    CHECK(p.demand(1, 0) == 2.5);  // 23:59 stays on its own day
    CHECK(p.demand(0, 1) == 0.0);
    CHECK(p.demand(1, 3) == 1.0);
    CHECK(res.rejected.empty());
}

TEST_CASE("ingest rejects unknown stations without touching the panel") {
    StationCoords coords{{"A", {0.0, 0.0}}};
    std::vector<ChargingSession> good{{"A", parse_iso8601("2023-05-01T10:00:00Z"), 4.0}};
    auto with_bad = good;
    with_bad.push_back({"ZZ", parse_iso8601("2023-05-01T11:00:00Z"), 99.0});
    auto a = ingest_sessions(good, coords);
    auto b = ingest_sessions(with_bad, coords);
    REQUIRE(b.rejected.size() == 1);
    CHECK(b.rejected[0].station_id == "ZZ");
    CHECK(a.panel.demand == b.panel.demand);
    CHECK_THROWS_AS(ingest_sessions(std::vector<ChargingSession>{}, coords), DataError);
}

TEST_CASE("timestamps honour offsets") {
    CHECK(parse_iso8601("2023-05-01T23:30:00-01:00") == parse_iso8601("2023-05-02T00:30:00Z"));
    CHECK(parse_iso8601("2023-05-01 12:00") == parse_iso8601("2023-05-01T12:00:00.250Z"));
    CHECK_THROWS_AS(parse_iso8601("2023-13-01T00:00:00Z"), DataError);
    CHECK_THROWS_AS(parse_iso8601("yesterday"), DataError);
}

TEST_CASE("imputation examples") {
    MissingMask m(1, 3);
    m << false, true, false;
    auto p = impute_missing(panel_from_rows({{2, -1, 6}}), m);
    CHECK(p.demand(0, 1) == doctest::Approx(4.0));
    CHECK(p.features.at(0, 1, 0) == p.demand(0, 1));

    m << true, false, false;
    p = impute_missing(panel_from_rows({{-1, 5, 7}}), m);
    CHECK(p.demand(0, 0) == 5.0);
    CHECK(p.demand(0, 2) == 7.0);

    m << false, false, true;
    p = impute_missing(panel_from_rows({{1, 5, -1}}), m);
    CHECK(p.demand(0, 2) == 5.0);

    auto orig = panel_from_rows({{1, 2, 3}});
    m.setConstant(false);
    auto same = impute_missing(orig, m);
    CHECK(same.demand == orig.demand);
    CHECK(same.features.data == orig.features.data);
}

TEST_CASE("imputation is idempotent and leaves observed cells alone") {
    auto orig = panel_from_rows({{1, -1, -1, 10, -1, 3}, {-1, -1, 4, -1, 8, -1}});
    MissingMask m(2, 6);
    m << false, true, true, false, true, false, true, true, false, true, false, true;
    auto once = impute_missing(orig, m);
    auto twice = impute_missing(once, m);
    CHECK(once.demand == twice.demand);
    CHECK(once.demand(0, 1) == doctest::Approx(4.0));
    CHECK(once.demand(0, 2) == doctest::Approx(7.0));
    CHECK(once.demand(1, 3) == doctest::Approx(6.0));
    for (int s = 0; s < 2; ++s)
        for (int d = 0; d < 6; ++d)
            if (!m(s, d)) CHECK(once.demand(s, d) == orig.demand(s, d));
}

TEST_CASE("a fully missing station is named in the error") {
    auto p = panel_from_rows({{1, 2}, {3, 4}});
    MissingMask m(2, 2);
    m << false, false, true, true;
    try {
        impute_missing(p, m);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("S1") != std::string::npos);
    }
}

TEST_CASE("calendar features") {
    std::vector<Date> dates;
    for (int d = 0; d < 400; ++d) dates.push_back(sys_days{2020y / 1 / 1} + days{d});
    auto cal = calendar_features(dates);
    for (int r = 0; r < cal.rows(); ++r)
        for (int c = 0; c < 6; c += 2)
            CHECK(std::abs(cal(r, c) * cal(r, c) + cal(r, c + 1) * cal(r, c + 1) - 1.0) <= 1e-9);
    for (int r = 0; r + 7 < cal.rows(); ++r) {
        CHECK(cal(r, 4) == cal(r + 7, 4));
        CHECK(cal(r, 5) == cal(r + 7, 5));
    }

    const Date june[] = {sys_days{2023y / 6 / 15}};
    const Date december[] = {sys_days{2023y / 12 / 15}};
    const double june_sin = calendar_features(june)(0, 0);
    const double dec_sin = calendar_features(december)(0, 0);
    CHECK(june_sin * dec_sin < 0.0);
    CHECK(june_sin == doctest::Approx(std::sin(2 * std::numbers::pi * 6 / 12)));
    CHECK(dec_sin == doctest::Approx(std::sin(2 * std::numbers::pi * 12 / 12)));

    // 2024-01-01 is a Monday: day-of-week index 0.
    const Date monday[] = {sys_days{2024y / 1 / 1}};
    CHECK(calendar_features(monday)(0, 4) == 0.0);
    CHECK(calendar_features(monday)(0, 5) == 1.0);
}

TEST_CASE("window index examples") {
    WindowSpec spec{7, 3, 3};
    CHECK(weekly_indices(20, spec) == std::vector<std::size_t>{6, 13, 20});
    CHECK(recent_indices(20, spec) == std::vector<std::size_t>{14, 15, 16, 17, 18, 19, 20});

    auto short_panel = synthetic_panel(1, 2, 60, 0.0);
    WindowSpec too_long{7, 4, 3};
    std::vector<std::vector<double>> rows(1, std::vector<double>(20, 1.0));
    auto p20 = panel_from_rows(rows);
    CHECK(min_panel_length(too_long) == 25);
    try {
        build_windows(p20, too_long);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("at least 25") != std::string::npos);
    }
    // The weekly window alone spans 7*3+1 = 22 days; one target day more is needed.
    WindowSpec w4{7, 4, 1};
    CHECK(min_panel_length(w4) == 23);
    CHECK_THROWS_AS(build_windows(p20, w4), DataError);
    CHECK_NOTHROW(build_windows(short_panel, w4));
}

TEST_CASE("window contents follow the definitions across the hyperparameter grid") {
    auto panel = synthetic_panel(3, 2, 120, 1.0);
    for (std::size_t tr : {7, 14, 21, 28})
        for (std::size_t tw : {1, 2, 3, 4})
            for (std::size_t tf : {3, 7}) {
                CAPTURE(tr);
                CAPTURE(tw);
                CAPTURE(tf);
                WindowSpec spec{tr, tw, tf};
                auto samples = build_windows(panel, spec);
                // Oracle: every anchor whose three index sets fit inside [0, T).
                std::vector<std::size_t> anchors;
                for (long t = 0; t < 120; ++t)
                    if (t - 7 * (long(tw) - 1) >= 0 && t - long(tr) + 1 >= 0 && t + long(tf) <= 119)
                        anchors.push_back(std::size_t(t));
                REQUIRE(samples.size() == anchors.size());
                for (std::size_t i = 0; i < samples.size(); ++i) {
                    const auto& s = samples[i];
                    const std::size_t t = anchors[i];
                    REQUIRE(s.anchor_day == t);
                    for (std::size_t p = 0; p < 2; ++p) {
                        for (std::size_t j = 0; j < tr; ++j)
                            for (std::size_t c = 0; c < kRawFeatures; ++c)
                                REQUIRE(s.recent.at(p, j, c) == panel.features.at(p, t - tr + 1 + j, c));
                        for (std::size_t j = 0; j < tw; ++j) {
                            const std::size_t day = t - 7 * (tw - 1) + 7 * j;
                            for (std::size_t c = 0; c < kRawFeatures; ++c)
                                REQUIRE(s.weekly.at(p, j, c) == panel.features.at(p, day, c));
                        }
                        for (std::size_t h = 0; h < tf; ++h) REQUIRE(s.target(p, h) == panel.demand(p, t + 1 + h));
                    }
                }
            }
}

TEST_CASE("feature channel 0 equals demand") {
    auto p = synthetic_panel(5, 3, 70, 2.0);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t d = 0; d < 70; ++d) CHECK(p.features.at(s, d, 0) == p.demand(s, d));
}

TEST_CASE("chronological split") {
    auto panel = synthetic_panel(1, 2, 60, 0.0);
    auto all = build_windows(panel, {14, 3, 3});
    std::vector<WindowSample> ten(all.begin(), all.begin() + 10);
    auto [train, test] = chronological_split(ten);
    CHECK(train.size() == 8);
    CHECK(test.size() == 2);
    for (const auto& a : train)
        for (const auto& b : test) CHECK(a.anchor_day < b.anchor_day);

    std::vector<WindowSample> five(all.begin(), all.begin() + 5);
    auto [tr5, te5] = chronological_split(five);
    CHECK(tr5.size() == 4);
    CHECK(te5.size() == 1);

    std::vector<WindowSample> one(all.begin(), all.begin() + 1);
    CHECK_THROWS_AS(chronological_split(one), DataError);
    CHECK_THROWS_AS(chronological_split(ten, 1.0), DataError);

    auto [trn, tst] = chronological_split(all);
    CHECK(trn.size() + tst.size() == all.size());
}

TEST_CASE("synthetic panel") {
    auto a = synthetic_panel(42, 4, 84, 0.0);
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t d = 7; d < 84; ++d) CHECK(a.demand(s, d) == a.demand(s, d - 7));
    auto b = synthetic_panel(42, 4, 84, 0.0);
    CHECK(a.demand == b.demand);
    auto c = synthetic_panel(42, 4, 84, 1.0);
    auto d = synthetic_panel(42, 4, 84, 1.0);
    CHECK(c.demand == d.demand);
    CHECK(c.demand != a.demand);
    CHECK(synthetic_panel(43, 4, 84, 1.0).demand != c.demand);
    // Two coordinate clusters.
    for (std::size_t s = 0; s < 4; ++s) {
        const double centre = s % 2 == 0 ? 0.0 : 1.0;
        CHECK(std::abs(a.stations[s].longitude - centre) <= 0.01);
        CHECK(std::abs(a.stations[s].latitude - centre) <= 0.01);
    }
    CHECK_THROWS_AS(synthetic_panel(1, 1, 84, 0.0), DataError);
    CHECK_THROWS_AS(synthetic_panel(1, 2, 59, 0.0), DataError);
}

TEST_CASE("panel CSV and JSON round trip exactly") {
    auto dir = temp_dir("roundtrip");
    auto p = synthetic_panel(9, 3, 65, 1.5);
    write_panel(p, dir / "panel.csv", dir / "panel.json");
    auto q = read_panel(dir / "panel.csv", dir / "panel.json");
    CHECK(q.demand == p.demand);
    CHECK(q.dates == p.dates);
    REQUIRE(q.num_stations() == 3);
    CHECK(q.stations[2].id == p.stations[2].id);
    CHECK(q.stations[2].latitude == p.stations[2].latitude);
    CHECK(q.features.data == p.features.data);
    std::filesystem::remove_all(dir);
}

TEST_CASE("session and station CSV readers") {
    auto dir = temp_dir("csv");
    {
        std::ofstream f(dir / "sessions.csv");
        f << "station_id,start_iso8601,energy_kwh\nA,2023-01-02T10:00:00Z,5\nA,2023-01-02T11:00:00Z,3\n"
             "B,2023-01-03T09:00:00+02:00,1.5\n";
        std::ofstream g(dir / "stations.csv");
        g << "station_id,longitude,latitude\nA,-122.1,37.4\nB,-122.2,37.5\n";
    }
    auto sessions = read_sessions_csv(dir / "sessions.csv");
    auto coords = read_stations_csv(dir / "stations.csv");
    REQUIRE(sessions.size() == 3);
    CHECK(coords.at("B").second == 37.5);
    auto res = ingest_sessions(sessions, coords);
    CHECK(res.panel.demand(0, 0) == 8.0);
    CHECK(res.panel.demand(1, 1) == 1.5);

    {
        std::ofstream f(dir / "bad.csv");
        f << "station_id,start_iso8601,energy_kwh\nA,2023-01-02T10:00:00Z,lots\n";
    }
    CHECK_THROWS_AS(read_sessions_csv(dir / "bad.csv"), DataError);
    CHECK_THROWS_AS(read_stations_csv(dir / "missing.csv"), DataError);
    std::filesystem::remove_all(dir);
}
