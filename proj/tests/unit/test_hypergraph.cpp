#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"
#include "hypercast/data.hpp"
#include "hypercast/hypergraph.hpp"
#include "oracles/oracles.hpp"

using namespace hypercast::hg;

namespace {

Eigen::MatrixXd random_window(std::size_t n, std::size_t t, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd w(n, t);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
    return w;
}

oracle::Mat to_rows(const Eigen::MatrixXd& m) {
    oracle::Mat r(m.rows(), std::vector<double>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
    return r;
}

void check_row_stochastic(const Eigen::MatrixXd& h) {
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
        CHECK(std::abs(h.row(i).sum() - 1.0) <= 1e-6);
        CHECK(h.row(i).minCoeff() >= 0.0);
        CHECK(h.row(i).maxCoeff() <= 1.0);
    }
}

}  // namespace

TEST_CASE("geodesic distances") {
    std::vector<LonLat> pts{{0.0, 0.0}, {1.0, 0.0}, {0.0, 0.0}, {-122.4, 37.8}, {139.7, 35.7}};
    auto d = geodesic_distances(pts);
    CHECK(d(0, 2) == 0.0);
    // One degree of longitude on the equator is R * pi / 180.
    CHECK(d(0, 1) == doctest::Approx(6371.0 * std::numbers::pi / 180.0).epsilon(1e-12));
    CHECK(d(0, 1) == doctest::Approx(111.19).epsilon(1e-4));
    CHECK((d - d.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(d.diagonal().cwiseAbs().maxCoeff() == 0.0);
    std::vector<LonLat> bad{{0.0, 91.0}};
    CHECK_THROWS_AS(geodesic_distances(bad), HypergraphError);
    std::vector<LonLat> bad_lon{{181.0, 0.0}};
    CHECK_THROWS_AS(geodesic_distances(bad_lon), HypergraphError);
}

TEST_CASE("FCM with one cluster gives all-ones memberships") {
    std::vector<LonLat> pts{{0.1, 0.2}, {5.0, -3.0}, {2.0, 2.0}};
    auto h = fcm_soft_clusters(pts, 1);
    CHECK(h.values.cols() == 1);
    CHECK(h.values.minCoeff() == 1.0);
    CHECK(h.values.maxCoeff() == 1.0);
    CHECK(h.view == View::distance);
}

TEST_CASE("FCM separates two clusters and matches the reference iteration") {
    auto panel = hypercast::data::synthetic_panel(17, 6, 60, 0.0);
    std::vector<LonLat> pts;
    for (const auto& s : panel.stations) pts.push_back({s.longitude, s.latitude});
    for (std::uint64_t seed : {0u, 1u, 7u, 123u}) {
        CAPTURE(seed);
        FcmOptions opts;
        opts.seed = seed;
        auto h = fcm_soft_clusters(pts, 2, opts);
        check_row_stochastic(h.values);
        // Dominant membership > 0.9 and stations of the same cluster share it.
        Eigen::Index c0 = 0, c1 = 0;
        h.values.row(0).maxCoeff(&c0);
        h.values.row(1).maxCoeff(&c1);
        CHECK(c0 != c1);
        for (Eigen::Index i = 0; i < h.values.rows(); ++i) {
            Eigen::Index arg = 0;
            CHECK(h.values.row(i).maxCoeff(&arg) > 0.9);
            CHECK(arg == (i % 2 == 0 ? c0 : c1));
        }
        auto ref = oracle::reference_fcm(pts, 2, 2.0, 1e-6, 300, seed);
        for (Eigen::Index i = 0; i < h.values.rows(); ++i)
            for (Eigen::Index k = 0; k < 2; ++k) CHECK(std::abs(h.values(i, k) - ref.u[i][k]) <= 1e-6);
    }
}

TEST_CASE("FCM on random points matches the reference and stays row-stochastic") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<LonLat> pts;
        for (int i = 0; i < 9; ++i) pts.push_back({u(rng), u(rng)});
        for (std::size_t k : {2u, 3u, 5u}) {
            FcmOptions opts;
            opts.seed = static_cast<std::uint64_t>(trial);
            auto r = fuzzy_c_means(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>>(
                                       &pts[0].first, static_cast<Eigen::Index>(pts.size()), 2),
                                   k, opts);
            check_row_stochastic(r.membership);
            auto ref = oracle::reference_fcm(pts, k, 2.0, 1e-6, 300, opts.seed);
            CHECK(r.iterations == ref.iterations);
            for (std::size_t i = 0; i < pts.size(); ++i)
                for (std::size_t j = 0; j < k; ++j) CHECK(std::abs(r.membership(i, j) - ref.u[i][j]) <= 1e-6);
        }
    }
}

TEST_CASE("FCM handles points that coincide with a centroid") {
    std::vector<LonLat> pts{{0, 0}, {0, 0}, {0, 0}, {3, 3}};
    auto h = fcm_soft_clusters(pts, 2);
    check_row_stochastic(h.values);
    CHECK(h.values.allFinite());
    // Every point sits exactly on a centroid, so memberships are one-hot.
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(h.values.row(i).maxCoeff() == 1.0);
    CHECK_THROWS_AS(fcm_soft_clusters(pts, 4), HypergraphError);
    CHECK_THROWS_AS(fcm_soft_clusters(pts, 0), HypergraphError);
}

TEST_CASE("FCM is deterministic for a seed") {
    std::vector<LonLat> pts{{0, 0}, {0.3, 0.1}, {2, 2}, {2.2, 1.9}, {5, 0}};
    FcmOptions o;
    o.seed = 99;
    CHECK(fcm_soft_clusters(pts, 3, o).values == fcm_soft_clusters(pts, 3, o).values);
}

TEST_CASE("pearson similarity") {
    Eigen::MatrixXd w(4, 5);
    w.row(0) << 1, 3, 2, 5, 4;
    w.row(1) = -w.row(0);
    w.row(2) = (2.5 * w.row(0).array() + 7.0).matrix();
    w.row(3).setConstant(3.3);
    auto s = pearson_similarity(w);
    CHECK(s(0, 0) == 1.0);
    CHECK(s(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(s(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s(3, 3) == 1.0);
    CHECK(s(0, 3) == 0.0);
    CHECK(s(3, 1) == 0.0);
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-9);

    // Oracle: textbook two-pass correlation.
    std::mt19937_64 rng(3);
    auto r = random_window(5, 11, rng);
    auto sr = pearson_similarity(r);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            double mi = 0, mj = 0;
            for (int t = 0; t < 11; ++t) {
                mi += r(i, t) / 11;
                mj += r(j, t) / 11;
            }
            double sij = 0, sii = 0, sjj = 0;
            for (int t = 0; t < 11; ++t) {
                sij += (r(i, t) - mi) * (r(j, t) - mj);
                sii += (r(i, t) - mi) * (r(i, t) - mi);
                sjj += (r(j, t) - mj) * (r(j, t) - mj);
            }
            CHECK(std::abs(sr(i, j) - sij / std::sqrt(sii * sjj)) <= 1e-12);
        }

    // A single-day window has no variance anywhere: identity similarity.
    Eigen::MatrixXd one(3, 1);
    one << 1, 2, 3;
    CHECK(pearson_similarity(one) == Eigen::MatrixXd::Identity(3, 3));
}

TEST_CASE("graph laplacian") {
    Eigen::MatrixXd s(2, 2);
    s << 1, -1, -1, 1;
    auto l = graph_laplacian(s);
    CHECK(l.cwiseAbs().maxCoeff() == 0.0);

    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + trial % 5;
        auto sim = pearson_similarity(random_window(n, 6, rng));
        auto lap = graph_laplacian(sim);
        CHECK((lap - lap.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((lap * Eigen::VectorXd::Ones(n)).cwiseAbs().maxCoeff() <= 1e-9);
        auto [vals, vecs] = oracle::jacobi_eigen(to_rows(lap));
        CHECK(vals.front() >= -1e-9);
    }
}

TEST_CASE("eigenpairs agree with the Jacobi oracle") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 2 + trial % 5;  // 2..6
        auto lap = graph_laplacian(pearson_similarity(random_window(n, 8, rng)));
        auto ours = smallest_eigenpairs(lap, n);
        auto [vals, vecs] = oracle::jacobi_eigen(to_rows(lap));
        for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(ours.values(j) - vals[j]) <= 1e-8);
        // Compare spectral projectors for each k with a gap after it (subspace check).
        for (std::size_t k = 1; k < n; ++k) {
            if (vals[k] - vals[k - 1] < 1e-6) continue;
            Eigen::MatrixXd ref(n, k);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) ref(i, j) = vecs[i][j];
            const Eigen::MatrixXd v = ours.vectors.leftCols(k);
            CHECK((v * v.transpose() - ref * ref.transpose()).norm() <= 1e-6);
        }
    }
}

TEST_CASE("soft assignment from eigenvectors") {
    Eigen::MatrixXd e(3, 2);
    e << 0.5, -0.5, 0.0, 0.0, -0.2, 0.6;
    auto h = soft_assign_from_eigenvectors(e);
    CHECK(h(0, 0) == 0.5);
    CHECK(h(0, 1) == 0.5);
    CHECK(h(1, 0) == 0.5);  // all-zero row -> uniform
    CHECK(h(2, 0) == doctest::Approx(0.25));
    CHECK(h(2, 1) == doctest::Approx(0.75));

    std::mt19937_64 rng(2);
    auto v = random_window(6, 3, rng);
    auto base = soft_assign_from_eigenvectors(v);
    for (int mask = 1; mask < 8; ++mask) {
        Eigen::MatrixXd f = v;
        for (int c = 0; c < 3; ++c)
            if (mask & (1 << c)) f.col(c) *= -1.0;
        CHECK(soft_assign_from_eigenvectors(f) == base);  // exact
    }
}

TEST_CASE("block-diagonal affinity groups pairs together") {
    // Stations 0,1 move together, 2,3 move together, the two pairs are anti-correlated.
    Eigen::MatrixXd w(4, 6);
    w.row(0) << 1, 2, 3, 4, 5, 6;
    w.row(1) = 2.0 * w.row(0);
    w.row(2) = -w.row(0);
    w.row(3) = -3.0 * w.row(0);
    auto h = demand_hypergraph(w, 2);
    check_row_stochastic(h.values);
    CHECK((h.values.row(0) - h.values.row(1)).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((h.values.row(2) - h.values.row(3)).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(h.view == View::demand);
}

TEST_CASE("batch demand hypergraphs") {
    std::mt19937_64 rng(4);
    std::vector<Eigen::MatrixXd> windows{random_window(5, 7, rng), random_window(5, 7, rng)};
    auto one = build_batch_demand_hypergraphs(std::span(windows).first(1), 2, Timescale::recent);
    auto direct = spectral_soft_assign(graph_laplacian(pearson_similarity(windows[0])), 2);
    CHECK(one[0].values == direct.values);
    CHECK(one[0].timescale == Timescale::recent);

    std::vector<Eigen::MatrixXd> dup{windows[1], windows[0], windows[1]};
    auto out = build_batch_demand_hypergraphs(dup, 3);
    REQUIRE(out.size() == 3);
    CHECK(out[0].values == out[2].values);
    for (const auto& h : out) check_row_stochastic(h.values);

    // Per-station positive affine rescaling leaves the demand view unchanged.
    Eigen::MatrixXd scaled = windows[0];
    std::uniform_real_distribution<double> a(0.1, 50.0), b(-100.0, 100.0);
    for (Eigen::Index i = 0; i < scaled.rows(); ++i) scaled.row(i) = (a(rng) * scaled.row(i).array() + b(rng)).matrix();
    auto h0 = demand_hypergraph(windows[0], 2);
    auto h1 = demand_hypergraph(scaled, 2);
    CHECK((h0.values - h1.values).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("incidence export") {
    auto dir = std::filesystem::temp_directory_path() / "hypercast_test_incidence";
    std::filesystem::create_directories(dir);
    Eigen::MatrixXd v(2, 1);
    v << 1, 1;
    IncidenceMatrix h{v, View::demand, Timescale::weekly};
    std::vector<std::string> ids{"a", "b"};
    write_incidence(h, ids, dir / "h.csv", dir / "h.json", R"({"K":1})");
    std::ifstream csv(dir / "h.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "station,e0");
    std::getline(csv, line);
    CHECK(line == "a,1");
    std::ifstream js(dir / "h.json");
    std::string all((std::istreambuf_iterator<char>(js)), std::istreambuf_iterator<char>());
    CHECK(all.find("\"weekly\"") != std::string::npos);
    CHECK(all.find("\"demand\"") != std::string::npos);
    std::filesystem::remove_all(dir);
}
