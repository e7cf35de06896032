#include "hypercast/hypergraph.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"

namespace hypercast::hg {
namespace {

void check_k(std::size_t k, std::size_t n, const char* op) {
    if (k < 1 || k + 1 > n)
        throw HypergraphError(std::string(op) + ": K=" + std::to_string(k) + " must lie in [1, N_s-1] with N_s=" +
                              std::to_string(n));
}

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

// Memberships of every point given fixed centroids.
Eigen::MatrixXd memberships(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids, double m) {
    const Eigen::Index n = points.rows();
    const Eigen::Index k = centroids.rows();
    const double expo = 2.0 / (m - 1.0);
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(n, k);
    Eigen::VectorXd dist(k);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index hit = -1;
        for (Eigen::Index c = 0; c < k; ++c) {
            dist(c) = (points.row(i) - centroids.row(c)).norm();
            if (dist(c) == 0.0 && hit < 0) hit = c;
        }
        if (hit >= 0) {
            u(i, hit) = 1.0;
            continue;
        }
        for (Eigen::Index c = 0; c < k; ++c) {
            double s = 0.0;
            for (Eigen::Index j = 0; j < k; ++j) s += std::pow(dist(c) / dist(j), expo);
            u(i, c) = 1.0 / s;
        }
    }
    return u;
}

Eigen::MatrixXd centroids_from(const Eigen::MatrixXd& points, const Eigen::MatrixXd& u, double m,
                               const Eigen::MatrixXd& previous) {
    Eigen::MatrixXd c = previous;
    const Eigen::MatrixXd w = u.array().pow(m).matrix();
    for (Eigen::Index k = 0; k < u.cols(); ++k) {
        const double total = w.col(k).sum();
        if (total > 0.0) c.row(k) = (w.col(k).transpose() * points) / total;
    }
    return c;
}

}  // namespace

const char* view_name(View v) { return v == View::distance ? "distance" : "demand"; }

const char* timescale_name(Timescale t) {
    switch (t) {
        case Timescale::recent: return "recent";
        case Timescale::weekly: return "weekly";
        case Timescale::fixed: break;
    }
    return "static";
}

Eigen::MatrixXd geodesic_distances(std::span<const LonLat> coords) {
    const auto n = static_cast<Eigen::Index>(coords.size());
    for (const auto& [lon, lat] : coords)
        if (!(std::abs(lat) <= 90.0) || !(std::abs(lon) <= 180.0))
            throw HypergraphError("geodesic_distances: invalid coordinate (" + std::to_string(lon) + ", " +
                                  std::to_string(lat) + ")");
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double lat1 = deg2rad(coords[i].second), lat2 = deg2rad(coords[j].second);
            const double dlat = lat2 - lat1;
            const double dlon = deg2rad(coords[j].first - coords[i].first);
            const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                             std::cos(lat1) * std::cos(lat2) * std::sin(dlon / 2) * std::sin(dlon / 2);
            d(i, j) = d(j, i) = 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
        }
    return d;
}

Eigen::MatrixXd fcm_initial_centroids(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed) {
    const Eigen::Index n = points.rows();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    Eigen::MatrixXd c(static_cast<Eigen::Index>(k), points.cols());
    c.row(0) = points.row(pick(rng));
    Eigen::VectorXd nearest(n);
    for (Eigen::Index i = 0; i < n; ++i) nearest(i) = (points.row(i) - c.row(0)).norm();
    for (Eigen::Index j = 1; j < static_cast<Eigen::Index>(k); ++j) {
        Eigen::Index far = 0;
        for (Eigen::Index i = 1; i < n; ++i)
            if (nearest(i) > nearest(far)) far = i;
        c.row(j) = points.row(far);
        for (Eigen::Index i = 0; i < n; ++i) nearest(i) = std::min(nearest(i), (points.row(i) - c.row(j)).norm());
    }
    return c;
}

FcmResult fuzzy_c_means(const Eigen::MatrixXd& points, std::size_t k, const FcmOptions& opts) {
    check_k(k, static_cast<std::size_t>(points.rows()), "fcm");
    if (!(opts.fuzzifier > 1.0)) throw HypergraphError("fcm: fuzzifier must exceed 1");
    if (!points.allFinite()) throw HypergraphError("fcm: non-finite coordinates");

    FcmResult r;
    r.centroids = fcm_initial_centroids(points, k, opts.seed);
    r.membership = memberships(points, r.centroids, opts.fuzzifier);
    for (r.iterations = 1; r.iterations <= opts.max_iter; ++r.iterations) {
        r.centroids = centroids_from(points, r.membership, opts.fuzzifier, r.centroids);
        Eigen::MatrixXd next = memberships(points, r.centroids, opts.fuzzifier);
        const double change = (next - r.membership).cwiseAbs().maxCoeff();
        r.membership = std::move(next);
        if (change < opts.tol) {
            r.converged = true;
            break;
        }
    }
    r.iterations = std::min(r.iterations, opts.max_iter);
    return r;
}

IncidenceMatrix fcm_soft_clusters(std::span<const LonLat> coords, std::size_t k, const FcmOptions& opts) {
    Eigen::MatrixXd pts(static_cast<Eigen::Index>(coords.size()), 2);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        pts(static_cast<Eigen::Index>(i), 0) = coords[i].first;
        pts(static_cast<Eigen::Index>(i), 1) = coords[i].second;
    }
    return {fuzzy_c_means(pts, k, opts).membership, View::distance, Timescale::fixed};
}

Eigen::MatrixXd pearson_similarity(const Eigen::MatrixXd& window) {
    const Eigen::Index n = window.rows();
    if (window.cols() < 1) throw HypergraphError("pearson_similarity: empty window");
    const Eigen::MatrixXd centred = window.colwise() - window.rowwise().mean();
    Eigen::VectorXd norm = centred.rowwise().norm();
    // Treat rows whose spread is at rounding level as constant.
    for (Eigen::Index i = 0; i < n; ++i)
        if (norm(i) <= 1e-12 * std::max(1.0, window.row(i).cwiseAbs().maxCoeff())) norm(i) = 0.0;
    Eigen::MatrixXd s = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double v = 0.0;
            if (norm(i) > 0.0 && norm(j) > 0.0)
                v = std::clamp(centred.row(i).dot(centred.row(j)) / (norm(i) * norm(j)), -1.0, 1.0);
            s(i, j) = s(j, i) = v;
        }
    return s;
}

Eigen::MatrixXd graph_laplacian(const Eigen::MatrixXd& sim) {
    if (sim.rows() != sim.cols()) throw HypergraphError("graph_laplacian: similarity must be square");
    const Eigen::MatrixXd a = (1.0 + sim.array()).matrix() * 0.5;
    Eigen::MatrixXd l = -a;
    l.diagonal() += a.rowwise().sum();
    return l;
}

EigenPairs smallest_eigenpairs(const Eigen::MatrixXd& sym, std::size_t k) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw HypergraphError("eigensolver failed to converge");
    const auto kk = static_cast<Eigen::Index>(k);
    return {es.eigenvalues().head(kk), es.eigenvectors().leftCols(kk)};
}

Eigen::MatrixXd soft_assign_from_eigenvectors(const Eigen::MatrixXd& eigvec) {
    Eigen::MatrixXd h = eigvec.cwiseAbs();
    const double uniform = 1.0 / static_cast<double>(h.cols());
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
        const double s = h.row(i).sum();
        if (s <= 1e-12)
            h.row(i).setConstant(uniform);
        else
            h.row(i) /= s;
    }
    return h;
}

IncidenceMatrix spectral_soft_assign(const Eigen::MatrixXd& laplacian, std::size_t k) {
    check_k(k, static_cast<std::size_t>(laplacian.rows()), "spectral_soft_assign");
    return {soft_assign_from_eigenvectors(smallest_eigenpairs(laplacian, k).vectors), View::demand,
            Timescale::fixed};
}

IncidenceMatrix demand_hypergraph(const Eigen::MatrixXd& window, std::size_t k, Timescale timescale) {
    IncidenceMatrix h = spectral_soft_assign(graph_laplacian(pearson_similarity(window)), k);
    h.timescale = timescale;
    return h;
}

std::vector<IncidenceMatrix> build_batch_demand_hypergraphs(std::span<const Eigen::MatrixXd> windows, std::size_t k,
                                                            Timescale timescale) {
    std::vector<IncidenceMatrix> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(demand_hypergraph(w, k, timescale));
    return out;
}

void write_incidence(const IncidenceMatrix& h, std::span<const std::string> station_ids,
                     const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                     const std::string& params_json) {
    if (station_ids.size() != h.stations()) throw HypergraphError("write_incidence: station count mismatch");
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw HypergraphError("cannot open " + csv_path.string() + " for writing");
    csv.precision(17);
    csv << "station";
    for (std::size_t k = 0; k < h.hyperedges(); ++k) csv << ",e" << k;
    csv << '\n';
    for (std::size_t i = 0; i < h.stations(); ++i) {
        csv << station_ids[i];
        for (std::size_t k = 0; k < h.hyperedges(); ++k)
            csv << ',' << h.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        csv << '\n';
    }
    nlohmann::ordered_json meta;
    meta["view"] = view_name(h.view);
    meta["timescale"] = timescale_name(h.timescale);
    meta["K"] = h.hyperedges();
    meta["num_stations"] = h.stations();
    meta["parameters"] = nlohmann::ordered_json::parse(params_json);
    std::ofstream js(json_path, std::ios::trunc);
    if (!js) throw HypergraphError("cannot open " + json_path.string() + " for writing");
    js << meta.dump(2) << '\n';
}

}  // namespace hypercast::hg
