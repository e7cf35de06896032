#pragma once

// Soft station-to-hyperedge incidence matrices: a distance view from fuzzy
// C-means on coordinates and a demand view from the spectrum of a
// correlation Laplacian.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hypercast::hg {

class HypergraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class View { distance, demand };
enum class Timescale { recent, weekly, fixed };  // fixed = static, not tied to a window

const char* view_name(View v);
const char* timescale_name(Timescale t);

struct IncidenceMatrix {
    Eigen::MatrixXd values;  // stations x hyperedges, rows sum to 1
    View view = View::distance;
    Timescale timescale = Timescale::fixed;

    std::size_t stations() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t hyperedges() const { return static_cast<std::size_t>(values.cols()); }
};

using LonLat = std::pair<double, double>;

inline constexpr double kEarthRadiusKm = 6371.0;

// Haversine distances in km.
Eigen::MatrixXd geodesic_distances(std::span<const LonLat> coords);

struct FcmOptions {
    double fuzzifier = 2.0;
    double tol = 1e-6;
    int max_iter = 300;
    std::uint64_t seed = 0;
};

struct FcmResult {
    Eigen::MatrixXd membership;  // N x K
    Eigen::MatrixXd centroids;   // K x 2
    int iterations = 0;
    bool converged = false;
};

// Farthest-point initial centroids: a seeded random first point, then
// repeatedly the point farthest from its nearest chosen centroid (lowest
// index on ties).
Eigen::MatrixXd fcm_initial_centroids(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed);

FcmResult fuzzy_c_means(const Eigen::MatrixXd& points, std::size_t k, const FcmOptions& opts = {});

// Clusters raw (lon, lat) with the Euclidean metric.
IncidenceMatrix fcm_soft_clusters(std::span<const LonLat> coords, std::size_t k, const FcmOptions& opts = {});

// Row-wise Pearson correlation; zero-variance rows correlate 0 with others
// and 1 with themselves (so a single-column window gives the identity).
Eigen::MatrixXd pearson_similarity(const Eigen::MatrixXd& window);

// L = D - A with affinity A = (1 + sim) / 2.
Eigen::MatrixXd graph_laplacian(const Eigen::MatrixXd& sim);

struct EigenPairs {
    Eigen::VectorXd values;   // ascending
    Eigen::MatrixXd vectors;  // columns
};

// The k smallest eigenpairs of a symmetric matrix.
EigenPairs smallest_eigenpairs(const Eigen::MatrixXd& sym, std::size_t k);

// H[p,k] = |E[p,k]| / sum_k' |E[p,k']|; all-zero rows become uniform.
Eigen::MatrixXd soft_assign_from_eigenvectors(const Eigen::MatrixXd& eigvec);

IncidenceMatrix spectral_soft_assign(const Eigen::MatrixXd& laplacian, std::size_t k);

// pearson -> laplacian -> spectral assignment for one demand window (N_s x T).
IncidenceMatrix demand_hypergraph(const Eigen::MatrixXd& window, std::size_t k,
                                  Timescale timescale = Timescale::fixed);

std::vector<IncidenceMatrix> build_batch_demand_hypergraphs(std::span<const Eigen::MatrixXd> windows, std::size_t k,
                                                            Timescale timescale = Timescale::fixed);

// CSV: "station,e0,...,e{K-1}" then one row per station. The JSON header
// records view, timescale, K and any construction parameters given.
void write_incidence(const IncidenceMatrix& h, std::span<const std::string> station_ids,
                     const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                     const std::string& params_json = "{}");

}  // namespace hypercast::hg
