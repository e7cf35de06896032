#pragma once

// Post-hoc analyses over recorded attention: what hyperedges receive, how
// temporal attention treats out-of-distribution days, and how fusion splits
// attention between views and timescales.

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypercast/hypergraph.hpp"
#include "hypercast/model.hpp"

namespace hypercast::introspect {

class IntrospectError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Column sums of the GAT attention averaged over batch, time and head.
// Sums to K.
std::vector<double> hyperedge_received_attention(const model::AttentionTrace& trace, const std::string& site);

// v_k = sum_p H[p,k] Var(demand_p) / sum_p H[p,k] (population variance);
// absent for an all-zero column.
std::vector<std::optional<double>> hyperedge_demand_variance(const Eigen::MatrixXd& demand, const Eigen::MatrixXd& h);

// Inverse membership-weighted mean pairwise geodesic distance, min-max
// normalized across hyperedges. K = 1 or equal spreads give 1.0.
std::vector<double> hyperedge_compactness(std::span<const hg::LonLat> coords, const Eigen::MatrixXd& h);

struct OodSplit {
    std::vector<std::size_t> ood;
    std::vector<std::size_t> wd;
};

// Three-sigma rule with the series' own mean and population std.
OodSplit ood_split(std::span<const double> series);

struct ReceivedSplit {
    std::optional<double> ood_mean;
    std::optional<double> wd_mean;
    std::size_t ood_count = 0;
    std::size_t wd_count = 0;
};

// Attention received per key = column sum of each square matrix; pooled
// into OOD / WD buckets by the matching mask (true = OOD).
ReceivedSplit split_received_attention(std::span<const Eigen::MatrixXd> attention,
                                       std::span<const std::vector<bool>> ood_masks);

// Uses every "tte.*.<timescale>.*" site. `windows` holds the raw demand of
// each batch item (N x T) for that timescale, in batch order.
ReceivedSplit temporal_attention_split(const model::AttentionTrace& trace, const std::string& timescale,
                                       std::span<const Eigen::MatrixXd> windows);

struct FusionShares {
    double dist = 0.0, demd = 0.0;  // sum to 2
    double rec = 0.0, wek = 0.0;    // sum to 2
};

// View shares from the column masses of the CVF 2x2 attention (both
// timescales). Timescale shares split 2 in proportion to the mean L2 norm of
// the residual (recent) path versus the cross-attention (weekly) output.
FusionShares fusion_attention_shares(const model::AttentionTrace& trace, model::ViewOrder order);

// Pearson r; absent when either side has zero variance.
std::optional<double> correlation(std::span<const double> x, std::span<const double> y);

// ---- report -------------------------------------------------------------------------

struct HyperedgeRow {
    std::string site;
    std::size_t hyperedge = 0;
    double received_attention = 0.0;
    std::optional<double> mean_variance;
    double compactness = 0.0;
};

struct Report {
    std::vector<HyperedgeRow> hyperedges;
    // site -> (r(received, variance), r(received, compactness))
    std::vector<std::tuple<std::string, std::optional<double>, std::optional<double>>> correlations;
    ReceivedSplit temporal_rec, temporal_wek;
    FusionShares fusion;
};

struct ReportInputs {
    const model::AttentionTrace* trace = nullptr;
    model::ViewOrder view_order = model::ViewOrder::dist_demd;
    std::size_t L_hstb = 0;
    Eigen::MatrixXd demand;  // N x T, used for hyperedge variance
    std::vector<hg::LonLat> coords;
    Eigen::MatrixXd h_dist;
    // Per batch item; demand-view statistics use their mean.
    std::vector<Eigen::MatrixXd> h_rec_demd, h_wek_demd;
    std::vector<Eigen::MatrixXd> rec_windows, wek_windows;
};

Report build_report(const ReportInputs& in);

// hyperedges.csv (one row per site x hyperedge), long.csv (entity,
// statistic, value) and summary.json.
void write_report(const Report& r, const std::filesystem::path& dir);

}  // namespace hypercast::introspect
