#include "hypercast/introspect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include "json.hpp"

namespace hypercast::introspect {
namespace {

const model::TraceRecord& site_or_throw(const model::AttentionTrace& trace, const std::string& site) {
    auto it = trace.sites.find(site);
    if (it == trace.sites.end()) throw IntrospectError("attention trace has no site '" + site + "'");
    return it->second;
}

// Visits every trailing [q, k] matrix of a record.
template <class F>
void for_each_matrix(const model::TraceRecord& r, F&& f) {
    const std::size_t q = r.shape[r.shape.size() - 2], k = r.shape.back();
    const std::size_t count = r.values.size() / (q * k);
    for (std::size_t m = 0; m < count; ++m) f(m, r.values.data() + m * q * k, q, k);
}

Eigen::MatrixXd mean_of(const std::vector<Eigen::MatrixXd>& hs) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(hs.at(0).rows(), hs.at(0).cols());
    for (const auto& h : hs) m += h;
    return m / static_cast<double>(hs.size());
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

}  // namespace

std::vector<double> hyperedge_received_attention(const model::AttentionTrace& trace, const std::string& site) {
    const auto& r = site_or_throw(trace, site);
    const std::size_t k = r.shape.back();
    std::vector<double> recv(k, 0.0);
    std::size_t n = 0;
    for_each_matrix(r, [&](std::size_t, const double* a, std::size_t q, std::size_t kk) {
        for (std::size_t i = 0; i < q; ++i)
            for (std::size_t j = 0; j < kk; ++j) recv[j] += a[i * kk + j];
        ++n;
    });
    for (double& v : recv) v /= static_cast<double>(n);
    return recv;
}

std::vector<std::optional<double>> hyperedge_demand_variance(const Eigen::MatrixXd& demand, const Eigen::MatrixXd& h) {
    if (demand.rows() != h.rows()) throw IntrospectError("variance: demand and incidence station counts differ");
    Eigen::VectorXd var(demand.rows());
    for (Eigen::Index p = 0; p < demand.rows(); ++p) {
        const double m = demand.row(p).mean();
        var(p) = (demand.row(p).array() - m).square().mean();
    }
    std::vector<std::optional<double>> out;
    for (Eigen::Index k = 0; k < h.cols(); ++k) {
        const double w = h.col(k).sum();
        if (w <= 0.0) out.emplace_back();
        else out.emplace_back(h.col(k).dot(var) / w);
    }
    return out;
}

std::vector<double> hyperedge_compactness(std::span<const hg::LonLat> coords, const Eigen::MatrixXd& h) {
    if (static_cast<Eigen::Index>(coords.size()) != h.rows())
        throw IntrospectError("compactness: coordinate and incidence station counts differ");
    const std::size_t k = static_cast<std::size_t>(h.cols());
    if (k == 1) return {1.0};
    const Eigen::MatrixXd d = hg::geodesic_distances(coords);
    std::vector<double> inv(k);
    for (std::size_t c = 0; c < k; ++c) {
        double num = 0.0, den = 0.0;
        for (Eigen::Index p = 0; p < h.rows(); ++p)
            for (Eigen::Index q = 0; q < h.rows(); ++q) {
                if (p == q) continue;
                const double w = h(p, static_cast<Eigen::Index>(c)) * h(q, static_cast<Eigen::Index>(c));
                num += w * d(p, q);
                den += w;
            }
        const double mean_dist = den > 0.0 ? num / den : 0.0;  // a lone member spreads nothing
        inv[c] = 1.0 / (1e-6 + mean_dist);
    }
    const auto [lo, hi] = std::minmax_element(inv.begin(), inv.end());
    const double min = *lo, max = *hi;
    std::vector<double> out(k, 1.0);
    if (max > min)
        for (std::size_t c = 0; c < k; ++c) out[c] = (inv[c] - min) / (max - min);
    return out;
}

OodSplit ood_split(std::span<const double> series) {
    if (series.size() < 3) throw IntrospectError("ood_split: need at least 3 points");
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(series.size());
    double var = 0.0;
    for (double v : series) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(series.size()));
    OodSplit s;
    for (std::size_t t = 0; t < series.size(); ++t) {
        if (sd > 0.0 && std::abs(series[t] - mean) > 3.0 * sd) s.ood.push_back(t);
        else s.wd.push_back(t);
    }
    return s;
}

ReceivedSplit split_received_attention(std::span<const Eigen::MatrixXd> attention,
                                       std::span<const std::vector<bool>> ood_masks) {
    if (attention.size() != ood_masks.size()) throw IntrospectError("split: one mask per attention matrix required");
    double ood_sum = 0.0, wd_sum = 0.0;
    ReceivedSplit r;
    for (std::size_t m = 0; m < attention.size(); ++m) {
        const auto& a = attention[m];
        if (a.rows() != a.cols() || static_cast<std::size_t>(a.cols()) != ood_masks[m].size())
            throw IntrospectError("split: attention must be square and match its mask");
        const Eigen::RowVectorXd received = a.colwise().sum();
        for (Eigen::Index t = 0; t < received.size(); ++t) {
            if (ood_masks[m][static_cast<std::size_t>(t)]) {
                ood_sum += received(t);
                ++r.ood_count;
            } else {
                wd_sum += received(t);
                ++r.wd_count;
            }
        }
    }
    if (r.ood_count > 0) r.ood_mean = ood_sum / static_cast<double>(r.ood_count);
    if (r.wd_count > 0) r.wd_mean = wd_sum / static_cast<double>(r.wd_count);
    return r;
}

ReceivedSplit temporal_attention_split(const model::AttentionTrace& trace, const std::string& timescale,
                                       std::span<const Eigen::MatrixXd> windows) {
    std::vector<Eigen::MatrixXd> mats;
    std::vector<std::vector<bool>> masks;
    // Masks per (batch, station) series.
    std::vector<std::vector<std::vector<bool>>> series_mask(windows.size());
    for (std::size_t b = 0; b < windows.size(); ++b)
        for (Eigen::Index p = 0; p < windows[b].rows(); ++p) {
            std::vector<double> s(static_cast<std::size_t>(windows[b].cols()));
            for (Eigen::Index t = 0; t < windows[b].cols(); ++t) s[static_cast<std::size_t>(t)] = windows[b](p, t);
            std::vector<bool> mask(s.size(), false);
            if (s.size() >= 3)
                for (std::size_t t : ood_split(s).ood) mask[t] = true;
            series_mask[b].push_back(std::move(mask));
        }
    bool any = false;
    for (const auto& [name, rec] : trace.sites) {
        if (name.rfind("tte.", 0) != 0 || name.find("." + timescale + ".") == std::string::npos) continue;
        any = true;
        // [B, N, H, T, T]
        const std::size_t b_dim = rec.shape[0], n_dim = rec.shape[1], h_dim = rec.shape[2];
        if (b_dim != windows.size()) throw IntrospectError("temporal split: window count does not match the trace");
        for_each_matrix(rec, [&](std::size_t m, const double* a, std::size_t q, std::size_t k) {
            const std::size_t b = m / (n_dim * h_dim), p = (m / h_dim) % n_dim;
            mats.push_back(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                a, static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(k)));
            masks.push_back(series_mask[b].at(p));
        });
    }
    if (!any) throw IntrospectError("attention trace has no temporal sites for timescale '" + timescale + "'");
    return split_received_attention(mats, masks);
}

FusionShares fusion_attention_shares(const model::AttentionTrace& trace, model::ViewOrder order) {
    double first = 0.0, second = 0.0;
    std::size_t n = 0;
    for (const char* site : {"cvf.rec", "cvf.wek"}) {
        for_each_matrix(site_or_throw(trace, site), [&](std::size_t, const double* a, std::size_t q, std::size_t k) {
            if (q != 2 || k != 2) throw IntrospectError("cvf attention is not 2x2");
            first += a[0] + a[2];
            second += a[1] + a[3];
            ++n;
        });
    }
    FusionShares s;
    const double f = first / static_cast<double>(n), sec = second / static_cast<double>(n);
    const bool dist_first = order == model::ViewOrder::dist_demd;
    s.dist = dist_first ? f : sec;
    s.demd = dist_first ? sec : f;

    if (!trace.ctf_paths) throw IntrospectError("attention trace has no CTF path norms");
    double rec = 0.0, wek = 0.0;
    const auto& v = trace.ctf_paths->values;
    for (std::size_t i = 0; i + 1 < v.size(); i += 2) {
        rec += v[i];
        wek += v[i + 1];
    }
    const double total = rec + wek;
    s.rec = total > 0.0 ? 2.0 * rec / total : 1.0;
    s.wek = total > 0.0 ? 2.0 * wek / total : 1.0;
    return s;
}

std::optional<double> correlation(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw IntrospectError("correlation: need two equal-length series (>= 2)");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

// ---- report -------------------------------------------------------------------------

Report build_report(const ReportInputs& in) {
    if (in.trace == nullptr) throw IntrospectError("report: no trace");
    Report r;
    const char* streams[2] = {"rec", "wek"};
    const char* views[2] = {"dist", "demd"};
    for (std::size_t l = 0; l < in.L_hstb; ++l)
        for (int u = 0; u < 2; ++u)
            for (int v = 0; v < 2; ++v) {
                const std::string site = "gat." + std::to_string(l) + "." + streams[u] + "." + views[v];
                const Eigen::MatrixXd h = v == 0 ? in.h_dist : mean_of(u == 0 ? in.h_rec_demd : in.h_wek_demd);
                const auto recv = hyperedge_received_attention(*in.trace, site);
                const auto var = hyperedge_demand_variance(in.demand, h);
                const auto comp = hyperedge_compactness(in.coords, h);
                std::vector<double> rv, vv, rc;
                for (std::size_t k = 0; k < recv.size(); ++k) {
                    r.hyperedges.push_back({site, k, recv[k], var[k], comp[k]});
                    if (var[k]) {
                        rv.push_back(recv[k]);
                        vv.push_back(*var[k]);
                    }
                }
                std::optional<double> c_var, c_comp;
                if (rv.size() >= 2) c_var = correlation(rv, vv);
                if (recv.size() >= 2) c_comp = correlation(recv, comp);
                r.correlations.emplace_back(site, c_var, c_comp);
            }
    r.temporal_rec = temporal_attention_split(*in.trace, "rec", in.rec_windows);
    r.temporal_wek = temporal_attention_split(*in.trace, "wek", in.wek_windows);
    r.fusion = fusion_attention_shares(*in.trace, in.view_order);
    return r;
}

void write_report(const Report& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream f(dir / name, std::ios::trunc);
        if (!f) throw IntrospectError("cannot write " + (dir / name).string());
        return f;
    };
    auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("NA"); };

    auto hcsv = open("hyperedges.csv");
    hcsv << "site,hyperedge,received_attention,mean_variance,compactness\n";
    for (const auto& h : r.hyperedges)
        hcsv << h.site << ',' << h.hyperedge << ',' << fmt(h.received_attention) << ',' << opt(h.mean_variance) << ','
             << fmt(h.compactness) << '\n';

    auto lcsv = open("long.csv");
    lcsv << "entity,statistic,value\n";
    for (const auto& h : r.hyperedges) {
        const std::string e = h.site + ".e" + std::to_string(h.hyperedge);
        lcsv << e << ",received_attention," << fmt(h.received_attention) << '\n';
        lcsv << e << ",mean_variance," << opt(h.mean_variance) << '\n';
        lcsv << e << ",compactness," << fmt(h.compactness) << '\n';
    }
    for (const auto& [site, cv, cc] : r.correlations) {
        lcsv << site << ",corr_received_variance," << opt(cv) << '\n';
        lcsv << site << ",corr_received_compactness," << opt(cc) << '\n';
    }
    for (const auto& [name, s] : {std::pair{"rec", &r.temporal_rec}, std::pair{"wek", &r.temporal_wek}}) {
        lcsv << "temporal." << name << ",ood_mean," << opt(s->ood_mean) << '\n';
        lcsv << "temporal." << name << ",wd_mean," << opt(s->wd_mean) << '\n';
    }
    lcsv << "fusion.view,dist_share," << fmt(r.fusion.dist) << '\n';
    lcsv << "fusion.view,demd_share," << fmt(r.fusion.demd) << '\n';
    lcsv << "fusion.timescale,rec_share," << fmt(r.fusion.rec) << '\n';
    lcsv << "fusion.timescale,wek_share," << fmt(r.fusion.wek) << '\n';

    auto jopt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
    nlohmann::ordered_json j;
    for (const auto& [site, cv, cc] : r.correlations)
        j["correlations"][site] = {{"received_vs_variance", jopt(cv)}, {"received_vs_compactness", jopt(cc)}};
    for (const auto& [name, s] : {std::pair{"rec", &r.temporal_rec}, std::pair{"wek", &r.temporal_wek}})
        j["temporal_attention"][name] = {{"ood_mean", jopt(s->ood_mean)},
                                         {"wd_mean", jopt(s->wd_mean)},
                                         {"ood_count", s->ood_count},
                                         {"wd_count", s->wd_count}};
    j["fusion_shares"] = {{"view", {{"dist", r.fusion.dist}, {"demd", r.fusion.demd}}},
                          {"timescale", {{"rec", r.fusion.rec}, {"wek", r.fusion.wek}}}};
    auto js = open("summary.json");
    js << j.dump(2) << '\n';
}

}  // namespace hypercast::introspect
