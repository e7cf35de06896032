#include "hypercast/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "hypercast/hypergraph.hpp"
#include "hypercast/optim.hpp"

namespace hypercast::train {

using model::ConfigError;

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(lr_init > 0.0) || !(lr_min > 0.0)) throw ConfigError("learning rates must be positive");
    if (lr_min > lr_init) throw ConfigError("lr_min must not exceed lr_init");
    if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("lr_factor must lie in (0, 1)");
    if (lr_patience < 1 || early_stop_patience < 1) throw ConfigError("patience values must be at least 1");
    if (early_stop_min_delta && !(*early_stop_min_delta >= 0.0))
        throw ConfigError("early_stop_min_delta must be non-negative");
    if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
}

double TrainConfig::min_delta(bool normalized_loss) const {
    if (early_stop_min_delta) return *early_stop_min_delta;
    return normalized_loss ? 1e-4 : 1.0;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j{{"batch_size", c.batch_size},
                             {"lr_init", c.lr_init},
                             {"lr_min", c.lr_min},
                             {"lr_factor", c.lr_factor},
                             {"lr_patience", c.lr_patience},
                             {"early_stop_patience", c.early_stop_patience},
                             {"early_stop_min_delta", nullptr},
                             {"max_epochs", c.max_epochs},
                             {"seed", c.seed},
                             {"shuffle_train", c.shuffle_train}};
    if (c.early_stop_min_delta) j["early_stop_min_delta"] = *c.early_stop_min_delta;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    TrainConfig c;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const auto& v = it.value();
            if (k == "batch_size") c.batch_size = v.get<std::size_t>();
            else if (k == "lr_init") c.lr_init = v.get<double>();
            else if (k == "lr_min") c.lr_min = v.get<double>();
            else if (k == "lr_factor") c.lr_factor = v.get<double>();
            else if (k == "lr_patience") c.lr_patience = v.get<long>();
            else if (k == "early_stop_patience") c.early_stop_patience = v.get<long>();
            else if (k == "early_stop_min_delta") {
                if (v.is_null()) c.early_stop_min_delta.reset();
                else c.early_stop_min_delta = v.get<double>();
            } else if (k == "max_epochs") c.max_epochs = v.get<long>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "shuffle_train") c.shuffle_train = v.get<bool>();
            else throw ConfigError("unknown train config key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    return c;
}

const char* stop_reason_name(StopReason r) { return r == StopReason::early_stop ? "early_stop" : "max_epochs"; }

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path, bool include_wall_time) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.precision(17);
    f << "epoch,loss,lr" << (include_wall_time ? ",wall_seconds" : "") << '\n';
    for (const auto& e : log.epochs) {
        f << e.epoch << ',' << e.loss << ',' << e.lr;
        if (include_wall_time) f << ',' << e.wall_seconds;
        f << '\n';
    }
    f << "# stop_reason=" << stop_reason_name(log.stop) << " best_epoch=" << log.best_epoch
      << " best_loss=" << log.best_loss << '\n';
}

// ---- controller -------------------------------------------------------------------

PlateauController::PlateauController(const TrainConfig& cfg, double min_delta)
    : cfg_(cfg), min_delta_(min_delta), lr_(std::max(cfg.lr_init, cfg.lr_min)) {}

bool PlateauController::observe(double loss) {
    ++epoch_;
    if (epoch_ == 1 || loss < best_ - min_delta_) {
        best_ = loss;
        best_epoch_ = epoch_;
        since_best_ = 0;
        since_lr_change_ = 0;
    } else {
        ++since_best_;
        if (++since_lr_change_ >= cfg_.lr_patience) {
            lr_ = std::max(lr_ * cfg_.lr_factor, cfg_.lr_min);
            since_lr_change_ = 0;
        }
    }
    return since_best_ >= cfg_.early_stop_patience;
}

TrainLog drive_epochs(const TrainConfig& cfg, double min_delta, const std::function<double(long, double)>& run_epoch,
                      const std::function<void(const EpochRecord&, bool)>& on_epoch, bool record_wall_time) {
    cfg.validate();
    PlateauController ctl(cfg, min_delta);
    TrainLog log;
    const auto start = std::chrono::steady_clock::now();
    for (long epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = ctl.lr();
        rec.loss = run_epoch(epoch, rec.lr);
        if (record_wall_time)
            rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool is_min = epoch == 1 || rec.loss < log.best_loss;
        if (is_min) {
            log.best_loss = rec.loss;
            log.best_epoch = epoch;
        }
        log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec, is_min);
        if (ctl.observe(rec.loss)) {
            log.stop = StopReason::early_stop;
            return log;
        }
    }
    log.stop = StopReason::max_epochs;
    return log;
}

// ---- batching -----------------------------------------------------------------------

namespace {

std::vector<std::vector<double>> snapshot(const ad::ParameterSet& ps) {
    std::vector<std::vector<double>> out;
    for (const auto& p : ps) out.push_back(p->value());
    return out;
}

void restore(ad::ParameterSet& ps, const std::vector<std::vector<double>>& values) {
    std::size_t i = 0;
    for (auto& p : ps) p->value() = values[i++];
}

}  // namespace

SampleGraphs build_sample_graphs(std::span<const data::WindowSample> samples, std::size_t k) {
    SampleGraphs g;
    for (const auto& s : samples) {
        g.recent.push_back(hg::demand_hypergraph(data::demand_channel(s.recent), k, hg::Timescale::recent).values);
        g.weekly.push_back(hg::demand_hypergraph(data::demand_channel(s.weekly), k, hg::Timescale::weekly).values);
    }
    return g;
}

model::ModelInput make_input(std::span<const data::WindowSample> samples, std::span<const std::size_t> indices,
                             const Eigen::MatrixXd& h_dist, const SampleGraphs& graphs) {
    model::ModelInput in;
    in.batch = indices.size();
    in.h_dist = h_dist;
    for (std::size_t i : indices) {
        const auto& s = samples[i];
        in.x_rec.insert(in.x_rec.end(), s.recent.data.begin(), s.recent.data.end());
        in.x_wek.insert(in.x_wek.end(), s.weekly.data.begin(), s.weekly.data.end());
        in.h_rec_demd.push_back(graphs.recent[i]);
        in.h_wek_demd.push_back(graphs.weekly[i]);
    }
    return in;
}

std::vector<double> make_targets(const model::Model& m, std::span<const data::WindowSample> samples,
                                 std::span<const std::size_t> indices) {
    const bool norm = m.config().normalize_inputs;
    std::vector<double> y;
    for (std::size_t i : indices) {
        const auto& t = samples[i].target;
        for (Eigen::Index p = 0; p < t.rows(); ++p)
            for (Eigen::Index h = 0; h < t.cols(); ++h) {
                const auto sp = static_cast<std::size_t>(p);
                y.push_back(norm ? (t(p, h) - m.norm().mean[sp]) / m.norm().std[sp] : t(p, h));
            }
    }
    return y;
}

// ---- training ----------------------------------------------------------------------

TrainLog train(model::Model& m, std::span<const data::WindowSample> samples, const Eigen::MatrixXd& h_dist,
               const TrainConfig& cfg, const TrainHooks& hooks, bool record_wall_time) {
    cfg.validate();
    if (samples.empty()) throw data::DataError("train: no training samples");
    const auto& mc = m.config();
    const SampleGraphs graphs = build_sample_graphs(samples, mc.K);

    ad::Adam adam;
    auto params = m.params().pointers();
    std::mt19937_64 shuffle_rng(cfg.seed);
    std::mt19937_64 dropout_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::vector<double>> best = snapshot(m.params());

    auto run_epoch = [&](long epoch, double lr) {
        if (cfg.shuffle_train) std::shuffle(order.begin(), order.end(), shuffle_rng);
        double total = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            try {
                ad::Tape tape;
                model::ForwardOptions opt;
                opt.training = true;
                opt.rng = &dropout_rng;
                const auto out = m.forward(tape, make_input(samples, idx, h_dist, graphs), opt);
                const auto target = tape.constant(out.normalized.shape(), make_targets(m, samples, idx));
                const auto loss = ad::mse_loss(out.normalized, target);
                m.params().zero_grad();
                tape.backward(loss);
                adam.step(params, lr);
                total += loss.item() * static_cast<double>(idx.size());
            } catch (const ad::NumericError& e) {
                throw ad::NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) +
                                       ": " + e.what());
            }
        }
        return total / static_cast<double>(order.size());
    };
    auto on_epoch = [&](const EpochRecord& rec, bool is_min) {
        if (is_min) best = snapshot(m.params());
        if (hooks.on_epoch) hooks.on_epoch(rec, is_min);
    };
    TrainLog log = drive_epochs(cfg, cfg.min_delta(mc.normalize_inputs), run_epoch, on_epoch, record_wall_time);
    restore(m.params(), best);
    return log;
}

std::vector<Eigen::MatrixXd> predict(const model::Model& m, std::span<const data::WindowSample> samples,
                                     const Eigen::MatrixXd& h_dist, std::size_t batch_size) {
    const auto& mc = m.config();
    const SampleGraphs graphs = build_sample_graphs(samples, mc.K);
    std::vector<Eigen::MatrixXd> out;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t end = std::min(samples.size(), start + batch_size);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        ad::Tape tape;
        tape.set_grad_enabled(false);
        const auto y = m.forward(tape, make_input(samples, idx, h_dist, graphs)).prediction.value();
        const std::size_t n = mc.num_stations, tf = mc.T_f;
        for (std::size_t b = 0; b < idx.size(); ++b) {
            Eigen::MatrixXd mat(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(tf));
            for (std::size_t p = 0; p < n; ++p)
                for (std::size_t h = 0; h < tf; ++h)
                    mat(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(h)) = y[(b * n + p) * tf + h];
            out.push_back(std::move(mat));
        }
    }
    return out;
}

Metrics compute_metrics(std::span<const Eigen::MatrixXd> predictions, std::span<const Eigen::MatrixXd> targets) {
    if (predictions.size() != targets.size() || targets.empty())
        throw std::invalid_argument("metrics: need matching, non-empty prediction and target lists");
    Metrics m;
    double sum = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (predictions[i].rows() != targets[i].rows() || predictions[i].cols() != targets[i].cols())
            throw std::invalid_argument("metrics: prediction/target shape mismatch");
        sum += targets[i].sum();
        m.count += static_cast<std::size_t>(targets[i].size());
    }
    const double mean = sum / static_cast<double>(m.count);
    double ss_res = 0.0, ss_tot = 0.0, abs_err = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const Eigen::ArrayXXd err = predictions[i].array() - targets[i].array();
        ss_res += err.square().sum();
        abs_err += err.abs().sum();
        ss_tot += (targets[i].array() - mean).square().sum();
    }
    m.mse = ss_res / static_cast<double>(m.count);
    m.mae = abs_err / static_cast<double>(m.count);
    if (ss_tot > 0.0) m.r2 = 1.0 - ss_res / ss_tot;
    return m;
}

Metrics evaluate(const model::Model& m, std::span<const data::WindowSample> samples, const Eigen::MatrixXd& h_dist,
                 std::size_t batch_size) {
    if (samples.empty()) throw data::DataError("evaluate: no samples");
    const auto preds = predict(m, samples, h_dist, batch_size);
    std::vector<Eigen::MatrixXd> targets;
    for (const auto& s : samples) targets.push_back(s.target);
    return compute_metrics(preds, targets);
}

std::vector<Eigen::MatrixXd> persistence_forecast(std::span<const data::WindowSample> samples) {
    std::vector<Eigen::MatrixXd> out;
    for (const auto& s : samples) {
        Eigen::MatrixXd y(s.target.rows(), s.target.cols());
        for (Eigen::Index p = 0; p < y.rows(); ++p)
            y.row(p).setConstant(s.recent.at(static_cast<std::size_t>(p), s.recent.d1 - 1, 0));
        out.push_back(std::move(y));
    }
    return out;
}

nlohmann::ordered_json to_json(const Metrics& m) {
    nlohmann::ordered_json j{{"MSE", m.mse}, {"MAE", m.mae}, {"R2", nullptr}, {"count", m.count}};
    if (m.r2) j["R2"] = *m.r2;
    return j;
}

}  // namespace hypercast::train
