#pragma once

// Training protocol: MSE + Adam, plateau-halving learning rate, early stopping
// on the training loss, and evaluation metrics in original demand units.

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hypercast/data.hpp"
#include "hypercast/model.hpp"

namespace hypercast::train {

struct TrainConfig {
    std::size_t batch_size = 32;
    double lr_init = 1e-5;
    double lr_min = 1e-6;
    double lr_factor = 0.5;
    long lr_patience = 100;
    long early_stop_patience = 500;
    // Unset: 1.0, or 1e-4 when the model normalizes its inputs.
    std::optional<double> early_stop_min_delta;
    long max_epochs = 4500;
    std::uint64_t seed = 0;
    bool shuffle_train = true;

    void validate() const;  // throws model::ConfigError
    double min_delta(bool normalized_loss) const;
};

nlohmann::ordered_json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
    long epoch = 0;
    double loss = 0.0;
    double lr = 0.0;  // rate used during this epoch
    double wall_seconds = 0.0;
};

enum class StopReason { early_stop, max_epochs };
const char* stop_reason_name(StopReason r);

struct TrainLog {
    std::vector<EpochRecord> epochs;
    StopReason stop = StopReason::max_epochs;
    long best_epoch = 0;  // epoch of the minimum recorded loss
    double best_loss = 0.0;
};

// Wall time is left out unless asked for so that seeded logs are byte-stable.
void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path, bool include_wall_time = false);

// Scheduler and early-stopping state driven only by the epoch loss stream.
class PlateauController {
public:
    PlateauController(const TrainConfig& cfg, double min_delta);

    // Feed the loss of the epoch just finished; returns true when training
    // should stop. lr() then gives the rate for the next epoch.
    bool observe(double loss);

    double lr() const { return lr_; }
    long epochs_seen() const { return epoch_; }
    long last_improvement() const { return best_epoch_; }  // min_delta-qualified

private:
    TrainConfig cfg_;
    double min_delta_;
    double lr_;
    long epoch_ = 0;
    long best_epoch_ = 0;
    double best_ = 0.0;
    long since_best_ = 0;
    long since_lr_change_ = 0;
};

// Generic epoch loop: calls `run_epoch(epoch, lr)` (1-based epoch) which
// returns the mean epoch loss, and `on_epoch(record, is_new_minimum)` after
// each one. Stops on early stopping or the epoch cap.
TrainLog drive_epochs(const TrainConfig& cfg, double min_delta, const std::function<double(long, double)>& run_epoch,
                      const std::function<void(const EpochRecord&, bool)>& on_epoch = {},
                      bool record_wall_time = true);

// ---- batching -------------------------------------------------------------------

// Per-sample demand hypergraphs for both timescales, built once from feature
// channel 0 (the construction is deterministic, so caching is exact).
struct SampleGraphs {
    std::vector<Eigen::MatrixXd> recent;
    std::vector<Eigen::MatrixXd> weekly;
};
SampleGraphs build_sample_graphs(std::span<const data::WindowSample> samples, std::size_t k);

model::ModelInput make_input(std::span<const data::WindowSample> samples, std::span<const std::size_t> indices,
                             const Eigen::MatrixXd& h_dist, const SampleGraphs& graphs);

// Targets of the selected samples as a flat [B, N, T_f] vector, z-scored
// with the model's statistics when it normalizes.
std::vector<double> make_targets(const model::Model& m, std::span<const data::WindowSample> samples,
                                 std::span<const std::size_t> indices);

// ---- training and evaluation ---------------------------------------------------

struct TrainHooks {
    std::function<void(const EpochRecord&, bool is_new_minimum)> on_epoch;
};

// Trains in place and leaves the parameters of the minimum-loss epoch in
// the model.
TrainLog train(model::Model& m, std::span<const data::WindowSample> samples, const Eigen::MatrixXd& h_dist,
               const TrainConfig& cfg, const TrainHooks& hooks = {}, bool record_wall_time = true);

// Predictions in original units, one N x T_f matrix per sample (eval mode).
std::vector<Eigen::MatrixXd> predict(const model::Model& m, std::span<const data::WindowSample> samples,
                                     const Eigen::MatrixXd& h_dist, std::size_t batch_size = 32);

struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
    std::optional<double> r2;  // absent when the targets have zero variance
    std::size_t count = 0;
};

Metrics compute_metrics(std::span<const Eigen::MatrixXd> predictions, std::span<const Eigen::MatrixXd> targets);
Metrics evaluate(const model::Model& m, std::span<const data::WindowSample> samples, const Eigen::MatrixXd& h_dist,
                 std::size_t batch_size = 32);

// Yhat_{t+i} = x_t for every horizon step.
std::vector<Eigen::MatrixXd> persistence_forecast(std::span<const data::WindowSample> samples);

nlohmann::ordered_json to_json(const Metrics& m);

}  // namespace hypercast::train
