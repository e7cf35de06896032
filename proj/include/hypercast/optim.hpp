#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "hypercast/autodiff.hpp"

namespace hypercast::ad {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are keyed by parameter identity
// and persist across steps.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    // Applies one update from each parameter's current grad. `step` is the
    // 1-based step count used for bias correction.
    void step(std::span<Parameter* const> params, double lr, long step);

    // Convenience: increments an internal counter.
    void step(std::span<Parameter* const> params, double lr) { step(params, lr, ++t_); }

    long steps_taken() const { return t_; }
    const AdamConfig& config() const { return config_; }

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    AdamConfig config_;
    std::unordered_map<const Parameter*, Moments> moments_;
    long t_ = 0;
};

}  // namespace hypercast::ad
