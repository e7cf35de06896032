#include "hypercast/optim.hpp"

#include <cmath>

namespace hypercast::ad {

void Adam::step(std::span<Parameter* const> params, double lr, long step) {
    if (step < 1) throw std::invalid_argument("adam: step count must be >= 1");
    for (const Parameter* p : params)
        for (double g : p->grad())
            if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in parameter " + p->name());

    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (Parameter* p : params) {
        Moments& mom = moments_[p];
        if (mom.m.size() != p->size()) {
            mom.m.assign(p->size(), 0.0);
            mom.v.assign(p->size(), 0.0);
        }
        auto& w = p->value();
        const auto& g = p->grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g[i];
            mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = mom.m[i] / c1;
            const double vhat = mom.v[i] / c2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
    if (step > t_) t_ = step;
}

}  // namespace hypercast::ad
