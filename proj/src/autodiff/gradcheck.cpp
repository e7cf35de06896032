#include "hypercast/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hypercast::ad {
namespace {

void track_worst(GradCheckResult& r, std::size_t index, double a, double n) {
    r.analytic_all.push_back(a);
    r.numeric_all.push_back(n);
    const double e = relative_error(a, n);
    if (e > r.max_rel_error || (index == 0 && r.max_rel_error == 0.0)) {
        r.max_rel_error = e;
        r.worst_index = index;
        r.analytic = a;
        r.numeric = n;
    }
}

}  // namespace

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

std::size_t GradCheckResult::mismatches(double rtol, double atol) const {
    std::size_t bad = 0;
    for (std::size_t i = 0; i < analytic_all.size(); ++i) {
        const double a = analytic_all[i], n = numeric_all[i];
        if (!(std::abs(a - n) <= atol + rtol * (std::abs(a) + std::abs(n)))) ++bad;
    }
    return bad;
}

bool GradCheckResult::allclose(double rtol, double atol) const { return mismatches(rtol, atol) == 0; }

GradCheckResult gradient_check(const InputFn& f, const Shape& shape, const std::vector<double>& x,
                               double eps) {
    std::vector<double> analytic;
    {
        Tape tape;
        Tensor xt = tape.variable(shape, x);
        Tensor y = f(tape, xt);
        tape.backward(y);
        auto g = xt.grad();
        analytic.assign(g.begin(), g.end());
        if (analytic.empty()) analytic.assign(x.size(), 0.0);
    }
    auto eval = [&](const std::vector<double>& point) {
        Tape tape;
        tape.set_grad_enabled(false);
        return f(tape, tape.constant(shape, point)).item();
    };
    GradCheckResult r;
    std::vector<double> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + eps;
        const double up = eval(probe);
        probe[i] = x[i] - eps;
        const double down = eval(probe);
        probe[i] = x[i];
        track_worst(r, i, analytic[i], (up - down) / (2.0 * eps));
    }
    return r;
}

GradCheckResult gradient_check_params(const ParamFn& f, std::span<Parameter* const> params, double eps) {
    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        Tensor y = f(tape);
        tape.backward(y);
    }
    std::vector<std::vector<double>> analytic;
    for (Parameter* p : params) {
        analytic.push_back(p->grad());
        p->zero_grad();
    }
    auto eval = [&]() {
        Tape tape;
        tape.set_grad_enabled(false);
        return f(tape).item();
    };
    GradCheckResult r;
    std::size_t flat = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& v = params[pi]->value();
        for (std::size_t i = 0; i < v.size(); ++i, ++flat) {
            const double orig = v[i];
            v[i] = orig + eps;
            const double up = eval();
            v[i] = orig - eps;
            const double down = eval();
            v[i] = orig;
            track_worst(r, flat, analytic[pi][i], (up - down) / (2.0 * eps));
        }
    }
    return r;
}

}  // namespace hypercast::ad
