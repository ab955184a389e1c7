#pragma once

#include <cmath>
#include <span>

#include "fndclip/errors.hpp"
#include "fndclip/layers.hpp"

namespace fndclip {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// One bias-corrected Adam update. Weight decay is the coupled L2 form: it is
/// added to the gradient before the moment updates, and only for params whose
/// `decays` flag is set.
inline void adam_step(std::span<Param* const> params, const AdamOptions& opt) {
    for (Param* p : params) {
        if (!p->grad.same_shape(p->value) || !p->adam_m.same_shape(p->value) ||
            !p->adam_v.same_shape(p->value)) {
            throw StateError("adam_step: gradient/moment shape mismatch for '" + p->name + "'");
        }
    }
    for (Param* p : params) {
        ++p->step_count;
        const double t = static_cast<double>(p->step_count);
        const double bc1 = 1.0 - std::pow(opt.beta1, t);
        const double bc2 = 1.0 - std::pow(opt.beta2, t);
        const double wd = p->decays ? opt.weight_decay : 0.0;
        auto& w = p->value.data();
        const auto& g = p->grad.data();
        auto& m = p->adam_m.data();
        auto& v = p->adam_v.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] + wd * w[i];
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

} // namespace fndclip
