#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "crossview/autodiff.hpp"
#include "crossview/rng.hpp"
#include "crossview/tensor.hpp"

namespace testutil {

inline crossview::Tensor rand_tensor(std::vector<int> shape, crossview::Rng& rng,
                                     double scale = 1.0) {
    crossview::Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = (rng.uniform() * 2.0 - 1.0) * scale;
    return t;
}

inline crossview::Tensor randn_tensor(std::vector<int> shape, crossview::Rng& rng,
                                      double scale = 1.0) {
    crossview::Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
    return t;
}

// Central finite differences against already-populated Parameter::grad.
// `fwd` must return the loss for the current parameter values.
// Relative error uses a scale floor so FD truncation noise on near-zero
// entries does not register as failure.
inline double fd_max_rel_err(const std::vector<crossview::Parameter*>& params,
                             const std::function<double()>& fwd, double h = 1e-5,
                             double scale_floor = 1e-3) {
    double max_rel = 0.0;
    for (crossview::Parameter* p : params) {
        for (std::int64_t i = 0; i < p->value.size(); ++i) {
            const double w0 = p->value[i];
            p->value[i] = w0 + h;
            const double lp = fwd();
            p->value[i] = w0 - h;
            const double lm = fwd();
            p->value[i] = w0;
            const double num = (lp - lm) / (2.0 * h);
            const double ana = p->grad[i];
            const double rel =
                std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), scale_floor});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace testutil
