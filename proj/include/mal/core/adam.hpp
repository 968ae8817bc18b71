#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mal/core/errors.hpp"
#include "mal/core/params.hpp"

namespace mal {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    AdamHyper hyper;
    std::uint64_t step = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;

    void reset(const ParameterStore<T>& params) {
        step = 0;
        m = params.zeros_like();
        v = params.zeros_like();
    }
};

// Bias-corrected Adam, in place. A non-finite gradient aborts the whole update
// (parameters and state untouched) with a NumericFault.
template <typename T>
void adam_step(ParameterStore<T>& params, const GradientMap<T>& grads, AdamState<T>& state) {
    MAL_REQUIRE(grads.size() == params.size(), "adam_step: gradient count differs from parameter count");
    if (state.m.size() != params.size()) state.reset(params);
    for (std::size_t p = 0; p < params.size(); ++p) {
        MAL_REQUIRE(grads[p].same_shape(params[p]) && state.m[p].same_shape(params[p]),
                    "adam_step: shape mismatch for " + params.name(p));
        if (!grads[p].all_finite()) throw NumericFault("adam_step", "non-finite gradient for " + params.name(p));
    }
    ++state.step;
    const auto& h = state.hyper;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = params[p].data();
        auto& m = state.m[p].data();
        auto& v = state.v[p].data();
        const auto& g = grads[p].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = static_cast<T>(h.beta1 * m[i] + (1.0 - h.beta1) * g[i]);
            v[i] = static_cast<T>(h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i]);
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] = static_cast<T>(w[i] - h.lr * mhat / (std::sqrt(vhat) + h.eps));
        }
    }
}

}  // namespace mal
