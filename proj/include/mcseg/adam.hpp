#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mcseg/tensor.hpp"

namespace mcseg {

// Adam with bias correction. Moment buffers are allocated on first use and
// keyed by parameter order, so the same state must always be stepped with
// the same parameter list.
template <typename T>
struct AdamState {
    T lr = T(0.005);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    int64_t step = 0;
    std::vector<std::vector<T>> m, v;
};

template <typename T>
void adam_step(std::vector<NamedParam<T>>& params, AdamState<T>& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(static_cast<size_t>(params[i].tensor.numel()), T(0));
            state.v[i].assign(static_cast<size_t>(params[i].tensor.numel()), T(0));
        }
    }
    if (state.m.size() != params.size())
        throw ConfigError("adam_step: state holds " + std::to_string(state.m.size()) +
                          " parameters, got " + std::to_string(params.size()));

    ++state.step;
    const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
    const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));

    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        const int64_t n = p.tensor.numel();
        if (static_cast<int64_t>(state.m[i].size()) != n)
            throw ConfigError("adam_step: parameter " + p.name + " changed size");
        if (!p.tensor.has_grad())
            throw ConfigError("adam_step: parameter " + p.name + " has no gradient");
        T* w = p.tensor.ptr();
        const T* g = p.tensor.grad().data();
        T* m = state.m[i].data();
        T* v = state.v[i].data();
        for (int64_t j = 0; j < n; ++j) {
            if (!std::isfinite(g[j]))
                throw NumericError("adam_step: non-finite gradient in " + p.name);
            m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g[j] * g[j];
            w[j] -= state.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + state.eps);
            if (!std::isfinite(w[j]))
                throw NumericError("adam_step: non-finite weight in " + p.name);
        }
    }
}

}  // namespace mcseg
