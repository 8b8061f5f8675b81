#pragma once

#include "dpcqa/tensor.hpp"

namespace dpcqa {

template <typename T>
struct AdamConfig {
    T lr = T(1e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(1e-5);  // decoupled: applied directly to the weights
};

template <typename T>
struct AdamState {
    int64_t step_count = 0;
    std::vector<std::vector<T>> m, v;

    void init(const std::vector<TensorPtr<T>>& params) {
        step_count = 0;
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p->data.size(), T(0));
            v.emplace_back(p->data.size(), T(0));
        }
    }
};

// One update over the full parameter list. Bias-corrected moments, then
//   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta.
// A non-finite gradient is an error so training can abort loudly instead
// of drifting on garbage.
template <typename T>
void adam_step(AdamState<T>& state, const std::vector<TensorPtr<T>>& params,
               const AdamConfig<T>& cfg) {
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: state was initialized for a different parameter list");
    state.step_count += 1;
    T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(cfg.beta1), state.step_count));
    T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(cfg.beta2), state.step_count));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = *params[pi];
        if (p.grad.size() != p.data.size())
            throw ShapeError("adam_step: parameter has no gradient buffer");
        auto& mm = state.m[pi];
        auto& vv = state.v[pi];
        for (size_t j = 0; j < p.data.size(); ++j) {
            T g = p.grad[j];
            if (!std::isfinite(static_cast<double>(g)))
                throw NumericalError("adam_step: non-finite gradient");
            mm[j] = cfg.beta1 * mm[j] + (T(1) - cfg.beta1) * g;
            vv[j] = cfg.beta2 * vv[j] + (T(1) - cfg.beta2) * g * g;
            T mhat = mm[j] / bc1;
            T vhat = vv[j] / bc2;
            p.data[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps) +
                         cfg.lr * cfg.weight_decay * p.data[j];
        }
    }
}

}  // namespace dpcqa
