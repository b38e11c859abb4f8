#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fatsim/error.hpp"

namespace fatsim::nn {

enum class OptimizerKind { adam, sgd };

struct OptimizerSpec {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam moments (or nothing, for SGD) over a flat parameter vector.
struct OptimizerState {
    std::vector<float> m;
    std::vector<float> v;
    std::size_t step = 0;
};

/// One update of `params` in place.
inline void optimizer_step(const OptimizerSpec& spec, OptimizerState& state, std::vector<float>& params,
                           const std::vector<float>& grads) {
    if (grads.size() != params.size())
        throw ShapeError("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    if (spec.kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= static_cast<float>(spec.lr * grads[i]);
        ++state.step;
        return;
    }
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0f);
        state.v.assign(params.size(), 0.0f);
        state.step = 0;
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(spec.beta1, t);
    const double c2 = 1.0 - std::pow(spec.beta2, t);
    const float b1 = static_cast<float>(spec.beta1), b2 = static_cast<float>(spec.beta2);
    const float step = static_cast<float>(spec.lr / c1);
    const float inv_c2 = static_cast<float>(1.0 / c2);
    const float eps = static_cast<float>(spec.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const float g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0f - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0f - b2) * g * g;
        params[i] -= step * state.m[i] / (std::sqrt(state.v[i] * inv_c2) + eps);
    }
}

}  // namespace fatsim::nn
