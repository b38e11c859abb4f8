#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fatsim/autodiff/graph.hpp"
#include "fatsim/autodiff/ops.hpp"
#include "fatsim/nn/architecture.hpp"
#include "fatsim/rng.hpp"

namespace fatsim::nn {

struct LayerSlice {
    std::size_t offset = 0;
    std::size_t length = 0;
};

/// Named parameter tensors in canonical order: for each parameter layer,
/// "<layer>.weight" then "<layer>.bias". The flat view concatenates them.
template <typename S>
struct BasicModelParams {
    std::vector<std::pair<std::string, ad::BasicTensor<S>>> tensors;
    std::size_t count = 0;

    std::vector<S> flatten() const {
        std::vector<S> flat;
        flat.reserve(count);
        for (const auto& [name, t] : tensors) flat.insert(flat.end(), t.data.begin(), t.data.end());
        return flat;
    }

    template <typename T>
    BasicModelParams<T> cast() const {
        BasicModelParams<T> out;
        out.count = count;
        for (const auto& [name, t] : tensors) out.tensors.emplace_back(name, t.template cast<T>());
        return out;
    }

    friend bool operator==(const BasicModelParams&, const BasicModelParams&) = default;
};

using ModelParams = BasicModelParams<float>;

/// Rebuilds named tensors from a flat vector laid out by `arch`.
template <typename S>
BasicModelParams<S> unflatten(std::span<const S> flat, const Architecture& arch) {
    const auto layers = arch.param_layers();
    BasicModelParams<S> p;
    p.count = arch.param_count();
    if (flat.size() != p.count)
        throw ShapeError("unflatten: vector has " + std::to_string(flat.size()) + " values, architecture " +
                         to_string(arch.kind) + " needs " + std::to_string(p.count));
    std::size_t off = 0;
    for (const auto& l : layers) {
        for (const auto* shape : {&l.weight_shape, &l.bias_shape}) {
            const std::size_t len = ad::shape_numel(*shape);
            p.tensors.emplace_back(l.name + (shape == &l.weight_shape ? ".weight" : ".bias"),
                                   ad::BasicTensor<S>(*shape, std::vector<S>(flat.begin() + off, flat.begin() + off + len)));
            off += len;
        }
    }
    return p;
}

template <typename S>
BasicModelParams<S> unflatten(const std::vector<S>& flat, const Architecture& arch) {
    return unflatten(std::span<const S>(flat), arch);
}

/// Range of a parameter layer (weights and bias) inside the flat vector.
inline LayerSlice layer_slice(const Architecture& arch, const std::string& layer) {
    std::size_t off = 0;
    for (const auto& l : arch.param_layers()) {
        if (l.name == layer) return {off, l.weight_count()};
        off += l.weight_count();
    }
    throw ConfigError("layer_slice: no parameter layer named '" + layer + "'");
}

/// Layer with the fewest weights (biases included); the earliest wins ties.
inline std::string smallest_layer(const Architecture& arch) {
    const auto layers = arch.param_layers();
    if (layers.empty()) throw ConfigError("smallest_layer: architecture has no parameter layers");
    const auto it = std::min_element(layers.begin(), layers.end(),
                                     [](const ParamLayer& a, const ParamLayer& b) { return a.weight_count() < b.weight_count(); });
    return it->name;
}

/// Fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline ModelParams build_model(const Architecture& arch, std::uint64_t seed) {
    Rng rng(seed);
    ModelParams p;
    p.count = arch.param_count();
    for (const auto& l : arch.param_layers()) {
        // conv weight [O,C,K,K]: fan_in = C*K*K; dense weight [in,out]: fan_in = in
        const std::size_t fan_in = l.weight_shape.size() == 4
                                       ? l.weight_shape[1] * l.weight_shape[2] * l.weight_shape[3]
                                       : l.weight_shape[0];
        const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
        for (const auto* shape : {&l.weight_shape, &l.bias_shape}) {
            ad::Tensor t(*shape);
            for (auto& v : t.data) v = (2.0f * uniform01(rng) - 1.0f) * bound;
            p.tensors.emplace_back(l.name + (shape == &l.weight_shape ? ".weight" : ".bias"), std::move(t));
        }
    }
    return p;
}

/// Graph variables for each parameter tensor, in canonical order.
template <typename S>
std::vector<ad::Var<S>> bind_params(ad::Graph<S>& g, const BasicModelParams<S>& params,
                                     const std::function<bool(const std::string&)>& trainable) {
    std::vector<ad::Var<S>> vars;
    vars.reserve(params.tensors.size());
    for (const auto& [name, t] : params.tensors) vars.push_back(g.leaf(t, trainable && trainable(name)));
    return vars;
}

template <typename S>
std::vector<ad::Var<S>> bind_params(ad::Graph<S>& g, const BasicModelParams<S>& params, bool trainable) {
    return bind_params<S>(g, params, [trainable](const std::string&) { return trainable; });
}

/// Builds the forward pass of `arch` on graph `g`; returns raw logits [N, classes].
template <typename S>
ad::Var<S> forward(const Architecture& arch, std::span<const ad::Var<S>> params, ad::Var<S> x) {
    const auto& xs = x.shape();
    if (xs.size() != 4 || ad::Shape(xs.begin() + 1, xs.end()) != arch.input_shape)
        throw ShapeError("predict: batch shape " + ad::shape_str(xs) + " does not match architecture input [N," +
                         ad::shape_str(arch.input_shape).substr(1));
    std::size_t pi = 0;
    ad::Var<S> h = x;
    for (const auto& l : arch.layers) {
        switch (l.type) {
            case LayerType::conv:
                h = ad::add_bias(ad::conv2d(h, params[pi], l.pad), params[pi + 1]);
                pi += 2;
                break;
            case LayerType::dense:
                h = ad::add_bias(ad::matmul(h, params[pi]), params[pi + 1]);
                pi += 2;
                break;
            case LayerType::relu:
                h = ad::relu(h);
                break;
            case LayerType::max_pool:
                h = ad::max_pool2x2(h);
                break;
            case LayerType::flatten:
                h = ad::flatten(h);
                break;
        }
    }
    return h;
}

template <typename S>
ad::Var<S> forward(const Architecture& arch, const std::vector<ad::Var<S>>& params, ad::Var<S> x) {
    return forward<S>(arch, std::span<const ad::Var<S>>(params), x);
}

/// Raw logits for a batch [N,C,H,W]. Temperature only enters through softmax/loss.
template <typename S>
ad::BasicTensor<S> predict(const Architecture& arch, const BasicModelParams<S>& params, const ad::BasicTensor<S>& batch) {
    ad::Graph<S> g;
    const auto vars = bind_params(g, params, false);
    auto x = g.constant(batch);
    return forward(arch, vars, x).value();
}

template <typename S>
std::vector<int> argmax_rows(const ad::BasicTensor<S>& logits) {
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const S* row = logits.data.data() + i * c;
        out[i] = static_cast<int>(std::max_element(row, row + c) - row);
    }
    return out;
}

}  // namespace fatsim::nn
