#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fatsim/autodiff/tensor.hpp"
#include "fatsim/error.hpp"

namespace fatsim::nn {

enum class ArchKind : std::uint32_t { conv_small = 0, mlp = 1 };

inline std::string to_string(ArchKind k) { return k == ArchKind::conv_small ? "conv-small" : "mlp"; }

inline ArchKind arch_kind_from_string(const std::string& s) {
    if (s == "conv-small") return ArchKind::conv_small;
    if (s == "mlp") return ArchKind::mlp;
    throw ConfigError("unsupported architecture '" + s + "' (expected conv-small or mlp)");
}

enum class LayerType { conv, dense, relu, max_pool, flatten };

struct LayerSpec {
    LayerType type;
    std::string name;        // empty for parameter-free layers
    std::size_t out = 0;     // conv: output channels, dense: output features
    std::size_t kernel = 0;  // conv only (square)
    std::size_t pad = 0;     // conv only
};

/// A parameterised layer after shape inference.
struct ParamLayer {
    std::string name;
    ad::Shape weight_shape;
    ad::Shape bias_shape;
    std::size_t weight_count() const { return ad::shape_numel(weight_shape) + ad::shape_numel(bias_shape); }
};

struct Architecture {
    ArchKind kind = ArchKind::conv_small;
    ad::Shape input_shape{1, 28, 28};  // C, H, W
    std::size_t classes = 10;
    std::vector<LayerSpec> layers;

    /// Parameter layers in declaration order with inferred shapes. Throws on an unusable spec.
    std::vector<ParamLayer> param_layers() const {
        if (input_shape.size() != 3) throw ConfigError("architecture: input shape must be [C,H,W]");
        if (classes < 2) throw ConfigError("architecture: need at least 2 classes");
        std::vector<ParamLayer> out;
        ad::Shape cur = input_shape;  // [C,H,W] or [F]
        for (const auto& l : layers) {
            switch (l.type) {
                case LayerType::conv: {
                    if (cur.size() != 3) throw ConfigError("architecture: conv layer '" + l.name + "' after flatten");
                    if (l.out == 0 || l.kernel == 0) throw ConfigError("architecture: conv layer '" + l.name + "' has zero size");
                    if (cur[1] + 2 * l.pad < l.kernel || cur[2] + 2 * l.pad < l.kernel)
                        throw ConfigError("architecture: conv layer '" + l.name + "' kernel exceeds input");
                    out.push_back({l.name, {l.out, cur[0], l.kernel, l.kernel}, {l.out}});
                    cur = {l.out, cur[1] + 2 * l.pad - l.kernel + 1, cur[2] + 2 * l.pad - l.kernel + 1};
                    break;
                }
                case LayerType::dense: {
                    if (cur.size() != 1) throw ConfigError("architecture: dense layer '" + l.name + "' needs flatten first");
                    if (l.out == 0) throw ConfigError("architecture: dense layer '" + l.name + "' has zero size");
                    out.push_back({l.name, {cur[0], l.out}, {l.out}});
                    cur = {l.out};
                    break;
                }
                case LayerType::max_pool:
                    if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) throw ConfigError("architecture: invalid max-pool placement");
                    cur = {cur[0], cur[1] / 2, cur[2] / 2};
                    break;
                case LayerType::flatten:
                    cur = {ad::shape_numel(cur)};
                    break;
                case LayerType::relu:
                    break;
            }
        }
        if (cur.size() != 1 || cur[0] != classes)
            throw ConfigError("architecture: final layer yields " + ad::shape_str(cur) + ", expected [" +
                              std::to_string(classes) + "]");
        for (std::size_t i = 0; i < out.size(); ++i)
            for (std::size_t j = 0; j < i; ++j)
                if (out[i].name == out[j].name) throw ConfigError("architecture: duplicate layer name '" + out[i].name + "'");
        return out;
    }

    std::size_t param_count() const {
        std::size_t total = 0;
        for (const auto& p : param_layers()) total += p.weight_count();
        return total;
    }
};

/// conv(16,5x5) relu pool conv(32,5x5) relu pool fc(128) relu fc(classes); valid convolutions.
inline Architecture conv_small(ad::Shape input_shape = {1, 28, 28}, std::size_t classes = 10) {
    Architecture a;
    a.kind = ArchKind::conv_small;
    a.input_shape = std::move(input_shape);
    a.classes = classes;
    a.layers = {
        {LayerType::conv, "conv1", 16, 5, 0}, {LayerType::relu, ""}, {LayerType::max_pool, ""},
        {LayerType::conv, "conv2", 32, 5, 0}, {LayerType::relu, ""}, {LayerType::max_pool, ""},
        {LayerType::flatten, ""},             {LayerType::dense, "fc1", 128},
        {LayerType::relu, ""},                {LayerType::dense, "fc2", classes},
    };
    return a;
}

/// Fully connected net: flatten, then hidden layers fc1..fcK with relu, then the output layer.
inline Architecture mlp(ad::Shape input_shape = {1, 28, 28}, std::vector<std::size_t> hidden = {128},
                        std::size_t classes = 10) {
    Architecture a;
    a.kind = ArchKind::mlp;
    a.input_shape = std::move(input_shape);
    a.classes = classes;
    a.layers.push_back({LayerType::flatten, ""});
    std::size_t idx = 1;
    for (auto h : hidden) {
        a.layers.push_back({LayerType::dense, "fc" + std::to_string(idx++), h});
        a.layers.push_back({LayerType::relu, ""});
    }
    a.layers.push_back({LayerType::dense, "fc" + std::to_string(idx), classes});
    return a;
}

}  // namespace fatsim::nn
