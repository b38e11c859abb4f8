#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fatsim/aggregation/rules.hpp"
#include "fatsim/autodiff/graph.hpp"
#include "fatsim/autodiff/ops.hpp"
#include "fatsim/data/dataset.hpp"
#include "fatsim/error.hpp"
#include "fatsim/nn/model.hpp"
#include "fatsim/nn/optimizer.hpp"
#include "fatsim/rng.hpp"

namespace fatsim::byz {

/// mu + k * sigma per coordinate, with mu and the population sigma taken over
/// the colluders' honestly computed updates. Every colluder submits the result.
inline std::vector<float> convergence_attack_updates(std::span<const std::vector<float>> benign, double k) {
    if (benign.size() < 2)
        throw ConfigError("convergence attack: need at least 2 colluder updates to estimate sigma, got " +
                          std::to_string(benign.size()));
    const std::size_t d = benign[0].size();
    for (const auto& b : benign)
        if (b.size() != d) throw ShapeError("convergence attack: colluder updates differ in length");
    const double n = static_cast<double>(benign.size());
    std::vector<float> out(d);
    for (std::size_t j = 0; j < d; ++j) {
        double mu = 0.0;
        for (const auto& b : benign) mu += b[j];
        mu /= n;
        double var = 0.0;
        for (const auto& b : benign) var += (b[j] - mu) * (b[j] - mu);
        out[j] = static_cast<float>(mu + k * std::sqrt(var / n));
    }
    return out;
}

/// Squared L2 distance from `update` to the mean of `references`.
inline double l2_proximity(std::span<const float> update, std::span<const std::vector<float>> references) {
    if (references.empty()) throw ConfigError("l2_proximity: no reference updates");
    for (const auto& r : references)
        if (r.size() != update.size())
            throw ShapeError("l2_proximity: length mismatch (" + std::to_string(update.size()) + " vs " +
                             std::to_string(r.size()) + ")");
    double acc = 0.0;
    for (std::size_t j = 0; j < update.size(); ++j) {
        double mean = 0.0;
        for (const auto& r : references) mean += r[j];
        mean /= static_cast<double>(references.size());
        const double diff = static_cast<double>(update[j]) - mean;
        acc += diff * diff;
    }
    return acc;
}

struct DistillationAttackConfig {
    double temperature = 100.0;
    std::string target_layer;  // empty: the smallest layer of the architecture
    int teacher_epochs = 2;
    int student_epochs = 2;
    std::size_t batch_size = 64;
    nn::OptimizerSpec optimizer{};

    void validate(const nn::Architecture& arch) const {
        if (!(temperature > 0.0)) throw ConfigError("distillation: temperature must be > 0");
        if (teacher_epochs < 0 || student_epochs < 0) throw ConfigError("distillation: epoch counts must be >= 0");
        if (batch_size == 0) throw ConfigError("distillation: batch_size must be > 0");
        if (!target_layer.empty()) nn::layer_slice(arch, target_layer);
    }
};

namespace detail {

// Shuffled minibatches covering [0, n) once.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n; s += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch_size)));
    return out;
}

inline std::vector<float> flat_grads(const std::vector<ad::Var<float>>& vars, std::size_t count) {
    std::vector<float> g;
    g.reserve(count);
    for (const auto& v : vars) {
        const auto& t = v.grad();
        g.insert(g.end(), t.data.begin(), t.data.end());
    }
    return g;
}

}  // namespace detail

/// Local defensive distillation against a Krum-style server:
///  1. teacher = global weights trained on hard labels with a temperature-T softmax;
///  2. soft labels = teacher's temperature-T softmax on the local inputs;
///  3. student = global weights with only `target_layer` trained on the soft labels at temperature T;
///  4. the submitted vector is the global vector with only that layer's slice replaced.
inline agg::ClientUpdate distillation_attack_update(const nn::Architecture& arch, const nn::ModelParams& global,
                                                    const data::Dataset& local, const DistillationAttackConfig& cfg,
                                                    int client_id, Rng& rng) {
    cfg.validate(arch);
    if (local.size() == 0) throw DatasetError("distillation: colluder has no local data");
    const std::string layer = cfg.target_layer.empty() ? nn::smallest_layer(arch) : cfg.target_layer;
    const auto slice = nn::layer_slice(arch, layer);
    const auto global_flat = global.flatten();

    // 1. teacher
    std::vector<float> teacher_flat = global_flat;
    nn::OptimizerState teacher_state;
    for (int e = 0; e < cfg.teacher_epochs; ++e)
        for (const auto& idx : detail::epoch_batches(local.size(), cfg.batch_size, rng)) {
            const auto batch = data::gather(local, idx);
            ad::Graph<float> g;
            const auto vars = nn::bind_params(g, nn::unflatten(teacher_flat, arch), true);
            auto x = g.constant(batch.x);
            g.backward(ad::cross_entropy(nn::forward(arch, vars, x), batch.y, cfg.temperature));
            nn::optimizer_step(cfg.optimizer, teacher_state, teacher_flat, detail::flat_grads(vars, global.count));
        }

    std::vector<float> student_flat = global_flat;
    if (cfg.student_epochs > 0) {
        // 2. soft labels
        const auto teacher = nn::unflatten(teacher_flat, arch);
        std::vector<std::size_t> all(local.size());
        std::iota(all.begin(), all.end(), 0);
        const auto logits = nn::predict(arch, teacher, data::gather(local, all).x);
        const auto probs = ad::detail::softmax_rows(logits, cfg.temperature);
        const std::size_t classes = arch.classes;

        // 3. student, one trainable layer
        const std::string weight_name = layer + ".weight", bias_name = layer + ".bias";
        std::vector<float> layer_params(student_flat.begin() + static_cast<std::ptrdiff_t>(slice.offset),
                                        student_flat.begin() + static_cast<std::ptrdiff_t>(slice.offset + slice.length));
        nn::OptimizerState student_state;
        for (int e = 0; e < cfg.student_epochs; ++e)
            for (const auto& idx : detail::epoch_batches(local.size(), cfg.batch_size, rng)) {
                const auto batch = data::gather(local, idx);
                ad::Tensor targets({idx.size(), classes});
                for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t c = 0; c < classes; ++c)
                        targets.data[i * classes + c] = static_cast<float>(probs[idx[i] * classes + c]);
                std::copy(layer_params.begin(), layer_params.end(),
                          student_flat.begin() + static_cast<std::ptrdiff_t>(slice.offset));
                const auto params = nn::unflatten(student_flat, arch);
                ad::Graph<float> g;
                const auto vars = nn::bind_params<float>(
                    g, params, [&](const std::string& name) { return name == weight_name || name == bias_name; });
                auto x = g.constant(batch.x);
                g.backward(ad::soft_cross_entropy(nn::forward(arch, vars, x), targets, cfg.temperature));
                std::vector<float> grads;
                grads.reserve(slice.length);
                for (std::size_t t = 0; t < params.tensors.size(); ++t)
                    if (params.tensors[t].first == weight_name || params.tensors[t].first == bias_name) {
                        const auto& gt = vars[t].grad();
                        grads.insert(grads.end(), gt.data.begin(), gt.data.end());
                    }
                nn::optimizer_step(cfg.optimizer, student_state, layer_params, grads);
            }
        // 4. splice the trained layer into the global vector
        std::copy(layer_params.begin(), layer_params.end(), student_flat.begin() + static_cast<std::ptrdiff_t>(slice.offset));
    }
    for (float v : student_flat)
        if (!std::isfinite(v)) throw NumericError("distillation: non-finite student weights");
    return agg::ClientUpdate{client_id, std::move(student_flat), static_cast<double>(local.size())};
}

}  // namespace fatsim::byz
