#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "fatsim/aggregation/rules.hpp"
#include "fatsim/attacks/pgd.hpp"
#include "fatsim/autodiff/graph.hpp"
#include "fatsim/autodiff/ops.hpp"
#include "fatsim/data/dataset.hpp"
#include "fatsim/fl/config.hpp"
#include "fatsim/nn/model.hpp"
#include "fatsim/nn/optimizer.hpp"
#include "fatsim/rng.hpp"

namespace fatsim::fl {

struct LocalStepResult {
    agg::ClientUpdate update;
    std::vector<std::size_t> adversarial_per_batch;
};

/// Number of adversarial samples K in a minibatch of N for a K/N ratio.
inline std::size_t adversarial_count(double ratio, std::size_t batch) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("K/N ratio must lie in [0,1]");
    return std::min(batch, static_cast<std::size_t>(std::lround(ratio * static_cast<double>(batch))));
}

/// Federated adversarial training on one client, starting from the global weights.
/// For each of `local.steps` minibatches of N samples, the first K = round(ratio * N)
/// are replaced by PGD examples crafted against the current local weights, then the
/// mixed batch's mean cross-entropy gradient is applied with the local optimizer.
inline LocalStepResult local_fat_step(const nn::Architecture& arch, std::span<const float> global,
                                      const data::Dataset& train, std::span<const std::size_t> shard, double ratio,
                                      const attacks::PgdConfig& pgd, const LocalSpec& local, nn::OptimizerState& state,
                                      int client_id, Rng& rng) {
    if (shard.empty()) throw DatasetError("local_fat_step: client " + std::to_string(client_id) + " has no data");
    const std::size_t n = std::min(local.batch_size, shard.size());
    const std::size_t k = adversarial_count(ratio, n);
    std::vector<float> weights(global.begin(), global.end());
    LocalStepResult out;
    std::vector<std::size_t> order(shard.begin(), shard.end());

    for (int step = 0; step < local.steps; ++step) {
        // partial Fisher-Yates: the first n entries become this step's batch
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
            std::swap(order[i], order[pick(rng)]);
        }
        auto batch = data::gather(train, std::span<const std::size_t>(order.data(), n));
        auto params = nn::unflatten(weights, arch);
        if (k > 0) {
            const std::size_t per = batch.x.numel() / n;
            ad::Shape adv_shape = batch.x.shape;
            adv_shape[0] = k;
            ad::Tensor head(adv_shape, std::vector<float>(batch.x.data.begin(),
                                                          batch.x.data.begin() + static_cast<std::ptrdiff_t>(k * per)));
            const auto adv = attacks::pgd_attack(arch, params, head, std::span<const int>(batch.y.data(), k), pgd, rng);
            std::copy(adv.data.begin(), adv.data.end(), batch.x.data.begin());
        }
        ad::Graph<float> g;
        const auto vars = nn::bind_params(g, params, true);
        auto x = g.constant(std::move(batch.x));
        g.backward(ad::cross_entropy(nn::forward(arch, vars, x), batch.y));
        std::vector<float> grads;
        grads.reserve(weights.size());
        for (const auto& v : vars) grads.insert(grads.end(), v.grad().data.begin(), v.grad().data.end());
        nn::optimizer_step(local.optimizer, state, weights, grads);
        out.adversarial_per_batch.push_back(k);
    }
    for (float v : weights)
        if (!std::isfinite(v)) throw NumericError("local_fat_step: client " + std::to_string(client_id) + " diverged");
    out.update = agg::ClientUpdate{client_id, std::move(weights), static_cast<double>(shard.size())};
    return out;
}

}  // namespace fatsim::fl
