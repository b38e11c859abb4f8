#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fatsim/data/dataset.hpp"
#include "fatsim/error.hpp"
#include "fatsim/rng.hpp"

namespace fatsim::data {

/// shards[client] = sample indices owned by that client.
using Shards = std::vector<std::vector<std::size_t>>;

/// Per-client train and test indices.
struct Partition {
    Shards train;
    Shards test;
};

/// Seeded shuffle, then contiguous shards whose sizes differ by at most one.
inline Shards partition_iid(std::size_t n_samples, int n_clients, std::uint64_t seed) {
    if (n_clients <= 0) throw ConfigError("partition_iid: n_clients must be positive, got " + std::to_string(n_clients));
    const auto k = static_cast<std::size_t>(n_clients);
    if (k > n_samples)
        throw ConfigError("partition_iid: " + std::to_string(k) + " clients for " + std::to_string(n_samples) + " samples");
    std::vector<std::size_t> idx(n_samples);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    Shards shards(k);
    const std::size_t base = n_samples / k, extra = n_samples % k;
    std::size_t off = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t len = base + (c < extra ? 1 : 0);
        shards[c].assign(idx.begin() + static_cast<std::ptrdiff_t>(off), idx.begin() + static_cast<std::ptrdiff_t>(off + len));
        off += len;
    }
    return shards;
}

inline Shards partition_iid(const Dataset& ds, int n_clients, std::uint64_t seed) {
    return partition_iid(ds.size(), n_clients, seed);
}

/// Label-skewed split: for every class, client proportions are drawn from
/// Dirichlet(alpha) and the class's shuffled samples are cut accordingly.
/// The whole draw is repeated until every client owns at least one sample.
inline Shards partition_label_skew(const Dataset& ds, int n_clients, double alpha, std::uint64_t seed,
                                   int max_retries = 100) {
    if (n_clients <= 0) throw ConfigError("partition_label_skew: n_clients must be positive");
    if (!(alpha > 0.0)) throw ConfigError("partition_label_skew: alpha must be positive");
    const auto k = static_cast<std::size_t>(n_clients);
    if (k > ds.size()) throw ConfigError("partition_label_skew: more clients than samples");

    std::vector<std::vector<std::size_t>> by_class(ds.classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    Rng rng(seed);
    std::gamma_distribution<double> gamma(alpha, 1.0);
    for (int attempt = 0; attempt < max_retries; ++attempt) {
        Shards shards(k);
        for (auto members : by_class) {
            if (members.empty()) continue;
            std::shuffle(members.begin(), members.end(), rng);
            std::vector<double> w(k);
            double total = 0.0;
            for (auto& x : w) total += (x = gamma(rng));
            if (!(total > 0.0)) {  // every draw underflowed: give the class to one client
                std::fill(w.begin(), w.end(), 0.0);
                w[rng() % k] = total = 1.0;
            }
            double cum = 0.0;
            std::size_t start = 0;
            for (std::size_t c = 0; c < k; ++c) {
                cum += w[c] / total;
                const std::size_t end =
                    c + 1 == k ? members.size()
                               : std::min(members.size(), static_cast<std::size_t>(std::floor(cum * static_cast<double>(members.size()))));
                for (std::size_t i = start; i < std::max(start, end); ++i) shards[c].push_back(members[i]);
                start = std::max(start, end);
            }
        }
        if (std::all_of(shards.begin(), shards.end(), [](const auto& s) { return !s.empty(); })) {
            for (auto& s : shards) std::sort(s.begin(), s.end());
            return shards;
        }
    }
    throw ConfigError("partition_label_skew: could not give every client a sample after " +
                      std::to_string(max_retries) + " draws (alpha=" + std::to_string(alpha) + ")");
}

}  // namespace fatsim::data
