#pragma once

// Server-side aggregation of client weight vectors.
//
// Conventions shared by every rule:
//  - distances and means accumulate in double, results are stored as float;
//  - the median of an even count is the lower middle value;
//  - "closest to the median" orders by |v - median|, then by value, then by client id;
//  - Krum ties on the score go to the lowest client id.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fatsim/error.hpp"

namespace fatsim::agg {

struct ClientUpdate {
    int client_id = 0;
    std::vector<float> vector;  // proposed weights, not a gradient
    double sample_count = 1.0;
};

enum class Rule { fedavg, krum, trimmed_mean, bulyan };

inline std::string to_string(Rule r) {
    switch (r) {
        case Rule::fedavg: return "fedavg";
        case Rule::krum: return "krum";
        case Rule::trimmed_mean: return "trimmed_mean";
        case Rule::bulyan: return "bulyan";
    }
    return "?";
}

inline Rule rule_from_string(const std::string& s) {
    if (s == "fedavg") return Rule::fedavg;
    if (s == "krum") return Rule::krum;
    if (s == "trimmed_mean") return Rule::trimmed_mean;
    if (s == "bulyan") return Rule::bulyan;
    throw ConfigError("unknown aggregation rule '" + s + "' (expected fedavg, krum, trimmed_mean or bulyan)");
}

/// Smallest number of updates `rule` accepts for a given f.
inline std::size_t min_updates(Rule rule, int f) {
    const auto uf = static_cast<std::size_t>(std::max(0, f));
    switch (rule) {
        case Rule::fedavg: return 1;
        case Rule::krum: return uf + 3;              // n - f - 2 >= 1 neighbours
        case Rule::trimmed_mean: return 2 * uf + 1;  // |U_j| = n - 2f >= 1
        case Rule::bulyan: return 4 * uf + 3;
    }
    return 1;
}

namespace detail {

inline std::size_t check_updates(const char* rule, std::span<const ClientUpdate> updates) {
    if (updates.empty()) throw AggregationError(std::string(rule) + ": no updates");
    const std::size_t d = updates[0].vector.size();
    for (const auto& u : updates) {
        if (u.vector.size() != d)
            throw ShapeError(std::string(rule) + ": update from client " + std::to_string(u.client_id) + " has length " +
                             std::to_string(u.vector.size()) + ", expected " + std::to_string(d));
        for (float v : u.vector)
            if (!std::isfinite(v))
                throw NumericError(std::string(rule) + ": non-finite value in update from client " + std::to_string(u.client_id));
    }
    return d;
}

inline void check_f(Rule rule, std::size_t n, int f) {
    if (f < 0) throw AggregationError(to_string(rule) + ": f must be >= 0");
    if (n < min_updates(rule, f))
        throw AggregationError(to_string(rule) + ": needs at least " + std::to_string(min_updates(rule, f)) +
                               " updates for f=" + std::to_string(f) + ", got " + std::to_string(n));
}

inline double squared_distance(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc;
}

inline std::vector<double> distance_matrix(std::span<const ClientUpdate> updates) {
    const std::size_t n = updates.size();
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            dist[i * n + j] = dist[j * n + i] = squared_distance(updates[i].vector, updates[j].vector);
    return dist;
}

// Krum scores of `pool` members (indices into the update list) with a fixed neighbour count.
inline std::vector<double> krum_scores(const std::vector<double>& dist, std::size_t n, std::span<const std::size_t> pool,
                                       std::size_t neighbours) {
    std::vector<double> scores;
    scores.reserve(pool.size());
    std::vector<double> row;
    for (auto i : pool) {
        row.clear();
        for (auto j : pool)
            if (j != i) row.push_back(dist[i * n + j]);
        std::sort(row.begin(), row.end());
        double s = 0.0;
        for (std::size_t k = 0; k < std::min(neighbours, row.size()); ++k) s += row[k];
        scores.push_back(s);
    }
    return scores;
}

// Position in `pool` of the lowest score; ties -> lowest client id.
inline std::size_t krum_argmin(std::span<const ClientUpdate> updates, std::span<const std::size_t> pool,
                               const std::vector<double>& scores) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < pool.size(); ++k)
        if (scores[k] < scores[best] ||
            (scores[k] == scores[best] && updates[pool[k]].client_id < updates[pool[best]].client_id))
            best = k;
    return best;
}

// Mean of the `keep` values closest to the lower median of `col` (pairs of value, client id).
inline float trimmed_coordinate(std::vector<std::pair<float, int>>& col, std::size_t keep) {
    std::sort(col.begin(), col.end());
    const double med = col[(col.size() - 1) / 2].first;
    std::sort(col.begin(), col.end(), [med](const auto& a, const auto& b) {
        const double da = std::abs(static_cast<double>(a.first) - med), db = std::abs(static_cast<double>(b.first) - med);
        if (da != db) return da < db;
        if (a.first != b.first) return a.first < b.first;
        return a.second < b.second;
    });
    double acc = 0.0;
    for (std::size_t k = 0; k < keep; ++k) acc += col[k].first;
    return static_cast<float>(acc / static_cast<double>(keep));
}

}  // namespace detail

/// Sample-count weighted mean.
inline std::vector<float> fedavg(std::span<const ClientUpdate> updates) {
    const std::size_t d = detail::check_updates("fedavg", updates);
    double total = 0.0;
    for (const auto& u : updates) {
        if (!(u.sample_count > 0.0)) throw AggregationError("fedavg: sample_count must be positive");
        total += u.sample_count;
    }
    std::vector<double> acc(d, 0.0);
    for (const auto& u : updates)
        for (std::size_t j = 0; j < d; ++j) acc[j] += u.sample_count * static_cast<double>(u.vector[j]);
    std::vector<float> out(d);
    for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(acc[j] / total);
    return out;
}

struct KrumResult {
    std::size_t selected_index = 0;  // position in the input list
    int selected_client = 0;
    std::vector<double> scores;      // aligned with the input list
    std::vector<float> vector;
};

/// Selects the update with the smallest sum of squared distances to its n - f - 2 nearest peers.
inline KrumResult krum(std::span<const ClientUpdate> updates, int f) {
    detail::check_updates("krum", updates);
    const std::size_t n = updates.size();
    detail::check_f(Rule::krum, n, f);
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    const auto dist = detail::distance_matrix(updates);
    KrumResult r;
    r.scores = detail::krum_scores(dist, n, pool, n - static_cast<std::size_t>(f) - 2);
    r.selected_index = detail::krum_argmin(updates, pool, r.scores);
    r.selected_client = updates[r.selected_index].client_id;
    r.vector = updates[r.selected_index].vector;
    return r;
}

/// Per coordinate, averages the n - 2f values closest to the median.
inline std::vector<float> trimmed_mean(std::span<const ClientUpdate> updates, int f) {
    const std::size_t d = detail::check_updates("trimmed_mean", updates);
    const std::size_t n = updates.size();
    detail::check_f(Rule::trimmed_mean, n, f);
    const std::size_t keep = n - 2 * static_cast<std::size_t>(f);
    std::vector<float> out(d);
    std::vector<std::pair<float, int>> col(n);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = {updates[i].vector[j], updates[i].client_id};
        out[j] = detail::trimmed_coordinate(col, keep);
    }
    return out;
}

struct BulyanResult {
    std::vector<int> selected_clients;  // in Krum selection order
    std::vector<float> vector;
};

/// Iterated Krum picks theta = n - 2f candidates; each coordinate then averages
/// the beta = theta - 2f candidate values closest to their median.
/// Inside the loop the pool shrinks below Krum's own bound, so the neighbour
/// count is max(pool - f - 2, 0).
inline BulyanResult bulyan(std::span<const ClientUpdate> updates, int f) {
    const std::size_t d = detail::check_updates("bulyan", updates);
    const std::size_t n = updates.size();
    detail::check_f(Rule::bulyan, n, f);
    const auto uf = static_cast<std::size_t>(f);
    const std::size_t theta = n - 2 * uf, beta = theta - 2 * uf;
    const auto dist = detail::distance_matrix(updates);

    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<std::size_t> chosen;
    BulyanResult r;
    while (chosen.size() < theta) {
        const std::size_t neighbours = pool.size() > uf + 2 ? pool.size() - uf - 2 : 0;
        const auto scores = detail::krum_scores(dist, n, pool, neighbours);
        const std::size_t k = detail::krum_argmin(updates, pool, scores);
        chosen.push_back(pool[k]);
        r.selected_clients.push_back(updates[pool[k]].client_id);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
    }
    r.vector.resize(d);
    std::vector<std::pair<float, int>> col(theta);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < theta; ++i) col[i] = {updates[chosen[i]].vector[j], updates[chosen[i]].client_id};
        r.vector[j] = detail::trimmed_coordinate(col, beta);
    }
    return r;
}

struct AggregationConfig {
    Rule rule = Rule::fedavg;
    int f = 0;
};

struct AggregationResult {
    std::vector<float> vector;
    std::optional<int> selected_client;  // krum
    std::vector<int> selected_clients;   // bulyan
    std::size_t kept_per_coordinate = 0; // trimmed_mean / bulyan / fedavg
};

inline AggregationResult aggregate(const AggregationConfig& cfg, std::span<const ClientUpdate> updates) {
    AggregationResult r;
    switch (cfg.rule) {
        case Rule::fedavg:
            r.vector = fedavg(updates);
            r.kept_per_coordinate = updates.size();
            break;
        case Rule::krum: {
            auto k = krum(updates, cfg.f);
            r.vector = std::move(k.vector);
            r.selected_client = k.selected_client;
            r.kept_per_coordinate = 1;
            break;
        }
        case Rule::trimmed_mean:
            r.vector = trimmed_mean(updates, cfg.f);
            r.kept_per_coordinate = updates.size() - 2 * static_cast<std::size_t>(cfg.f);
            break;
        case Rule::bulyan: {
            auto b = bulyan(updates, cfg.f);
            r.vector = std::move(b.vector);
            r.selected_clients = std::move(b.selected_clients);
            r.kept_per_coordinate = updates.size() - 4 * static_cast<std::size_t>(cfg.f);
            break;
        }
    }
    return r;
}

}  // namespace fatsim::agg
