#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fatsim/aggregation/rules.hpp"
#include "support/oracles.hpp"

using namespace fatsim;
using namespace fatsim::agg;

namespace {

std::vector<ClientUpdate> scalars(std::initializer_list<float> vals) {
    std::vector<ClientUpdate> u;
    int id = 0;
    for (float v : vals) u.push_back({id++, {v}, 1.0});
    return u;
}

}  // namespace

TEST(FedAvg, Examples) {
    EXPECT_EQ(fedavg(scalars({3.5f})), std::vector<float>{3.5f});
    EXPECT_EQ(fedavg(scalars({0.0f, 2.0f})), std::vector<float>{1.0f});
    std::vector<ClientUpdate> w{{0, {0.0f}, 1.0}, {1, {4.0f}, 3.0}};
    EXPECT_EQ(fedavg(w), std::vector<float>{3.0f});
    std::vector<ClientUpdate> bad{{0, {0.0f}, 1.0}, {1, {4.0f, 1.0f}, 1.0}};
    EXPECT_THROW(fedavg(bad), ShapeError);
    EXPECT_THROW(fedavg(std::vector<ClientUpdate>{}), AggregationError);
}

TEST(Krum, WorkedExample) {
    const auto r = krum(scalars({0, 1, 2, 10}), 0);
    EXPECT_EQ(r.scores, (std::vector<double>{5, 2, 5, 145}));
    EXPECT_EQ(r.selected_client, 1);
    EXPECT_EQ(r.vector, std::vector<float>{1.0f});
}

TEST(Krum, IdenticalUpdatesPickLowestId) {
    std::vector<ClientUpdate> u{{7, {1, 2}, 1}, {3, {1, 2}, 1}, {5, {1, 2}, 1}, {9, {1, 2}, 1}};
    const auto r = krum(u, 1);
    EXPECT_EQ(r.selected_client, 3);
    for (double s : r.scores) EXPECT_EQ(s, 0.0);
}

TEST(Krum, OutlierNeverSelected) {
    Rng rng(4);
    for (int rep = 0; rep < 200; ++rep) {
        const int f = static_cast<int>(rng() % 3);
        const std::size_t n = 2 * static_cast<std::size_t>(f) + 3 + rng() % 3;
        auto u = oracle::random_updates(rng, n, 4, false);
        u[rng() % n].vector[rng() % 4] = 1e6f;
        const auto r = krum(u, f);
        EXPECT_LT(std::abs(r.vector[0]) + std::abs(r.vector[1]) + std::abs(r.vector[2]) + std::abs(r.vector[3]), 1e5f);
    }
}

TEST(Krum, TooFewUpdates) {
    EXPECT_THROW(krum(scalars({1, 2, 3}), 1), AggregationError);
    EXPECT_NO_THROW(krum(scalars({1, 2, 3, 4}), 1));
}

TEST(TrimmedMean, WorkedExample) { EXPECT_EQ(trimmed_mean(scalars({1, 2, 3, 4, 100}), 1), std::vector<float>{3.0f}); }

TEST(TrimmedMean, ConstantAndNoTrim) {
    EXPECT_EQ(trimmed_mean(scalars({2.5f, 2.5f, 2.5f}), 1), std::vector<float>{2.5f});
    EXPECT_FLOAT_EQ(trimmed_mean(scalars({1, 2, 6}), 0)[0], 3.0f);
    EXPECT_THROW(trimmed_mean(scalars({1, 2}), 1), AggregationError);
}

TEST(TrimmedMean, EvenCountUsesLowerMedian) {
    // lower median 2: distances {1,0,1,2} -> keep {2} then tie {1,3} -> smaller value 1
    EXPECT_EQ(trimmed_mean(scalars({1, 2, 3, 4}), 1), std::vector<float>{1.5f});
}

TEST(TrimmedMean, SingleOutlierStaysInBenignRange) {
    Rng rng(8);
    for (int rep = 0; rep < 200; ++rep) {
        auto u = oracle::random_updates(rng, 7, 3, false);
        float lo = 1e9f, hi = -1e9f;
        for (std::size_t i = 1; i < u.size(); ++i) lo = std::min(lo, u[i].vector[1]), hi = std::max(hi, u[i].vector[1]);
        u[0].vector[1] = rep % 2 ? 1e30f : -1e30f;
        const auto out = trimmed_mean(u, 1);
        EXPECT_GE(out[1], lo);
        EXPECT_LE(out[1], hi);
    }
}

TEST(Bulyan, FZeroIsPlainMean) {
    Rng rng(2);
    for (int rep = 0; rep < 50; ++rep) {
        const auto u = oracle::random_updates(rng, 3 + rng() % 8, 5, false);
        const auto b = bulyan(u, 0);
        for (std::size_t j = 0; j < 5; ++j) {
            double m = 0.0;
            for (const auto& x : u) m += x.vector[j];
            EXPECT_NEAR(b.vector[j], m / static_cast<double>(u.size()), 1e-6);
        }
        EXPECT_EQ(b.selected_clients.size(), u.size());
    }
}

TEST(Bulyan, IdenticalAndPreconditions) {
    std::vector<ClientUpdate> u;
    for (int i = 0; i < 7; ++i) u.push_back({i, {4.0f, -1.0f}, 1.0});
    EXPECT_EQ(bulyan(u, 1).vector, (std::vector<float>{4.0f, -1.0f}));
    u.pop_back();
    EXPECT_THROW(bulyan(u, 1), AggregationError);
}

TEST(Bulyan, FixedInstanceMatchesOracle) {
    Rng rng(123);
    const auto u = oracle::random_updates(rng, 11, 3, false);
    const auto got = bulyan(u, 2).vector;
    const auto want = oracle::bulyan(u, 2);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(got[j], want[j], 1e-6);
}

TEST(Oracle, ThousandRandomInstancesPerRule) {
    Rng rng(2024);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t d = 1 + rng() % 5;
        const bool grid = rep % 4 == 0;
        {
            const std::size_t n = 3 + rng() % 9;
            const int f = static_cast<int>(rng() % (n - 2));  // n >= f + 3
            const auto u = oracle::random_updates(rng, n, d, grid);
            const auto r = krum(u, f);
            const auto want = oracle::krum_index(u, n - static_cast<std::size_t>(f) - 2);
            ASSERT_EQ(r.selected_index, want) << "krum rep " << rep;
            ASSERT_EQ(r.vector, u[want].vector);
        }
        {
            const std::size_t n = 1 + rng() % 11;
            const int f = static_cast<int>(rng() % ((n - 1) / 2 + 1));  // n >= 2f + 1
            const auto u = oracle::random_updates(rng, n, d, grid);
            const auto got = trimmed_mean(u, f);
            const auto want = oracle::trimmed_mean(u, n - 2 * static_cast<std::size_t>(f));
            for (std::size_t j = 0; j < d; ++j) ASSERT_NEAR(got[j], want[j], 1e-6) << "trimmed rep " << rep;
        }
        {
            const std::size_t n = 3 + rng() % 9;
            const int f = static_cast<int>(rng() % ((n - 3) / 4 + 1));  // n >= 4f + 3
            const auto u = oracle::random_updates(rng, n, d, grid);
            const auto got = bulyan(u, f).vector;
            const auto want = oracle::bulyan(u, static_cast<std::size_t>(f));
            for (std::size_t j = 0; j < d; ++j) ASSERT_NEAR(got[j], want[j], 1e-6) << "bulyan rep " << rep;
        }
    }
}

TEST(Properties, PermutationInvarianceWithDistinctValues) {
    Rng rng(31);
    for (int rep = 0; rep < 100; ++rep) {
        auto u = oracle::random_updates(rng, 11, 4, false);
        const auto k = krum(u, 3);
        const auto t = trimmed_mean(u, 3);
        const auto b = bulyan(u, 2);
        std::shuffle(u.begin(), u.end(), rng);
        EXPECT_EQ(krum(u, 3).selected_client, k.selected_client);
        EXPECT_EQ(trimmed_mean(u, 3), t);
        EXPECT_EQ(bulyan(u, 2).vector, b.vector);
    }
}

TEST(Properties, KrumReturnsAnInputVerbatim) {
    Rng rng(5);
    for (int rep = 0; rep < 100; ++rep) {
        const auto u = oracle::random_updates(rng, 9, 5, rep % 2 == 0);
        const auto r = krum(u, 2);
        EXPECT_TRUE(std::any_of(u.begin(), u.end(), [&](const ClientUpdate& c) { return c.vector == r.vector; }));
    }
}

TEST(Aggregate, DispatchAndNonFinite) {
    auto u = scalars({1, 2, 3, 4, 100});
    EXPECT_EQ(aggregate({Rule::trimmed_mean, 1}, u).kept_per_coordinate, 3u);
    EXPECT_EQ(aggregate({Rule::krum, 1}, u).selected_client, 1);
    u[2].vector[0] = NAN;
    EXPECT_THROW(aggregate({Rule::fedavg, 0}, u), NumericError);
    EXPECT_EQ(rule_from_string("bulyan"), Rule::bulyan);
    EXPECT_THROW(rule_from_string("median"), ConfigError);
}
