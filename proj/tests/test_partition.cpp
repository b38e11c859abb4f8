#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "fatsim/data/partition.hpp"

using namespace fatsim;
using namespace fatsim::data;

namespace {

void expect_disjoint_cover(const Shards& s, std::size_t n) {
    std::vector<int> seen(n, 0);
    for (const auto& shard : s)
        for (auto i : shard) {
            ASSERT_LT(i, n);
            ++seen[i];
        }
    for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(seen[i], 1) << "index " << i;
}

Dataset labelled(std::size_t classes, std::size_t per_class) { return synthetic_blobs(classes, per_class, 1, 3); }

}  // namespace

TEST(PartitionIid, FiftyOneClients) {
    const auto s = partition_iid(60000, 51, 1);
    ASSERT_EQ(s.size(), 51u);
    std::size_t big = 0;
    for (const auto& shard : s) {
        EXPECT_TRUE(shard.size() == 1176 || shard.size() == 1177);
        big += shard.size() == 1177;
    }
    EXPECT_EQ(big, 24u);
    expect_disjoint_cover(s, 60000);
}

TEST(PartitionIid, SingleClientAndDeterminism) {
    const auto s = partition_iid(100, 1, 9);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].size(), 100u);
    expect_disjoint_cover(s, 100);
    EXPECT_EQ(partition_iid(1000, 7, 4), partition_iid(1000, 7, 4));
    EXPECT_NE(partition_iid(1000, 7, 4), partition_iid(1000, 7, 5));
}

TEST(PartitionIid, Errors) {
    EXPECT_THROW(partition_iid(10, 0, 1), ConfigError);
    EXPECT_THROW(partition_iid(10, -2, 1), ConfigError);
    EXPECT_THROW(partition_iid(3, 4, 1), ConfigError);
}

TEST(PartitionSkew, CoverageForAnyAlpha) {
    const auto ds = labelled(10, 60);
    for (double alpha : {0.05, 0.1, 0.5, 1.0, 100.0})
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto s = partition_label_skew(ds, 8, alpha, seed);
            ASSERT_EQ(s.size(), 8u);
            for (const auto& shard : s) EXPECT_FALSE(shard.empty());
            expect_disjoint_cover(s, ds.size());
        }
}

TEST(PartitionSkew, HugeAlphaMatchesGlobalHistogram) {
    const auto ds = labelled(10, 1000);
    const auto s = partition_label_skew(ds, 5, 1e6, 2);
    for (const auto& shard : s) {
        std::vector<double> h(10, 0.0);
        for (auto i : shard) h[static_cast<std::size_t>(ds.labels[i])] += 1.0;
        for (double c : h) EXPECT_NEAR(c / static_cast<double>(shard.size()), 0.1, 0.05);
    }
}

TEST(PartitionSkew, SmallAlphaConcentratesLabels) {
    const auto ds = labelled(10, 100);
    int hits = 0;
    const int trials = 20;
    for (int seed = 0; seed < trials; ++seed) {
        const auto s = partition_label_skew(ds, 10, 0.1, static_cast<std::uint64_t>(seed));
        bool found = false;
        for (const auto& shard : s) {
            std::vector<double> h(10, 0.0);
            for (auto i : shard) h[static_cast<std::size_t>(ds.labels[i])] += 1.0;
            std::sort(h.rbegin(), h.rend());
            found = found || (h[0] + h[1]) >= 0.8 * static_cast<double>(shard.size());
        }
        hits += found;
    }
    EXPECT_GE(hits, trials * 9 / 10);
}

TEST(PartitionSkew, Errors) {
    const auto ds = labelled(2, 5);
    EXPECT_THROW(partition_label_skew(ds, 3, 0.0, 1), ConfigError);
    EXPECT_THROW(partition_label_skew(ds, 0, 1.0, 1), ConfigError);
    EXPECT_THROW(partition_label_skew(ds, 11, 1.0, 1), ConfigError);
    // 10 samples, 10 clients, extreme skew: every client nonempty is essentially impossible
    EXPECT_THROW(partition_label_skew(ds, 10, 1e-4, 1, 5), ConfigError);
}
