#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <stdexcept>

#include "fatsim/parallel.hpp"
#include "fatsim/rng.hpp"

using namespace fatsim;

TEST(Rng, DeriveSeedIsOrderSensitive) {
    EXPECT_EQ(derive_seed({1, 2, 3}), derive_seed({1, 2, 3}));
    EXPECT_NE(derive_seed({1, 2, 3}), derive_seed({1, 3, 2}));
    EXPECT_NE(derive_seed({1, 2}), derive_seed({1, 2, 0}));
    std::set<std::uint64_t> seen;
    for (std::uint64_t c = 0; c < 51; ++c)
        for (std::uint64_t r = 0; r < 200; ++r) seen.insert(derive_seed({7, c, r}));
    EXPECT_EQ(seen.size(), 51u * 200u);
}

TEST(Rng, Uniform01Range) {
    Rng rng(3);
    double total = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const float u = uniform01(rng);
        ASSERT_GE(u, 0.0f);
        ASSERT_LT(u, 1.0f);
        total += u;
    }
    EXPECT_NEAR(total / 100000.0, 0.5, 0.01);
}

TEST(Parallel, ResultsIndependentOfWorkers) {
    auto run = [](int workers) {
        std::vector<std::uint64_t> out(37);
        parallel_for(out.size(), workers, [&](std::size_t i) {
            Rng rng(derive_seed({5, i}));
            out[i] = rng();
        });
        return out;
    };
    EXPECT_EQ(run(1), run(4));
}

TEST(Parallel, RethrowsLowestIndexError) {
    try {
        parallel_for(20, 3, [](std::size_t i) {
            if (i == 4 || i == 11) throw std::runtime_error(std::to_string(i));
        });
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_STREQ(e.what(), "4");
    }
}
