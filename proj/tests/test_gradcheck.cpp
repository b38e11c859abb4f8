#include <gtest/gtest.h>

#include "support/oracles.hpp"

TEST(GradCheck, RandomSmallModelsMatchCentralDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto r = oracle::gradcheck_random_model(1000 + seed);
        EXPECT_LE(r.params, 5000u);
        EXPECT_GE(r.checked, 30u) << "seed " << seed;
        EXPECT_LT(r.max_rel_err, 1e-4) << "seed " << seed << " params " << r.params;
    }
}

TEST(GradCheck, ReferenceLossAgreesWithLibraryForward) {
    using namespace fatsim;
    Rng rng(42);
    for (int rep = 0; rep < 10; ++rep) {
        const auto arch = oracle::random_small_arch(rng);
        const auto p = nn::build_model(arch, rng()).cast<double>();
        const auto flat = p.flatten();
        std::size_t in = 1;
        for (auto e : arch.input_shape) in *= e;
        std::vector<double> xs(2 * in);
        for (auto& v : xs) v = uniform01(rng);
        std::vector<int> ys{0, 1};
        ad::Shape shape{2};
        shape.insert(shape.end(), arch.input_shape.begin(), arch.input_shape.end());
        ad::Graph<double> g;
        const auto vars = nn::bind_params(g, p, false);
        const auto l = ad::cross_entropy(nn::forward(arch, vars, g.constant(ad::BasicTensor<double>(shape, xs))), ys);
        EXPECT_NEAR(l.value().item(), oracle::loss(arch, flat, xs, ys, 1.0), 1e-10);
    }
}
