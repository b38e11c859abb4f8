#include <gtest/gtest.h>

#include <random>

#include "fatsim/aggregation/rules.hpp"
#include "fatsim/byzantine/attacks.hpp"
#include "fatsim/data/dataset.hpp"

using namespace fatsim;
using namespace fatsim::byz;

TEST(Convergence, Examples) {
    const std::vector<std::vector<float>> two{{0.0f}, {2.0f}};
    EXPECT_EQ(convergence_attack_updates(two, -1.5), std::vector<float>{-0.5f});
    EXPECT_EQ(convergence_attack_updates(two, 0.0), std::vector<float>{1.0f});
    const std::vector<std::vector<float>> same{{1.0f, -3.0f}, {1.0f, -3.0f}, {1.0f, -3.0f}};
    for (double k : {-4.0, 0.5, 10.0}) EXPECT_EQ(convergence_attack_updates(same, k), (std::vector<float>{1.0f, -3.0f}));
    EXPECT_THROW(convergence_attack_updates(std::vector<std::vector<float>>{{1.0f}}, 1.0), ConfigError);
    EXPECT_THROW(convergence_attack_updates(std::vector<std::vector<float>>{{1.0f}, {1.0f, 2.0f}}, 1.0), ShapeError);
}

// Fraction of coordinates where the colluders' shared value is among the n-2f kept by
// trimmed mean, with every benign value drawn i.i.d. N(0,1).
double kept_fraction(double k, int d, std::uint64_t seed) {
    const int n = 51, f = 24;
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<std::vector<float>> colluder_benign(f, std::vector<float>(d));
    for (auto& v : colluder_benign)
        for (auto& x : v) x = normal(rng);
    const auto malicious = convergence_attack_updates(colluder_benign, k);
    std::vector<agg::ClientUpdate> all;
    for (int i = 0; i < n; ++i) {
        agg::ClientUpdate u{i, {}, 1.0};
        if (i < f) {
            u.vector = malicious;
        } else {
            u.vector.resize(d);
            for (auto& x : u.vector) x = normal(rng);
        }
        all.push_back(std::move(u));
    }
    int inside = 0;
    for (int j = 0; j < d; ++j) {
        std::vector<std::pair<float, int>> col;
        for (const auto& u : all) col.push_back({u.vector[j], u.client_id});
        std::sort(col.begin(), col.end());
        const float med = col[(col.size() - 1) / 2].first;
        std::sort(col.begin(), col.end(), [med](const auto& a, const auto& b) {
            const float da = std::abs(a.first - med), db = std::abs(b.first - med);
            return da != db ? da < db : (a.first != b.first ? a.first < b.first : a.second < b.second);
        });
        bool kept = false;
        for (int k = 0; k < n - 2 * f; ++k) kept = kept || col[k].second < f;
        inside += kept;
    }
    return static_cast<double>(inside) / d;
}

TEST(Convergence, LandsInTrimmedMeanKeptSet) {
    // k=-1.5 lands in the kept set on ~77% of coordinates (independent Monte Carlo,
    // 20k trials); an honest client is kept on only 3/51 of them
    const double at_15 = kept_fraction(-1.5, 4000, 17);
    EXPECT_NEAR(at_15, 0.768, 0.03);
    EXPECT_GE(kept_fraction(-1.0, 4000, 18), 0.9);
}

TEST(L2Proximity, Examples) {
    const std::vector<std::vector<float>> refs{{1.0f}, {1.0f}};
    EXPECT_EQ(l2_proximity(std::vector<float>{3.0f}, refs), 4.0);
    const std::vector<std::vector<float>> r2{{0.0f, 2.0f}, {2.0f, 4.0f}};
    EXPECT_EQ(l2_proximity(std::vector<float>{1.0f, 3.0f}, r2), 0.0);
    EXPECT_THROW(l2_proximity(std::vector<float>{1.0f}, r2), ShapeError);
}

namespace {

struct Scenario {
    nn::Architecture arch = nn::mlp({1, 1, 12}, {16, 8}, 3);
    data::Dataset local = data::synthetic_blobs(3, 20, 12, 5, 0.1f);
    nn::ModelParams global = nn::build_model(arch, 3);
};

}  // namespace

TEST(Distillation, NoStudentEpochsReturnsGlobal) {
    Scenario s;
    DistillationAttackConfig cfg;
    cfg.student_epochs = 0;
    cfg.teacher_epochs = 1;
    Rng rng(1);
    const auto u = distillation_attack_update(s.arch, s.global, s.local, cfg, 4, rng);
    EXPECT_EQ(u.vector, s.global.flatten());
    EXPECT_EQ(u.client_id, 4);
}

TEST(Distillation, OnlyTargetSliceChanges) {
    Scenario s;
    const auto g = s.global.flatten();
    for (const std::string layer : {"", "fc1", "fc3"}) {
        DistillationAttackConfig cfg;
        cfg.target_layer = layer;
        cfg.batch_size = 16;
        Rng rng(2);
        const auto u = distillation_attack_update(s.arch, s.global, s.local, cfg, 0, rng);
        const auto slice = nn::layer_slice(s.arch, layer.empty() ? nn::smallest_layer(s.arch) : layer);
        bool changed = false;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const bool in = i >= slice.offset && i < slice.offset + slice.length;
            if (!in) ASSERT_EQ(u.vector[i], g[i]) << layer << " coordinate " << i;
            changed = changed || (in && u.vector[i] != g[i]);
        }
        EXPECT_TRUE(changed) << layer;
    }
}

TEST(Distillation, SmallerStepThanFullFinetune) {
    Scenario s;
    DistillationAttackConfig cfg;
    cfg.batch_size = 16;
    Rng rng(3);
    const auto distilled = distillation_attack_update(s.arch, s.global, s.local, cfg, 0, rng);
    // full fine-tune: same teacher procedure on every layer, no freezing
    auto full = s.global.flatten();
    nn::OptimizerState st;
    Rng rng2(3);
    for (int e = 0; e < cfg.teacher_epochs + cfg.student_epochs; ++e)
        for (const auto& idx : detail::epoch_batches(s.local.size(), cfg.batch_size, rng2)) {
            const auto b = data::gather(s.local, idx);
            ad::Graph<float> g;
            const auto vars = nn::bind_params(g, nn::unflatten(full, s.arch), true);
            g.backward(ad::cross_entropy(nn::forward(s.arch, vars, g.constant(b.x)), b.y, cfg.temperature));
            nn::optimizer_step(cfg.optimizer, st, full, detail::flat_grads(vars, full.size()));
        }
    const std::vector<std::vector<float>> refs{s.global.flatten()};
    EXPECT_LT(l2_proximity(distilled.vector, refs), l2_proximity(full, refs));
}

TEST(Distillation, Validation) {
    Scenario s;
    Rng rng(0);
    DistillationAttackConfig cfg;
    cfg.temperature = 0.0;
    EXPECT_THROW(distillation_attack_update(s.arch, s.global, s.local, cfg, 0, rng), ConfigError);
    cfg = {};
    cfg.target_layer = "conv9";
    EXPECT_THROW(distillation_attack_update(s.arch, s.global, s.local, cfg, 0, rng), ConfigError);
    EXPECT_THROW(distillation_attack_update(s.arch, s.global, data::Dataset{}, DistillationAttackConfig{}, 0, rng),
                 DatasetError);
}
