#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fatsim/autodiff/graph.hpp"
#include "fatsim/autodiff/ops.hpp"
#include "fatsim/rng.hpp"

using namespace fatsim;
using namespace fatsim::ad;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = lo + (hi - lo) * uniform01(rng);
    return t;
}

}  // namespace

TEST(Tensor, RejectsBadShapes) {
    EXPECT_THROW(Tensor(Shape{}), ShapeError);
    EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
    EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
    EXPECT_EQ(Tensor({2, 3}).numel(), 6u);
}

TEST(Ops, ReluExample) {
    Graph<float> g;
    auto x = g.constant(Tensor({3}, {-1.0f, 0.0f, 2.0f}));
    EXPECT_EQ(relu(x).value().data, (std::vector<float>{0, 0, 2}));
}

TEST(Ops, MatmulIdentity) {
    Rng rng(1);
    Graph<float> g;
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.data[i * 3 + i] = 1.0f;
    const auto a = random_tensor({3, 3}, rng);
    EXPECT_EQ(matmul(g.constant(eye), g.constant(a)).value(), a);
}

TEST(Ops, MatmulShapeErrorNamesDims) {
    Graph<float> g;
    auto a = g.constant(Tensor({2, 3}));
    auto b = g.constant(Tensor({4, 5}));
    try {
        matmul(a, b);
        FAIL();
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("matmul"), std::string::npos);
        EXPECT_NE(msg.find("3"), std::string::npos);
        EXPECT_NE(msg.find("4"), std::string::npos);
    }
}

TEST(Ops, ConvOnesCenterIsNine) {
    Graph<float> g;
    auto x = g.constant(Tensor({1, 1, 5, 5}, 1.0f));
    auto w = g.constant(Tensor({1, 1, 3, 3}, 1.0f));
    const auto y = conv2d(x, w, 1).value();
    ASSERT_EQ(y.shape, (Shape{1, 1, 5, 5}));
    EXPECT_EQ(y.data[2 * 5 + 2], 9.0f);
    EXPECT_EQ(y.data[0], 4.0f);  // corner sees a 2x2 window under zero padding
}

TEST(Ops, ConvMatchesDirectLoop) {
    Rng rng(7);
    const auto x = random_tensor({2, 3, 6, 7}, rng);
    const auto w = random_tensor({4, 3, 3, 3}, rng);
    Graph<float> g;
    const auto y = conv2d(g.constant(x), g.constant(w), 1).value();
    ASSERT_EQ(y.shape, (Shape{2, 4, 6, 7}));
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 4; ++o)
            for (int i = 0; i < 6; ++i)
                for (int j = 0; j < 7; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < 3; ++c)
                        for (int ki = 0; ki < 3; ++ki)
                            for (int kj = 0; kj < 3; ++kj) {
                                const int r = i + ki - 1, s = j + kj - 1;
                                if (r < 0 || r >= 6 || s < 0 || s >= 7) continue;
                                acc += x.data[((n * 3 + c) * 6 + r) * 7 + s] * w.data[((o * 3 + c) * 3 + ki) * 3 + kj];
                            }
                    EXPECT_NEAR(y.data[((n * 4 + o) * 6 + i) * 7 + j], acc, 1e-5);
                }
}

TEST(Ops, MaxPoolPicksWindowMax) {
    Graph<float> g;
    auto x = g.leaf(Tensor({1, 1, 2, 4}, {1, 5, 2, 2, 3, 0, 7, 1}), true);
    auto y = max_pool2x2(x);
    EXPECT_EQ(y.value().data, (std::vector<float>{5, 7}));
    g.backward(sum(y));
    EXPECT_EQ(x.grad().data, (std::vector<float>{0, 1, 0, 0, 0, 0, 1, 0}));
}

TEST(Ops, ElementwiseAndBias) {
    Graph<float> g;
    auto a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    auto b = g.constant(Tensor({2, 2}, {4, 3, 2, 1}));
    EXPECT_EQ(add(a, b).value().data, (std::vector<float>{5, 5, 5, 5}));
    EXPECT_EQ(sub(a, b).value().data, (std::vector<float>{-3, -1, 1, 3}));
    EXPECT_EQ(mul(a, b).value().data, (std::vector<float>{4, 6, 6, 4}));
    EXPECT_EQ(scale(a, 2.0f).value().data, (std::vector<float>{2, 4, 6, 8}));
    EXPECT_EQ(add_bias(a, g.constant(Tensor({2}, {10, 20}))).value().data, (std::vector<float>{11, 22, 13, 24}));
    EXPECT_THROW(add(a, g.constant(Tensor({4}))), ShapeError);
    EXPECT_EQ(reshape(a, {4}).value().shape, (Shape{4}));
    EXPECT_THROW(reshape(a, {3}), ShapeError);
}

TEST(Backward, SumOfSquares) {
    Graph<float> g;
    auto x = g.leaf(Tensor({3}, {1, 2, 3}), true);
    g.backward(sum(mul(x, x)));
    EXPECT_EQ(x.grad().data, (std::vector<float>{2, 4, 6}));
}

TEST(Backward, CrossEntropyTwoClasses) {
    Graph<float> g;
    auto z = g.leaf(Tensor({1, 2}, {0, 0}), true);
    const std::vector<int> y{0};
    auto loss = cross_entropy(z, y);
    EXPECT_NEAR(loss.value().item(), std::log(2.0), 1e-6);
    g.backward(loss);
    EXPECT_NEAR(z.grad().data[0], -0.5f, 1e-7);
    EXPECT_NEAR(z.grad().data[1], 0.5f, 1e-7);
}

TEST(Backward, NonScalarLossAndDoubleBackwardRejected) {
    Graph<float> g;
    auto x = g.leaf(Tensor({2}, {1, 2}), true);
    EXPECT_THROW(g.backward(mul(x, x)), ShapeError);
    auto l = sum(x);
    g.backward(l);
    EXPECT_THROW(g.backward(l), Error);
}

TEST(Backward, NonFiniteLossIsAnError) {
    Graph<float> g;
    auto x = g.leaf(Tensor({2}, {INFINITY, 1}), true);
    EXPECT_THROW(g.backward(sum(x)), NumericError);
}

TEST(Backward, ReverseTopologicalOrderAndLeafGrads) {
    Graph<float> g;
    auto a = g.leaf(Tensor({2}, {1, 2}), true);
    auto unused = g.leaf(Tensor({2}, {3, 4}), true);
    auto b = mul(a, a);
    auto c = scale(b, 3.0f);
    auto l = sum(c);
    g.backward(l);
    EXPECT_EQ(g.backward_order(), (std::vector<std::size_t>{l.id, c.id, b.id}));
    EXPECT_TRUE(g.has_grad(unused));
    EXPECT_EQ(unused.grad().data, (std::vector<float>{0, 0}));
}

TEST(Backward, LinearInLossScale) {
    Rng rng(3);
    const auto xv = random_tensor({4, 5}, rng);
    const auto wv = random_tensor({5, 3}, rng);
    const std::vector<int> y{0, 1, 2, 1};
    auto grad_of = [&](float a) {
        Graph<float> g;
        auto w = g.leaf(wv, true);
        auto l = scale(cross_entropy(matmul(g.constant(xv), w), y), a);
        g.backward(l);
        return w.grad();
    };
    const auto g1 = grad_of(1.0f), g3 = grad_of(-2.5f);
    for (std::size_t i = 0; i < g1.numel(); ++i) EXPECT_NEAR(g3.data[i], -2.5f * g1.data[i], 1e-6);
}

TEST(Softmax, SymmetricLogitsAreUniform) {
    for (double t : {0.5, 1.0, 100.0}) {
        Graph<float> g;
        const auto p = softmax(g.constant(Tensor({1, 3}, {4, 4, 4})), t).value();
        for (float v : p.data) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
    }
}

TEST(Softmax, TemperatureHundred) {
    Graph<float> g;
    const auto p = softmax(g.constant(Tensor({1, 2}, {100, 0})), 100.0).value();
    EXPECT_NEAR(p.data[0], std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-6);
    EXPECT_NEAR(p.data[0], 0.7311, 1e-4);
    EXPECT_NEAR(p.data[1], 0.2689, 1e-4);
}

TEST(Softmax, LargeTemperatureApproachesUniform) {
    Graph<float> g;
    const auto p = softmax(g.constant(Tensor({1, 4}, {10, -3, 7, 0})), 1e9).value();
    for (float v : p.data) EXPECT_NEAR(v, 0.25, 1e-6);
}

TEST(Softmax, RowsSumToOneForLargeLogits) {
    Rng rng(11);
    const auto z = random_tensor({50, 10}, rng, -1e4f, 1e4f);
    Graph<float> g;
    const auto p = softmax(g.constant(z)).value();
    for (std::size_t i = 0; i < 50; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 10; ++j) s += p.data[i * 10 + j];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Softmax, NonPositiveTemperatureRejected) {
    Graph<float> g;
    auto z = g.constant(Tensor({1, 2}));
    EXPECT_THROW(softmax(z, 0.0), ConfigError);
    EXPECT_THROW(cross_entropy(z, std::vector<int>{0}, -1.0), ConfigError);
}

TEST(Ops, DeterministicBitIdentical) {
    Rng rng(5);
    const auto x = random_tensor({3, 2, 8, 8}, rng);
    const auto w = random_tensor({4, 2, 3, 3}, rng);
    auto run = [&] {
        Graph<float> g;
        auto wv = g.leaf(w, true);
        auto l = sum(relu(conv2d(g.constant(x), wv, 1)));
        g.backward(l);
        return std::make_pair(l.value(), wv.grad());
    };
    EXPECT_EQ(run(), run());
}
