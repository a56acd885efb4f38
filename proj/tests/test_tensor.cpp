#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"

using namespace veracity;
using oracle::contract;
using oracle::random_tensor;

namespace {

template <typename F>
void expect_gradients(F&& f, const std::vector<Tensor64>& inputs, std::uint64_t seed = 1, std::size_t probes = 40) {
    Rng rng(seed);
    const auto r = oracle::check_gradients(f, inputs, probes, rng);
    EXPECT_EQ(r.failures, 0u) << "max relative error " << r.max_rel_error;
    EXPECT_EQ(r.probes, probes);
}

}  // namespace

TEST(Tensor, ConstructionValidatesSize) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
    const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.size(), 6u);
    EXPECT_FLOAT_EQ(t.at(1, 2), 6.0f);
}

TEST(Tensor, MatmulValues) {
    const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
    const auto c = matmul(a, b);
    EXPECT_EQ(c.shape(), (Shape{2, 2}));
    EXPECT_EQ(std::vector<float>(c.data().begin(), c.data().end()), (std::vector<float>{58, 64, 139, 154}));
}

TEST(Tensor, ShapeErrorsNameBothShapes) {
    const Tensor a({2, 3}, std::vector<float>(6));
    const Tensor b({2, 3}, std::vector<float>(6));
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    }
    EXPECT_THROW(add(a, Tensor({4}, std::vector<float>(4))), ShapeError);
    EXPECT_THROW(slice(a, 1, 2, 2), ShapeError);
    EXPECT_THROW(backward(a), ShapeError);
}

TEST(Tensor, EmbeddingRejectsOutOfRangeIds) {
    const Tensor table({4, 2}, std::vector<float>(8));
    const std::vector<int> ids{0, 4};
    EXPECT_THROW(embedding(table, std::span<const int>(ids)), ValidationError);
}

TEST(Tensor, NoHistoryWithoutGradInputs) {
    const Tensor a({2}, {1, 2});
    const auto b = scale(a, 2.0f);
    EXPECT_FALSE(b.requires_grad());
    EXPECT_TRUE(b.node()->parents.empty());
}

TEST(Tensor, LeafGradientsAccumulateAcrossBackward) {
    Tensor x({2}, {1, 2}, true);
    backward(sum(scale(x, 3.0f)));
    backward(sum(scale(x, 3.0f)));
    EXPECT_EQ(x.grad(), (std::vector<float>{6, 6}));
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, SharedSubexpressionGetsBothContributions) {
    Tensor x({1}, {3}, true);
    const auto y = mul(x, x);  // d/dx x^2 = 2x
    backward(sum(add(y, y)));
    EXPECT_FLOAT_EQ(x.grad()[0], 12.0f);
}

TEST(Tensor, DeepChainDoesNotOverflowStack) {
    Tensor x({1}, {1}, true);
    auto y = x;
    for (int i = 0; i < 20000; ++i) y = add_scalar(y, 0.0f);
    backward(sum(y));
    EXPECT_FLOAT_EQ(x.grad()[0], 1.0f);
}

TEST(TensorGradients, ElementwiseAndLinear) {
    Rng rng(3);
    const auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), v = random_tensor({4}, rng);
    const auto c = random_tensor({3, 4}, rng);
    expect_gradients([](auto& in) { return contract(matmul(in[0], in[1])); }, {a, b});
    expect_gradients([](auto& in) { return contract(transpose(in[0])); }, {a});
    expect_gradients([](auto& in) { return contract(add(in[0], in[1])); }, {a, v});
    expect_gradients([](auto& in) { return contract(mul(in[0], in[1])); }, {a, c});
    expect_gradients([](auto& in) {
        using T = typename std::decay_t<decltype(in[0])>::value_type;
        return contract(add_scalar(scale(in[0], T(-2.5)), T(0.3)));
    }, {a});
    expect_gradients([](auto& in) { return contract(reshape(in[0], {2, 6})); }, {a});
    expect_gradients([](auto& in) { return sum(in[0]); }, {a});
}

TEST(TensorGradients, StructuralOps) {
    Rng rng(4);
    const auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 2}, rng);
    expect_gradients([](auto& in) { return contract(concat(std::vector{in[0], in[1]}, 1)); }, {a, b});
    expect_gradients([](auto& in) { return contract(slice(in[0], 1, 1, 2)); }, {a});
    expect_gradients([](auto& in) { return contract(slice(in[0], 0, 1, 2)); }, {a});
    expect_gradients([](auto& in) { return contract(mean(in[0], 0)); }, {a});
    expect_gradients([](auto& in) { return contract(mean(in[0], 1)); }, {a});
    const std::vector<int> ids{2, 0, 2, 4};
    expect_gradients([&](auto& in) { return contract(embedding(in[0], std::span<const int>(ids))); },
                     {random_tensor({5, 3}, rng)});
}

TEST(TensorGradients, Nonlinearities) {
    Rng rng(5);
    const auto a = random_tensor({3, 5}, rng, -3, 3);
    expect_gradients([](auto& in) { return contract(softmax_rows(in[0])); }, {a});
    expect_gradients([](auto& in) { return contract(sigmoid(in[0])); }, {a});
    expect_gradients([](auto& in) { return contract(gelu(in[0])); }, {a});
    expect_gradients([](auto& in) {
        using T = typename std::decay_t<decltype(in[0])>::value_type;
        return contract(layer_norm(in[0], in[1], in[2], T(1e-6)));
    }, {a, random_tensor({5}, rng, 0.5, 1.5), random_tensor({5}, rng)});
}

TEST(TensorGradients, DropoutUsesItsMask) {
    Rng rng(6);
    const auto a = random_tensor({4, 6}, rng);
    expect_gradients([](auto& in) {
        Rng masks(17);  // same mask on every evaluation
        return contract(dropout(in[0], 0.3, true, masks));
    }, {a});
}

TEST(TensorLaws, SoftmaxRowsAreDistributions) {
    Rng rng(7);
    const auto x = random_tensor({6, 9}, rng, -50, 50).cast<float>();
    const auto y = softmax_rows(x);
    for (std::size_t r = 0; r < 6; ++r) {
        double total = 0;
        for (std::size_t c = 0; c < 9; ++c) {
            EXPECT_GE(y.at(r, c), 0.0f);
            total += y.at(r, c);
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
    }
    // Invariant to a constant shift per row.
    const auto xd = x.cast<double>();
    const auto yd = softmax_rows(xd);
    const auto shifted = softmax_rows(add_scalar(xd, 1000.0));
    for (std::size_t i = 0; i < yd.size(); ++i) EXPECT_NEAR(shifted.at(i), yd.at(i), 1e-12);
}

TEST(TensorLaws, MaskBiasGivesExactZeros) {
    const Tensor scores({1, 4}, {0.3f, -0.2f, 0.1f, 0.0f});
    const Tensor bias({4}, {0, 0, -1e9f, -1e9f});
    const auto y = softmax_rows(add(scores, bias));
    EXPECT_EQ(y.at(0, 2), 0.0f);
    EXPECT_EQ(y.at(0, 3), 0.0f);
    EXPECT_NEAR(y.at(0, 0) + y.at(0, 1), 1.0f, 1e-7);
}

TEST(TensorLaws, LayerNormNormalizesRows) {
    Rng rng(8);
    const auto x = random_tensor({5, 16}, rng, -4, 9);
    const auto y = layer_norm(x, Tensor64::full({16}, 1.0), Tensor64::zeros({16}), 1e-12);
    for (std::size_t r = 0; r < 5; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 16; ++c) m += y.at(r, c);
        m /= 16;
        for (std::size_t c = 0; c < 16; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m);
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v / 16, 1.0, 1e-9);
    }
}

TEST(TensorLaws, GeluFixtures) {
    const Tensor64 x({4}, {0.0, 1.0, 5.0, -5.0});
    const auto y = gelu(x);
    EXPECT_EQ(y.at(0), 0.0);
    EXPECT_NEAR(y.at(1), 0.8411919906, 1e-9);
    EXPECT_LT(std::abs(y.at(2) - 5.0), 1e-3);
    EXPECT_LT(std::abs(y.at(3)), 1e-3);
}

TEST(TensorLaws, SigmoidIsStableAtExtremes) {
    const Tensor x({3}, {-200.0f, 0.0f, 200.0f});
    const auto y = sigmoid(x);
    EXPECT_EQ(y.at(0), 0.0f);
    EXPECT_EQ(y.at(1), 0.5f);
    EXPECT_EQ(y.at(2), 1.0f);
    for (float v : y.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(TensorLaws, DropoutStatistics) {
    Rng rng(9);
    const Tensor x = Tensor::full({100000}, 1.0f);
    const auto y = dropout(x, 0.25, true, rng);
    std::size_t zeros = 0;
    double total = 0;
    for (float v : y.data()) {
        zeros += v == 0.0f;
        total += v;
        if (v != 0.0f) {
            EXPECT_FLOAT_EQ(v, 1.0f / 0.75f);
        }
    }
    EXPECT_NEAR(static_cast<double>(zeros) / 100000.0, 0.25, 0.01);
    EXPECT_NEAR(total / 100000.0, 1.0, 0.02);
    EXPECT_TRUE(dropout(x, 0.25, false, rng).same_node(x));
    EXPECT_THROW(dropout(x, 1.0, true, rng), ValidationError);
}

TEST(TensorLaws, BroadcastBiasGradientSumsRows) {
    Tensor a({3, 2}, std::vector<float>(6, 0.0f), true);
    Tensor b({2}, {0, 0}, true);
    backward(sum(add(a, b)));
    EXPECT_EQ(b.grad(), (std::vector<float>{3, 3}));
}
