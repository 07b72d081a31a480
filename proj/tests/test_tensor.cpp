#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "dnd/grad_check.hpp"
#include "dnd/ops.hpp"
#include "support.hpp"

using namespace dnd;
using dnd::test::random_tensor;

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(Tensor::from({2, 3}, {1, 2, 3}), DimensionError);
    auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(shape_numel(t.shape()), t.data().size());
    EXPECT_THROW(t.reshape({4, 2}), DimensionError);
    EXPECT_EQ(t.reshape({3, 2}).dim(0), 3u);
}

TEST(Tensor, GradHasDataShape) {
    auto a = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    sum(square(a)).backward();
    ASSERT_TRUE(a.has_grad());
    EXPECT_EQ(a.grad().size(), a.numel());
    EXPECT_DOUBLE_EQ(a.grad()[3], 8.0);
}

TEST(Tensor, BackwardNeedsScalarWithHistory) {
    auto a = Tensor::from({2}, {1, 2}, true);
    EXPECT_THROW(square(a).backward(), ContractError);
    EXPECT_THROW(Tensor::scalar(1.0).backward(), ContractError);
}

TEST(Tensor, BackwardTwiceDoublesGrad) {
    std::mt19937_64 rng(3);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto loss = sum(square(matmul(a, b)));
    loss.backward();
    std::vector<double> first(a.grad().begin(), a.grad().end());
    loss.backward();
    for (std::size_t i = 0; i < first.size(); ++i) EXPECT_DOUBLE_EQ(a.grad()[i], 2.0 * first[i]);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
    auto a = Tensor::from({2}, {1, 2}, true);
    {
        NoGradGuard guard;
        EXPECT_FALSE(square(a).requires_grad());
    }
    EXPECT_TRUE(square(a).requires_grad());
}

TEST(Tensor, MutableDataOnlyOnLeaves) {
    auto a = Tensor::from({2}, {1, 2}, true);
    EXPECT_NO_THROW(a.mutable_data());
    auto b = square(a);
    EXPECT_THROW(b.mutable_data(), ContractError);
}

TEST(ComputationTape, TopologicalAndVisitsOnce) {
    std::mt19937_64 rng(11);
    auto x = random_tensor({4, 4}, rng);
    auto w = random_tensor({4, 4}, rng);
    // Diamond: h used by two branches.
    auto h = matmul(x, w);
    auto loss = sum(add(sigmoid(h), square(h)));
    auto tape = ComputationTape::record(loss);
    EXPECT_TRUE(tape.is_topological());
    std::set<const detail::Node*> unique(tape.nodes().begin(), tape.nodes().end());
    EXPECT_EQ(unique.size(), tape.size());
    EXPECT_EQ(tape.nodes().back(), loss.node().get());
}

TEST(Matmul, IdentityAndHandArithmetic) {
    auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from({2, 2}, {5, 6, 7, 8});
    auto r = matmul(eye, m);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.at(i), m.at(i));
    EXPECT_EQ(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
        FAIL();
    } catch (const DimensionError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3]"), std::string::npos);
        EXPECT_NE(msg.find("[4,2]"), std::string::npos);
    }
}

TEST(Matmul, GradOfSumIsColumnSumsOfB) {
    std::mt19937_64 rng(5);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng, 1.0, false);
    sum(matmul(a, b)).backward();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a.grad()[i * 4 + k], b.at(k * 2) + b.at(k * 2 + 1), 1e-14);
    const double err = grad_check([&](const Tensor& x) { return sum(matmul(x, b)); }, a, 1e-6);
    EXPECT_LT(err, 1e-6);
}

TEST(Sigmoid, ClosedForms) {
    EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
    auto x = Tensor::scalar(1.0, true);
    auto y = sigmoid(x);
    const double s = 1.0 / (1.0 + std::exp(-1.0));
    EXPECT_NEAR(y.item(), 0.7310585786300049, 1e-15);
    sum(y).backward();
    EXPECT_NEAR(x.grad()[0], s * (1.0 - s), 1e-15);
    EXPECT_NEAR(x.grad()[0], 0.19661193324148185, 1e-15);
}

TEST(Sigmoid, SaturatesWithoutOverflow) {
    auto x = Tensor::from({2}, {-50.0, 800.0}, true);
    auto y = sigmoid(x);
    EXPECT_GT(y.at(0), 0.0);
    EXPECT_LT(y.at(0), 1e-20);
    EXPECT_EQ(y.at(1), 1.0);
    sum(y).backward();
    EXPECT_LT(std::abs(x.grad()[0]), 1e-20);
    EXPECT_TRUE(std::isfinite(x.grad()[1]));
}

TEST(Softmax, UniformRowsAndStability) {
    auto s = softmax_rows(Tensor::from({1, 3}, {0, 0, 0}));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s.at(i), 1.0 / 3.0, 1e-15);
    auto big = softmax_rows(Tensor::from({1, 2}, {1000.0, 1000.0}));
    EXPECT_NEAR(big.at(0), 0.5, 1e-15);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
    const std::size_t V = 7;
    auto logits = Tensor::zeros({3, V});
    std::vector<std::int64_t> targets = {0, 6, 3};
    EXPECT_NEAR(cross_entropy(logits, targets).item(), std::log(7.0), 1e-14);
}

TEST(CrossEntropy, IgnoreIndexAndBounds) {
    auto logits = Tensor::from({2, 2}, {0, 0, 10, -10});
    std::vector<std::int64_t> t = {kIgnoreIndex, 0};
    EXPECT_NEAR(cross_entropy(logits, t).item(), std::log1p(std::exp(-20.0)), 1e-12);
    std::vector<std::int64_t> bad = {0, 2};
    EXPECT_THROW(cross_entropy(logits, bad), IndexError);
}

TEST(RmsNorm, AllOnesStaysOnes) {
    auto y = rms_norm(Tensor::full({2, 5}, 1.0), Tensor::full({5}, 1.0), 0.0);
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Elementwise, BasicValues) {
    auto a = Tensor::from({3}, {1, 2, 3});
    auto b = Tensor::from({3}, {4, 5, 6});
    EXPECT_EQ(add(a, b).at(2), 9.0);
    EXPECT_EQ(sub(a, b).at(0), -3.0);
    EXPECT_EQ(mul(a, b).at(1), 10.0);
    EXPECT_EQ(scale(a, 2.0).at(2), 6.0);
    EXPECT_EQ(mean(a).item(), 2.0);
    EXPECT_EQ(square(a).at(2), 9.0);
    EXPECT_NEAR(log(a).at(1), std::log(2.0), 1e-15);
    EXPECT_THROW(add(a, Tensor::zeros({2})), DimensionError);
}

TEST(GradCheck, QuadraticIsNearlyExact) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = random_tensor({6}, rng);
        EXPECT_LT(grad_check([](const Tensor& t) { return sum(square(t)); }, x, 1e-5), 1e-8);
    }
}

TEST(GradCheck, Contracts) {
    auto x = Tensor::from({2}, {1, 2}, true);
    EXPECT_THROW(grad_check([](const Tensor& t) { return square(t); }, x, 1e-6), ContractError);
    EXPECT_THROW(grad_check([](const Tensor& t) { return sum(t); }, x, 1e-9), ContractError);
    EXPECT_THROW(grad_check([](const Tensor& t) { return sum(t); }, x, 1e-2), ContractError);
}

TEST(GradCheck, SaturatedSigmoidCoordinate) {
    auto x = Tensor::from({2}, {50.0, 0.3}, true);
    sum(sigmoid(x)).backward();
    EXPECT_LT(std::abs(x.grad()[0]), 1e-20);
}

TEST(GradCheck, ComposedOpsSmoothRegion) {
    std::mt19937_64 rng(21);
    auto w = random_tensor({5}, rng, 1.0, false);
    auto x = random_tensor({3, 5}, rng);
    auto f = [&](const Tensor& t) {
        auto h = rms_norm(t, w);
        return add(mean(square(silu(h))), sum(square(normalize_rows(add_scalar(sigmoid(h), 0.1)))));
    };
    EXPECT_LT(grad_check(f, x, 1e-6), 1e-6);
    std::vector<std::int64_t> targets = {1, kIgnoreIndex, 4};
    EXPECT_LT(grad_check([&](const Tensor& t) { return cross_entropy(t, targets); }, x, 1e-6), 1e-6);
    EXPECT_LT(grad_check([&](const Tensor& t) { return sum(square(softmax_rows(t))); }, x, 1e-6), 1e-6);
}

TEST(GradCheck, AttentionAndRope) {
    std::mt19937_64 rng(33);
    const std::size_t T = 5, H = 2, D = 8;
    auto q = random_tensor({T, D}, rng);
    auto k = random_tensor({T, D}, rng, 1.0, false);
    auto v = random_tensor({T, D}, rng, 1.0, false);
    Segments seg;
    seg.offsets = {0, 2};
    seg.lengths = {2, 3};
    std::vector<std::int64_t> pos = {0, 1, 0, 1, 2};
    auto f = [&](const Tensor& t) {
        auto qr = rope(t, pos, H);
        return sum(square(causal_attention(qr, rope(k, pos, H), v, seg, H)));
    };
    EXPECT_LT(grad_check(f, q, 1e-6), 1e-6);
}

TEST(GatherRows, MinusOneGivesZerosAndGradScatters) {
    auto x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    std::vector<std::int64_t> rows = {2, -1, 2};
    auto y = gather_rows(x, rows, {3, 2});
    EXPECT_EQ(y.at(0), 5.0);
    EXPECT_EQ(y.at(2), 0.0);
    sum(y).backward();
    EXPECT_EQ(x.grad()[0], 0.0);
    EXPECT_EQ(x.grad()[4], 2.0);
    std::vector<std::int64_t> bad = {3};
    EXPECT_THROW(gather_rows(x, bad, {1, 2}), IndexError);
}

TEST(Ops, Deterministic) {
    std::mt19937_64 r1(77), r2(77);
    auto a1 = random_tensor({8, 8}, r1), b1 = random_tensor({8, 8}, r1);
    auto a2 = random_tensor({8, 8}, r2), b2 = random_tensor({8, 8}, r2);
    auto y1 = softmax_rows(matmul(a1, b1));
    auto y2 = softmax_rows(matmul(a2, b2));
    EXPECT_TRUE(test::bit_equal(y1.data(), y2.data()));
}
