#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dnd/grad_check.hpp"
#include "dnd/ops.hpp"
#include "dnd/router_objectives.hpp"
#include "support.hpp"

using namespace dnd;

namespace {

// Independent per-sequence negative entropy, averaged over sequences.
double neg_entropy_oracle(const std::vector<double>& p, std::size_t B, std::size_t N) {
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double z = 0.0;
        for (std::size_t i = 0; i < N; ++i) z += p[b * N + i];
        for (std::size_t i = 0; i < N; ++i) {
            const double q = p[b * N + i] / z;
            total += q * std::log(q);
        }
    }
    return total / static_cast<double>(B);
}

}  // namespace

TEST(ScoreDispersion, UniformGivesMinusLogN) {
    auto p = Tensor::full({1, 8}, 0.37);
    EXPECT_NEAR(score_dispersion_loss({p}).item(), -std::log(8.0), 1e-12);
    EXPECT_NEAR(score_dispersion_loss({p, p}).item(), -2.0 * std::log(8.0), 1e-12);
}

TEST(ScoreDispersion, DeltaApproachesZero) {
    std::vector<double> v(6, 1e-12);
    v[2] = 1.0 - 1e-12;
    const double l = score_dispersion_loss({Tensor::from({1, 6}, v)}).item();
    EXPECT_LT(l, 0.0);
    EXPECT_GT(l, -1e-9);
}

TEST(ScoreDispersion, TwoTokenClosedForm) {
    const double l = score_dispersion_loss({Tensor::from({1, 2}, {0.2, 0.8})}).item();
    EXPECT_NEAR(l, 0.2 * std::log(0.2) + 0.8 * std::log(0.8), 1e-15);
    EXPECT_NEAR(l, -0.5004024235381879, 1e-12);
}

TEST(ScoreDispersion, RandomAgainstOracleAndBounds) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<std::size_t> bd(1, 4), nd(2, 24);
        const std::size_t B = bd(rng), N = nd(rng);
        auto p = test::uniform_tensor({B, N}, rng, 1e-3, 1.0);
        std::vector<double> v(p.data().begin(), p.data().end());
        const double l = score_dispersion_loss({p}).item();
        EXPECT_NEAR(l, neg_entropy_oracle(v, B, N), 1e-12);
        EXPECT_GE(l, -std::log(double(N)) - 1e-12);
        EXPECT_LT(l, 0.0);
        // Token permutation within a sequence.
        for (std::size_t b = 0; b < B; ++b) std::shuffle(v.begin() + b * N, v.begin() + (b + 1) * N, rng);
        EXPECT_NEAR(score_dispersion_loss({Tensor::from({B, N}, v)}).item(), l, 1e-12);
    }
}

TEST(DistributionPreservation, ClosedForms) {
    EXPECT_EQ(distribution_preservation_loss({Tensor::full({2, 4}, 0.5)}).item(), 0.0);
    EXPECT_NEAR(distribution_preservation_loss({Tensor::full({1, 4}, 1.0)}).item(), 0.25, 1e-15);
    EXPECT_NEAR(distribution_preservation_loss({Tensor::from({1, 4}, {0.1, 0.9, 0.5, 0.5})}).item(), 0.08, 1e-15);
}

TEST(DistributionPreservation, BoundedByLayerCount) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Tensor> layers;
        const std::size_t L = 1 + trial % 3;
        for (std::size_t l = 0; l < L; ++l) layers.push_back(test::uniform_tensor({2, 7}, rng, 0.0, 1.0));
        const double v = distribution_preservation_loss(layers).item();
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 0.25 * L);
    }
}

TEST(CombinedLoss, ZeroWeightsRecoverCe) {
    auto ce = Tensor::scalar(2.5);
    RouterLossWeights w{0.0, 0.0, 0.0};
    auto r = combined_loss(ce, {Tensor::full({1, 8}, 0.7)}, w);
    EXPECT_EQ(r.total, 2.5);
    EXPECT_EQ(r.l_router, 0.0);
}

TEST(CombinedLoss, ComposesClosedForms) {
    auto ce = Tensor::scalar(1.25);
    auto p = Tensor::full({1, 8}, 0.5);
    auto r = combined_loss(ce, {p, p});
    EXPECT_NEAR(r.total, 1.25 + 3e-4 * (-2.0 * std::log(8.0)) + 0.02 * 0.0, 1e-12);
    EXPECT_EQ(r.l_router, 3e-4 * r.l_sd + 0.02 * r.l_dp);
    EXPECT_EQ(r.total, r.ce + r.l_router);
    ASSERT_EQ(r.per_layer_sd.size(), 2u);
    EXPECT_NEAR(r.per_layer_sd[0], -std::log(8.0), 1e-12);
    EXPECT_EQ(r.per_layer_dp[1], 0.0);
}

TEST(CombinedLoss, BreakdownInvariantOnRandomInputs) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto p1 = test::uniform_tensor({3, 5}, rng, 0.01, 0.99);
        auto p2 = test::uniform_tensor({3, 5}, rng, 0.01, 0.99);
        RouterLossWeights w{std::uniform_real_distribution<double>(0, 1e-2)(rng),
                            std::uniform_real_distribution<double>(0, 1e-1)(rng), 0.0};
        auto r = combined_loss(Tensor::scalar(3.0), {p1, p2}, w);
        EXPECT_EQ(r.l_router, w.lambda_sd * r.l_sd + w.lambda_dp * r.l_dp);
        EXPECT_EQ(r.total, r.ce + r.l_router);
        EXPECT_EQ(r.total_tensor.item(), r.total);
    }
}

TEST(RouterLosses, DispersionGradientPointsTowardUniform) {
    // Negative entropy is minimal at uniform scores, so for p = (0.5 + d, 0.5 - d)
    // the derivative is ln((0.5 + d) / (0.5 - d)) > 0.
    for (double delta : {1e-3, 1e-2, 5e-2}) {
        auto d = Tensor::scalar(delta, true);
        auto p = add(Tensor::from({1, 2}, {0.5, 0.5}), mul(Tensor::from({1, 2}, {1.0, -1.0}), gather_rows(d.reshape({1, 1}), std::vector<std::int64_t>{0, 0}, {2, 1}).reshape({1, 2})));
        score_dispersion_loss({p}).backward();
        EXPECT_NEAR(d.grad()[0], std::log((0.5 + delta) / (0.5 - delta)), 1e-12) << delta;
        EXPECT_GT(d.grad()[0], 0.0) << delta;
    }
}

TEST(RouterLosses, DescentDirections) {
    std::mt19937_64 rng(4);
    auto logits = test::random_tensor({1, 10}, rng, 0.5);
    auto variance = [](const Tensor& p) {
        double m = 0, v = 0;
        for (double x : p.data()) m += x;
        m /= p.numel();
        for (double x : p.data()) v += (x - m) * (x - m);
        return v / p.numel();
    };
    auto dev = [](const Tensor& p) {
        double s = 0;
        for (double x : p.data()) s += std::abs(x - 0.5);
        return s / p.numel();
    };
    auto step = [](Tensor& z, const Tensor& loss, double lr) {
        z.zero_grad();
        loss.backward();
        auto g = z.grad();
        auto v = z.mutable_data();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    };
    // Descent on negative entropy flattens the normalized scores.
    Tensor z1 = Tensor::from(logits.shape(), std::vector<double>(logits.data().begin(), logits.data().end()), true);
    const double var0 = variance(sigmoid(z1));
    const double sd0 = score_dispersion_loss({sigmoid(z1)}).item();
    for (int i = 0; i < 20; ++i) step(z1, score_dispersion_loss({sigmoid(z1)}), 0.5);
    EXPECT_LT(score_dispersion_loss({sigmoid(z1)}).item(), sd0);
    EXPECT_LT(variance(sigmoid(z1)), var0);

    // Descent on the preservation term pulls scores toward 0.5.
    Tensor z2 = Tensor::from(logits.shape(), std::vector<double>(logits.data().begin(), logits.data().end()), true);
    const double dev0 = dev(sigmoid(z2));
    for (int i = 0; i < 20; ++i) step(z2, distribution_preservation_loss({sigmoid(z2)}), 0.5);
    EXPECT_LT(dev(sigmoid(z2)), dev0);
}

TEST(RouterLosses, GradCheckCombined) {
    std::mt19937_64 rng(5);
    auto z1 = test::random_tensor({2, 6}, rng);
    auto z2 = test::random_tensor({2, 6}, rng);
    RouterLossWeights w{0.3, 0.7, 0.1};
    auto loss = [&] {
        auto p1 = sigmoid(z1), p2 = sigmoid(z2);
        return combined_loss(mean(square(z1)), {p1, p2}, w, {z1, z2}).total_tensor;
    };
    EXPECT_LT(grad_check_params(loss, {z1, z2}).max_rel_error, 1e-4);
}

TEST(RouterZLoss, MeanSquaredLogit) {
    auto z = Tensor::from({1, 4}, {1.0, -1.0, 2.0, 0.0});
    EXPECT_DOUBLE_EQ(router_z_loss({z}).item(), 6.0 / 4.0);
}
