#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "samlp/lora_layer.hpp"

using namespace samlp;

namespace {

Tensor randn(Shape s, Rng& rng, float sd = 1.0f) {
    Tensor t(std::move(s));
    std::normal_distribution<float> n(0.0f, sd);
    for (auto& v : t.values()) v = n(rng);
    return t;
}

}  // namespace

TEST(LoraLayer, BStartsAtZero) {
    Rng rng(0);
    const auto l = make_lora(8, 8, 4, rng);
    EXPECT_EQ(l.B.shape(), (Shape{8, 4}));
    EXPECT_EQ(l.A.shape(), (Shape{4, 8}));
    for (float v : l.B.values()) EXPECT_EQ(v, 0.0f);
}

TEST(LoraLayer, ASampleStatisticsMatchSigmaFive) {
    Rng rng(0);
    const auto l = make_lora(512, 512, 4, rng);
    double mean = 0.0;
    for (float v : l.A.values()) mean += v;
    mean /= static_cast<double>(l.A.size());
    double var = 0.0;
    for (float v : l.A.values()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(l.A.size() - 1));
    EXPECT_NEAR(mean, 0.0, 0.5);
    EXPECT_NEAR(sd, 5.0, 0.5);
}

TEST(LoraLayer, DeterministicUnderSeed) {
    Rng a(42), b(42);
    EXPECT_EQ(make_lora(16, 32, 4, a).A.values(), make_lora(16, 32, 4, b).A.values());
}

TEST(LoraLayer, RankBounds) {
    Rng rng(0);
    EXPECT_THROW(make_lora(8, 8, 0, rng), std::invalid_argument);
    EXPECT_THROW(make_lora(8, 6, 7, rng), std::invalid_argument);
    EXPECT_NO_THROW(make_lora(8, 6, 6, rng));
}

TEST(LoraLayer, ParameterCountIsRankTimesDPlusK) {
    Rng rng(0);
    const auto l = make_lora(768, 768, 4, rng);
    EXPECT_EQ(l.parameter_count(), 4 * (768 + 768));
    EXPECT_EQ(l.rank(), 4);
    EXPECT_EQ(l.in_dim(), 768);
    EXPECT_EQ(l.out_dim(), 768);
}

TEST(LoraLayer, FreshLayerIsExactIdentityOverBase) {
    Rng rng(1);
    const auto l = make_lora(6, 5, 2, rng);
    const auto w0 = randn({6, 5}, rng), x = randn({4, 6}, rng);
    EXPECT_EQ(lora_forward(l, w0, x).values(), ops::matmul(x, w0).values());
}

TEST(LoraLayer, ShapeMismatchThrows) {
    Rng rng(2);
    const auto l = make_lora(6, 5, 2, rng);
    EXPECT_THROW(lora_forward(l, randn({6, 5}, rng), randn({4, 7}, rng)), ShapeError);
    EXPECT_THROW(lora_forward(l, randn({5, 5}, rng), randn({4, 6}, rng)), ShapeError);
}

TEST(LoraLayer, MergeMatchesAdapterForwardOnRandomLayers) {
    Rng rng(3);
    std::uniform_int_distribution<int> dim(2, 48);
    for (int trial = 0; trial < 100; ++trial) {
        const int d = dim(rng), k = dim(rng);
        const int r = std::uniform_int_distribution<int>(1, std::min(d, k))(rng);
        auto l = make_lora(d, k, r, rng, 0.5f);
        l.B = randn({d, r}, rng, 0.5f);
        const auto w0 = randn({d, k}, rng), x = randn({3, d}, rng);
        const auto adapter = lora_forward(l, w0, x);
        const auto merged = ops::matmul(x, merge_weights(w0, l));
        double num = 0.0, den = 0.0;
        for (std::int64_t i = 0; i < adapter.size(); ++i) {
            num = std::max(num, static_cast<double>(std::fabs(adapter.at(i) - merged.at(i))));
            den = std::max(den, static_cast<double>(std::fabs(adapter.at(i))));
        }
        EXPECT_LE(num / std::max(den, 1e-12), 1e-5) << "trial " << trial;
    }
}

TEST(LoraLayer, MergeHonoursScale) {
    Rng rng(4);
    auto l = make_lora(4, 4, 2, rng, 1.0f);
    l.B = randn({4, 2}, rng);
    l.scale = 0.5f;
    const auto w0 = randn({4, 4}, rng);
    const auto merged = merge_weights(w0, l);
    const auto ba = ops::matmul(l.B, l.A);
    for (std::int64_t i = 0; i < merged.size(); ++i) EXPECT_NEAR(merged.at(i), w0.at(i) + 0.5f * ba.at(i), 1e-5);
    EXPECT_FALSE(merged.requires_grad());
}

TEST(LoraLayer, GradientsReachOnlyAdapterArrays) {
    Rng rng(5);
    auto l = make_lora(5, 3, 2, rng, 1.0f);
    l.B = randn({5, 2}, rng);
    l.A.set_requires_grad(true);
    l.B.set_requires_grad(true);
    auto w0 = randn({5, 3}, rng);
    const auto x = randn({4, 5}, rng);
    ops::sum(lora_forward(l, w0, x)).backward();
    EXPECT_TRUE(w0.grad().empty());
    EXPECT_EQ(l.A.grad().size(), 6u);
    EXPECT_EQ(l.B.grad().size(), 10u);
    // d/dB sum(x B A) = x^T 1 A^T
    for (int i = 0; i < 5; ++i)
        for (int r = 0; r < 2; ++r) {
            double expect = 0.0;
            for (int n = 0; n < 4; ++n)
                for (int c = 0; c < 3; ++c) expect += x.at(n, i) * l.A.at(r, c);
            EXPECT_NEAR(l.B.grad()[static_cast<std::size_t>(i * 2 + r)], expect, 1e-4);
        }
}
