#include <gtest/gtest.h>

#include <random>

#include "lsk/ops.hpp"
#include "lsk/parallel.hpp"
#include "oracles.hpp"

using namespace lsk;
using oracle::Tensor;

namespace {

constexpr double kOracleTol = 1e-6;
constexpr double kGradTol = 1e-4;

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor dirac(std::size_t c, std::size_t k) {
    Tensor w(c, 1, k, k);
    for (std::size_t ch = 0; ch < c; ++ch) w(ch, 0, k / 2, k / 2) = 1.0;
    return w;
}

}  // namespace

TEST(DepthwiseConv, DiracKernelIsIdentityForAnyDilation) {
    std::mt19937_64 rng(1);
    for (std::size_t d : {1u, 2u, 3u, 5u}) {
        for (std::size_t k : {1u, 3u, 5u, 7u}) {
            const Tensor x = oracle::random({2, 3, 6, 7}, rng);
            const Tensor y = depthwise_conv(x, dirac(3, k), Vec<double>(3, 0.0), ConvSpec::same(k, d));
            EXPECT_EQ(y, x) << "k=" << k << " d=" << d;
        }
    }
}

TEST(DepthwiseConv, OnesKernelCountsNeighboursUnderZeroPadding) {
    Tensor4<float> x(1, 1, 5, 5, 1.0f);
    Tensor4<float> w(1, 1, 3, 3, 1.0f);
    const auto y = depthwise_conv(x, w, Vec<float>{0.0f}, ConvSpec::same(3, 1));
    EXPECT_FLOAT_EQ(y(0, 0, 2, 2), 9.0f);
    EXPECT_FLOAT_EQ(y(0, 0, 0, 0), 4.0f);
    EXPECT_FLOAT_EQ(y(0, 0, 0, 2), 6.0f);
}

TEST(DepthwiseConv, MatchesLoopOracleWithDilation) {
    std::mt19937_64 rng(2);
    const Tensor x = oracle::random({2, 3, 8, 8}, rng);
    const Tensor w = oracle::random({3, 1, 5, 5}, rng);
    const auto b = oracle::random_vec(3, rng);
    const Tensor ref = oracle::depthwise(x, w, b, 5, 2);
    EXPECT_LE(oracle::max_abs_diff(depthwise_conv(x, w, b, ConvSpec::same(5, 2)), ref), kOracleTol);
    // single precision stays close too
    const auto yf = depthwise_conv(x.cast<float>(), w.cast<float>(), Vec<float>(b.begin(), b.end()),
                                   ConvSpec::same(5, 2));
    EXPECT_LE(oracle::max_abs_diff(yf.cast<double>(), ref), 1e-4);
}

TEST(DepthwiseConv, RandomInstancesMatchOracle) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = pick(rng, 1, 3), c = pick(rng, 1, 8), h = pick(rng, 1, 8), w = pick(rng, 1, 8);
        const std::size_t k = 2 * pick(rng, 0, 3) + 1, d = pick(rng, 1, 3);
        const Tensor x = oracle::random({n, c, h, w}, rng);
        const Tensor wt = oracle::random({c, 1, k, k}, rng);
        const auto b = oracle::random_vec(c, rng);
        const Tensor ref = oracle::depthwise(x, wt, b, static_cast<long>(k), static_cast<long>(d));
        ASSERT_LE(oracle::max_abs_diff(depthwise_conv(x, wt, b, ConvSpec::same(k, d)), ref), kOracleTol)
            << "trial " << trial;
    }
}

TEST(DepthwiseConv, ShapeErrorsAreDescriptive) {
    Tensor4<float> x(1, 2, 4, 4);
    EXPECT_THROW(depthwise_conv(x, Tensor4<float>(3, 1, 3, 3), Vec<float>(2), ConvSpec::same(3)), DimensionError);
    EXPECT_THROW(depthwise_conv(x, Tensor4<float>(2, 1, 5, 5), Vec<float>(2), ConvSpec::same(3)), DimensionError);
    EXPECT_THROW(depthwise_conv(x, Tensor4<float>(2, 1, 3, 3), Vec<float>(1), ConvSpec::same(3)), DimensionError);
    EXPECT_THROW(depthwise_conv(x, Tensor4<float>(2, 1, 3, 3), Vec<float>(2), ConvSpec{3, 1, 0, 1}), DimensionError);
    try {
        depthwise_conv(x, Tensor4<float>(3, 1, 3, 3), Vec<float>(2), ConvSpec::same(3));
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("(3,1,3,3)"), std::string::npos) << e.what();
    }
}

TEST(DepthwiseConvBackward, ZeroUpstreamGivesZeroGradients) {
    std::mt19937_64 rng(4);
    const Tensor x = oracle::random({2, 2, 5, 5}, rng);
    const Tensor w = oracle::random({2, 1, 3, 3}, rng);
    const auto g = depthwise_conv_backward(Tensor(x.shape()), x, w, ConvSpec::same(3, 2));
    for (double v : g.grad_x.values()) EXPECT_EQ(v, 0.0);
    for (double v : g.grad_weight.values()) EXPECT_EQ(v, 0.0);
    for (double v : g.grad_bias) EXPECT_EQ(v, 0.0);
}

TEST(DepthwiseConvBackward, DiracKernelPassesGradientThrough) {
    std::mt19937_64 rng(5);
    const Tensor x = oracle::random({1, 3, 6, 6}, rng);
    const Tensor G = oracle::random(x.shape(), rng);
    const auto g = depthwise_conv_backward(G, x, dirac(3, 5), ConvSpec::same(5, 3));
    EXPECT_EQ(g.grad_x, G);
}

TEST(DepthwiseConvBackward, BiasGradientIsUpstreamSum) {
    std::mt19937_64 rng(6);
    const Tensor x = oracle::random({2, 2, 3, 4}, rng);
    const Tensor G = oracle::random(x.shape(), rng);
    const auto g = depthwise_conv_backward(G, x, oracle::random({2, 1, 3, 3}, rng), ConvSpec::same(3));
    for (std::size_t c = 0; c < 2; ++c) {
        double s = 0;
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t y = 0; y < 3; ++y)
                for (std::size_t xx = 0; xx < 4; ++xx) s += G(n, c, y, xx);
        EXPECT_NEAR(g.grad_bias[c], s, 1e-12);
    }
}

TEST(DepthwiseConvBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t k = 2 * pick(rng, 1, 2) + 1, d = pick(rng, 1, 2);
        Tensor x = oracle::random({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 6), pick(rng, 2, 6)}, rng);
        Tensor w = oracle::random({x.c(), 1, k, k}, rng);
        auto b = oracle::random_vec(x.c(), rng);
        const Tensor G = oracle::random(x.shape(), rng);
        const auto spec = ConvSpec::same(k, d);
        auto loss = [&] { return oracle::weighted_sum(oracle::depthwise(x, w, b, k, d), G); };
        const auto g = depthwise_conv_backward(G, x, w, spec);
        EXPECT_LT(oracle::finite_difference_check(oracle::pointers(x), g.grad_x.values(), loss).max_rel_error, kGradTol);
        EXPECT_LT(oracle::finite_difference_check(oracle::pointers(w), g.grad_weight.values(), loss).max_rel_error,
                  kGradTol);
        EXPECT_LT(oracle::finite_difference_check(oracle::pointers(b), g.grad_bias, loss).max_rel_error, kGradTol);
    }
}

TEST(PointwiseConv, IdentityAndDotProduct) {
    std::mt19937_64 rng(8);
    const Tensor x = oracle::random({2, 3, 4, 4}, rng);
    Tensor eye(3, 3, 1, 1);
    for (std::size_t i = 0; i < 3; ++i) eye(i, i, 0, 0) = 1;
    EXPECT_EQ(pointwise_conv(x, eye, Vec<double>(3, 0.0)), x);

    Tensor4<float> px(Shape4{1, 2, 1, 1}, std::vector<float>{3, 4});
    Tensor4<float> row(Shape4{1, 2, 1, 1}, std::vector<float>{1, 1});
    EXPECT_FLOAT_EQ(pointwise_conv(px, row, Vec<float>{0})[0], 7.0f);
}

TEST(PointwiseConv, RandomInstancesMatchOracle) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor x = oracle::random({pick(rng, 1, 3), pick(rng, 1, 8), pick(rng, 1, 8), pick(rng, 1, 8)}, rng);
        const Tensor w = oracle::random({pick(rng, 1, 8), x.c(), 1, 1}, rng);
        const auto b = oracle::random_vec(w.n(), rng);
        ASSERT_LE(oracle::max_abs_diff(pointwise_conv(x, w, b), oracle::pointwise(x, w, b)), kOracleTol);
    }
}

TEST(PointwiseConv, ChannelMismatchThrows) {
    EXPECT_THROW(pointwise_conv(Tensor4<float>(1, 3, 2, 2), Tensor4<float>(4, 2, 1, 1), Vec<float>(4)),
                 DimensionError);
}

TEST(PointwiseConvBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(10);
    Tensor x = oracle::random({2, 3, 3, 4}, rng);
    Tensor w = oracle::random({4, 3, 1, 1}, rng);
    auto b = oracle::random_vec(4, rng);
    const Tensor G = oracle::random({2, 4, 3, 4}, rng);
    auto loss = [&] { return oracle::weighted_sum(oracle::pointwise(x, w, b), G); };
    const auto g = pointwise_conv_backward(G, x, w);
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(x), g.grad_x.values(), loss).max_rel_error, kGradTol);
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(w), g.grad_weight.values(), loss).max_rel_error,
              kGradTol);
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(b), g.grad_bias, loss).max_rel_error, kGradTol);
}

TEST(Conv2d, RandomInstancesMatchOracle) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t k = 2 * pick(rng, 0, 3) + 1, s = pick(rng, 1, 3), pad = pick(rng, 0, k / 2);
        const Tensor x = oracle::random({pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, k, 8), pick(rng, k, 8)}, rng);
        const Tensor w = oracle::random({pick(rng, 1, 4), x.c(), k, k}, rng);
        const auto b = oracle::random_vec(w.n(), rng);
        const auto y = conv2d(x, w, b, ConvSpec{k, 1, pad, s});
        ASSERT_LE(oracle::max_abs_diff(y, oracle::conv2d(x, w, b, s, pad)), kOracleTol) << "trial " << trial;
    }
}

TEST(Conv2dBackward, StridedMatchesFiniteDifferences) {
    std::mt19937_64 rng(12);
    Tensor x = oracle::random({2, 2, 6, 6}, rng);
    Tensor w = oracle::random({3, 2, 3, 3}, rng);
    auto b = oracle::random_vec(3, rng);
    const ConvSpec spec{3, 1, 1, 2};
    const Tensor G = oracle::random({2, 3, 3, 3}, rng);
    auto loss = [&] { return oracle::weighted_sum(oracle::conv2d(x, w, b, 2, 1), G); };
    const auto g = conv2d_backward(G, x, w, spec);
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(x), g.grad_x.values(), loss).max_rel_error, kGradTol);
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(w), g.grad_weight.values(), loss).max_rel_error,
              kGradTol);
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(b), g.grad_bias, loss).max_rel_error, kGradTol);
}

TEST(ChannelPool, SingleChannelIsIdentity) {
    std::mt19937_64 rng(13);
    const Tensor x = oracle::random({2, 1, 3, 3}, rng);
    EXPECT_EQ(channel_pool(x, PoolKind::avg), x);
    EXPECT_EQ(channel_pool(x, PoolKind::max), x);
}

TEST(ChannelPool, TwoChannelPixel) {
    Tensor4<float> x(Shape4{1, 2, 1, 1}, std::vector<float>{1, 3});
    EXPECT_FLOAT_EQ(channel_pool(x, PoolKind::avg)[0], 2.0f);
    EXPECT_FLOAT_EQ(channel_pool(x, PoolKind::max)[0], 3.0f);
}

TEST(ChannelPool, RandomMatchesOracleExactly) {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor x = oracle::random({2, 7, 4, 4}, rng);
        ASSERT_EQ(channel_pool(x, PoolKind::avg), oracle::channel_avg(x));
        ASSERT_EQ(channel_pool(x, PoolKind::max), oracle::channel_max(x));
    }
}

TEST(ChannelPoolBackward, MaxTiesRouteToLowestIndex) {
    Tensor4<double> x(Shape4{1, 3, 1, 1}, std::vector<double>{2, 5, 5});
    Tensor4<double> g(Shape4{1, 1, 1, 1}, std::vector<double>{1.5});
    const auto gx = channel_pool_backward(g, x, PoolKind::max);
    EXPECT_EQ(gx[0], 0.0);
    EXPECT_EQ(gx[1], 1.5);
    EXPECT_EQ(gx[2], 0.0);
}

TEST(ChannelPoolBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(15);
    for (PoolKind kind : {PoolKind::avg, PoolKind::max}) {
        Tensor x = oracle::random({2, 4, 3, 3}, rng);
        const Tensor G = oracle::random({2, 1, 3, 3}, rng);
        auto loss = [&] {
            return oracle::weighted_sum(kind == PoolKind::avg ? oracle::channel_avg(x) : oracle::channel_max(x), G);
        };
        const auto gx = channel_pool_backward(G, x, kind);
        EXPECT_LT(oracle::finite_difference_check(oracle::pointers(x), gx.values(), loss).max_rel_error, kGradTol);
    }
}

TEST(Elementwise, SigmoidOfZeroIsExactlyHalf) {
    const auto y = sigmoid(Tensor4<float>(2, 3, 4, 4));
    for (float v : y.values()) EXPECT_EQ(v, 0.5f);
}

TEST(Elementwise, SigmoidStaysFiniteForLargeInputs) {
    Tensor4<float> x(Shape4{1, 1, 1, 4}, std::vector<float>{-1000, -80, 80, 1000});
    const auto y = sigmoid(x);
    for (float v : y.values()) EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(y[3], 1.0f);
    EXPECT_EQ(y[0], 0.0f);
}

TEST(Elementwise, ConcatPreservesChannelOrder) {
    Tensor4<float> a(1, 2, 4, 4, 1.0f), b(1, 3, 4, 4, 2.0f);
    const std::vector<Tensor4<float>> parts{a, b};
    const auto y = concat_channels(parts);
    EXPECT_EQ(y.shape(), (Shape4{1, 5, 4, 4}));
    EXPECT_EQ(y(0, 1, 3, 3), 1.0f);
    EXPECT_EQ(y(0, 2, 0, 0), 2.0f);
    const std::vector<std::size_t> sizes{2, 3};
    const auto back = split_channels(y, std::span<const std::size_t>(sizes));
    EXPECT_EQ(back[0], a);
    EXPECT_EQ(back[1], b);
    EXPECT_THROW(concat_channels(std::vector<Tensor4<float>>{a, Tensor4<float>(1, 1, 3, 4)}), DimensionError);
}

TEST(Elementwise, NoImplicitBroadcasting) {
    EXPECT_THROW(add(Tensor4<float>(1, 2, 3, 3), Tensor4<float>(1, 1, 3, 3)), DimensionError);
    EXPECT_THROW(mul(Tensor4<float>(2, 2, 3, 3), Tensor4<float>(1, 2, 3, 3)), DimensionError);
    EXPECT_THROW(scale_spatial(Tensor4<float>(1, 2, 3, 3), Tensor4<float>(1, 2, 3, 3)), DimensionError);
}

TEST(Elementwise, GeluMatchesTanhFormula) {
    std::mt19937_64 rng(16);
    const Tensor x = oracle::random({1, 2, 5, 5}, rng, -4, 4);
    const auto y = gelu(x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], oracle::gelu_tanh(x[i]), 1e-14);
    EXPECT_EQ(gelu_scalar(0.0), 0.0);
}

TEST(ElementwiseBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(17);
    Tensor a = oracle::random({2, 3, 3, 3}, rng);
    Tensor b = oracle::random(a.shape(), rng);
    const Tensor G = oracle::random(a.shape(), rng);

    {
        auto loss = [&] {
            double s = 0;
            for (std::size_t i = 0; i < a.size(); ++i) s += G[i] * a[i] * b[i];
            return s;
        };
        const auto [ga, gb] = mul_backward(G, a, b);
        EXPECT_LT(oracle::finite_difference_check(oracle::pointers(a), ga.values(), loss).max_rel_error, kGradTol);
        EXPECT_LT(oracle::finite_difference_check(oracle::pointers(b), gb.values(), loss).max_rel_error, kGradTol);
    }
    {
        auto loss = [&] {
            double s = 0;
            for (std::size_t i = 0; i < a.size(); ++i) s += G[i] * oracle::sigmoid(a[i]);
            return s;
        };
        const auto ga = sigmoid_backward(G, sigmoid(a));
        EXPECT_LT(oracle::finite_difference_check(oracle::pointers(a), ga.values(), loss).max_rel_error, 1e-6);
    }
    {
        auto loss = [&] {
            double s = 0;
            for (std::size_t i = 0; i < a.size(); ++i) s += G[i] * oracle::gelu_tanh(a[i]);
            return s;
        };
        const auto ga = gelu_backward(G, a);
        EXPECT_LT(oracle::finite_difference_check(oracle::pointers(a), ga.values(), loss).max_rel_error, kGradTol);
    }
}

TEST(ElementwiseBackward, ScaleOpsMatchFiniteDifferences) {
    std::mt19937_64 rng(18);
    Tensor x = oracle::random({2, 3, 3, 4}, rng);
    Tensor m = oracle::random({2, 1, 3, 4}, rng);
    Tensor s = oracle::random({2, 3, 1, 1}, rng);
    const Tensor G = oracle::random(x.shape(), rng);
    {
        auto loss = [&] {
            double acc = 0;
            for (std::size_t n = 0; n < 2; ++n)
                for (std::size_t c = 0; c < 3; ++c)
                    for (std::size_t y = 0; y < 3; ++y)
                        for (std::size_t xx = 0; xx < 4; ++xx) acc += G(n, c, y, xx) * x(n, c, y, xx) * m(n, 0, y, xx);
            return acc;
        };
        const auto [gx, gm] = scale_spatial_backward(G, x, m);
        EXPECT_LT(oracle::finite_difference_check(oracle::pointers(x), gx.values(), loss).max_rel_error, kGradTol);
        EXPECT_LT(oracle::finite_difference_check(oracle::pointers(m), gm.values(), loss).max_rel_error, kGradTol);
    }
    {
        auto loss = [&] {
            double acc = 0;
            for (std::size_t n = 0; n < 2; ++n)
                for (std::size_t c = 0; c < 3; ++c)
                    for (std::size_t y = 0; y < 3; ++y)
                        for (std::size_t xx = 0; xx < 4; ++xx) acc += G(n, c, y, xx) * x(n, c, y, xx) * s(n, c, 0, 0);
            return acc;
        };
        const auto [gx, gs] = scale_channels_backward(G, x, s);
        EXPECT_LT(oracle::finite_difference_check(oracle::pointers(x), gx.values(), loss).max_rel_error, kGradTol);
        EXPECT_LT(oracle::finite_difference_check(oracle::pointers(s), gs.values(), loss).max_rel_error, kGradTol);
    }
}

TEST(GlobalAvgPool, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(19);
    Tensor x = oracle::random({2, 3, 4, 5}, rng);
    const Tensor G = oracle::random({2, 3, 1, 1}, rng);
    auto loss = [&] {
        double acc = 0;
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0;
                for (std::size_t p = 0; p < 20; ++p) s += x.plane(n, c)[p];
                acc += G(n, c, 0, 0) * s / 20.0;
            }
        return acc;
    };
    const auto gx = global_avg_pool_backward(G, x.shape());
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(x), gx.values(), loss).max_rel_error, kGradTol);
}

TEST(Norm, AffineWithUnitStatisticsIsIdentity) {
    std::mt19937_64 rng(20);
    const Tensor x = oracle::random({2, 3, 4, 4}, rng);
    const Vec<double> ones(3, 1.0), zeros(3, 0.0);
    EXPECT_EQ(affine_channel_norm(x, ones, zeros, zeros, ones, 0.0), x);
}

TEST(Norm, AffineBackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(21);
    Tensor x = oracle::random({2, 3, 3, 3}, rng);
    auto scale = oracle::random_vec(3, rng), shift = oracle::random_vec(3, rng);
    const auto mean = oracle::random_vec(3, rng), var = oracle::random_vec(3, rng, 0.5, 2.0);
    const Tensor G = oracle::random(x.shape(), rng);
    auto loss = [&] {
        double acc = 0;
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t p = 0; p < 9; ++p)
                    acc += G.plane(n, c)[p] *
                           (scale[c] * (x.plane(n, c)[p] - mean[c]) / std::sqrt(var[c] + 1e-5) + shift[c]);
        return acc;
    };
    const auto g = affine_channel_norm_backward(G, x, scale, mean, var, 1e-5);
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(x), g.grad_x.values(), loss).max_rel_error, kGradTol);
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(scale), g.grad_scale, loss).max_rel_error, kGradTol);
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(shift), g.grad_shift, loss).max_rel_error, kGradTol);
}

TEST(Norm, BatchStatisticsBackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(22);
    Tensor x = oracle::random({3, 2, 2, 3}, rng);
    auto scale = oracle::random_vec(2, rng), shift = oracle::random_vec(2, rng);
    const Tensor G = oracle::random(x.shape(), rng);
    auto loss = [&] {
        double acc = 0;
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0, var = 0;
            for (std::size_t n = 0; n < 3; ++n)
                for (std::size_t p = 0; p < 6; ++p) mean += x.plane(n, c)[p];
            mean /= 18;
            for (std::size_t n = 0; n < 3; ++n)
                for (std::size_t p = 0; p < 6; ++p) var += (x.plane(n, c)[p] - mean) * (x.plane(n, c)[p] - mean);
            var /= 18;
            for (std::size_t n = 0; n < 3; ++n)
                for (std::size_t p = 0; p < 6; ++p)
                    acc += G.plane(n, c)[p] *
                           (scale[c] * (x.plane(n, c)[p] - mean) / std::sqrt(var + 1e-5) + shift[c]);
        }
        return acc;
    };
    auto [y, st] = batch_norm_train(x, scale, shift, 1e-5);
    const auto g = batch_norm_train_backward(G, st, scale);
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(x), g.grad_x.values(), loss).max_rel_error, kGradTol);
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(scale), g.grad_scale, loss).max_rel_error, kGradTol);
    EXPECT_LT(oracle::finite_difference_check(oracle::pointers(shift), g.grad_shift, loss).max_rel_error, kGradTol);
}

TEST(Determinism, ThreadedKernelsAreBitIdenticalToSequential) {
    std::mt19937_64 rng(23);
    const auto x = oracle::random({2, 16, 32, 32}, rng).cast<float>();
    const auto w = oracle::random({16, 1, 7, 7}, rng).cast<float>();
    const auto pw = oracle::random({8, 16, 1, 1}, rng).cast<float>();
    const Vec<float> b(16, 0.25f), pb(8, -0.5f);
    const auto spec = ConvSpec::same(7, 3);

    set_max_threads(1);
    const auto y1 = depthwise_conv(x, w, b, spec);
    const auto p1 = pointwise_conv(y1, pw, pb);
    const auto g1 = depthwise_conv_backward(y1, x, w, spec);
    set_max_threads(4);
    const auto y2 = depthwise_conv(x, w, b, spec);
    const auto p2 = pointwise_conv(y2, pw, pb);
    const auto g2 = depthwise_conv_backward(y2, x, w, spec);
    set_max_threads(1);
    EXPECT_EQ(y1, y2);
    EXPECT_EQ(p1, p2);
    EXPECT_EQ(g1.grad_x, g2.grad_x);
    EXPECT_EQ(g1.grad_weight, g2.grad_weight);
    EXPECT_EQ(g1.grad_bias, g2.grad_bias);
}

TEST(Tensor4, RejectsZeroDimsAndBadLengths) {
    EXPECT_THROW(Tensor4<float>(0, 1, 1, 1), DimensionError);
    EXPECT_THROW(Tensor4<float>(Shape4{1, 1, 2, 2}, std::vector<float>(3)), DimensionError);
}
