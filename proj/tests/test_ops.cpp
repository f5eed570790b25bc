// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mgsd/errors.hpp"
#include "mgsd/grad_check.hpp"
#include "mgsd/ops.hpp"
#include "test_util.hpp"

using namespace mgsd;
using testutil::max_diff;
using testutil::probe;
using testutil::randn;
using testutil::Rng;
using testutil::vec;

namespace {

// Grad-checks sum(op(inputs) * R) over every input that requires grad.
template <typename Op>
GradCheckReport check_op(std::vector<Tensor> inputs, Op op, std::uint64_t seed = 99) {
    Rng rng(seed);
    Graph probe_graph(false);
    const auto shape = op(probe_graph, inputs).shape();
    const auto weights = randn(rng, shape);
    std::vector<Tensor> params;
    for (auto& t : inputs)
        if (t.requires_grad()) params.push_back(t);
    return grad_check([&](Graph& g) { return probe(g, op(g, inputs), weights); }, params);
}

}  // namespace

TEST(Tensor, ConstructionInvariants) {
    auto t = Tensor::zeros({2, 3}, true);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.grad().size(), 6u);
    for (double v : t.grad()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST(Tensor, CopiesShareStorageAndCloneDoesNot) {
    auto a = Tensor::full({3}, 1.0);
    auto b = a;
    b.data()[0] = 5.0;
    EXPECT_EQ(a.data()[0], 5.0);
    auto c = a.clone();
    c.data()[1] = 7.0;
    EXPECT_EQ(a.data()[1], 1.0);
    EXPECT_FALSE(a.same_storage(c));
}

TEST(Tensor, BackwardAccumulates) {
    auto x = Tensor::from({2}, {1.0, 2.0}, true);
    for (int rep = 0; rep < 2; ++rep) {
        Graph g;
        g.backward(sum_all(g, scale(g, x, 3.0)));
    }
    EXPECT_EQ(x.grad()[0], 6.0);
    EXPECT_EQ(x.grad()[1], 6.0);
    x.zero_grad();
    EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Tensor, BackwardFromNonScalarThrows) {
    auto x = Tensor::from({2}, {1.0, 2.0}, true);
    Graph g;
    auto y = scale(g, x, 2.0);
    EXPECT_THROW(g.backward(y), UsageError);
}

TEST(Tensor, NonRecordingGraphTracksNothing) {
    auto x = Tensor::from({2}, {1.0, 2.0}, true);
    Graph g(false);
    auto y = sum_all(g, x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_EQ(g.size(), 0u);
}

TEST(Tensor, RepeatedBackwardIsBitIdentical) {
    Rng rng(1);
    auto a = randn(rng, {4, 5}, true);
    auto b = randn(rng, {5, 3}, true);
    auto run = [&] {
        a.zero_grad();
        b.zero_grad();
        Graph g;
        g.backward(sum_all(g, gelu(g, matmul(g, a, b))));
        return std::make_pair(vec(Tensor::from(a.shape(), {a.grad().begin(), a.grad().end()})),
                              vec(Tensor::from(b.shape(), {b.grad().begin(), b.grad().end()})));
    };
    const auto first = run();
    const auto second = run();
    EXPECT_EQ(first, second);
}

TEST(Matmul, IdentityAndZero) {
    Rng rng(2);
    auto I = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto B = randn(rng, {2, 3});
    Graph g(false);
    EXPECT_EQ(vec(matmul(g, I, B)), vec(B));

    auto A = randn(rng, {3, 2}, true);
    auto Z = Tensor::zeros({2, 4});
    Graph g2;
    auto out = matmul(g2, A, Z);
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
    g2.backward(sum_all(g2, out));
    for (double v : A.grad()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, MatchesLoopAndFiniteDifferences) {
    Rng rng(3);
    auto A = randn(rng, {3, 4}, true);
    auto B = randn(rng, {4, 2}, true);
    Graph g(false);
    EXPECT_LT(max_diff(matmul(g, A, B), oracle::affine(vec(A), 3, 4, vec(B), 2, nullptr)), 1e-12);

    std::vector<Tensor> params{A, B};
    const auto report = grad_check([&](Graph& gg) { return sum_all(gg, matmul(gg, A, B)); }, params);
    EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(Matmul, BatchedLeadingAxes) {
    Rng rng(4);
    auto A = randn(rng, {2, 3, 4}, true);
    auto B = randn(rng, {4, 5}, true);
    Graph g(false);
    EXPECT_LT(max_diff(matmul(g, A, B), oracle::affine(vec(A), 6, 4, vec(B), 5, nullptr)), 1e-12);
    EXPECT_LT(check_op({A, B}, [](Graph& gg, auto& in) { return matmul(gg, in[0], in[1]); }).max_rel_error, 1e-6);
    EXPECT_THROW(matmul(g, A, randn(rng, {3, 5})), DimensionError);
}

TEST(Conv, DeltaKernelIsIdentity) {
    Rng rng(5);
    auto x = randn(rng, {7, 2});
    auto kernel = Tensor::from({3, 2}, {0, 0, 1, 1, 0, 0});
    Graph g(false);
    EXPECT_EQ(vec(conv1d_depthwise(g, x, kernel, Tensor::zeros({2}))), vec(x));
}

TEST(Conv, ZeroInputGivesBias) {
    auto x = Tensor::zeros({5, 3});
    auto kernel = Tensor::full({3, 3}, 0.7);
    auto bias = Tensor::from({3}, {1.0, -2.0, 0.5});
    Graph g(false);
    const auto out = conv1d_depthwise(g, x, kernel, bias);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.data()[t * 3 + c], bias.data()[c]);
}

TEST(Conv, DepthwiseMatchesLoopOracle) {
    Rng rng(6);
    for (std::size_t k : {1u, 3u, 5u, 9u}) {
        auto x = randn(rng, {7, 2}, true);
        auto kernel = randn(rng, {k, 2}, true);
        auto bias = randn(rng, {2}, true);
        Graph g(false);
        EXPECT_LT(max_diff(conv1d_depthwise(g, x, kernel, bias),
                           oracle::conv(vec(x), 1, 7, 2, vec(kernel), k, vec(bias), 2, true)),
                  1e-12)
            << "k=" << k;
        EXPECT_LT(check_op({x, kernel, bias},
                           [](Graph& gg, auto& in) { return conv1d_depthwise(gg, in[0], in[1], in[2]); })
                      .max_rel_error,
                  1e-6);
    }
}

TEST(Conv, BatchedKernelLongerThanSequence) {
    Rng rng(7);
    auto x = randn(rng, {2, 3, 4}, true);
    auto kernel = randn(rng, {7, 4}, true);
    auto bias = randn(rng, {4}, true);
    Graph g(false);
    EXPECT_LT(max_diff(conv1d_depthwise(g, x, kernel, bias),
                       oracle::conv(vec(x), 2, 3, 4, vec(kernel), 7, vec(bias), 4, true)),
              1e-12);
    EXPECT_LT(check_op({x, kernel, bias},
                       [](Graph& gg, auto& in) { return conv1d_depthwise(gg, in[0], in[1], in[2]); })
                  .max_rel_error,
              1e-6);
}

TEST(Conv, FullMatchesLoopOracle) {
    Rng rng(8);
    auto x = randn(rng, {2, 6, 3}, true);
    auto kernel = randn(rng, {5, 3, 4}, true);
    auto bias = randn(rng, {4}, true);
    Graph g(false);
    EXPECT_LT(max_diff(conv1d_full(g, x, kernel, bias),
                       oracle::conv(vec(x), 2, 6, 3, vec(kernel), 5, vec(bias), 4, false)),
              1e-12);
    EXPECT_LT(check_op({x, kernel, bias}, [](Graph& gg, auto& in) { return conv1d_full(gg, in[0], in[1], in[2]); })
                  .max_rel_error,
              1e-6);
}

TEST(Conv, EvenKernelRejected) {
    Graph g(false);
    EXPECT_THROW(conv1d_depthwise(g, Tensor::zeros({4, 2}), Tensor::zeros({4, 2}), Tensor::zeros({2})), ConfigError);
    EXPECT_THROW(conv1d_full(g, Tensor::zeros({4, 2}), Tensor::zeros({2, 2, 2}), Tensor::zeros({2})), ConfigError);
}

TEST(LayerNorm, ConstantFrameAndZeroGamma) {
    Graph g(false);
    auto x = Tensor::full({2, 4}, 3.5);
    const auto out = layer_norm(g, x, Tensor::full({4}, 1.0), Tensor::zeros({4}));
    for (double v : out.data()) EXPECT_EQ(v, 0.0);

    Rng rng(9);
    auto beta = randn(rng, {4});
    const auto out2 = layer_norm(g, randn(rng, {3, 4}), Tensor::zeros({4}), beta);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out2.data()[r * 4 + c], beta.data()[c]);
}

TEST(LayerNorm, MatchesOracleAndFiniteDifferences) {
    Rng rng(10);
    auto x = randn(rng, {4, 6}, true);
    auto gamma = randn(rng, {6}, true);
    auto beta = randn(rng, {6}, true);
    Graph g(false);
    EXPECT_LT(max_diff(layer_norm(g, x, gamma, beta), oracle::layer_norm(vec(x), 4, 6, vec(gamma), vec(beta))),
              1e-12);
    EXPECT_LT(check_op({x, gamma, beta}, [](Graph& gg, auto& in) { return layer_norm(gg, in[0], in[1], in[2]); })
                  .max_rel_error,
              1e-5);
}

TEST(Elementwise, KnownValues) {
    Graph g(false);
    EXPECT_EQ(sigmoid(g, Tensor::scalar(0.0)).item(), 0.5);
    EXPECT_EQ(gelu(g, Tensor::scalar(0.0)).item(), 0.0);
    EXPECT_NEAR(gelu(g, Tensor::scalar(1.0)).item(), oracle::gelu(1.0), 1e-15);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
    Rng rng(11);
    auto x = randn(rng, {3, 4}, true);
    auto y = randn(rng, {3, 4}, true);
    auto w = randn(rng, {4}, true);
    EXPECT_LT(check_op({x}, [](Graph& g, auto& in) { return sigmoid(g, in[0]); }).max_rel_error, 1e-6);
    EXPECT_LT(check_op({x}, [](Graph& g, auto& in) { return gelu(g, in[0]); }).max_rel_error, 1e-6);
    EXPECT_LT(check_op({x, y}, [](Graph& g, auto& in) { return mul(g, in[0], in[1]); }).max_rel_error, 1e-6);
    EXPECT_LT(check_op({x, y}, [](Graph& g, auto& in) { return add(g, in[0], in[1]); }).max_rel_error, 1e-6);
    EXPECT_LT(check_op({x, w}, [](Graph& g, auto& in) { return add_bias(g, in[0], in[1]); }).max_rel_error, 1e-6);
    EXPECT_LT(check_op({x, w}, [](Graph& g, auto& in) { return scale_channels(g, in[0], in[1]); }).max_rel_error,
              1e-6);
}

TEST(Softmax, SingleUnmaskedPositionGetsAllWeight) {
    Graph g(false);
    auto x = Tensor::from({1, 3}, {4.0, -1.0, 2.0});
    auto mask = Tensor::from({1, 3}, {0.0, 1.0, 0.0});
    const auto p = softmax_masked(g, x, mask, 1);
    EXPECT_EQ(vec(p), (std::vector<double>{0.0, 1.0, 0.0}));
}

TEST(Softmax, RowsSumToOneAndGradients) {
    Rng rng(12);
    auto x = randn(rng, {3, 5}, true);
    std::vector<double> m(15, 1.0);
    m[3] = m[4] = m[9] = 0.0;
    auto mask = Tensor::from({3, 5}, m);
    Graph g(false);
    const auto p = softmax_masked(g, x, mask, 1);
    for (std::size_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 5; ++c) s += p.data()[r * 5 + c];
        EXPECT_NEAR(s, 1.0, 1e-14);
    }
    EXPECT_EQ(p.data()[3], 0.0);
    EXPECT_LT(check_op({x}, [&](Graph& gg, auto& in) { return softmax_masked(gg, in[0], mask, 1); }).max_rel_error,
              1e-6);
    EXPECT_LT(check_op({x}, [&](Graph& gg, auto& in) { return softmax_masked(gg, in[0], mask, 0); }).max_rel_error,
              1e-6);
}

TEST(Softmax, FullyMaskedRowThrows) {
    Graph g(false);
    EXPECT_THROW(softmax_masked(g, Tensor::zeros({1, 2}), Tensor::zeros({1, 2}), 1), DataError);
}

TEST(Dropout, ZeroRateIsIdentityInBothModes) {
    Rng rng(13);
    auto x = randn(rng, {4, 3});
    for (bool training : {false, true}) {
        Graph g;
        g.set_training(training);
        EXPECT_EQ(vec(dropout(g, x, 0.0)), vec(x));
    }
}

TEST(Dropout, EvalIsIdentityAndTrainingIsKeyed) {
    Rng rng(14);
    auto x = Tensor::full({2000}, 1.0);
    Graph eval;
    EXPECT_EQ(vec(dropout(eval, x, 0.5)), vec(x));

    auto run = [&](std::uint64_t step) {
        Graph g;
        g.set_training(true);
        g.set_rng(3, step);
        return vec(dropout(g, x, 0.25));
    };
    const auto a = run(0), b = run(0), c = run(1);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    std::size_t kept = 0;
    for (double v : a) {
        EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
        kept += v != 0.0;
    }
    EXPECT_NEAR(static_cast<double>(kept) / 2000.0, 0.75, 0.05);
    Graph g;
    EXPECT_THROW(dropout(g, x, 1.0), ConfigError);
}

TEST(Dropout, GradientFollowsMask) {
    Rng rng(15);
    auto x = randn(rng, {5, 4}, true);
    const auto report = check_op({x}, [](Graph& g, auto& in) {
        g.set_training(true);
        g.set_rng(1, 2);
        return dropout(g, in[0], 0.3);
    });
    EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(Shape, SliceConcatGatherMeanWeighted) {
    Rng rng(16);
    auto a = randn(rng, {2, 3, 4}, true);
    auto b = randn(rng, {2, 3, 2}, true);
    Graph g(false);
    std::vector<Tensor> parts{a, b};
    const auto cat = concat_last(g, parts);
    EXPECT_EQ(cat.shape(), (Shape{2, 3, 6}));
    EXPECT_EQ(vec(slice_last(g, cat, 4, 6)), vec(b));
    EXPECT_EQ(vec(slice_last(g, cat, 0, 4)), vec(a));

    EXPECT_LT(check_op({a, b}, [](Graph& gg, auto& in) { return concat_last(gg, in); }).max_rel_error, 1e-6);
    EXPECT_LT(check_op({a}, [](Graph& gg, auto& in) { return slice_last(gg, in[0], 1, 3); }).max_rel_error, 1e-6);

    const std::vector<std::size_t> rows{5, 0, 3, 3};
    const auto gathered = gather_rows(g, a, rows);
    EXPECT_EQ(gathered.shape(), (Shape{4, 4}));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(gathered.data()[i * 4 + c], a.data()[rows[i] * 4 + c]);
    EXPECT_LT(check_op({a}, [&](Graph& gg, auto& in) { return gather_rows(gg, in[0], rows); }).max_rel_error, 1e-6);

    auto c = randn(rng, {2, 3, 4}, true);
    auto w = randn(rng, {2}, true);
    EXPECT_LT(check_op({a, c}, [](Graph& gg, auto& in) { return mean_of(gg, in); }).max_rel_error, 1e-6);
    EXPECT_LT(check_op({a, c, w},
                       [](Graph& gg, auto& in) {
                           std::vector<Tensor> br{in[0], in[1]};
                           return weighted_sum(gg, br, in[2]);
                       })
                  .max_rel_error,
              1e-6);
    EXPECT_THROW(mean_of(g, std::span<const Tensor>{}), ConfigError);
}

TEST(Mask, ZeroesPaddedFramesAndBlocksGradient) {
    Rng rng(17);
    auto x = randn(rng, {2, 3, 2}, true);
    auto mask = Tensor::from({2, 3}, {1, 1, 0, 1, 0, 0});
    Graph g;
    const auto out = apply_mask(g, x, mask);
    for (std::size_t r : {2u, 4u, 5u})
        for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(out.data()[r * 2 + c], 0.0);
    g.backward(sum_all(g, out));
    EXPECT_EQ(x.grad()[4], 0.0);
    EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(GradCheck, LinearGraphIsExact) {
    Rng rng(18);
    auto x = randn(rng, {3, 3}, true);
    auto w = randn(rng, {3, 3});
    std::vector<Tensor> params{x};
    // No truncation error for a linear graph, so a wide step only reduces rounding.
    const auto report = grad_check([&](Graph& g) { return sum_all(g, mul(g, x, w)); }, params, 1e-2);
    EXPECT_LT(report.max_rel_error, 1e-9);
    EXPECT_EQ(report.checked, 9u);
}

TEST(GradCheck, ConstantGraphHasZeroGradients) {
    auto x = Tensor::from({2}, {1.0, 2.0}, true);
    std::vector<Tensor> params{x};
    const auto report = grad_check([](Graph&) { return Tensor::scalar(4.0); }, params);
    EXPECT_EQ(report.max_abs_error, 0.0);
    EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(GradCheck, DetectsAWrongBackwardRule) {
    auto x = Tensor::from({2}, {0.3, -0.7}, true);
    std::vector<Tensor> params{x};
    // Forward of x^2 with a backward claiming d/dx = x.
    const auto report = grad_check(
        [&](Graph& g) {
            auto out = Tensor::scalar(x.data()[0] * x.data()[0] + x.data()[1] * x.data()[1]);
            if (g.track(out, {&x})) {
                g.record(out, [x, out]() mutable {
                    for (std::size_t i = 0; i < 2; ++i) x.grad()[i] += out.grad()[0] * x.data()[i];
                });
            }
            return out;
        },
        params);
    EXPECT_GT(report.max_rel_error, 0.4);
}

TEST(KeyedRng, UniformRangeAndIndependence) {
    double sum = 0.0;
    for (std::uint64_t i = 0; i < 10000; ++i) {
        const double u = keyed_uniform(1, 2, 3, i);
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
    }
    EXPECT_NEAR(sum / 10000.0, 0.5, 0.02);
    EXPECT_NE(keyed_uniform(1, 2, 3, 4), keyed_uniform(1, 3, 3, 4));
    EXPECT_EQ(keyed_uniform(1, 2, 3, 4), keyed_uniform(1, 2, 3, 4));
}
