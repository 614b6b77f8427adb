#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "contracon/error.h"
#include "contracon/grad_check.h"
#include "contracon/ops.h"
#include "testkit.h"

using namespace contracon;

namespace {

template <typename T>
void expect_values(const Tensor<T>& t, std::vector<double> expected, double tol) {
    ASSERT_EQ(t.numel(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t.data()[i], expected[i], tol) << "index " << i;
}

Tensor<double> randn(Rng& rng, Shape s, bool grad = true) {
    std::vector<double> v(shape_numel(s));
    for (double& x : v) x = rng.normal();
    return Tensor<double>(std::move(s), std::move(v), grad);
}

}  // namespace

TEST(Matmul, IdentityAndClosedForm) {
    auto a = Tensor<double>::matrix({{1, 2}, {3, 4}});
    expect_values(matmul(a, Tensor<double>::matrix({{1, 0}, {0, 1}})), {1, 2, 3, 4}, 0);
    auto c = matmul(a, Tensor<double>::matrix({{5}, {6}}));
    EXPECT_EQ(c.shape(), (Shape{2, 1}));
    expect_values(c, {17, 39}, 0);
}

TEST(Matmul, DimensionMismatchNamesBothShapes) {
    auto a = Tensor<double>::zeros({2, 3}), b = Tensor<double>::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL() << "expected a shape error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::shape);
        EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos) << e.what();
    }
}

TEST(Matmul, GradientMatchesCentralDifferences) {
    Rng rng(3);
    auto a = randn(rng, {3, 4}), b = randn(rng, {4, 2});
    auto r = grad_check([&] { return sum(matmul(a, b)); }, {a, b}, 1e-3, 1e-4);
    EXPECT_TRUE(r.passed) << r.max_relative_error;
}

TEST(ConvSame, DeltaZeroAndOnesKernels) {
    Rng rng(1);
    auto w = randn(rng, {4, 5}, false);
    auto delta = Tensor<double>::zeros({3, 3});
    delta.data()[4] = 1.0;
    expect_values(conv2d_same(w, delta), w.values(), 0);
    expect_values(conv2d_same(w, Tensor<double>::zeros({5, 5})), std::vector<double>(20, 0.0), 0);
    expect_values(conv2d_same(Tensor<double>::matrix({{1, 2}, {3, 4}}), Tensor<double>::full({3, 3}, 1.0)),
                  {10, 10, 10, 10}, 0);
}

TEST(ConvSame, MatchesNestedLoopOracle) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t r = 1 + rng.uniform_index(6), c = 1 + rng.uniform_index(6);
        const std::size_t k = 1 + 2 * rng.uniform_index(std::min(r, c) + 1);
        auto w = randn(rng, {r, c}, false), f = randn(rng, {k, k}, false);
        expect_values(conv2d_same(w, f), testkit::conv_same_oracle(w.values(), r, c, f.values(), k), 1e-12);
    }
}

TEST(ConvSame, RejectsEvenOrOversizedKernels) {
    auto w = Tensor<double>::zeros({3, 3});
    EXPECT_THROW(conv2d_same(w, Tensor<double>::zeros({2, 2})), Error);
    EXPECT_THROW(conv2d_same(w, Tensor<double>::zeros({9, 9})), Error);
    EXPECT_NO_THROW(conv2d_same(w, Tensor<double>::zeros({7, 7})));
}

TEST(Softmax, ClosedFormsAndShiftInvariance) {
    expect_values(softmax(Tensor<double>({2}, {0, 0})), {0.5, 0.5}, 1e-15);
    expect_values(softmax(Tensor<double>({2}, {0, std::log(3.0)})), {0.25, 0.75}, 1e-12);
    Rng rng(5);
    auto x = randn(rng, {4, 6}, false);
    auto shifted = x.clone();
    for (double& v : shifted.data()) v += 123.0;
    expect_values(softmax(shifted), softmax(x).values(), 1e-6);
}

TEST(LayerNorm, ClosedForms) {
    auto g = Tensor<double>::full({3}, 1.0), b = Tensor<double>::zeros({3});
    expect_values(layer_norm(Tensor<double>({1, 3}, {1, 2, 3}), g, b, 0.0), {-1.224744871, 0, 1.224744871}, 1e-6);
    auto beta = Tensor<double>({3}, {0.3, -0.1, 2.0});
    expect_values(layer_norm(Tensor<double>::full({2, 3}, 7.0), g, beta, 1e-5), {0.3, -0.1, 2.0, 0.3, -0.1, 2.0},
                  1e-12);
}

TEST(LayerNorm, GradientOnRandom4x8) {
    Rng rng(8);
    auto x = randn(rng, {4, 8}), g = randn(rng, {8}), b = randn(rng, {8});
    auto r = randn(rng, {4, 8}, false);
    auto rep = grad_check([&] { return sum(mul(layer_norm(x, g, b, 1e-5), r)); }, {x, g, b}, 1e-3, 1e-4);
    EXPECT_TRUE(rep.passed) << rep.max_relative_error;
}

TEST(Activations, FixedPoints) {
    EXPECT_EQ(gelu(Tensor<double>::scalar(0.0)).item(), 0.0);
    EXPECT_EQ(sigmoid(Tensor<double>::scalar(0.0)).item(), 0.5);
    // 0.5 * 3 * (1 + erf(3 / sqrt 2)) evaluated independently
    const double oracle = 0.5 * 3.0 * (1.0 + std::erf(3.0 / std::numbers::sqrt2));
    EXPECT_NEAR(oracle, 2.99595, 1e-4);
    EXPECT_NEAR(gelu(Tensor<double>::scalar(3.0)).item(), oracle, 1e-12);
    EXPECT_EQ(relu(Tensor<double>({3}, {-1, 0, 2})).values(), (std::vector<double>{0, 0, 2}));
}

TEST(Activations, SigmoidSymmetry) {
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.normal(0.0, 10.0);
        EXPECT_NEAR(sigmoid(Tensor<double>::scalar(x)).item() + sigmoid(Tensor<double>::scalar(-x)).item(), 1.0,
                    1e-12);
    }
}

TEST(CrossEntropy, ClosedFormsAndLimit) {
    const std::vector<int> zero{0};
    EXPECT_NEAR(cross_entropy(Tensor<double>({1, 2}, {0, 0}), std::span<const int>(zero)).item(), std::log(2.0),
                1e-12);
    EXPECT_LE(cross_entropy(Tensor<double>({1, 2}, {30, 0}), std::span<const int>(zero)).item(), 1e-9);
    const std::vector<int> bad{2};
    EXPECT_THROW(cross_entropy(Tensor<double>({1, 2}, {0, 0}), std::span<const int>(bad)), Error);
}

TEST(Backward, SumGivesOnesAndReuseAccumulates) {
    auto x = Tensor<double>({3}, {1, 2, 3}, true);
    sum(x).backward();
    EXPECT_EQ(x.grad(), (std::vector<double>{1, 1, 1}));
    auto y = Tensor<double>({3}, {1, 2, 3}, true);
    add(sum(y), sum(y)).backward();
    EXPECT_EQ(y.grad(), (std::vector<double>{2, 2, 2}));
}

TEST(Backward, ReplayWithoutReforwardIsAnError) {
    auto x = Tensor<double>({2}, {1, 2}, true);
    auto loss = sum(mul(x, x));
    loss.backward();
    EXPECT_THROW(loss.backward(), Error);
}

TEST(Backward, OffPathTensorsGetNoGradient) {
    auto x = Tensor<double>({2}, {1, 2}, true), unused = Tensor<double>({2}, {3, 4}, true);
    auto side = mul(unused, unused);
    sum(x).backward();
    for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
    (void)side;
}

TEST(Backward, NoGradGuardRecordsNothing) {
    auto x = Tensor<double>({2}, {1, 2}, true);
    NoGradGuard guard;
    auto y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Tensor, GradShapeMatchesDataShape) {
    Rng rng(4);
    auto a = randn(rng, {2, 3}), b = randn(rng, {3, 4});
    sum(matmul(a, b)).backward();
    EXPECT_EQ(a.grad().size(), a.numel());
    EXPECT_EQ(b.grad().size(), b.numel());
    EXPECT_EQ(shape_numel(a.shape()), a.values().size());
}

TEST(GradCheck, PolynomialAndConstant) {
    auto x = Tensor<double>({3}, {1, 2, 3}, true);
    auto rep = grad_check([](const Tensor<double>& v) { return sum(mul(v, v)); }, x, 1e-3, 1e-8);
    ASSERT_EQ(rep.analytic.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(rep.analytic[i], 2.0 * (i + 1), 1e-8);
    EXPECT_TRUE(rep.passed);

    auto c = Tensor<double>({2}, {1, 2}, true);
    auto constant = grad_check([](const Tensor<double>&) { return Tensor<double>::scalar(4.0); }, c, 1e-3, 1e-8);
    for (double g : constant.analytic) EXPECT_EQ(g, 0.0);
    for (double g : constant.numeric) EXPECT_EQ(g, 0.0);
}

TEST(GradCheck, CrossEntropyOfMatmul) {
    Rng rng(6);
    auto a = randn(rng, {3, 3}), b = randn(rng, {3, 3});
    const std::vector<int> labels{0, 2, 1};
    auto rep = grad_check([&] { return cross_entropy(matmul(a, b), std::span<const int>(labels)); }, {a, b}, 1e-3,
                          1e-4);
    EXPECT_TRUE(rep.passed) << rep.max_relative_error;
}

TEST(GradCheck, RejectsDropout) {
    auto x = Tensor<double>({4}, {1, 2, 3, 4}, true);
    Rng rng(0);
    EXPECT_THROW(grad_check([&](const Tensor<double>& v) { return sum(dropout(v, 0.5, rng)); }, x, 1e-3, 1e-4),
                 Error);
}

TEST(GradientSuite, SmallRunPasses) {
    for (const auto& r : testkit::gradient_suite(5, 99)) EXPECT_TRUE(r.passed()) << r.op << " " << r.worst;
}

TEST(Dropout, SeededMaskIsReproducibleAndScaled) {
    auto x = Tensor<double>::full({1000}, 1.0);
    Rng r1(7), r2(7);
    auto a = dropout(x, 0.1, r1), b = dropout(x, 0.1, r2);
    EXPECT_EQ(a.values(), b.values());
    for (double v : a.values()) EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.9) < 1e-12);
}
