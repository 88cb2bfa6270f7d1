// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "swin3d/autodiff.hpp"
#include "swin3d/errors.hpp"
#include "swin3d/gradcheck.hpp"
#include "swin3d/random.hpp"

namespace swin3d {
namespace {

Parameter random_param(const std::string& name, Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    fill_uniform(t, rng, lo, hi);
    return Parameter(name, std::move(t));
}

Tensor random_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    fill_uniform(t, rng, -1.0, 1.0);
    return t;
}

TEST(Tensor, ShapeMustMatchValueCount) {
    EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
    Tensor t({2, 3});
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
}

TEST(Matmul, IdentityTimesIdentity) {
    Tape tape;
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Var c = matmul(tape, tape.input(eye), tape.input(eye));
    EXPECT_EQ(tape.value(c), eye);
}

TEST(Matmul, RowSums) {
    Tape tape;
    Var c = matmul(tape, tape.input(Tensor({2, 2}, {1, 2, 3, 4})), tape.input(Tensor({2, 1}, {1, 1})));
    EXPECT_EQ(tape.value(c), Tensor({2, 1}, {3, 7}));
}

TEST(Matmul, InnerDimensionMismatchThrows) {
    Tape tape;
    EXPECT_THROW(matmul(tape, tape.input(Tensor({2, 3})), tape.input(Tensor({2, 3}))), DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    Rng rng(11);
    Parameter a = random_param("a", {5, 4}, rng);
    Parameter b = random_param("b", {4, 3}, rng);
    const Tensor w = random_tensor({5, 3}, rng);
    std::vector<Parameter*> params{&a, &b};
    auto report = gradcheck(params, [&](Tape& t) {
        return weighted_sum(t, matmul(t, t.param(a), t.param(b)), w);
    });
    EXPECT_LT(report.max_rel_error, 1e-6) << report.worst;
}

TEST(LayerNorm, ConstantRowCollapsesToBeta) {
    Tape tape;
    Var y = layer_norm(tape, tape.input(Tensor::filled({1, 4}, 3.5)), tape.input(Tensor::filled({4}, 1.0)),
                       tape.input(Tensor::zeros({4})));
    for (double v : tape.value(y).values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedRowIsUnchanged) {
    Tape tape;
    Var y = layer_norm(tape, tape.input(Tensor({1, 2}, {-1.0, 1.0})), tape.input(Tensor::filled({2}, 1.0)),
                       tape.input(Tensor::zeros({2})), 0.0);
    EXPECT_DOUBLE_EQ(tape.value(y)[0], -1.0);
    EXPECT_DOUBLE_EQ(tape.value(y)[1], 1.0);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
    Rng rng(12);
    Parameter x = random_param("x", {8, 16}, rng);
    Parameter gamma = random_param("gamma", {16}, rng, 0.5, 1.5);
    Parameter beta = random_param("beta", {16}, rng);
    const Tensor w = random_tensor({8, 16}, rng);
    std::vector<Parameter*> params{&x, &gamma, &beta};
    auto report = gradcheck(params, [&](Tape& t) {
        return weighted_sum(t, layer_norm(t, t.param(x), t.param(gamma), t.param(beta)), w);
    });
    EXPECT_LT(report.max_rel_error, 1e-5) << report.worst;
}

TEST(Mlp, ZeroWeightsGiveBiases) {
    Rng rng(13);
    Tape tape;
    const Tensor b2({3}, {0.5, -1.0, 2.0});
    Var y = mlp_block(tape, tape.input(random_tensor({4, 3}, rng)), tape.input(Tensor({3, 12})),
                      tape.input(random_tensor({12}, rng)), tape.input(Tensor({12, 3})), tape.input(b2));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(tape.value(y)(i, j), b2[j]);
}

TEST(Mlp, IdentityConstructionReproducesInputInLinearRegion) {
    // gelu(z) = z to double precision for z >= 10, so shifting by +10 and
    // back recovers the input with ratio-1 identity weights.
    Rng rng(14);
    Tape tape;
    const Tensor x = random_tensor({5, 3}, rng);
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Var y = mlp_block(tape, tape.input(x), tape.input(eye), tape.input(Tensor::filled({3}, 10.0)),
                      tape.input(eye), tape.input(Tensor::filled({3}, -10.0)));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(tape.value(y)[i], x[i], 1e-12);
}

TEST(Mlp, ShapeMismatchThrows) {
    Tape tape;
    EXPECT_THROW(mlp_block(tape, tape.input(Tensor({2, 3})), tape.input(Tensor({4, 12})),
                           tape.input(Tensor({12})), tape.input(Tensor({12, 3})), tape.input(Tensor({3}))),
                 DimensionError);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
    Rng rng(15);
    Parameter x = random_param("x", {6, 4}, rng);
    Parameter w1 = random_param("w1", {4, 16}, rng);
    Parameter b1 = random_param("b1", {16}, rng);
    Parameter w2 = random_param("w2", {16, 4}, rng);
    Parameter b2 = random_param("b2", {4}, rng);
    const Tensor w = random_tensor({6, 4}, rng);
    std::vector<Parameter*> params{&x, &w1, &b1, &w2, &b2};
    auto report = gradcheck(params, [&](Tape& t) {
        return weighted_sum(
            t, mlp_block(t, t.param(x), t.param(w1), t.param(b1), t.param(w2), t.param(b2)), w);
    });
    EXPECT_LT(report.max_rel_error, 1e-5) << report.worst;
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogC) {
    Tape tape;
    std::vector<int> labels{0, 3};
    Var loss = softmax_cross_entropy(tape, tape.input(Tensor({2, 4})), labels);
    EXPECT_NEAR(tape.value(loss)[0], std::log(4.0), 1e-15);
    EXPECT_NEAR(tape.value(loss)[0], 1.3863, 5e-5);
}

TEST(SoftmaxCrossEntropy, ConfidentCorrectLogitsGiveZeroLoss) {
    Tape tape;
    std::vector<int> labels{1};
    Var loss = softmax_cross_entropy(tape, tape.input(Tensor({1, 3}, {-500.0, 500.0, -500.0})), labels);
    EXPECT_NEAR(tape.value(loss)[0], 0.0, 1e-300);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRangeThrows) {
    Tape tape;
    std::vector<int> labels{4};
    EXPECT_THROW(softmax_cross_entropy(tape, tape.input(Tensor({1, 4})), labels), InputError);
    std::vector<int> negative{-1};
    EXPECT_THROW(softmax_cross_entropy(tape, tape.input(Tensor({1, 4})), negative), InputError);
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
    Rng rng(16);
    Parameter z = random_param("z", {10, 5}, rng, -2.0, 2.0);
    std::vector<int> labels{0, 1, 2, 3, 4, 4, 3, 2, 1, 0};
    std::vector<Parameter*> params{&z};
    auto report = gradcheck(params, [&](Tape& t) { return softmax_cross_entropy(t, t.param(z), labels); });
    EXPECT_LT(report.max_rel_error, 1e-6) << report.worst;
}

TEST(AutodiffProperties, RandomInstancesPassFiniteDifferenceChecks) {
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        Rng rng(100 + trial);
        Parameter x = random_param("x", {3, 4}, rng);
        Parameter w = random_param("w", {4, 4}, rng);
        Parameter b = random_param("b", {4}, rng);
        Parameter gamma = random_param("gamma", {4}, rng, 0.5, 1.5);
        Parameter beta = random_param("beta", {4}, rng);
        Parameter w1 = random_param("w1", {4, 16}, rng);
        Parameter b1 = random_param("b1", {16}, rng);
        Parameter w2 = random_param("w2", {16, 4}, rng);
        Parameter b2 = random_param("b2", {4}, rng);
        const std::vector<int> labels{1, 0, 3};
        std::vector<Parameter*> params{&x, &w, &b, &gamma, &beta, &w1, &b1, &w2, &b2};
        auto report = gradcheck(params, [&](Tape& t) {
            Var h = linear(t, t.param(x), t.param(w), t.param(b));
            h = layer_norm(t, h, t.param(gamma), t.param(beta));
            h = add(t, h, mlp_block(t, h, t.param(w1), t.param(b1), t.param(w2), t.param(b2)));
            return softmax_cross_entropy(t, h, labels);
        });
        EXPECT_LT(report.max_rel_error, 1e-4) << "trial " << trial << ": " << report.worst;
    }
}

TEST(AutodiffProperties, ForwardIsBitwiseDeterministic) {
    Rng rng(17);
    const Tensor x = random_tensor({6, 8}, rng);
    const Tensor w1 = random_tensor({8, 32}, rng), b1 = random_tensor({32}, rng);
    const Tensor w2 = random_tensor({32, 8}, rng), b2 = random_tensor({8}, rng);
    auto run = [&] {
        Tape t;
        return t.value(mlp_block(t, t.input(x), t.input(w1), t.input(b1), t.input(w2), t.input(b2)));
    };
    EXPECT_EQ(run(), run());
}

TEST(AutodiffProperties, BackwardTwiceDoublesGradients) {
    Rng rng(18);
    Parameter a = random_param("a", {3, 3}, rng);
    Parameter b = random_param("b", {3, 2}, rng);
    const Tensor w = random_tensor({3, 2}, rng);
    Tape tape;
    Var loss = weighted_sum(tape, gelu(tape, matmul(tape, tape.param(a), tape.param(b))), w);
    tape.backward(loss);
    const Tensor once_a = a.grad, once_b = b.grad;
    tape.backward(loss);
    for (std::size_t i = 0; i < once_a.size(); ++i) EXPECT_EQ(a.grad[i], 2.0 * once_a[i]);
    for (std::size_t i = 0; i < once_b.size(); ++i) EXPECT_EQ(b.grad[i], 2.0 * once_b[i]);
}

TEST(AutodiffProperties, ZeroGradResetsAndGradShapeFollowsValue) {
    Parameter p("p", Tensor({2, 5}));
    EXPECT_EQ(p.grad.shape(), p.value.shape());
    p.grad.fill(3.0);
    p.zero_grad();
    for (double g : p.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(AutodiffProperties, BackwardVisitsNodesInReverseRecordingOrder) {
    Tape tape;
    Var a = tape.input(Tensor({1, 2}, {1.0, 2.0}));
    Var b = relu(tape, a);
    Var c = gelu(tape, b);
    Var loss = weighted_sum(tape, c, Tensor({1, 2}, {1.0, 1.0}));
    std::vector<std::size_t> order;
    tape.backward(loss, Tensor({1}, {1.0}), [&](std::size_t i) { order.push_back(i); });
    EXPECT_EQ(order, (std::vector<std::size_t>{loss.id, c.id, b.id, a.id}));
}

TEST(GatherRows, BackwardScatterAdds) {
    Tape tape;
    Var x = tape.input(Tensor({2, 2}, {1, 2, 3, 4}));
    std::vector<std::size_t> idx{1, 1, 0};
    Var y = gather_rows(tape, x, idx);
    EXPECT_EQ(tape.value(y), Tensor({3, 2}, {3, 4, 3, 4, 1, 2}));
    tape.backward(weighted_sum(tape, y, Tensor::filled({3, 2}, 1.0)));
    EXPECT_EQ(tape.grad(x), Tensor({2, 2}, {1, 1, 2, 2}));
}

}  // namespace
}  // namespace swin3d
