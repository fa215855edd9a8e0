// SPDX-License-Identifier: Apache-2.0
#include "dqss/autograd.hpp"
#include "dqss/reference.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

namespace dqss {
namespace {

using testing::central_difference;
using testing::random_tensor;
using testing::relative_inf_error;
using testing::to_double;

/// Builds a scalar loss on a fresh tape from parameter leaves.
using TapeLoss = std::function<VarId(Tape&, const std::vector<VarId>&)>;
/// The same loss in double precision over the parameter values.
using DoubleLoss = std::function<double(const std::vector<std::vector<double>>&)>;

void expect_gradients_match(std::vector<Tensor> values, const TapeLoss& build, const DoubleLoss& oracle,
                            double tol = 2e-4, double h = 1e-4)
{
    std::vector<TensorPtr> params;
    for (auto& v : values) params.push_back(make_param(v));
    Tape tape;
    std::vector<VarId> leaves;
    for (const auto& p : params) leaves.push_back(tape.param(p));
    tape.backward(build(tape, leaves));

    std::vector<std::vector<double>> point;
    for (const auto& v : values) point.push_back(to_double(v.data()));
    for (std::size_t k = 0; k < values.size(); ++k) {
        auto f = [&](const std::vector<double>& x) {
            auto p = point;
            p[k] = x;
            return oracle(p);
        };
        const auto fd = central_difference(f, point[k], h);
        ASSERT_TRUE(params[k]->has_grad()) << "param " << k;
        EXPECT_LT(relative_inf_error(to_double(params[k]->grad()), fd), tol) << "param " << k;
    }
}

std::vector<double> softmax_d(const std::vector<double>& raw)
{
    double m = raw[0];
    for (double v : raw) m = std::max(m, v);
    std::vector<double> e(raw.size());
    double z = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) z += e[i] = std::exp(raw[i] - m);
    for (double& v : e) v /= z;
    return e;
}

TEST(Autograd, Conv2dGradients)
{
    std::mt19937_64 rng(10);
    const Shape xs{2, 2, 5, 5}, ws{3, 2, 3, 3};
    const auto d = kernels::conv2d_dims(xs, ws, 2, 1);
    const Tensor g = random_tensor(d.output_shape(), rng);
    const auto gd = to_double(g.data());
    expect_gradients_match(
        {random_tensor(xs, rng), random_tensor(ws, rng), random_tensor({3}, rng)},
        [&](Tape& t, const std::vector<VarId>& v) { return t.dot(t.conv2d(v[0], v[1], v[2], 2, 1), g); },
        [&](const std::vector<std::vector<double>>& p) {
            return testing::dot(reference::conv2d<double>(d, p[0], p[1], p[2]), gd);
        });
}

TEST(Autograd, LinearReluCrossEntropy)
{
    std::mt19937_64 rng(11);
    const std::vector<int> labels = {0, 2, 1, 2};
    const auto d = kernels::linear_dims({4, 6}, {3, 6});
    expect_gradients_match(
        {random_tensor({4, 6}, rng), random_tensor({3, 6}, rng), random_tensor({3}, rng)},
        [&](Tape& t, const std::vector<VarId>& v) {
            return t.cross_entropy(t.relu(t.linear(v[0], v[1], v[2])), labels);
        },
        [&](const std::vector<std::vector<double>>& p) {
            const auto y = reference::relu<double>(reference::linear<double>(d, p[0], p[1], p[2]));
            return reference::softmax_cross_entropy<double>(y, 3, labels);
        });
}

TEST(Autograd, PoolingFlattenMse)
{
    std::mt19937_64 rng(12);
    const Shape xs{1, 2, 4, 4};
    const auto d = kernels::pool_dims(xs, 2, 2);
    const Tensor target = random_tensor({1, 8}, rng);
    const auto td = to_double(target.data());
    for (bool max_pool : {false, true}) {
        expect_gradients_match(
            {random_tensor(xs, rng)},
            [&](Tape& t, const std::vector<VarId>& v) {
                const VarId p = max_pool ? t.maxpool(v[0], 2, 2) : t.avgpool(v[0], 2, 2);
                return t.mse(t.flatten(p), target);
            },
            [&](const std::vector<std::vector<double>>& p) {
                const auto y = reference::pool<double>(d, p[0], max_pool);
                double s = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - td[i]) * (y[i] - td[i]);
                return s / static_cast<double>(y.size());
            });
    }
}

TEST(Autograd, BatchNormInput)
{
    std::mt19937_64 rng(13);
    BatchNormStats st;
    st.mean = make_param(random_tensor({2}, rng), false);
    st.var = make_param(random_tensor({2}, rng, 0.5f, 1.5f), false);
    st.gamma = make_param(random_tensor({2}, rng), false);
    st.beta = make_param(random_tensor({2}, rng), false);
    const Tensor g = random_tensor({3, 2, 2, 2}, rng);
    expect_gradients_match(
        {random_tensor({3, 2, 2, 2}, rng)},
        [&](Tape& t, const std::vector<VarId>& v) { return t.dot(t.batchnorm(v[0], st), g); },
        [&](const std::vector<std::vector<double>>& p) {
            const auto y = reference::batchnorm<double>(3, 2, 4, p[0], to_double(st.mean->data()),
                                                        to_double(st.var->data()), to_double(st.gamma->data()),
                                                        to_double(st.beta->data()), 1e-5);
            return testing::dot(y, to_double(g.data()));
        });
}

TEST(Autograd, SoftmaxWeightedSumPickScale)
{
    std::mt19937_64 rng(14);
    const Tensor g = random_tensor({2, 3}, rng);
    const auto gd = to_double(g.data());
    expect_gradients_match(
        {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng), random_tensor({2, 3}, rng), random_tensor({3}, rng),
         random_tensor({2}, rng)},
        [&](Tape& t, const std::vector<VarId>& v) {
            const VarId theta = t.softmax(v[3]);
            const std::vector<VarId> br = {v[0], v[1], v[2]};
            const VarId mix = t.weighted_sum(br, theta);
            const VarId scaled = t.scale_by(t.scale(mix, 1.5f), t.pick(v[4], 1));
            return t.add(t.dot(scaled, g), t.sum(t.scale_by(v[0], t.pick(theta, 0))));
        },
        [&](const std::vector<std::vector<double>>& p) {
            const auto th = softmax_d(p[3]);
            double loss = 0.0;
            for (std::size_t i = 0; i < 6; ++i) {
                const double mix = th[0] * p[0][i] + th[1] * p[1][i] + th[2] * p[2][i];
                loss += 1.5 * mix * p[4][1] * gd[i] + p[0][i] * th[0];
            }
            return loss;
        });
}

TEST(Autograd, SharedLeafAccumulatesAcrossUses)
{
    auto p = make_param(Tensor(Shape{2}, std::vector<float>{1.0f, -2.0f}));
    Tape tape;
    const VarId x = tape.param(p);
    tape.backward(tape.sum(tape.add(tape.scale(x, 3.0f), x)));
    EXPECT_FLOAT_EQ(p->grad()[0], 4.0f);
    EXPECT_FLOAT_EQ(p->grad()[1], 4.0f);
}

TEST(Autograd, ConstantsAndFrozenParamsGetNoGradient)
{
    auto frozen = make_param(Tensor(Shape{2}, 1.0f), false);
    auto live = make_param(Tensor(Shape{2}, 1.0f), true);
    Tape tape;
    const VarId c = tape.constant(Tensor(Shape{2}, 5.0f));
    const VarId loss = tape.sum(tape.add(tape.add(c, tape.param(frozen)), tape.param(live)));
    EXPECT_FALSE(tape.requires_grad(c));
    tape.backward(loss);
    EXPECT_FALSE(frozen->has_grad());
    ASSERT_TRUE(live->has_grad());
    EXPECT_FLOAT_EQ(live->grad()[0], 1.0f);
}

TEST(Autograd, SecondBackwardIsRejected)
{
    auto p = make_param(Tensor(Shape{1}, 1.0f));
    Tape tape;
    const VarId loss = tape.sum(tape.param(p));
    tape.backward(loss);
    EXPECT_TRUE(tape.consumed());
    EXPECT_THROW(tape.backward(loss), StaleGraphError);
}

TEST(Autograd, SoftmaxIsShiftInvariantAndNormalized)
{
    Tape tape;
    const VarId a = tape.softmax(tape.constant(Tensor(Shape{4}, std::vector<float>{0.1f, 2.0f, -1.0f, 0.5f})));
    const VarId b = tape.softmax(tape.constant(Tensor(Shape{4}, std::vector<float>{100.1f, 102.0f, 99.0f, 100.5f})));
    float sum = 0.0f;
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(tape.value(a)[i], tape.value(b)[i], 1e-6f);
        sum += tape.value(a)[i];
    }
    EXPECT_NEAR(sum, 1.0f, 1e-6f);
}

} // namespace
} // namespace dqss
