/*
 * Copyright 2026 The comfed Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "helpers.hpp"

#include <cmath>
#include <memory>

namespace comfed
{
namespace
{

using testing::samples;
using testing::vec;

SampleSet random_rows(std::size_t rows, std::size_t cols, RngStream& rng)
{
    SampleSet s{Eigen::MatrixXd(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)),
                Eigen::VectorXd(static_cast<Eigen::Index>(rows))};
    for (Eigen::Index r = 0; r < s.x.rows(); ++r)
    {
        for (Eigen::Index c = 0; c < s.x.cols(); ++c) s.x(r, c) = rng.normal();
        s.y[r] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    }
    return s;
}

// Central differences of value() and grad() against grad() and hvp().
void expect_derivatives(const Loss& loss, const SampleSet& s, RngStream& rng)
{
    const Batch batch = full_batch(s.size());
    for (int k = 0; k < 5; ++k)
    {
        ParamVec w(static_cast<Eigen::Index>(loss.dim()));
        ParamVec v(w.size());
        for (Eigen::Index j = 0; j < w.size(); ++j)
        {
            w[j] = rng.normal();
            v[j] = rng.normal();
        }
        const ParamVec fd = finite_diff_grad([&](const ParamVec& x) { return loss.value(x, s, batch); }, w);
        const ParamVec g = loss.grad(w, s, batch);
        EXPECT_LE(relative_error(g, fd), 1e-7) << loss.name();

        const double h = 1e-6;
        const ParamVec hv_fd = (loss.grad(w + h * v, s, batch) - loss.grad(w - h * v, s, batch)) / (2 * h);
        EXPECT_LE(relative_error(loss.hvp(w, s, batch, v), hv_fd), 1e-6) << loss.name();
    }
}

TEST(LeastSquares, PerfectFit)
{
    const LeastSquaresLoss loss(1);
    EXPECT_EQ(loss.value(vec({1}), samples({{1}}, {1}), {0}), 0.0);
}

TEST(LeastSquares, HandArithmetic)
{
    const LeastSquaresLoss loss(1);
    EXPECT_DOUBLE_EQ(loss.value(vec({2}), samples({{1}, {1}}, {1, 0}), {0, 1}), 2.5);
}

TEST(LeastSquares, RepeatedIndicesCountTwice)
{
    const LeastSquaresLoss loss(1);
    const auto s = samples({{1}, {1}}, {1, 0});
    // (1 + 1 + 4) / 3
    EXPECT_DOUBLE_EQ(loss.value(vec({2}), s, {0, 0, 1}), 2.0);
}

TEST(LeastSquares, Derivatives)
{
    auto rng = derive_stream(1, 0, 0, 0, Purpose::probe);
    expect_derivatives(LeastSquaresLoss(4), random_rows(30, 4, rng), rng);
}

TEST(Quadratic, ValueAtCenterIsZero)
{
    const QuadraticLoss loss(2.0 * Eigen::MatrixXd::Identity(2, 2));
    EXPECT_EQ(loss.value(vec({1, -1}), testing::center(vec({1, -1})), {0}), 0.0);
    EXPECT_DOUBLE_EQ(loss.value(vec({1, 1}), testing::center(vec({0, 0})), {0}), 2.0);
}

TEST(Quadratic, Derivatives)
{
    auto rng = derive_stream(2, 0, 0, 0, Purpose::probe);
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(3, 3);
    a = a * a.transpose();
    expect_derivatives(QuadraticLoss(a), random_rows(10, 3, rng), rng);
}

TEST(Quadratic, RejectsAsymmetric)
{
    Eigen::MatrixXd a(2, 2);
    a << 1, 0.5, 0, 1;
    EXPECT_THROW(QuadraticLoss{a}, ParameterError);
}

TEST(Quadratic, RejectsIndefinite)
{
    Eigen::MatrixXd a(2, 2);
    a << 1, 0, 0, -1;
    EXPECT_THROW(QuadraticLoss{a}, ParameterError);
}

TEST(Quadratic, RejectsNonSquare)
{
    EXPECT_THROW(QuadraticLoss{Eigen::MatrixXd::Zero(2, 3)}, ParameterError);
}

TEST(Logistic, ValueAtZeroIsLogTwo)
{
    const LogisticLoss loss(2);
    EXPECT_NEAR(loss.value(vec({0, 0}), samples({{1, 2}, {3, 4}}, {1, -1}), {0, 1}), std::log(2.0), 1e-15);
}

TEST(Logistic, StableForLargeMargins)
{
    const LogisticLoss loss(1);
    const auto s = samples({{1}}, {1});
    EXPECT_NEAR(loss.value(vec({-1000}), s, {0}), 1000.0, 1e-9);
    EXPECT_EQ(loss.value(vec({1000}), s, {0}), 0.0);
    EXPECT_TRUE(all_finite(loss.grad(vec({-1000}), s, {0})));
}

TEST(Logistic, Derivatives)
{
    auto rng = derive_stream(3, 0, 0, 0, Purpose::probe);
    expect_derivatives(LogisticLoss(4), random_rows(25, 4, rng), rng);
}

TEST(Logistic, NonconvexRegularizerDerivatives)
{
    auto rng = derive_stream(4, 0, 0, 0, Purpose::probe);
    expect_derivatives(LogisticLoss(4, {0.01, 0.5}), random_rows(25, 4, rng), rng);
}

TEST(Logistic, NonconvexRegularizerHasNegativeCurvature)
{
    const LogisticLoss loss(1, {0.0, 1.0});
    const auto s = samples({{0}}, {1});
    // Only the penalty contributes: d2/dw2 w^2/(1+w^2) < 0 for |w| > 1/sqrt(3).
    EXPECT_LT(loss.hvp(vec({2}), s, {0}, vec({1}))[0], 0.0);
}

TEST(Softmax, ValueAtZeroIsLogClasses)
{
    const SoftmaxLoss loss(2, 3);
    EXPECT_NEAR(loss.value(ParamVec::Zero(6), samples({{1, 2}}, {2}), {0}), std::log(3.0), 1e-15);
}

TEST(Softmax, Derivatives)
{
    auto rng = derive_stream(5, 0, 0, 0, Purpose::probe);
    SampleSet s = random_rows(20, 3, rng);
    for (Eigen::Index r = 0; r < s.y.size(); ++r) s.y[r] = static_cast<double>(rng.index(4));
    expect_derivatives(SoftmaxLoss(3, 4, {0.1, 0.2}), s, rng);
}

TEST(Softmax, RejectsBadLabels)
{
    const SoftmaxLoss loss(1, 2);
    EXPECT_THROW((void)loss.value(ParamVec::Zero(2), samples({{1}}, {2}), {0}), UsageError);
    EXPECT_THROW((void)loss.value(ParamVec::Zero(2), samples({{1}}, {0.5}), {0}), UsageError);
}

TEST(Softmax, PredictPicksLargestLogit)
{
    const SoftmaxLoss loss(1, 3);
    EXPECT_EQ(loss.predict(vec({0, 5, 1}), vec({1})), 1U);
}

TEST(Loss, Preconditions)
{
    const LeastSquaresLoss loss(2);
    const auto s = samples({{1, 1}}, {0});
    EXPECT_THROW((void)loss.value(vec({1}), s, {0}), DimensionError);
    EXPECT_THROW((void)loss.value(vec({1, 1}), s, {}), UsageError);
    EXPECT_THROW((void)loss.grad(vec({1, 1}), s, {3}), UsageError);
    EXPECT_THROW((void)loss.hvp(vec({1, 1}), s, {0}, vec({1})), DimensionError);
}

}  // namespace
}  // namespace comfed
