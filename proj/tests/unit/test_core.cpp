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
#include <limits>

namespace comfed
{
namespace
{

using testing::vec;

TEST(VecAxpy, HandArithmetic)
{
    EXPECT_EQ(vec_axpy(2.0, vec({1, 1}), vec({0, 1})), vec({2, 3}));
}

TEST(VecAxpy, ZeroAlphaReturnsY)
{
    const ParamVec y = vec({0.25, -7.0, 3.5});
    EXPECT_EQ(vec_axpy(0.0, vec({1e300, -2.0, 5.0}), y), y);
}

TEST(VecAxpy, ZeroAlphaIgnoresNonFiniteX)
{
    const double inf = std::numeric_limits<double>::infinity();
    EXPECT_EQ(vec_axpy(0.0, vec({inf, 1.0}), vec({1.0, 2.0})), vec({1.0, 2.0}));
}

TEST(VecAxpy, Cancellation)
{
    const ParamVec x = vec({0.1, -3.3, 1e-7});
    EXPECT_EQ(vec_axpy(-1.0, x, x), ParamVec::Zero(3));
}

TEST(VecAxpy, LengthMismatchThrows)
{
    EXPECT_THROW((void)vec_axpy(1.0, vec({1, 2}), vec({1, 2, 3})), DimensionError);
}

TEST(Core, AllFinite)
{
    EXPECT_TRUE(all_finite(vec({1, 2})));
    EXPECT_FALSE(all_finite(vec({1, std::nan("")})));
    EXPECT_FALSE(all_finite(vec({std::numeric_limits<double>::infinity()})));
}

TEST(Core, FullBatchListsEveryIndex)
{
    const Batch b = full_batch(4);
    EXPECT_EQ(b, (Batch{0, 1, 2, 3}));
    EXPECT_TRUE(full_batch(0).empty());
}

TEST(Core, ConfigErrorNamesField)
{
    const ConfigError e("gamma", "must be positive");
    EXPECT_EQ(e.field(), "gamma");
    EXPECT_NE(std::string(e.what()).find("gamma"), std::string::npos);
}

TEST(Smoothness, MaxUpdate)
{
    SmoothnessEstimate est;
    est.G_g = 1.0;
    est = update_smoothness(est, {ObservationKind::outer_grad_norm, 2.5});
    EXPECT_EQ(est.G_g, 2.5);
}

TEST(Smoothness, Monotone)
{
    SmoothnessEstimate est;
    est.G_g = 3.0;
    est = update_smoothness(est, {ObservationKind::outer_grad_norm, 2.5});
    EXPECT_EQ(est.G_g, 3.0);
}

TEST(Smoothness, EachKindUpdatesItsField)
{
    SmoothnessEstimate est;
    est = update_smoothness(est, {ObservationKind::inner_jacobian_norm, 1.0});
    est = update_smoothness(est, {ObservationKind::outer_grad_norm, 2.0});
    est = update_smoothness(est, {ObservationKind::inner_lipschitz, 3.0});
    est = update_smoothness(est, {ObservationKind::outer_lipschitz, 4.0});
    est = update_smoothness(est, {ObservationKind::objective_lipschitz, 5.0});
    est = update_smoothness(est, {ObservationKind::sample_deviation, 6.0});
    EXPECT_EQ(est, (SmoothnessEstimate{1.0, 2.0, 3.0, 4.0, 5.0, 6.0}));
}

TEST(Smoothness, NonFiniteObservationThrows)
{
    EXPECT_THROW((void)update_smoothness({}, {ObservationKind::outer_grad_norm, std::nan("")}),
                 NumericalError);
}

TEST(Smoothness, NeverDecreasesUnderRandomObservations)
{
    auto rng = derive_stream(1, 0, 0, 0, Purpose::probe);
    SmoothnessEstimate est;
    for (int k = 0; k < 2000; ++k)
    {
        const auto kind = static_cast<ObservationKind>(rng.index(6));
        const SmoothnessEstimate next = update_smoothness(est, {kind, rng.uniform(0.0, 10.0)});
        EXPECT_GE(next.G_f, est.G_f);
        EXPECT_GE(next.G_g, est.G_g);
        EXPECT_GE(next.L_f, est.L_f);
        EXPECT_GE(next.L_g, est.L_g);
        EXPECT_GE(next.L, est.L);
        EXPECT_GE(next.sigma, est.sigma);
        est = next;
    }
}

TEST(Smoothness, MergeTakesFieldwiseMax)
{
    const SmoothnessEstimate a{1, 5, 1, 5, 1, 5};
    const SmoothnessEstimate b{2, 4, 2, 4, 2, 4};
    EXPECT_EQ(merge(a, b), (SmoothnessEstimate{2, 5, 2, 5, 2, 5}));
}

TEST(Smoothness, DriftBoundFormula)
{
    SmoothnessEstimate est;
    est.G_f = 2.0;
    est.G_g = 3.0;
    // 5^2 * 0.1^2 * 3^2 * 2^2
    EXPECT_NEAR(drift_bound(est, 5, 0.1), 9.0, 1e-12);
}

TEST(Smoothness, DeviationBoundFormula)
{
    const SmoothnessEstimate e{2.0, 3.0, 0.5, 0.25, 1.0, 0.1};
    const double drift = 25.0 * 0.01 * 9.0 * 4.0;
    const double h2 = 9.0 * 0.25 + 16.0 * 0.0625;
    const double expected = 5.0 * h2 * drift + 5.0 * 4.0 * 0.01 / 8.0 + 5.0 * 9.0 * 0.01 / 4.0
                            + 5.0 * 0.0625 * 4.0 * 0.01 / 4.0;
    EXPECT_NEAR(estimator_deviation_bound(e, 5, 0.1, 4.0, 8.0), expected, 1e-12);
}

// f(w) = 1/2 ||w||^2 has Jacobian w, so G_f <= 1 on the unit ball.
TEST(Smoothness, QuadraticJacobianNormInUnitBall)
{
    auto task = testing::plain(testing::quadratic_clients({ParamVec::Zero(3)}));
    auto rng = derive_stream(5, 0, 0, 0, Purpose::probe);
    SmoothnessEstimate est;
    for (int k = 0; k < 500; ++k)
    {
        ParamVec w(3);
        for (Eigen::Index j = 0; j < 3; ++j) w[j] = rng.uniform(-1.0, 1.0);
        if (w.norm() > 1.0) w /= w.norm();
        const double g = inner_jacobian_norm(*task, 0, w, full_inner_batch(*task, 0));
        est = update_smoothness(est, {ObservationKind::inner_jacobian_norm, g});
    }
    EXPECT_LE(est.G_f, 1.0 + 1e-12);
    EXPECT_GT(est.G_f, 0.5);
}

}  // namespace
}  // namespace comfed
