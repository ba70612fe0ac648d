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
#include <numbers>
#include <vector>

namespace comfed
{
namespace
{

TEST(KlToUniform, Examples)
{
    EXPECT_EQ(kl_to_uniform(SimplexWeights({0.5, 0.5})), 0.0);
    EXPECT_NEAR(kl_to_uniform(SimplexWeights({1.0, 0.0})), std::numbers::ln2, 1e-15);
    EXPECT_NEAR(kl_to_uniform(SimplexWeights({0.25, 0.75})), 0.130812, 1e-6);
}

TEST(KlToUniform, NonnegativeOnRandomPoints)
{
    auto rng = derive_stream(1, 0, 0, 0, Purpose::verification);
    for (int k = 0; k < 200; ++k)
    {
        std::vector<double> r(5);
        double total = 0.0;
        for (auto& v : r) total += (v = rng.uniform());
        for (auto& v : r) v /= total;
        EXPECT_GE(kl_to_uniform(SimplexWeights(r)), -1e-15);
    }
}

TEST(SoftmaxWeights, Examples)
{
    const std::vector<double> f{0.0, std::log(3.0)};
    const auto r = softmax_weights(f, 1.0);
    EXPECT_NEAR(r[0], 0.25, 1e-15);
    EXPECT_NEAR(r[1], 0.75, 1e-15);

    const auto u = softmax_weights(std::vector<double>{2.0, 2.0, 2.0}, 0.3);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(u[i], 1.0 / 3.0, 1e-15);

    const auto flat = softmax_weights(std::vector<double>{0.0, 1.0}, 100.0);
    EXPECT_NEAR(flat[0], 0.5, 3e-3);
    EXPECT_NEAR(flat[1], 0.5, 3e-3);
}

TEST(SoftmaxWeights, SumToOneForExtremeInputs)
{
    const auto r = softmax_weights(std::vector<double>{-1000.0, 0.0, 1000.0, 999.0}, 0.01);
    double total = 0.0;
    for (double v : r.values()) total += v;
    EXPECT_NEAR(total, 1.0, simplex_tolerance);
    EXPECT_EQ(argmax(r.values()), 2U);
}

TEST(MinimaxValue, Examples)
{
    EXPECT_NEAR(minimax_value(std::vector<double>{1.5, 1.5, 1.5}, 0.7), 1.5, 1e-14);
    EXPECT_NEAR(minimax_value(std::vector<double>{0.0, std::log(3.0)}, 1.0), std::numbers::ln2, 1e-14);
    const std::vector<double> f{1.0, 2.0, 3.0};
    EXPECT_NEAR(minimax_value(f, 0.5), lse_value(f, 0.5), 1e-12);
}

TEST(LseValue, Examples)
{
    EXPECT_DOUBLE_EQ(lse_value(std::vector<double>{4.25}, 0.3), 4.25);
    EXPECT_NEAR(lse_value(std::vector<double>{0.0, std::log(3.0)}, 1.0), std::numbers::ln2, 1e-15);
    const double big = lse_value(std::vector<double>{1000.0, 1000.0}, 0.01);
    EXPECT_TRUE(std::isfinite(big));
    EXPECT_NEAR(big, 1000.0, 1e-12);
}

TEST(LseValue, RejectsBadInput)
{
    EXPECT_THROW((void)lse_value(std::vector<double>{}, 1.0), ParameterError);
    EXPECT_THROW((void)lse_value(std::vector<double>{1.0}, 0.0), ParameterError);
    EXPECT_THROW((void)lse_value(std::vector<double>{NAN}, 1.0), ParameterError);
    EXPECT_THROW((void)softmax_weights(std::vector<double>{1.0}, -1.0), ParameterError);
}

TEST(VerifyLemma1, PassesOnRandomLosses)
{
    const auto report = verify_lemma1(5, 0.2, 200, derive_stream(2, 0, 0, 0, Purpose::verification));
    EXPECT_EQ(report.trials, 200U);
    EXPECT_TRUE(report.passed());
    EXPECT_EQ(report.gap_failures, 0U);
    EXPECT_EQ(report.optimality_failures, 0U);
    EXPECT_LE(report.worst_relative_gap, 1e-9);
    EXPECT_GE(report.worst_optimality_margin, -1e-12 * 10.0);
}

TEST(VerifyLemma1, RejectsBadArguments)
{
    const auto rng = derive_stream(0, 0, 0, 0, Purpose::verification);
    EXPECT_THROW((void)verify_lemma1(0, 1.0, 10, rng), ParameterError);
    EXPECT_THROW((void)verify_lemma1(3, 1.0, 0, rng), ParameterError);
    EXPECT_THROW((void)verify_lemma1(3, 0.0, 10, rng), ParameterError);
}

TEST(LseValue, ShiftCovariant)
{
    auto rng = derive_stream(3, 0, 0, 0, Purpose::verification);
    for (int k = 0; k < 100; ++k)
    {
        std::vector<double> f(6);
        for (auto& v : f) v = rng.uniform(-5.0, 5.0);
        const double c = rng.uniform(-20.0, 20.0);
        const double gamma = rng.uniform(0.05, 3.0);
        std::vector<double> shifted = f;
        for (auto& v : shifted) v += c;
        EXPECT_NEAR(lse_value(shifted, gamma), lse_value(f, gamma) + c, 1e-12 * (1.0 + std::abs(c)));
        const auto a = softmax_weights(f, gamma);
        const auto b = softmax_weights(shifted, gamma);
        for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    }
}

TEST(SoftmaxWeights, PreservesArgmax)
{
    auto rng = derive_stream(4, 0, 0, 0, Purpose::verification);
    for (int k = 0; k < 200; ++k)
    {
        std::vector<double> f(7);
        for (auto& v : f) v = rng.uniform(-10.0, 10.0);
        for (double gamma : {0.01, 0.2, 1.0, 100.0})
        {
            EXPECT_EQ(argmax(softmax_weights(f, gamma).values()), argmax(f));
        }
    }
}

TEST(LseValue, GammaLimits)
{
    auto rng = derive_stream(5, 0, 0, 0, Purpose::verification);
    for (int k = 0; k < 100; ++k)
    {
        std::vector<double> f(5);
        for (auto& v : f) v = rng.uniform(-3.0, 3.0);
        double top = f[0], mean = 0.0;
        for (double v : f)
        {
            top = std::max(top, v);
            mean += v / 5.0;
        }
        EXPECT_NEAR(lse_value(f, 1e-4), top, 1e-3);
        EXPECT_NEAR(lse_value(f, 1e4), mean, 1e-3);
        // mean <= LSE <= max for every gamma.
        const double mid = lse_value(f, 0.5);
        EXPECT_LE(mid, top + 1e-12);
        EXPECT_GE(mid, mean - 1e-12);
    }
}

TEST(SimplexWeights, Validation)
{
    EXPECT_NO_THROW(SimplexWeights({0.2, 0.8}));
    EXPECT_THROW(SimplexWeights(std::vector<double>{}), ParameterError);
    EXPECT_THROW(SimplexWeights({0.5, 0.6}), ParameterError);
    EXPECT_THROW(SimplexWeights({-0.1, 1.1}), ParameterError);
    EXPECT_THROW(SimplexWeights({NAN, 1.0}), ParameterError);
}

TEST(RegularizedObjective, LengthMismatchThrows)
{
    EXPECT_THROW((void)regularized_objective(std::vector<double>{1.0, 2.0, 3.0},
                                             SimplexWeights({0.5, 0.5}), 1.0),
                 DimensionError);
}

}  // namespace
}  // namespace comfed
