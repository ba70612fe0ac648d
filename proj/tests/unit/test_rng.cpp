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
#include <set>
#include <vector>

namespace comfed
{
namespace
{

std::vector<std::uint64_t> draws(RngStream s, int count)
{
    std::vector<std::uint64_t> out;
    for (int k = 0; k < count; ++k) out.push_back(s.next_u64());
    return out;
}

// Known-answer vectors published with the Random123 library.
TEST(Philox, KnownAnswerZero)
{
    const auto out = Philox4x32::apply({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(out, (Philox4x32::Counter{0x6627e8d5U, 0xe169c58dU, 0xbc57ac4cU, 0x9b00dbd8U}));
}

TEST(Philox, KnownAnswerOnes)
{
    const auto out = Philox4x32::apply({0xffffffffU, 0xffffffffU, 0xffffffffU, 0xffffffffU},
                                       {0xffffffffU, 0xffffffffU});
    EXPECT_EQ(out, (Philox4x32::Counter{0x408f276dU, 0x41c83b0eU, 0xa20bc7c6U, 0x6d5451fdU}));
}

TEST(Philox, KnownAnswerPi)
{
    const auto out = Philox4x32::apply({0x243f6a88U, 0x85a308d3U, 0x13198a2eU, 0x03707344U},
                                       {0xa4093822U, 0x299f31d0U});
    EXPECT_EQ(out, (Philox4x32::Counter{0xd16cfe09U, 0x94fdccebU, 0x5001e420U, 0x24126ea1U}));
}

TEST(DeriveStream, SameCoordinatesSameDraws)
{
    EXPECT_EQ(draws(derive_stream(7, 0, 3, 2, Purpose::inner_batch), 100),
              draws(derive_stream(7, 0, 3, 2, Purpose::inner_batch), 100));
}

TEST(DeriveStream, PurposeSeparation)
{
    EXPECT_NE(draws(derive_stream(7, 0, 3, 2, Purpose::inner_batch), 100),
              draws(derive_stream(7, 0, 3, 2, Purpose::outer_batch), 100));
}

TEST(DeriveStream, SeedSeparation)
{
    EXPECT_NE(draws(derive_stream(7, 1, 3, 2, Purpose::inner_batch), 100),
              draws(derive_stream(8, 1, 3, 2, Purpose::inner_batch), 100));
}

TEST(DeriveStream, EveryCoordinateSeparates)
{
    const auto base = draws(derive_stream(1, 2, 3, 4, Purpose::probe), 8);
    EXPECT_NE(base, draws(derive_stream(1, 9, 3, 4, Purpose::probe), 8));
    EXPECT_NE(base, draws(derive_stream(1, 2, 9, 4, Purpose::probe), 8));
    EXPECT_NE(base, draws(derive_stream(1, 2, 3, 9, Purpose::probe), 8));
    // Swapping coordinates must not collide.
    EXPECT_NE(draws(derive_stream(1, 3, 2, 4, Purpose::probe), 8), base);
}

TEST(DeriveStream, DistinctStreamsUncorrelated)
{
    auto a = derive_stream(11, 0, 0, 0, Purpose::inner_batch);
    auto b = derive_stream(11, 0, 1, 0, Purpose::inner_batch);
    const int n = 10000;
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    for (int k = 0; k < n; ++k)
    {
        const double x = a.uniform();
        const double y = b.uniform();
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
    }
    const double cov = sab / n - (sa / n) * (sb / n);
    const double corr = cov / std::sqrt((saa / n - sa * sa / n / n) * (sbb / n - sb * sb / n / n));
    EXPECT_LE(std::abs(corr), 0.05);
}

TEST(RngStream, UniformInUnitInterval)
{
    auto s = derive_stream(3, 0, 0, 0, Purpose::probe);
    double total = 0.0;
    for (int k = 0; k < 10000; ++k)
    {
        const double u = s.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        const double v = s.uniform_open();
        ASSERT_GT(v, 0.0);
        ASSERT_LT(v, 1.0);
        total += u;
    }
    EXPECT_NEAR(total / 10000.0, 0.5, 0.02);
}

TEST(RngStream, NormalMoments)
{
    auto s = derive_stream(4, 0, 0, 0, Purpose::probe);
    const int n = 20000;
    double m1 = 0, m2 = 0;
    for (int k = 0; k < n; ++k)
    {
        const double z = s.normal();
        m1 += z;
        m2 += z * z;
    }
    EXPECT_NEAR(m1 / n, 0.0, 0.05);
    EXPECT_NEAR(m2 / n, 1.0, 0.05);
}

TEST(RngStream, IndexCoversRangeUniformly)
{
    auto s = derive_stream(5, 0, 0, 0, Purpose::probe);
    std::vector<int> counts(7, 0);
    for (int k = 0; k < 70000; ++k)
    {
        const auto v = s.index(7);
        ASSERT_LT(v, 7U);
        ++counts[v];
    }
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
    EXPECT_EQ(s.index(1), 0U);
    EXPECT_EQ(s.index(0), 0U);
}

TEST(RngStream, CopiesReplay)
{
    auto s = derive_stream(6, 1, 2, 3, Purpose::probe);
    (void)s.next_u64();
    auto copy = s;
    EXPECT_EQ(draws(s, 20), draws(copy, 20));
}

}  // namespace
}  // namespace comfed
