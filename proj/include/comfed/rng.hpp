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

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace comfed
{

/// Tag separating the random draws a single (round, client, step) needs.
enum class Purpose : std::uint32_t
{
    client_sampling = 1,
    inner_batch = 2,
    outer_batch = 3,
    data_generation = 4,
    initialization = 5,
    probe = 6,
    verification = 7,
};

/// Client slot used for streams that belong to the server.
inline constexpr std::uint64_t server_slot = std::numeric_limits<std::uint64_t>::max();

namespace detail
{
// SplitMix64 output function, used only to fold stream coordinates into
// a Philox key.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fold(std::uint64_t h, std::uint64_t v) noexcept
{
    return mix64(h ^ mix64(v + 0x9E3779B97F4A7C15ULL));
}
}  // namespace detail

/// Philox4x32-10 block function (Salmon et al., SC'11).
class Philox4x32
{
  public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr Counter apply(Counter ctr, Key key) noexcept
    {
        for (int r = 0; r < 10; ++r)
        {
            ctr = round(ctr, key);
            key[0] += 0x9E3779B9U;
            key[1] += 0xBB67AE85U;
        }
        return ctr;
    }

  private:
    static constexpr Counter round(const Counter& c, const Key& k) noexcept
    {
        const std::uint64_t p0 = std::uint64_t{0xD2511F53U} * c[0];
        const std::uint64_t p1 = std::uint64_t{0xCD9E8D57U} * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

/// Coordinates of one random stream.
struct StreamId
{
    std::uint64_t round = 0;
    std::uint64_t client = 0;
    std::uint64_t step = 0;
    Purpose purpose = Purpose::probe;
};

/*!
 * Counter-based random stream.
 *
 * The Philox key is a hash of (seed, round, client, step, purpose) and the
 * counter is the draw index, so a stream can be recreated anywhere without
 * touching shared state. Draw helpers avoid <random> distributions, whose
 * output is implementation-defined, so results are bitwise reproducible.
 */
class RngStream
{
  public:
    using result_type = std::uint64_t;

    RngStream(std::uint64_t seed, StreamId id) : seed_(seed), id_(id)
    {
        std::uint64_t h = detail::mix64(seed ^ 0x243F6A8885A308D3ULL);
        h = detail::fold(h, id.round);
        h = detail::fold(h, id.client);
        h = detail::fold(h, id.step);
        h = detail::fold(h, static_cast<std::uint64_t>(id.purpose));
        key_ = {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept
    {
        return std::numeric_limits<result_type>::max();
    }

    result_type operator()() noexcept { return next_u64(); }

    std::uint64_t next_u64() noexcept
    {
        if (lane_ == 2)
        {
            const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_),
                                          static_cast<std::uint32_t>(block_ >> 32),
                                          0U,
                                          0U};
            const auto out = Philox4x32::apply(ctr, key_);
            buffer_[0] = (std::uint64_t{out[1]} << 32) | out[0];
            buffer_[1] = (std::uint64_t{out[3]} << 32) | out[2];
            ++block_;
            lane_ = 0;
        }
        return buffer_[lane_++];
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept
    {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) noexcept
    {
        return lo + (hi - lo) * uniform();
    }

    /// Uniform on the open interval (0, 1).
    double uniform_open() noexcept
    {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() noexcept
    {
        if (has_spare_)
        {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Unbiased integer in [0, n) (Lemire's multiply-shift rejection).
    std::uint64_t index(std::uint64_t n) noexcept
    {
        if (n <= 1) return 0;
        __extension__ using u128 = unsigned __int128;
        u128 m = static_cast<u128>(next_u64()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n)
        {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold)
            {
                m = static_cast<u128>(next_u64()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] const StreamId& id() const noexcept { return id_; }

  private:
    std::uint64_t seed_;
    StreamId id_;
    Philox4x32::Key key_{};
    std::uint64_t block_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    int lane_ = 2;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

[[nodiscard]] inline RngStream derive_stream(std::uint64_t seed,
                                             std::uint64_t round,
                                             std::uint64_t client,
                                             std::uint64_t step,
                                             Purpose purpose)
{
    return RngStream(seed, StreamId{round, client, step, purpose});
}

}  // namespace comfed
