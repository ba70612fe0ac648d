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

#include "comfed/core.hpp"
#include "comfed/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace comfed
{

/// Tolerance on sum(r) == 1 for simplex membership.
inline constexpr double simplex_tolerance = 1e-12;

/// A point of the probability simplex over n clients.
class SimplexWeights
{
  public:
    SimplexWeights() = default;

    /// Validates nonnegativity and unit sum.
    explicit SimplexWeights(std::vector<double> r) : r_(std::move(r))
    {
        if (r_.empty()) throw ParameterError("simplex: empty weight vector");
        double total = 0.0;
        for (double v : r_)
        {
            if (!(v >= 0.0) || !std::isfinite(v))
            {
                throw ParameterError("simplex: weights must be finite and nonnegative");
            }
            total += v;
        }
        if (std::abs(total - 1.0) > simplex_tolerance)
        {
            throw ParameterError("simplex: weights sum to " + std::to_string(total));
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return r_.size(); }
    [[nodiscard]] double operator[](std::size_t i) const { return r_[i]; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return r_; }

  private:
    std::vector<double> r_;
};

namespace detail
{
inline void check_gamma(double gamma)
{
    if (!(gamma > 0.0) || !std::isfinite(gamma))
    {
        throw ParameterError("gamma must be positive and finite (got " + std::to_string(gamma)
                             + ")");
    }
}

inline void check_losses(std::span<const double> losses)
{
    if (losses.empty()) throw ParameterError("losses: empty vector");
    for (double f : losses)
    {
        if (!std::isfinite(f)) throw ParameterError("losses: non-finite entry");
    }
}
}  // namespace detail

/// KL(r || uniform) = sum_i r_i log(n r_i), with 0 log 0 = 0.
[[nodiscard]] inline double kl_to_uniform(const SimplexWeights& r)
{
    const auto n = static_cast<double>(r.size());
    double total = 0.0;
    for (double v : r.values())
    {
        if (v > 0.0) total += v * std::log(n * v);
    }
    return total;
}

/// Maximizer of the KL-regularized inner problem: softmax(losses / gamma).
[[nodiscard]] inline SimplexWeights softmax_weights(std::span<const double> losses, double gamma)
{
    detail::check_gamma(gamma);
    detail::check_losses(losses);
    const double top = *std::max_element(losses.begin(), losses.end());
    std::vector<double> r(losses.size());
    double z = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i)
    {
        r[i] = std::exp((losses[i] - top) / gamma);
        z += r[i];
    }
    for (auto& v : r) v /= z;
    // Renormalize once more so the sum is within a few ulps of one.
    double total = 0.0;
    for (double v : r) total += v;
    for (auto& v : r) v /= total;
    return SimplexWeights(std::move(r));
}

/// Inner objective sum_i r_i f_i - gamma * KL(r || uniform).
[[nodiscard]] inline double regularized_objective(std::span<const double> losses,
                                                  const SimplexWeights& r,
                                                  double gamma)
{
    if (losses.size() != r.size()) throw DimensionError("regularized objective: length mismatch");
    double linear = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) linear += r[i] * losses[i];
    return linear - gamma * kl_to_uniform(r);
}

/// Regularized worst case, evaluated at the softmax maximizer.
[[nodiscard]] inline double minimax_value(std::span<const double> losses, double gamma)
{
    const SimplexWeights r = softmax_weights(losses, gamma);
    return regularized_objective(losses, r, gamma);
}

/// gamma * log(1/n sum_i exp(f_i / gamma)), max-shifted.
[[nodiscard]] inline double lse_value(std::span<const double> losses, double gamma)
{
    detail::check_gamma(gamma);
    detail::check_losses(losses);
    double top = -std::numeric_limits<double>::infinity();
    for (double f : losses) top = std::max(top, f);
    double acc = 0.0;
    for (double f : losses) acc += std::exp((f - top) / gamma);
    return top + gamma * (std::log(acc) - std::log(static_cast<double>(losses.size())));
}

/// Index of the first maximum.
[[nodiscard]] inline std::size_t argmax(std::span<const double> v)
{
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct Lemma1Report
{
    std::size_t n = 0;
    double gamma = 0.0;
    std::size_t trials = 0;
    std::size_t failures = 0;
    std::size_t gap_failures = 0;
    std::size_t optimality_failures = 0;
    /// max |minimax - lse| / max(1, |lse|)
    double worst_relative_gap = 0.0;
    /// min over competitors of objective(r*) - objective(r); negative means
    /// a competitor beat the softmax weights.
    double worst_optimality_margin = std::numeric_limits<double>::infinity();
    std::vector<double> first_failing_losses;

    [[nodiscard]] bool passed() const noexcept { return failures == 0; }
};

namespace detail
{
inline std::vector<double> random_simplex_point(std::size_t n, RngStream& rng)
{
    // Exponential spacings give a uniform draw on the simplex.
    std::vector<double> r(n);
    double total = 0.0;
    for (auto& v : r)
    {
        v = -std::log(rng.uniform_open());
        total += v;
    }
    for (auto& v : r) v /= total;
    return r;
}

inline SimplexWeights renormalized(std::vector<double> r)
{
    double total = 0.0;
    for (double v : r) total += v;
    for (auto& v : r) v /= total;
    return SimplexWeights(std::move(r));
}
}  // namespace detail

/*!
 * Checks one loss vector: the two value routes must agree to 1e-9
 * relative, and the softmax weights must score at least as well as 200
 * random simplex points and 50 local perturbations of themselves.
 */
inline void check_lemma1_case(std::span<const double> losses,
                              double gamma,
                              RngStream& rng,
                              Lemma1Report& report)
{
    const double route_a = minimax_value(losses, gamma);
    const double route_b = lse_value(losses, gamma);
    const double gap = std::abs(route_a - route_b) / std::max(1.0, std::abs(route_b));

    const SimplexWeights best = softmax_weights(losses, gamma);
    const double best_value = regularized_objective(losses, best, gamma);
    const double slack = 1e-12 * std::max(1.0, std::abs(best_value));
    double margin = std::numeric_limits<double>::infinity();

    const std::size_t n = losses.size();
    for (int k = 0; k < 200; ++k)
    {
        const SimplexWeights r(detail::random_simplex_point(n, rng));
        margin = std::min(margin, best_value - regularized_objective(losses, r, gamma));
    }
    for (int k = 0; k < 50; ++k)
    {
        // Mix toward a random point with a step between 1e-6 and 1e-1.
        const double eps = std::pow(10.0, rng.uniform(-6.0, -1.0));
        const auto q = detail::random_simplex_point(n, rng);
        std::vector<double> r(n);
        for (std::size_t i = 0; i < n; ++i) r[i] = (1.0 - eps) * best[i] + eps * q[i];
        margin = std::min(margin,
                          best_value - regularized_objective(losses, detail::renormalized(r), gamma));
    }

    ++report.trials;
    report.worst_relative_gap = std::max(report.worst_relative_gap, gap);
    report.worst_optimality_margin = std::min(report.worst_optimality_margin, margin);
    const bool gap_ok = gap <= 1e-9;
    const bool optimal = margin >= -slack;
    if (!gap_ok) ++report.gap_failures;
    if (!optimal) ++report.optimality_failures;
    if (!(gap_ok && optimal))
    {
        if (report.failures == 0) report.first_failing_losses.assign(losses.begin(), losses.end());
        ++report.failures;
    }
}

/// Runs `trials` random loss vectors drawn uniformly from [-10, 10]^n.
[[nodiscard]] inline Lemma1Report verify_lemma1(std::size_t n,
                                                double gamma,
                                                std::size_t trials,
                                                RngStream rng)
{
    if (n < 1) throw ParameterError("verify_lemma1: n must be positive");
    if (trials < 1) throw ParameterError("verify_lemma1: trials must be positive");
    detail::check_gamma(gamma);
    Lemma1Report report;
    report.n = n;
    report.gamma = gamma;
    std::vector<double> losses(n);
    for (std::size_t t = 0; t < trials; ++t)
    {
        for (auto& f : losses) f = rng.uniform(-10.0, 10.0);
        check_lemma1_case(losses, gamma, rng, report);
    }
    return report;
}

}  // namespace comfed
