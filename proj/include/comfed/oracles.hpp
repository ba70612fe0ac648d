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

#include "comfed/config.hpp"
#include "comfed/core.hpp"
#include "comfed/rng.hpp"
#include "comfed/runtime.hpp"
#include "comfed/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace comfed
{

/// Default central-difference step.
inline constexpr double default_fd_step = 1e-6;

using ScalarObjective = std::function<double(const ParamVec&)>;

/// Central differences (F(w + h e_j) - F(w - h e_j)) / 2h per coordinate.
[[nodiscard]] inline ParamVec finite_diff_grad(const ScalarObjective& objective,
                                               const ParamVec& w,
                                               double h = default_fd_step)
{
    if (!(h > 0.0)) throw ParameterError("finite_diff_grad: step must be positive");
    ParamVec g(w.size());
    ParamVec probe = w;
    for (Eigen::Index j = 0; j < w.size(); ++j)
    {
        probe[j] = w[j] + h;
        const double up = objective(probe);
        probe[j] = w[j] - h;
        const double down = objective(probe);
        probe[j] = w[j];
        if (!std::isfinite(up) || !std::isfinite(down))
        {
            throw NumericalError("finite_diff_grad: non-finite evaluation at coordinate "
                                 + std::to_string(j));
        }
        g[j] = (up - down) / (2.0 * h);
    }
    return g;
}

/// Directional central difference of a vector map: (f(w + hv) - f(w - hv)) / 2h.
[[nodiscard]] inline Eigen::VectorXd finite_diff_directional(
    const std::function<Eigen::VectorXd(const ParamVec&)>& map,
    const ParamVec& w,
    const ParamVec& v,
    double h = default_fd_step)
{
    require_same_size(w, v, "finite_diff_directional");
    const Eigen::VectorXd up = map(w + h * v);
    const Eigen::VectorXd down = map(w - h * v);
    if (!all_finite(up) || !all_finite(down))
    {
        throw NumericalError("finite_diff_directional: non-finite evaluation");
    }
    return (up - down) / (2.0 * h);
}

struct GradCheckReport
{
    /// max over checked points of ||g_analytic - g_fd|| / max(1, ||g_fd||)
    double max_relative_error = 0.0;
    /// Coordinate with the largest absolute error at the worst point.
    std::size_t worst_index = 0;
    double step = default_fd_step;
    std::size_t points = 0;

    [[nodiscard]] bool passed(double tolerance = 1e-5) const noexcept
    {
        return max_relative_error <= tolerance;
    }
};

[[nodiscard]] inline double relative_error(const Eigen::VectorXd& analytic,
                                           const Eigen::VectorXd& reference)
{
    return (analytic - reference).norm() / std::max(1.0, reference.norm());
}

inline void record_point(GradCheckReport& report,
                         const Eigen::VectorXd& analytic,
                         const Eigen::VectorXd& reference)
{
    ++report.points;
    const double err = relative_error(analytic, reference);
    if (err >= report.max_relative_error)
    {
        report.max_relative_error = err;
        Eigen::Index worst = 0;
        (analytic - reference).cwiseAbs().maxCoeff(&worst);
        report.worst_index = static_cast<std::size_t>(worst);
    }
}

/// A random model: independent normals scaled by `scale`.
[[nodiscard]] inline ParamVec random_point(std::size_t dim, double scale, RngStream& rng)
{
    ParamVec w(static_cast<Eigen::Index>(dim));
    for (Eigen::Index k = 0; k < w.size(); ++k) w[k] = scale * rng.normal();
    return w;
}

/*!
 * Full-batch client gradient estimator against central differences of the
 * client's composed objective, at `points` random (w, i) pairs.
 */
[[nodiscard]] inline GradCheckReport grad_check(const CompositionTask& task,
                                                std::size_t points,
                                                RngStream rng,
                                                double scale = 0.5,
                                                double h = default_fd_step)
{
    GradCheckReport report;
    report.step = h;
    for (std::size_t k = 0; k < points; ++k)
    {
        const ParamVec w = random_point(task.dim(), scale, rng);
        const auto i = static_cast<std::size_t>(rng.index(task.num_clients()));
        const ParamVec analytic = client_gradient(task, i, w);
        const ParamVec fd = finite_diff_grad(
            [&](const ParamVec& x) { return client_objective(task, i, x); }, w, h);
        record_point(report, analytic, fd);
    }
    return report;
}

/// maml_inner_vjp against directional differences of maml_inner, at random
/// (w, i, v) triples with full inner batches.
[[nodiscard]] inline GradCheckReport maml_vjp_check(const MamlTask& task,
                                                    std::size_t points,
                                                    RngStream rng,
                                                    double scale = 0.5,
                                                    double h = default_fd_step)
{
    GradCheckReport report;
    report.step = h;
    for (std::size_t k = 0; k < points; ++k)
    {
        const ParamVec w = random_point(task.dim(), scale, rng);
        const ParamVec v = random_point(task.dim(), 1.0, rng);
        const auto i = static_cast<std::size_t>(rng.index(task.num_clients()));
        const Batch batch = full_inner_batch(task, i);
        const ParamVec analytic = task.maml_inner_vjp(i, w, batch, v);
        // The MAML Jacobian I - eta H is symmetric, so J v == J^T v.
        const ParamVec fd = finite_diff_directional(
            [&](const ParamVec& x) { return task.maml_inner(i, x, batch); }, w, v, h);
        record_point(report, analytic, fd);
    }
    return report;
}

struct BiasProbe
{
    ParamVec mean_estimate;
    ParamVec full_gradient;
    /// ||mean_estimate - full_gradient||
    double deviation = 0.0;
    /// Norm of the per-coordinate Monte-Carlo standard errors.
    double standard_error = 0.0;

    /// Three standard errors.
    [[nodiscard]] double band() const noexcept { return 3.0 * standard_error; }
    [[nodiscard]] bool within_band() const noexcept { return deviation <= band(); }
};

/*!
 * Averages `reps` independent draws of the client estimator at w and
 * compares the mean with the exact client gradient. A batch size at least
 * the shard size means the full batch.
 */
[[nodiscard]] inline BiasProbe mc_bias_probe(const CompositionTask& task,
                                             std::size_t i,
                                             const ParamVec& w,
                                             std::size_t b,
                                             std::size_t b1,
                                             std::size_t reps,
                                             std::uint64_t seed)
{
    if (reps < 2) throw ParameterError("mc_bias_probe: need at least two repetitions");
    const auto& shard = task.shard(i);
    const bool full_inner = b >= shard.inner.size();
    const bool full_outer = b1 >= shard.outer.size();

    ParamVec sum = ParamVec::Zero(w.size());
    ParamVec sum_sq = ParamVec::Zero(w.size());
    for (std::size_t r = 0; r < reps; ++r)
    {
        auto inner_rng = derive_stream(seed, r, i, 0, Purpose::probe);
        auto outer_rng = derive_stream(seed, r, i, 1, Purpose::probe);
        const Batch inner = full_inner ? full_batch(shard.inner.size())
                                       : draw_batch(inner_rng, shard.inner.size(), b);
        const Batch outer = full_outer ? full_batch(shard.outer.size())
                                       : draw_batch(outer_rng, shard.outer.size(), b1);
        const ParamVec u = client_grad_estimator(task, i, w, inner, outer);
        sum += u;
        sum_sq += u.cwiseProduct(u);
    }
    const auto count = static_cast<double>(reps);
    BiasProbe probe;
    probe.mean_estimate = sum / count;
    probe.full_gradient = client_gradient(task, i, w);
    probe.deviation = (probe.mean_estimate - probe.full_gradient).norm();
    const ParamVec variance =
        ((sum_sq / count - probe.mean_estimate.cwiseProduct(probe.mean_estimate)) * count
         / (count - 1.0))
            .cwiseMax(0.0);
    probe.standard_error = std::sqrt(variance.sum() / count);
    return probe;
}

struct Trajectory
{
    std::vector<ParamVec> iterates;
    std::vector<double> objectives;
    std::vector<double> grad_norms;
    bool diverged = false;
};

/*!
 * Centralized gradient descent on the full-batch composition,
 * w <- w - eta * 1/n sum_i grad g^i(f^i(w))^T grad f^i(w).
 * Shares no code with the federated runtime.
 */
[[nodiscard]] inline Trajectory reference_composition_gd(const CompositionTask& task,
                                                         const ParamVec& w0,
                                                         double eta,
                                                         std::size_t steps)
{
    Trajectory out;
    ParamVec w = w0;
    const std::size_t n = task.num_clients();
    for (std::size_t t = 0;; ++t)
    {
        double objective = 0.0;
        ParamVec grad = ParamVec::Zero(w.size());
        for (std::size_t i = 0; i < n; ++i)
        {
            const Batch inner = full_batch(task.shard(i).inner.size());
            const Batch outer = full_batch(task.shard(i).outer.size());
            const InnerVec y = task.inner_value(i, w, inner);
            objective += task.outer_value(i, y, outer);
            grad += task.inner_vjp(i, w, inner, task.outer_grad(i, y, outer));
        }
        objective /= static_cast<double>(n);
        grad /= static_cast<double>(n);

        out.iterates.push_back(w);
        out.objectives.push_back(objective);
        out.grad_norms.push_back(grad.norm());
        if (!std::isfinite(objective) || objective > divergence_threshold || !all_finite(grad))
        {
            out.diverged = true;
            break;
        }
        if (t == steps) break;
        w = w - eta * grad;
    }
    return out;
}

/// One (horizon, value) sample for rate fitting.
struct RatePoint
{
    double horizon;
    double value;
};

/*!
 * Least-squares slope of log(value) against log(horizon). Requires at least
 * ten points spanning two decades of horizon and positive values.
 */
[[nodiscard]] inline double rate_fit(std::span<const RatePoint> points)
{
    if (points.size() < 10)
    {
        throw UsageError("rate_fit: need at least 10 points, got " + std::to_string(points.size()));
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (const auto& p : points)
    {
        if (!(p.horizon > 0.0) || !(p.value > 0.0) || !std::isfinite(p.value))
        {
            throw UsageError("rate_fit: horizons and values must be positive and finite");
        }
        lo = std::min(lo, p.horizon);
        hi = std::max(hi, p.horizon);
    }
    if (hi / lo < 100.0 * (1.0 - 1e-12))
    {
        throw UsageError("rate_fit: horizons must span at least two decades");
    }
    double mx = 0.0;
    double my = 0.0;
    for (const auto& p : points)
    {
        mx += std::log(p.horizon);
        my += std::log(p.value);
    }
    mx /= static_cast<double>(points.size());
    my /= static_cast<double>(points.size());
    double sxy = 0.0;
    double sxx = 0.0;
    for (const auto& p : points)
    {
        const double dx = std::log(p.horizon) - mx;
        sxy += dx * (std::log(p.value) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

/// (T, min_{s' <= s} ||grad F(w_s')||^2) with T = (s + 1) tau.
[[nodiscard]] inline std::vector<RatePoint> min_so_far_points(std::span<const RoundRecord> records,
                                                              int tau)
{
    std::vector<RatePoint> out;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : records)
    {
        best = std::min(best, r.grad_norm * r.grad_norm);
        out.push_back({static_cast<double>((r.round + 1) * static_cast<std::size_t>(tau)), best});
    }
    return out;
}

/// 1/S sum_s ||grad F(w_s)||^2.
[[nodiscard]] inline double averaged_grad_sq(std::span<const RoundRecord> records)
{
    if (records.empty()) throw UsageError("averaged_grad_sq: no records");
    double total = 0.0;
    for (const auto& r : records) total += r.grad_norm * r.grad_norm;
    return total / static_cast<double>(records.size());
}

/// Step-size and batch schedule eta = T^-alpha1, b = b1 = scale * T^alpha2.
struct RateSchedule
{
    double alpha1 = 0.5;
    double alpha2 = 1.0;
    double batch_scale = 0.1;
};

/// Config for horizon T (total local steps) under `schedule`.
[[nodiscard]] inline ExperimentConfig apply_schedule(ExperimentConfig cfg,
                                                     std::size_t horizon,
                                                     const RateSchedule& schedule)
{
    if (horizon < static_cast<std::size_t>(cfg.tau))
    {
        throw ParameterError("apply_schedule: horizon shorter than one round");
    }
    const auto t = static_cast<double>(horizon);
    cfg.rounds = horizon / static_cast<std::size_t>(cfg.tau);
    cfg.eta = std::pow(t, -schedule.alpha1);
    const auto batch = static_cast<std::size_t>(
        std::max(1.0, std::round(schedule.batch_scale * std::pow(t, schedule.alpha2))));
    cfg.inner_batch = batch;
    cfg.outer_batch = batch;
    return cfg;
}

/// `count` horizons log-spaced over [lo, hi], rounded to multiples of tau.
[[nodiscard]] inline std::vector<std::size_t> log_horizons(std::size_t lo,
                                                           std::size_t hi,
                                                           std::size_t count,
                                                           int tau)
{
    if (count < 2 || lo < 1 || hi <= lo) throw ParameterError("log_horizons: bad range");
    std::vector<std::size_t> out;
    const double a = std::log(static_cast<double>(lo));
    const double b = std::log(static_cast<double>(hi));
    const auto step = static_cast<std::size_t>(tau);
    for (std::size_t k = 0; k < count; ++k)
    {
        const double t = std::exp(a + (b - a) * static_cast<double>(k) / static_cast<double>(count - 1));
        const auto rounded = std::max<std::size_t>(
            step, static_cast<std::size_t>(std::llround(t / static_cast<double>(step))) * step);
        out.push_back(rounded);
    }
    return out;
}

/*!
 * Runs ComFedL once per horizon under the schedule (averaging over
 * `seeds` batch/sampling seeds) and returns (T, 1/S sum ||grad F||^2).
 */
[[nodiscard]] inline std::vector<RatePoint> rate_sweep(const CompositionTask& task,
                                                       const ExperimentConfig& base,
                                                       std::span<const std::size_t> horizons,
                                                       const RateSchedule& schedule,
                                                       std::size_t seeds = 1)
{
    std::vector<RatePoint> out;
    for (auto horizon : horizons)
    {
        double total = 0.0;
        for (std::size_t k = 0; k < seeds; ++k)
        {
            ExperimentConfig cfg = apply_schedule(base, horizon, schedule);
            cfg.seed = base.seed + k;
            const RunResult run = run_comfedl(task, cfg);
            if (run.diverged) throw NumericalError("rate_sweep: run diverged at T=" + std::to_string(horizon));
            total += averaged_grad_sq(run.records);
        }
        out.push_back({static_cast<double>(horizon), total / static_cast<double>(seeds)});
    }
    return out;
}

}  // namespace comfed
