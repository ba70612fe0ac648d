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
#include "comfed/robust.hpp"
#include "comfed/smoothness.hpp"
#include "comfed/tasks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace comfed
{

/// Objective level treated as divergence.
inline constexpr double divergence_threshold = 1e12;

/// Telemetry for one server round, evaluated at the round-start model.
struct RoundRecord
{
    std::size_t round = 0;
    /// F(w_s) over all n clients.
    double objective = 0.0;
    /// Mean of the per-client losses.
    double mean_loss = 0.0;
    /// max_i f^i(w_s).
    double worst_loss = 0.0;
    /// ||grad F(w_s)||, full batch, all clients.
    double grad_norm = 0.0;
    /// max over participants and local steps of ||w^i_{s,t} - w_s||^2.
    double max_drift = 0.0;
    /// tau^2 eta^2 G_g^2 G_f^2 with the estimates after this round.
    double drift_bound = 0.0;
    /// max_t ||u_bar_{s,t} - U_{s,0}||^2; zero when monitoring is off.
    double estimator_deviation = 0.0;
    /// Right-hand side of the estimator-deviation bound; monitored only.
    double deviation_bound = 0.0;
    std::size_t clamp_events = 0;
    std::vector<double> client_losses;
    /// softmax(client_losses / gamma).
    std::vector<double> weights;
    /// Seconds spent in the round. Not written to metrics files by default
    /// because it breaks byte-for-byte replay.
    double wall_clock = 0.0;

    /// Equality on everything except wall_clock.
    [[nodiscard]] bool same_values(const RoundRecord& o) const
    {
        return round == o.round && objective == o.objective && mean_loss == o.mean_loss
               && worst_loss == o.worst_loss && grad_norm == o.grad_norm
               && max_drift == o.max_drift && drift_bound == o.drift_bound
               && estimator_deviation == o.estimator_deviation
               && deviation_bound == o.deviation_bound && clamp_events == o.clamp_events
               && client_losses == o.client_losses && weights == o.weights;
    }
};

struct RunResult
{
    std::vector<RoundRecord> records;
    ParamVec final_model;
    SmoothnessEstimate estimate;
    bool diverged = false;
    std::string diagnostic;
};

/// Uniform sample of m distinct clients out of n, sorted ascending.
/// Depends only on (seed, round).
[[nodiscard]] inline std::vector<std::size_t> sample_clients(std::uint64_t seed,
                                                             std::size_t round,
                                                             std::size_t n,
                                                             std::size_t m)
{
    if (m < 1 || m > n)
    {
        throw ConfigError("m", "clients per round must satisfy 1 <= m <= n");
    }
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    if (m == n) return ids;
    auto rng = derive_stream(seed, round, server_slot, 0, Purpose::client_sampling);
    for (std::size_t k = 0; k < m; ++k)
    {
        const auto j = k + static_cast<std::size_t>(rng.index(n - k));
        std::swap(ids[k], ids[j]);
    }
    ids.resize(m);
    std::sort(ids.begin(), ids.end());
    return ids;
}

/// `size` indices drawn with replacement from [0, population).
[[nodiscard]] inline Batch draw_batch(RngStream& rng, std::size_t population, std::size_t size)
{
    Batch b(size);
    for (auto& j : b) j = static_cast<std::size_t>(rng.index(population));
    return b;
}

/// A client's returned model tagged with its id.
struct ClientModel
{
    std::size_t client = 0;
    ParamVec w;
};

/*!
 * Unweighted mean (1/m) sum_i w_i. Models are summed in ascending client
 * id regardless of input order, so the result is bitwise independent of
 * the order clients finished in.
 */
[[nodiscard]] inline ParamVec server_average(std::span<const ClientModel> models)
{
    if (models.empty()) throw UsageError("server_average: no models");
    std::vector<std::size_t> order(models.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return models[a].client < models[b].client;
    });
    ParamVec sum = ParamVec::Zero(models[order.front()].w.size());
    for (auto k : order)
    {
        require_same_size(sum, models[k].w, "server_average");
        sum += models[k].w;
    }
    return sum / static_cast<double>(models.size());
}

/// Sample-size weighted mean used by FedAvg; weights are renormalized over
/// the participating clients. Summation order as in server_average.
[[nodiscard]] inline ParamVec weighted_average(std::span<const ClientModel> models,
                                               std::span<const double> weights)
{
    if (models.empty()) throw UsageError("weighted_average: no models");
    if (weights.size() != models.size()) throw DimensionError("weighted_average: one weight per model");
    std::vector<std::size_t> order(models.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return models[a].client < models[b].client;
    });
    double total = 0.0;
    for (auto k : order) total += weights[k];
    if (!(total > 0.0)) throw UsageError("weighted_average: weights must have positive sum");
    ParamVec sum = ParamVec::Zero(models[order.front()].w.size());
    for (auto k : order)
    {
        require_same_size(sum, models[k].w, "weighted_average");
        sum += (weights[k] / total) * models[k].w;
    }
    return sum;
}

/// Which local update a client runs.
enum class LocalRule
{
    compositional,  // u = grad g(f_B(w))^T grad f_B(w)
    plain_sgd,      // u = grad f_B(w), the FedAvg step
};

/// Outcome of one client's tau local steps.
struct LocalResult
{
    ParamVec w;
    /// Update direction of every local step, in step order.
    std::vector<ParamVec> directions;
    double max_drift = 0.0;
    std::size_t clamp_events = 0;
    SmoothnessEstimate estimate;
};

/*!
 * tau local steps of client i starting from the server model: draw an
 * inner batch of size b and an outer batch of size b1, form u, and step
 * w <- w - eta u. Batches come from streams keyed on (seed, round, client,
 * step), so the result does not depend on scheduling.
 *
 * Throws NumericalError when u is not finite.
 */
[[nodiscard]] inline LocalResult local_round(const CompositionTask& task,
                                             std::size_t i,
                                             const ParamVec& w_start,
                                             const ExperimentConfig& cfg,
                                             std::size_t round = 0,
                                             LocalRule rule = LocalRule::compositional)
{
    if (!all_finite(w_start)) throw NumericalError("local_round: non-finite start model");
    const auto& shard = task.shard(i);
    LocalResult out;
    out.w = w_start;
    out.directions.reserve(static_cast<std::size_t>(cfg.tau));
    for (int t = 0; t < cfg.tau; ++t)
    {
        const auto step = static_cast<std::uint64_t>(t);
        Batch inner;
        Batch outer;
        if (cfg.full_batch)
        {
            inner = full_batch(shard.inner.size());
            outer = full_batch(shard.outer.size());
        }
        else
        {
            auto inner_rng = derive_stream(cfg.seed, round, i, step, Purpose::inner_batch);
            auto outer_rng = derive_stream(cfg.seed, round, i, step, Purpose::outer_batch);
            inner = draw_batch(inner_rng, shard.inner.size(), cfg.inner_batch);
            outer = draw_batch(outer_rng, shard.outer.size(), cfg.outer_batch);
        }

        ParamVec u;
        double outer_norm = 1.0;
        double jacobian_norm = 0.0;
        std::size_t clamps = 0;
        if (rule == LocalRule::compositional)
        {
            const InnerVec y = task.inner_value(i, out.w, inner);
            const InnerVec gy = task.outer_grad(i, y, outer, &clamps);
            u = task.inner_vjp(i, out.w, inner, gy);
            outer_norm = gy.norm();
            jacobian_norm = inner_jacobian_norm(task, i, out.w, inner);
        }
        else
        {
            u = task.base_grad(i, out.w, inner);
            jacobian_norm = u.norm();
        }
        out.clamp_events += clamps;

        if (!all_finite(u))
        {
            throw NumericalError("local_round: non-finite update (round " + std::to_string(round)
                                 + ", client " + std::to_string(i) + ", step "
                                 + std::to_string(t) + ", clamp events "
                                 + std::to_string(out.clamp_events) + ")");
        }
        if (std::isfinite(outer_norm) && std::isfinite(jacobian_norm))
        {
            out.estimate = update_smoothness(out.estimate,
                                             {ObservationKind::outer_grad_norm, outer_norm});
            out.estimate = update_smoothness(out.estimate,
                                             {ObservationKind::inner_jacobian_norm, jacobian_norm});
        }

        out.w = vec_axpy(-cfg.eta, u, out.w);
        out.max_drift = std::max(out.max_drift, (out.w - w_start).squaredNorm());
        out.directions.push_back(std::move(u));
    }
    return out;
}

namespace detail
{
// Frobenius norm of the full-batch inner Jacobian difference between two
// points, from p vector-Jacobian products each.
inline double jacobian_difference(const CompositionTask& task,
                                  std::size_t i,
                                  const ParamVec& a,
                                  const ParamVec& b,
                                  const Batch& batch)
{
    const auto p = static_cast<Eigen::Index>(task.inner_dim());
    double total = 0.0;
    for (Eigen::Index k = 0; k < p; ++k)
    {
        const InnerVec e = InnerVec::Unit(p, k);
        total += (task.inner_vjp(i, a, batch, e) - task.inner_vjp(i, b, batch, e)).squaredNorm();
    }
    return std::sqrt(total);
}

// Root-mean-square per-sample deviation of inner value, inner Jacobian and
// outer gradient from their full-batch values; returns the largest.
inline double sample_deviation(const CompositionTask& task, std::size_t i, const ParamVec& w)
{
    const auto& shard = task.shard(i);
    const Batch inner_all = full_batch(shard.inner.size());
    const Batch outer_all = full_batch(shard.outer.size());
    const auto p = static_cast<Eigen::Index>(task.inner_dim());

    const InnerVec y = task.inner_value(i, w, inner_all);
    std::vector<ParamVec> jac(static_cast<std::size_t>(p));
    for (Eigen::Index k = 0; k < p; ++k)
    {
        jac[static_cast<std::size_t>(k)] = task.inner_vjp(i, w, inner_all, InnerVec::Unit(p, k));
    }

    double value_dev = 0.0;
    double jac_dev = 0.0;
    for (std::size_t j = 0; j < shard.inner.size(); ++j)
    {
        const Batch one{j};
        value_dev += (task.inner_value(i, w, one) - y).squaredNorm();
        for (Eigen::Index k = 0; k < p; ++k)
        {
            jac_dev += (task.inner_vjp(i, w, one, InnerVec::Unit(p, k))
                        - jac[static_cast<std::size_t>(k)])
                           .squaredNorm();
        }
    }
    value_dev /= static_cast<double>(shard.inner.size());
    jac_dev /= static_cast<double>(shard.inner.size());

    double outer_dev = 0.0;
    if (task.outer_is_stochastic())
    {
        const InnerVec gy = task.outer_grad(i, y, outer_all);
        for (std::size_t j = 0; j < shard.outer.size(); ++j)
        {
            outer_dev += (task.outer_grad(i, y, Batch{j}) - gy).squaredNorm();
        }
        outer_dev /= static_cast<double>(shard.outer.size());
    }
    return std::sqrt(std::max({value_dev, jac_dev, outer_dev}));
}

// Lipschitz-ratio and variance observations from one client's round.
inline SmoothnessEstimate observe_client(const CompositionTask& task,
                                         std::size_t i,
                                         const ParamVec& w_start,
                                         const ParamVec& w_end,
                                         SmoothnessEstimate est)
{
    const auto& shard = task.shard(i);
    const Batch inner_all = full_batch(shard.inner.size());
    const Batch outer_all = full_batch(shard.outer.size());

    est = update_smoothness(est, {ObservationKind::sample_deviation,
                                  sample_deviation(task, i, w_start)});
    const double step = (w_end - w_start).norm();
    if (step > 0.0)
    {
        est = update_smoothness(est, {ObservationKind::inner_lipschitz,
                                      jacobian_difference(task, i, w_end, w_start, inner_all) / step});
        const InnerVec y0 = task.inner_value(i, w_start, inner_all);
        const InnerVec y1 = task.inner_value(i, w_end, inner_all);
        const double dy = (y1 - y0).norm();
        if (dy > 0.0)
        {
            const double dg = (task.outer_grad(i, y1, outer_all) - task.outer_grad(i, y0, outer_all)).norm();
            if (std::isfinite(dg))
            {
                est = update_smoothness(est, {ObservationKind::outer_lipschitz, dg / dy});
            }
        }
    }
    return est;
}

inline bool diverged_value(double v)
{
    return !std::isfinite(v) || v > divergence_threshold;
}

inline ParamVec initial_model(const CompositionTask& task, const ExperimentConfig& cfg)
{
    ParamVec w = ParamVec::Zero(static_cast<Eigen::Index>(task.dim()));
    if (cfg.init == InitKind::normal)
    {
        auto rng = derive_stream(cfg.seed, 0, server_slot, 0, Purpose::initialization);
        for (Eigen::Index k = 0; k < w.size(); ++k) w[k] = cfg.init_scale * rng.normal();
    }
    return w;
}

inline RunResult run_rounds(const CompositionTask& task,
                            const ExperimentConfig& cfg,
                            ParamVec w,
                            LocalRule rule)
{
    validate(cfg, false);
    validate(cfg, task);
    if (static_cast<std::size_t>(w.size()) != task.dim())
    {
        throw DimensionError("run: initial model has the wrong length");
    }

    RunResult result;
    const std::size_t n = task.num_clients();
    const std::size_t m = cfg.m();
    const double b = cfg.full_batch ? std::numeric_limits<double>::infinity()
                                    : static_cast<double>(cfg.inner_batch);
    const double b1 = cfg.full_batch ? std::numeric_limits<double>::infinity()
                                     : static_cast<double>(cfg.outer_batch);

    std::vector<double> size_weights(n);
    for (std::size_t i = 0; i < n; ++i)
    {
        size_weights[i] = static_cast<double>(task.shard(i).inner.size());
    }

    ParamVec previous_w;
    ParamVec previous_grad;
    for (std::size_t s = 0; s < cfg.rounds; ++s)
    {
        const auto started = std::chrono::steady_clock::now();
        RoundRecord rec;
        rec.round = s;

        // Diagnostics over all n clients; they never feed the update.
        std::size_t diag_clamps = 0;
        rec.objective = full_objective(task, w);
        const ParamVec grad = full_gradient(task, w, &diag_clamps);
        rec.grad_norm = grad.norm();
        rec.client_losses = client_losses(task, w);
        rec.worst_loss = *std::max_element(rec.client_losses.begin(), rec.client_losses.end());
        rec.mean_loss = std::accumulate(rec.client_losses.begin(), rec.client_losses.end(), 0.0)
                        / static_cast<double>(n);
        const bool finite_losses = std::all_of(rec.client_losses.begin(), rec.client_losses.end(),
                                               [](double v) { return std::isfinite(v); });
        if (finite_losses) rec.weights = softmax_weights(rec.client_losses, cfg.gamma).values();

        if (cfg.monitor && s > 0)
        {
            const double step = (w - previous_w).norm();
            const double dg = (grad - previous_grad).norm();
            if (step > 0.0 && std::isfinite(dg))
            {
                result.estimate = update_smoothness(
                    result.estimate, {ObservationKind::objective_lipschitz, dg / step});
            }
        }
        previous_w = w;
        previous_grad = grad;

        if (diverged_value(rec.objective) || !all_finite(grad) || !finite_losses)
        {
            result.diverged = true;
            result.diagnostic = "objective diverged at round " + std::to_string(s);
            rec.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            result.records.push_back(std::move(rec));
            break;
        }

        const auto participants = sample_clients(cfg.seed, s, n, m);
        std::vector<LocalResult> locals(participants.size());
        try
        {
            auto run_one = [&](std::size_t k) {
                return local_round(task, participants[k], w, cfg, s, rule);
            };
            switch (cfg.order)
            {
                case ExecutionOrder::ascending:
                    for (std::size_t k = 0; k < participants.size(); ++k) locals[k] = run_one(k);
                    break;
                case ExecutionOrder::descending:
                    for (std::size_t k = participants.size(); k-- > 0;) locals[k] = run_one(k);
                    break;
                case ExecutionOrder::parallel:
                {
                    std::vector<std::future<LocalResult>> futures;
                    futures.reserve(participants.size());
                    for (std::size_t k = 0; k < participants.size(); ++k)
                    {
                        futures.push_back(std::async(std::launch::async, run_one, k));
                    }
                    for (std::size_t k = 0; k < participants.size(); ++k) locals[k] = futures[k].get();
                    break;
                }
            }
        }
        catch (const NumericalError& e)
        {
            result.diverged = true;
            result.diagnostic = e.what();
            rec.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            result.records.push_back(std::move(rec));
            break;
        }

        std::vector<ClientModel> models;
        models.reserve(participants.size());
        for (std::size_t k = 0; k < participants.size(); ++k)
        {
            const auto& local = locals[k];
            rec.max_drift = std::max(rec.max_drift, local.max_drift);
            rec.clamp_events += local.clamp_events;
            result.estimate = merge(result.estimate, local.estimate);
            models.push_back({participants[k], local.w});
        }

        if (cfg.monitor && rule == LocalRule::compositional)
        {
            // U_{s,0}: mean full-batch gradient of the participants at w_s.
            ParamVec anchor = ParamVec::Zero(w.size());
            for (auto i : participants) anchor += client_gradient(task, i, w);
            anchor /= static_cast<double>(m);
            for (int t = 0; t < cfg.tau; ++t)
            {
                ParamVec mean_dir = ParamVec::Zero(w.size());
                for (const auto& local : locals) mean_dir += local.directions[static_cast<std::size_t>(t)];
                mean_dir /= static_cast<double>(m);
                rec.estimator_deviation = std::max(rec.estimator_deviation,
                                                   (mean_dir - anchor).squaredNorm());
            }
            for (std::size_t k = 0; k < participants.size(); ++k)
            {
                result.estimate = observe_client(task, participants[k], w, locals[k].w, result.estimate);
            }
            rec.deviation_bound = estimator_deviation_bound(result.estimate, cfg.tau, cfg.eta, b, b1);
        }
        rec.drift_bound = drift_bound(result.estimate, cfg.tau, cfg.eta);

        if (rule == LocalRule::plain_sgd)
        {
            std::vector<double> weights;
            weights.reserve(participants.size());
            for (auto i : participants) weights.push_back(size_weights[i]);
            w = weighted_average(models, weights);
        }
        else
        {
            w = server_average(models);
        }

        rec.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.records.push_back(std::move(rec));
    }
    result.final_model = std::move(w);
    return result;
}
}  // namespace detail

/// Compositional federated learning: S rounds of sample, broadcast, tau
/// local compositional steps per participant, and unweighted averaging.
/// The returned final model is w_S.
[[nodiscard]] inline RunResult run_comfedl(const CompositionTask& task,
                                           const ExperimentConfig& cfg,
                                           const ParamVec& w0)
{
    return detail::run_rounds(task, cfg, w0, LocalRule::compositional);
}

[[nodiscard]] inline RunResult run_comfedl(const CompositionTask& task, const ExperimentConfig& cfg)
{
    return run_comfedl(task, cfg, detail::initial_model(task, cfg));
}

/// FedAvg baseline: plain local SGD on each client's base loss and
/// averaging weighted by inner-sample counts.
[[nodiscard]] inline RunResult run_fedavg(const CompositionTask& task,
                                          const ExperimentConfig& cfg,
                                          const ParamVec& w0)
{
    return detail::run_rounds(task, cfg, w0, LocalRule::plain_sgd);
}

[[nodiscard]] inline RunResult run_fedavg(const CompositionTask& task, const ExperimentConfig& cfg)
{
    return run_fedavg(task, cfg, detail::initial_model(task, cfg));
}

/// Dispatches on cfg.algorithm.
[[nodiscard]] inline RunResult run_experiment(const CompositionTask& task, const ExperimentConfig& cfg)
{
    return cfg.algorithm == Algorithm::fedavg ? run_fedavg(task, cfg) : run_comfedl(task, cfg);
}

struct DriftReport
{
    std::size_t rounds_checked = 0;
    std::size_t violations = 0;
    /// max over rounds of max_drift / bound.
    double worst_ratio = 0.0;
    double bound = 0.0;
    std::size_t first_violation_round = 0;
    /// max over monitored rounds of estimator_deviation / deviation_bound;
    /// reported, never asserted.
    double worst_deviation_ratio = 0.0;

    [[nodiscard]] bool passed() const noexcept { return violations == 0; }
};

namespace detail
{
inline void tally(DriftReport& report, const RoundRecord& r, double bound, double slack)
{
    ++report.rounds_checked;
    const double ratio = r.max_drift == 0.0 ? 0.0 : (bound > 0.0 ? r.max_drift / bound
                                                                 : std::numeric_limits<double>::infinity());
    report.worst_ratio = std::max(report.worst_ratio, ratio);
    if (r.max_drift > bound * (1.0 + slack))
    {
        if (report.violations == 0) report.first_violation_round = r.round;
        ++report.violations;
    }
    if (r.deviation_bound > 0.0)
    {
        report.worst_deviation_ratio = std::max(report.worst_deviation_ratio,
                                                r.estimator_deviation / r.deviation_bound);
    }
}
}  // namespace detail

/// Every recorded squared drift against tau^2 eta^2 G_g^2 G_f^2 (1 + slack)
/// built from `est`.
[[nodiscard]] inline DriftReport drift_check(std::span<const RoundRecord> records,
                                             const SmoothnessEstimate& est,
                                             int tau,
                                             double eta,
                                             double slack = 0.05)
{
    DriftReport report;
    report.bound = drift_bound(est, tau, eta);
    for (const auto& r : records) detail::tally(report, r, report.bound, slack);
    return report;
}

/// Same check against the bound stored in each record.
[[nodiscard]] inline DriftReport drift_check(std::span<const RoundRecord> records, double slack = 0.05)
{
    DriftReport report;
    for (const auto& r : records)
    {
        report.bound = std::max(report.bound, r.drift_bound);
        detail::tally(report, r, r.drift_bound, slack);
    }
    return report;
}

}  // namespace comfed
