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
#include "comfed/datasets.hpp"
#include "comfed/tasks.hpp"

#include <cmath>
#include <memory>
#include <optional>
#include <string>

namespace comfed
{

enum class Algorithm
{
    comfedl,
    fedavg,
    comfedl_damaml,
};

/// Composition wrapper placed around the clients' base losses.
enum class Objective
{
    plain,   // g = identity
    dro,     // g(y) = exp(y / gamma)
    maml,    // y = w - eta_in grad f_i(w), g = f_i
    damaml,  // y = w - eta_in grad f_i(w), g = exp(f_i / gamma)
};

enum class Model
{
    classification,
    quadratic,
    logistic,
};

enum class InitKind
{
    zeros,
    normal,
};

/// Order in which a round's client updates execute. Results never depend
/// on it; it exists so tests can prove that.
enum class ExecutionOrder
{
    ascending,
    descending,
    parallel,
};

[[nodiscard]] inline std::string to_string(Algorithm a)
{
    switch (a)
    {
        case Algorithm::comfedl: return "comfedl";
        case Algorithm::fedavg: return "fedavg";
        case Algorithm::comfedl_damaml: return "comfedl-damaml";
    }
    return "?";
}

[[nodiscard]] inline std::string to_string(Objective o)
{
    switch (o)
    {
        case Objective::plain: return "plain";
        case Objective::dro: return "dro";
        case Objective::maml: return "maml";
        case Objective::damaml: return "damaml";
    }
    return "?";
}

[[nodiscard]] inline std::string to_string(Model m)
{
    switch (m)
    {
        case Model::classification: return "classification";
        case Model::quadratic: return "quadratic";
        case Model::logistic: return "logistic";
    }
    return "?";
}

[[nodiscard]] inline std::string to_string(InitKind k)
{
    return k == InitKind::zeros ? "zeros" : "normal";
}

struct TaskSpec
{
    Model model = Model::classification;
    /// Unset: derived from the algorithm (comfedl -> dro,
    /// comfedl-damaml -> damaml, fedavg -> dro).
    std::optional<Objective> objective;
    std::size_t clients = 10;

    // classification
    std::size_t dominant_size = 500;
    std::size_t minority_size = 20;
    ClassificationOptions classification{};

    QuadraticOptions quadratic{};
    LogisticOptions logistic{};
};

/// Every hyperparameter of one experiment.
struct ExperimentConfig
{
    Algorithm algorithm = Algorithm::comfedl;
    TaskSpec task{};

    /// Clients sampled per round; unset means all of them.
    std::optional<std::size_t> clients_per_round;
    int tau = 5;
    std::size_t rounds = 100;
    double eta = 0.01;
    std::size_t inner_batch = 10;
    std::size_t outer_batch = 10;
    /// Use every sample instead of drawing batches.
    bool full_batch = false;
    double gamma = 0.2;
    double eta_in = 0.05;
    std::uint64_t seed = 0;

    InitKind init = InitKind::zeros;
    double init_scale = 0.1;

    /// Estimate smoothness constants and the estimator-deviation monitor.
    bool monitor = true;
    ExecutionOrder order = ExecutionOrder::ascending;

    [[nodiscard]] std::size_t n() const noexcept { return task.clients; }
    [[nodiscard]] std::size_t m() const noexcept { return clients_per_round.value_or(task.clients); }
};

[[nodiscard]] inline Objective resolved_objective(const ExperimentConfig& cfg)
{
    if (cfg.task.objective) return *cfg.task.objective;
    return cfg.algorithm == Algorithm::comfedl_damaml ? Objective::damaml : Objective::dro;
}

/// Checks the invariants that do not need the task data. `require_rounds`
/// is false for programmatic runs, which accept zero rounds.
inline void validate(const ExperimentConfig& cfg, bool require_rounds = true)
{
    const std::size_t n = cfg.n();
    if (n < 1) throw ConfigError("clients", "must be at least 1");
    if (cfg.clients_per_round)
    {
        const auto m = *cfg.clients_per_round;
        if (m < 1 || m > n)
        {
            throw ConfigError("m", "clients per round must satisfy 1 <= m <= n (m="
                                       + std::to_string(m) + ", n=" + std::to_string(n) + ")");
        }
    }
    if (cfg.tau < 1) throw ConfigError("tau", "must be at least 1");
    if (require_rounds && cfg.rounds < 1) throw ConfigError("rounds", "must be at least 1");
    if (!(cfg.eta >= 0.0) || !std::isfinite(cfg.eta))
    {
        throw ConfigError("eta", "must be finite and nonnegative");
    }
    if (!(cfg.gamma > 0.0) || !std::isfinite(cfg.gamma))
    {
        throw ConfigError("gamma", "must be positive");
    }
    if (!(cfg.eta_in >= 0.0) || !std::isfinite(cfg.eta_in))
    {
        throw ConfigError("eta_in", "must be finite and nonnegative");
    }
    if (cfg.inner_batch < 1) throw ConfigError("b", "must be at least 1");
    if (cfg.outer_batch < 1) throw ConfigError("b1", "must be at least 1");
    if (!(cfg.init_scale >= 0.0)) throw ConfigError("init_scale", "must be nonnegative");

    const auto& t = cfg.task;
    switch (t.model)
    {
        case Model::classification:
            if (n < 2) throw ConfigError("clients", "classification needs at least 2 clients");
            if (t.dominant_size < 1) throw ConfigError("dominant_size", "must be at least 1");
            if (t.minority_size < 1) throw ConfigError("minority_size", "must be at least 1");
            if (t.classification.classes < 2) throw ConfigError("classes", "must be at least 2");
            if (t.classification.features < t.classification.classes)
            {
                throw ConfigError("features", "must be at least the number of classes");
            }
            if (t.classification.rho && !(*t.classification.rho >= 0.0 && *t.classification.rho <= 1.0))
            {
                throw ConfigError("rho", "must lie in [0, 1]");
            }
            break;
        case Model::quadratic:
            if (t.quadratic.dim < 1) throw ConfigError("dim", "must be at least 1");
            if (t.quadratic.samples < 1) throw ConfigError("samples", "must be at least 1");
            if (!(t.quadratic.curvature_min >= 0.0
                  && t.quadratic.curvature_max >= t.quadratic.curvature_min))
            {
                throw ConfigError("curvature_max", "need 0 <= curvature_min <= curvature_max");
            }
            break;
        case Model::logistic:
            if (t.logistic.dim < 1) throw ConfigError("dim", "must be at least 1");
            if (t.logistic.samples < 1) throw ConfigError("samples", "must be at least 1");
            break;
    }
}

/// Builds the client data described by the task section.
[[nodiscard]] inline ClientData make_client_data(const ExperimentConfig& cfg)
{
    const auto& t = cfg.task;
    switch (t.model)
    {
        case Model::classification:
            return make_imbalanced_classification(t.clients, t.dominant_size, t.minority_size,
                                                  t.classification, cfg.seed);
        case Model::quadratic: return make_quadratic_clients(t.clients, t.quadratic, cfg.seed);
        case Model::logistic: return make_logistic_clients(t.clients, t.logistic, cfg.seed);
    }
    throw ConfigError("model", "unknown model");
}

/// Wraps client data in the requested composition.
[[nodiscard]] inline std::unique_ptr<CompositionTask> wrap(ClientData data,
                                                           Objective objective,
                                                           double gamma,
                                                           double eta_in)
{
    switch (objective)
    {
        case Objective::plain:
            return std::make_unique<PlainTask>(std::move(data.shards), std::move(data.losses));
        case Objective::dro:
            return std::make_unique<DroTask>(std::move(data.shards), std::move(data.losses), gamma);
        case Objective::maml:
            return std::make_unique<MamlTask>(std::move(data.shards), std::move(data.losses), eta_in);
        case Objective::damaml:
            return std::make_unique<MamlTask>(std::move(data.shards), std::move(data.losses), eta_in,
                                              gamma);
    }
    throw ConfigError("objective", "unknown objective");
}

[[nodiscard]] inline std::unique_ptr<CompositionTask> build_task(const ExperimentConfig& cfg)
{
    return wrap(make_client_data(cfg), resolved_objective(cfg), cfg.gamma, cfg.eta_in);
}

/// Checks batch sizes against every shard. Batches are drawn with
/// replacement, but a batch larger than its shard is rejected as a likely
/// config mistake.
inline void validate(const ExperimentConfig& cfg, const CompositionTask& task)
{
    if (task.num_clients() != cfg.n())
    {
        throw ConfigError("clients", "config expects " + std::to_string(cfg.n())
                                         + " clients, task has "
                                         + std::to_string(task.num_clients()));
    }
    if (cfg.full_batch) return;
    for (std::size_t i = 0; i < task.num_clients(); ++i)
    {
        if (cfg.inner_batch > task.shard(i).inner.size())
        {
            throw ConfigError("b", "inner batch " + std::to_string(cfg.inner_batch)
                                       + " exceeds client " + std::to_string(i) + "'s "
                                       + std::to_string(task.shard(i).inner.size())
                                       + " inner samples");
        }
        if (cfg.outer_batch > task.shard(i).outer.size())
        {
            throw ConfigError("b1", "outer batch " + std::to_string(cfg.outer_batch)
                                        + " exceeds client " + std::to_string(i) + "'s "
                                        + std::to_string(task.shard(i).outer.size())
                                        + " outer samples");
        }
    }
}

}  // namespace comfed
