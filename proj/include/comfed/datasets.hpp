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
#include "comfed/losses.hpp"
#include "comfed/rng.hpp"
#include "comfed/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace comfed
{

/// Shards and base losses before a composition wrapper is chosen.
struct ClientData
{
    std::vector<ClientShard> shards;
    std::vector<LossPtr> losses;
    std::optional<std::size_t> dominant_client;
};

/*!
 * Class counts for a client of `size` samples whose dominant class holds a
 * fraction `rho` and every other class (1 - rho) / (classes - 1). Counts
 * are rounded by largest remainder so they sum to `size`; ties go to the
 * lower class index.
 */
[[nodiscard]] inline std::vector<std::size_t> label_skew_counts(std::size_t size,
                                                                std::size_t classes,
                                                                std::size_t dominant,
                                                                double rho)
{
    if (classes < 2) throw ParameterError("label skew: need at least two classes");
    if (!(rho >= 0.0 && rho <= 1.0)) throw ParameterError("rho must lie in [0, 1]");
    if (dominant >= classes) throw ParameterError("label skew: dominant class out of range");

    std::vector<double> share(classes, (1.0 - rho) / static_cast<double>(classes - 1));
    share[dominant] = rho;

    std::vector<std::size_t> counts(classes);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < classes; ++c)
    {
        const double exact = share[c] * static_cast<double>(size);
        // Guard against 28.000000000000004-style representation error.
        const double floored = std::floor(exact + 1e-9);
        counts[c] = static_cast<std::size_t>(floored);
        assigned += counts[c];
        remainders.emplace_back(exact - floored, c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < size; ++k, ++assigned)
    {
        ++counts[remainders[k % classes].second];
    }
    return counts;
}

/// Knobs of the synthetic Gaussian-mixture classification data.
struct ClassificationOptions
{
    std::size_t features = 10;
    std::size_t classes = 10;
    /// Dominant-class fraction per client; unset means uniform labels.
    std::optional<double> rho;
    /// Distance of every class mean from the origin (means are scaled
    /// simplex vertices).
    double separation = 3.0;
    /// Std-dev of a per-client feature offset (covariate shift).
    double client_shift = 0.0;
    /// Multiplies every non-bias feature; keeps per-sample curvature O(1).
    double feature_scale = 1.0;
    Regularization reg{};
};

namespace detail
{
inline SampleSet gaussian_mixture(std::size_t size,
                                  const std::vector<std::size_t>& class_counts,
                                  const ClassificationOptions& opt,
                                  const Eigen::VectorXd& shift,
                                  RngStream& rng)
{
    const auto features = static_cast<Eigen::Index>(opt.features);
    SampleSet s{Eigen::MatrixXd(static_cast<Eigen::Index>(size), features + 1),
                Eigen::VectorXd(static_cast<Eigen::Index>(size))};
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < class_counts.size(); ++c)
    {
        for (std::size_t k = 0; k < class_counts[c]; ++k, ++row)
        {
            for (Eigen::Index f = 0; f < features; ++f)
            {
                const double mean = (static_cast<std::size_t>(f) == c) ? opt.separation : 0.0;
                s.x(row, f) = opt.feature_scale * (mean + shift[f] + rng.normal());
            }
            s.x(row, features) = 1.0;  // bias feature
            s.y[row] = static_cast<double>(c);
        }
    }
    return s;
}
}  // namespace detail

/*!
 * Imbalanced, heterogeneous classification clients: one client chosen at
 * random holds `dominant_size` samples, every other client `minority_size`.
 * Outer samples are an independent draw of the same size from the same
 * client distribution. Each client gets a softmax-regression loss.
 */
[[nodiscard]] inline ClientData make_imbalanced_classification(std::size_t n,
                                                               std::size_t dominant_size,
                                                               std::size_t minority_size,
                                                               const ClassificationOptions& opt,
                                                               std::uint64_t seed)
{
    if (n < 2) throw ParameterError("imbalanced classification: need at least two clients");
    if (dominant_size < 1 || minority_size < 1)
    {
        throw ParameterError("imbalanced classification: shard sizes must be positive");
    }
    if (opt.classes < 2) throw ParameterError("imbalanced classification: need two classes");
    if (!(opt.feature_scale > 0.0) || !std::isfinite(opt.feature_scale))
    {
        throw ParameterError("imbalanced classification: feature_scale must be positive");
    }
    if (opt.features < opt.classes)
    {
        throw ParameterError("imbalanced classification: features must be >= classes");
    }

    auto pick = derive_stream(seed, 0, server_slot, 0, Purpose::data_generation);
    const auto dominant = static_cast<std::size_t>(pick.index(n));

    ClientData data;
    data.dominant_client = dominant;
    const auto loss = std::make_shared<SoftmaxLoss>(opt.features + 1, opt.classes, opt.reg);
    for (std::size_t i = 0; i < n; ++i)
    {
        const std::size_t size = (i == dominant) ? dominant_size : minority_size;
        const double rho = opt.rho.value_or(1.0 / static_cast<double>(opt.classes));
        const auto counts = label_skew_counts(size, opt.classes, i % opt.classes, rho);

        auto params = derive_stream(seed, 0, i, 0, Purpose::data_generation);
        Eigen::VectorXd shift(static_cast<Eigen::Index>(opt.features));
        for (Eigen::Index f = 0; f < shift.size(); ++f) shift[f] = opt.client_shift * params.normal();

        auto inner_rng = derive_stream(seed, 0, i, 1, Purpose::data_generation);
        auto outer_rng = derive_stream(seed, 0, i, 2, Purpose::data_generation);
        ClientShard shard;
        shard.inner = detail::gaussian_mixture(size, counts, opt, shift, inner_rng);
        shard.outer = detail::gaussian_mixture(size, counts, opt, shift, outer_rng);
        data.shards.push_back(std::move(shard));
        data.losses.push_back(loss);
    }
    return data;
}

/// Knobs of the synthetic quadratic clients.
struct QuadraticOptions
{
    std::size_t dim = 5;
    std::size_t samples = 50;
    double curvature_min = 0.5;
    double curvature_max = 2.0;
    /// Std-dev of each client's optimum around the origin.
    double heterogeneity = 1.0;
    /// Std-dev of per-sample centers around the client optimum.
    double noise = 0.5;
};

namespace detail
{
inline Eigen::MatrixXd random_spd(std::size_t dim, double lo, double hi, RngStream& rng)
{
    const auto d = static_cast<Eigen::Index>(dim);
    Eigen::MatrixXd g(d, d);
    for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c) g(r, c) = rng.normal();
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ();
    Eigen::VectorXd eig(d);
    for (Eigen::Index k = 0; k < d; ++k) eig[k] = rng.uniform(lo, hi);
    Eigen::MatrixXd a = q * eig.asDiagonal() * q.transpose();
    return 0.5 * (a + a.transpose());
}

inline SampleSet centers_around(const Eigen::VectorXd& optimum,
                                std::size_t count,
                                double noise,
                                RngStream& rng)
{
    SampleSet s{Eigen::MatrixXd(static_cast<Eigen::Index>(count), optimum.size()),
                Eigen::VectorXd::Zero(static_cast<Eigen::Index>(count))};
    for (Eigen::Index r = 0; r < s.x.rows(); ++r)
        for (Eigen::Index c = 0; c < optimum.size(); ++c)
            s.x(r, c) = optimum[c] + noise * rng.normal();
    return s;
}
}  // namespace detail

/// Heterogeneous strongly convex quadratic clients.
[[nodiscard]] inline ClientData make_quadratic_clients(std::size_t n,
                                                       const QuadraticOptions& opt,
                                                       std::uint64_t seed)
{
    if (n < 1 || opt.dim < 1 || opt.samples < 1)
    {
        throw ParameterError("quadratic clients: sizes must be positive");
    }
    if (!(opt.curvature_min >= 0.0 && opt.curvature_max >= opt.curvature_min))
    {
        throw ParameterError("quadratic clients: need 0 <= curvature_min <= curvature_max");
    }
    ClientData data;
    for (std::size_t i = 0; i < n; ++i)
    {
        auto params = derive_stream(seed, 0, i, 0, Purpose::data_generation);
        Eigen::MatrixXd a = detail::random_spd(opt.dim, opt.curvature_min, opt.curvature_max, params);
        Eigen::VectorXd optimum(static_cast<Eigen::Index>(opt.dim));
        for (Eigen::Index k = 0; k < optimum.size(); ++k) optimum[k] = opt.heterogeneity * params.normal();

        auto inner_rng = derive_stream(seed, 0, i, 1, Purpose::data_generation);
        auto outer_rng = derive_stream(seed, 0, i, 2, Purpose::data_generation);
        ClientShard shard;
        shard.inner = detail::centers_around(optimum, opt.samples, opt.noise, inner_rng);
        shard.outer = detail::centers_around(optimum, opt.samples, opt.noise, outer_rng);
        data.shards.push_back(std::move(shard));
        data.losses.push_back(std::make_shared<QuadraticLoss>(std::move(a)));
    }
    return data;
}

/// Knobs of the synthetic binary logistic clients.
struct LogisticOptions
{
    std::size_t dim = 5;
    std::size_t samples = 100;
    /// Std-dev of each client's label-generating weights around a shared one.
    double heterogeneity = 0.5;
    /// Std-dev of a per-client feature offset.
    double client_shift = 0.0;
    Regularization reg{};
};

namespace detail
{
inline SampleSet logistic_samples(const Eigen::VectorXd& truth,
                                  const Eigen::VectorXd& shift,
                                  std::size_t count,
                                  RngStream& rng)
{
    const auto d = truth.size();
    SampleSet s{Eigen::MatrixXd(static_cast<Eigen::Index>(count), d),
                Eigen::VectorXd(static_cast<Eigen::Index>(count))};
    for (Eigen::Index r = 0; r < s.x.rows(); ++r)
    {
        for (Eigen::Index c = 0; c < d; ++c) s.x(r, c) = shift[c] + rng.normal();
        const double p = sigmoid(s.x.row(r).dot(truth));
        s.y[r] = rng.uniform() < p ? 1.0 : -1.0;
    }
    return s;
}
}  // namespace detail

/// Heterogeneous binary logistic-regression clients (labels +-1).
[[nodiscard]] inline ClientData make_logistic_clients(std::size_t n,
                                                      const LogisticOptions& opt,
                                                      std::uint64_t seed)
{
    if (n < 1 || opt.dim < 1 || opt.samples < 1)
    {
        throw ParameterError("logistic clients: sizes must be positive");
    }
    auto shared_rng = derive_stream(seed, 0, server_slot, 1, Purpose::data_generation);
    Eigen::VectorXd shared(static_cast<Eigen::Index>(opt.dim));
    for (Eigen::Index k = 0; k < shared.size(); ++k) shared[k] = shared_rng.normal();

    ClientData data;
    const auto loss = std::make_shared<LogisticLoss>(opt.dim, opt.reg);
    for (std::size_t i = 0; i < n; ++i)
    {
        auto params = derive_stream(seed, 0, i, 0, Purpose::data_generation);
        Eigen::VectorXd truth = shared;
        Eigen::VectorXd shift(shared.size());
        for (Eigen::Index k = 0; k < shared.size(); ++k)
        {
            truth[k] += opt.heterogeneity * params.normal();
            shift[k] = opt.client_shift * params.normal();
        }
        auto inner_rng = derive_stream(seed, 0, i, 1, Purpose::data_generation);
        auto outer_rng = derive_stream(seed, 0, i, 2, Purpose::data_generation);
        ClientShard shard;
        shard.inner = detail::logistic_samples(truth, shift, opt.samples, inner_rng);
        shard.outer = detail::logistic_samples(truth, shift, opt.samples, outer_rng);
        data.shards.push_back(std::move(shard));
        data.losses.push_back(loss);
    }
    return data;
}

}  // namespace comfed
