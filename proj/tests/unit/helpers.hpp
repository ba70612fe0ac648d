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

#include "comfed/comfed.hpp"

#include <gtest/gtest.h>

#include <initializer_list>
#include <memory>
#include <vector>

namespace comfed::testing
{

inline ParamVec vec(std::initializer_list<double> v)
{
    ParamVec out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index k = 0;
    for (double x : v) out[k++] = x;
    return out;
}

/// Rows of `x` with targets `y`.
inline SampleSet samples(std::initializer_list<std::initializer_list<double>> x,
                         std::initializer_list<double> y)
{
    SampleSet s;
    s.x.resize(static_cast<Eigen::Index>(x.size()),
               static_cast<Eigen::Index>(x.size() ? x.begin()->size() : 0));
    Eigen::Index r = 0;
    for (const auto& row : x)
    {
        Eigen::Index c = 0;
        for (double v : row) s.x(r, c++) = v;
        ++r;
    }
    s.y = vec(y);
    return s;
}

/// One sample centered at `c` for a quadratic loss.
inline SampleSet center(const ParamVec& c)
{
    SampleSet s;
    s.x = c.transpose();
    s.y = Eigen::VectorXd::Zero(1);
    return s;
}

inline ClientShard shard_of(SampleSet inner, SampleSet outer, std::size_t id = 0)
{
    return ClientShard{std::move(inner), std::move(outer), id};
}

/// n clients with f_i(w) = 1/2 (w - c_i)^T A (w - c_i), A = a I.
inline ClientData quadratic_clients(const std::vector<ParamVec>& centers, double a = 1.0)
{
    ClientData data;
    for (std::size_t i = 0; i < centers.size(); ++i)
    {
        const auto d = centers[i].size();
        data.shards.push_back(shard_of(center(centers[i]), center(centers[i]), i));
        data.losses.push_back(std::make_shared<QuadraticLoss>(a * Eigen::MatrixXd::Identity(d, d)));
    }
    return data;
}

inline std::unique_ptr<CompositionTask> plain(ClientData d)
{
    return std::make_unique<PlainTask>(std::move(d.shards), std::move(d.losses));
}

inline std::unique_ptr<CompositionTask> dro(ClientData d, double gamma)
{
    return std::make_unique<DroTask>(std::move(d.shards), std::move(d.losses), gamma);
}

inline ExperimentConfig quadratic_config(std::size_t clients = 4)
{
    ExperimentConfig cfg;
    cfg.task.model = Model::quadratic;
    cfg.task.objective = Objective::dro;
    cfg.task.clients = clients;
    cfg.task.quadratic.heterogeneity = 0.3;
    cfg.task.quadratic.noise = 0.2;
    cfg.gamma = 0.5;
    cfg.eta = 0.05;
    cfg.rounds = 20;
    return cfg;
}

}  // namespace comfed::testing
