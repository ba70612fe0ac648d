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

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace comfed
{

/// Largest exponent fed to exp() by the outer gradient; larger arguments
/// are clamped and counted.
inline constexpr double max_exponent = 40.0;

/// Local data of one client: `inner` stands for D_i, `outer` for D~_i.
struct ClientShard
{
    SampleSet inner;
    SampleSet outer;
    std::size_t client_id = 0;
};

/*!
 * Two-level objective F(w) = 1/n sum_i g^i(f^i(w)).
 *
 * Each client owns a shard and a base loss. Subclasses define the inner
 * mapping f^i (evaluated on inner samples) and the outer function g^i
 * (evaluated on outer samples when it is stochastic). All evaluation is
 * const and safe to call concurrently.
 */
class CompositionTask
{
  public:
    CompositionTask(std::vector<ClientShard> shards, std::vector<LossPtr> losses)
        : shards_(std::move(shards)), losses_(std::move(losses))
    {
        if (shards_.empty()) throw ParameterError("task: need at least one client");
        if (shards_.size() != losses_.size())
        {
            throw ParameterError("task: one loss per client required");
        }
        dim_ = losses_.front()->dim();
        for (std::size_t i = 0; i < shards_.size(); ++i)
        {
            if (!losses_[i] || losses_[i]->dim() != dim_)
            {
                throw DimensionError("task: clients disagree on parameter dimension");
            }
            if (shards_[i].inner.size() == 0 || shards_[i].outer.size() == 0)
            {
                throw ParameterError("task: client " + std::to_string(i)
                                     + " has an empty sample list");
            }
            shards_[i].client_id = i;
        }
    }

    virtual ~CompositionTask() = default;

    [[nodiscard]] std::size_t num_clients() const noexcept { return shards_.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] virtual std::size_t inner_dim() const = 0;
    [[nodiscard]] virtual std::string name() const = 0;

    /// False when g^i ignores its batch (the DRO and identity wrappers).
    [[nodiscard]] virtual bool outer_is_stochastic() const = 0;

    [[nodiscard]] const ClientShard& shard(std::size_t i) const { return shards_.at(i); }
    [[nodiscard]] const Loss& loss(std::size_t i) const { return *losses_.at(i); }

    /// f^i_batch(w).
    [[nodiscard]] virtual InnerVec inner_value(std::size_t i,
                                               const ParamVec& w,
                                               const Batch& batch) const = 0;

    /// (grad f^i_batch(w))^T v.
    [[nodiscard]] virtual ParamVec inner_vjp(std::size_t i,
                                             const ParamVec& w,
                                             const Batch& batch,
                                             const InnerVec& v) const = 0;

    /// grad g^i_batch(y). `clamp_events`, when given, is incremented each
    /// time an exponent is clamped to `max_exponent`.
    [[nodiscard]] virtual InnerVec outer_grad(std::size_t i,
                                              const InnerVec& y,
                                              const Batch& batch,
                                              std::size_t* clamp_events = nullptr) const = 0;

    /// g^i_batch(y).
    [[nodiscard]] virtual double outer_value(std::size_t i,
                                             const InnerVec& y,
                                             const Batch& batch) const = 0;

    /// The per-client loss the robust objective re-weights, at full batch.
    [[nodiscard]] virtual double client_loss(std::size_t i, const ParamVec& w) const
    {
        return loss(i).value(w, shard(i).inner, full_batch(shard(i).inner.size()));
    }

    /// Gradient of the plain base loss on inner samples (the FedAvg step).
    [[nodiscard]] ParamVec base_grad(std::size_t i, const ParamVec& w, const Batch& batch) const
    {
        return loss(i).grad(w, shard(i).inner, batch);
    }

  protected:
    void check_client(std::size_t i) const
    {
        if (i >= shards_.size())
        {
            throw UsageError("task: client " + std::to_string(i) + " out of range");
        }
    }

    void check_inner(const InnerVec& y) const
    {
        if (static_cast<std::size_t>(y.size()) != inner_dim())
        {
            throw DimensionError("task: inner vector length " + std::to_string(y.size())
                                 + " != " + std::to_string(inner_dim()));
        }
    }

  private:
    std::vector<ClientShard> shards_;
    std::vector<LossPtr> losses_;
    std::size_t dim_ = 0;
};

/// g^i = identity on a scalar loss: F^i(w) = f^i(w).
class PlainTask final : public CompositionTask
{
  public:
    using CompositionTask::CompositionTask;

    [[nodiscard]] std::size_t inner_dim() const override { return 1; }
    [[nodiscard]] std::string name() const override { return "plain"; }
    [[nodiscard]] bool outer_is_stochastic() const override { return false; }

    [[nodiscard]] InnerVec inner_value(std::size_t i,
                                       const ParamVec& w,
                                       const Batch& batch) const override
    {
        check_client(i);
        return InnerVec::Constant(1, loss(i).value(w, shard(i).inner, batch));
    }

    [[nodiscard]] ParamVec inner_vjp(std::size_t i,
                                     const ParamVec& w,
                                     const Batch& batch,
                                     const InnerVec& v) const override
    {
        check_client(i);
        check_inner(v);
        return v[0] * loss(i).grad(w, shard(i).inner, batch);
    }

    [[nodiscard]] InnerVec outer_grad(std::size_t i,
                                      const InnerVec& y,
                                      const Batch&,
                                      std::size_t* = nullptr) const override
    {
        check_client(i);
        check_inner(y);
        return InnerVec::Ones(1);
    }

    [[nodiscard]] double outer_value(std::size_t i, const InnerVec& y, const Batch&) const override
    {
        check_client(i);
        check_inner(y);
        return y[0];
    }
};

/*!
 * KL-regularized robust objective written as a composition:
 * f^i(w) is the client's scalar loss and g(y) = exp(y / gamma).
 * The gradient of g is exp(y / gamma) / gamma, so each client's step is
 * re-weighted by its own current loss.
 */
class DroTask final : public CompositionTask
{
  public:
    DroTask(std::vector<ClientShard> shards, std::vector<LossPtr> losses, double gamma)
        : CompositionTask(std::move(shards), std::move(losses)), gamma_(gamma)
    {
        if (!(gamma_ > 0.0)) throw ParameterError("gamma must be positive");
    }

    [[nodiscard]] double gamma() const noexcept { return gamma_; }
    [[nodiscard]] std::size_t inner_dim() const override { return 1; }
    [[nodiscard]] std::string name() const override { return "dro"; }
    [[nodiscard]] bool outer_is_stochastic() const override { return false; }

    [[nodiscard]] InnerVec inner_value(std::size_t i,
                                       const ParamVec& w,
                                       const Batch& batch) const override
    {
        check_client(i);
        return InnerVec::Constant(1, loss(i).value(w, shard(i).inner, batch));
    }

    [[nodiscard]] ParamVec inner_vjp(std::size_t i,
                                     const ParamVec& w,
                                     const Batch& batch,
                                     const InnerVec& v) const override
    {
        check_client(i);
        check_inner(v);
        return v[0] * loss(i).grad(w, shard(i).inner, batch);
    }

    [[nodiscard]] InnerVec outer_grad(std::size_t i,
                                      const InnerVec& y,
                                      const Batch&,
                                      std::size_t* clamp_events = nullptr) const override
    {
        check_client(i);
        check_inner(y);
        double arg = y[0] / gamma_;
        if (arg > max_exponent)
        {
            arg = max_exponent;
            if (clamp_events) ++*clamp_events;
        }
        return InnerVec::Constant(1, std::exp(arg) / gamma_);
    }

    [[nodiscard]] double outer_value(std::size_t i, const InnerVec& y, const Batch&) const override
    {
        check_client(i);
        check_inner(y);
        return std::exp(y[0] / gamma_);
    }

  private:
    double gamma_;
};

/*!
 * One-step MAML as a composition: the inner map is the adapted point
 * y = w - eta_in * grad f_i(w; support batch) and the outer function is the
 * task loss on a query batch, f_i(y). With `gamma` set the outer function
 * becomes exp(f_i(y) / gamma) (the distribution-agnostic variant).
 *
 * Inner batches come from the inner samples (support), outer batches from
 * the outer samples (query).
 */
class MamlTask final : public CompositionTask
{
  public:
    MamlTask(std::vector<ClientShard> shards,
             std::vector<LossPtr> losses,
             double eta_in,
             std::optional<double> gamma = std::nullopt)
        : CompositionTask(std::move(shards), std::move(losses)), eta_in_(eta_in), gamma_(gamma)
    {
        if (!(eta_in_ >= 0.0) || !std::isfinite(eta_in_))
        {
            throw ParameterError("eta_in must be finite and nonnegative");
        }
        if (gamma_ && !(*gamma_ > 0.0)) throw ParameterError("gamma must be positive");
    }

    [[nodiscard]] double eta_in() const noexcept { return eta_in_; }
    [[nodiscard]] std::optional<double> gamma() const noexcept { return gamma_; }
    [[nodiscard]] bool agnostic() const noexcept { return gamma_.has_value(); }
    [[nodiscard]] std::size_t inner_dim() const override { return dim(); }
    [[nodiscard]] std::string name() const override { return agnostic() ? "damaml" : "maml"; }
    [[nodiscard]] bool outer_is_stochastic() const override { return true; }

    /// w - eta_in * grad f_i(w; batch).
    [[nodiscard]] ParamVec maml_inner(std::size_t i, const ParamVec& w, const Batch& batch) const
    {
        check_client(i);
        return w - eta_in_ * loss(i).grad(w, shard(i).inner, batch);
    }

    /// (I - eta_in * hess f_i(w; batch)) v. The Hessian is symmetric, so
    /// this is also the vector-Jacobian product of maml_inner.
    [[nodiscard]] ParamVec maml_inner_vjp(std::size_t i,
                                          const ParamVec& w,
                                          const Batch& batch,
                                          const ParamVec& v) const
    {
        check_client(i);
        check_inner(v);
        if (eta_in_ == 0.0) return v;
        return v - eta_in_ * loss(i).hvp(w, shard(i).inner, batch, v);
    }

    [[nodiscard]] InnerVec inner_value(std::size_t i,
                                       const ParamVec& w,
                                       const Batch& batch) const override
    {
        return maml_inner(i, w, batch);
    }

    [[nodiscard]] ParamVec inner_vjp(std::size_t i,
                                     const ParamVec& w,
                                     const Batch& batch,
                                     const InnerVec& v) const override
    {
        return maml_inner_vjp(i, w, batch, v);
    }

    [[nodiscard]] InnerVec outer_grad(std::size_t i,
                                      const InnerVec& y,
                                      const Batch& batch,
                                      std::size_t* clamp_events = nullptr) const override
    {
        check_client(i);
        check_inner(y);
        ParamVec g = loss(i).grad(y, shard(i).outer, batch);
        if (!gamma_) return g;
        double arg = loss(i).value(y, shard(i).outer, batch) / *gamma_;
        if (arg > max_exponent)
        {
            arg = max_exponent;
            if (clamp_events) ++*clamp_events;
        }
        return (std::exp(arg) / *gamma_) * g;
    }

    [[nodiscard]] double outer_value(std::size_t i,
                                     const InnerVec& y,
                                     const Batch& batch) const override
    {
        check_client(i);
        check_inner(y);
        const double f = loss(i).value(y, shard(i).outer, batch);
        return gamma_ ? std::exp(f / *gamma_) : f;
    }

    /// Post-adaptation query loss f_i(w - eta_in grad f_i(w)).
    [[nodiscard]] double client_loss(std::size_t i, const ParamVec& w) const override
    {
        const auto& s = shard(i);
        const ParamVec y = maml_inner(i, w, full_batch(s.inner.size()));
        return loss(i).value(y, s.outer, full_batch(s.outer.size()));
    }

    /// Query loss at w without adaptation.
    [[nodiscard]] double unadapted_loss(std::size_t i, const ParamVec& w) const
    {
        const auto& s = shard(i);
        return loss(i).value(w, s.outer, full_batch(s.outer.size()));
    }

  private:
    double eta_in_;
    std::optional<double> gamma_;
};

/*!
 * Client gradient estimator
 *   u = grad g^i_{outer}(f^i_{inner}(w))^T grad f^i_{inner}(w).
 * The same inner batch feeds the inner value and the Jacobian. Biased for
 * minibatches when g is nonlinear, exact for full batches.
 */
[[nodiscard]] inline ParamVec client_grad_estimator(const CompositionTask& task,
                                                    std::size_t i,
                                                    const ParamVec& w,
                                                    const Batch& inner_batch,
                                                    const Batch& outer_batch,
                                                    std::size_t* clamp_events = nullptr)
{
    const InnerVec y = task.inner_value(i, w, inner_batch);
    const InnerVec gy = task.outer_grad(i, y, outer_batch, clamp_events);
    return task.inner_vjp(i, w, inner_batch, gy);
}

[[nodiscard]] inline Batch full_inner_batch(const CompositionTask& task, std::size_t i)
{
    return full_batch(task.shard(i).inner.size());
}

[[nodiscard]] inline Batch full_outer_batch(const CompositionTask& task, std::size_t i)
{
    return full_batch(task.shard(i).outer.size());
}

/// F^i(w) = g^i(f^i(w)) at full batches.
[[nodiscard]] inline double client_objective(const CompositionTask& task,
                                             std::size_t i,
                                             const ParamVec& w)
{
    const InnerVec y = task.inner_value(i, w, full_inner_batch(task, i));
    return task.outer_value(i, y, full_outer_batch(task, i));
}

/// grad F^i(w) at full batches.
[[nodiscard]] inline ParamVec client_gradient(const CompositionTask& task,
                                              std::size_t i,
                                              const ParamVec& w,
                                              std::size_t* clamp_events = nullptr)
{
    return client_grad_estimator(task, i, w, full_inner_batch(task, i),
                                 full_outer_batch(task, i), clamp_events);
}

/// F(w) = 1/n sum_i F^i(w), summed in client order.
[[nodiscard]] inline double full_objective(const CompositionTask& task, const ParamVec& w)
{
    double total = 0.0;
    for (std::size_t i = 0; i < task.num_clients(); ++i) total += client_objective(task, i, w);
    return total / static_cast<double>(task.num_clients());
}

/// grad F(w) = 1/n sum_i grad F^i(w).
[[nodiscard]] inline ParamVec full_gradient(const CompositionTask& task,
                                            const ParamVec& w,
                                            std::size_t* clamp_events = nullptr)
{
    ParamVec g = ParamVec::Zero(static_cast<Eigen::Index>(task.dim()));
    for (std::size_t i = 0; i < task.num_clients(); ++i)
    {
        g += client_gradient(task, i, w, clamp_events);
    }
    return g / static_cast<double>(task.num_clients());
}

/// Per-client losses re-weighted by the robust objective.
[[nodiscard]] inline std::vector<double> client_losses(const CompositionTask& task,
                                                       const ParamVec& w)
{
    std::vector<double> out(task.num_clients());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = task.client_loss(i, w);
    return out;
}

/// Frobenius norm of the batch inner Jacobian, assembled from p
/// vector-Jacobian products with unit vectors.
[[nodiscard]] inline double inner_jacobian_norm(const CompositionTask& task,
                                                std::size_t i,
                                                const ParamVec& w,
                                                const Batch& batch)
{
    const auto p = static_cast<Eigen::Index>(task.inner_dim());
    double total = 0.0;
    for (Eigen::Index k = 0; k < p; ++k)
    {
        total += task.inner_vjp(i, w, batch, InnerVec::Unit(p, k)).squaredNorm();
    }
    return std::sqrt(total);
}

/// Downcast helper for the MAML-only operations.
[[nodiscard]] inline const MamlTask& as_maml(const CompositionTask& task)
{
    const auto* maml = dynamic_cast<const MamlTask*>(&task);
    if (!maml) throw UsageError("task '" + task.name() + "' is not a MAML composition");
    return *maml;
}

}  // namespace comfed
