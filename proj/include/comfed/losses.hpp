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

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace comfed
{

/// A finite list of samples. Row j of `x` is the feature vector (or, for
/// quadratic losses, the center) of sample j; `y` holds the labels.
struct SampleSet
{
    Eigen::MatrixXd x;
    Eigen::VectorXd y;

    [[nodiscard]] std::size_t size() const noexcept
    {
        return static_cast<std::size_t>(x.rows());
    }
};

/*!
 * Per-client base loss f(w; xi) with analytic gradient and Hessian-vector
 * product. Every method averages over `batch`, a list of row indices into
 * the sample set (repeats allowed).
 */
class Loss
{
  public:
    virtual ~Loss() = default;

    [[nodiscard]] virtual std::size_t dim() const = 0;
    [[nodiscard]] virtual std::string name() const = 0;

    [[nodiscard]] virtual double value(const ParamVec& w,
                                       const SampleSet& samples,
                                       const Batch& batch) const = 0;
    [[nodiscard]] virtual ParamVec grad(const ParamVec& w,
                                        const SampleSet& samples,
                                        const Batch& batch) const = 0;
    [[nodiscard]] virtual ParamVec hvp(const ParamVec& w,
                                       const SampleSet& samples,
                                       const Batch& batch,
                                       const ParamVec& v) const = 0;

  protected:
    void check(const ParamVec& w, const SampleSet& samples, const Batch& batch) const
    {
        if (static_cast<std::size_t>(w.size()) != dim())
        {
            throw DimensionError(name() + ": parameter length " + std::to_string(w.size())
                                 + " != " + std::to_string(dim()));
        }
        if (batch.empty()) throw UsageError(name() + ": empty batch");
        for (auto j : batch)
        {
            if (j >= samples.size())
            {
                throw UsageError(name() + ": batch index " + std::to_string(j)
                                 + " out of range (" + std::to_string(samples.size())
                                 + " samples)");
            }
        }
    }

    void check_direction(const ParamVec& v) const
    {
        if (static_cast<std::size_t>(v.size()) != dim())
        {
            throw DimensionError(name() + ": direction length " + std::to_string(v.size())
                                 + " != " + std::to_string(dim()));
        }
    }
};

using LossPtr = std::shared_ptr<const Loss>;

/// Squared residual (w^T x - y)^2.
class LeastSquaresLoss final : public Loss
{
  public:
    explicit LeastSquaresLoss(std::size_t dim) : dim_(dim) {}

    [[nodiscard]] std::size_t dim() const override { return dim_; }
    [[nodiscard]] std::string name() const override { return "least-squares"; }

    [[nodiscard]] double value(const ParamVec& w,
                               const SampleSet& s,
                               const Batch& batch) const override
    {
        check(w, s, batch);
        double total = 0.0;
        for (auto j : batch)
        {
            const double r = s.x.row(j).dot(w) - s.y[j];
            total += r * r;
        }
        return total / static_cast<double>(batch.size());
    }

    [[nodiscard]] ParamVec grad(const ParamVec& w,
                                const SampleSet& s,
                                const Batch& batch) const override
    {
        check(w, s, batch);
        ParamVec g = ParamVec::Zero(w.size());
        for (auto j : batch)
        {
            const double r = s.x.row(j).dot(w) - s.y[j];
            g += (2.0 * r) * s.x.row(j).transpose();
        }
        return g / static_cast<double>(batch.size());
    }

    [[nodiscard]] ParamVec hvp(const ParamVec& w,
                               const SampleSet& s,
                               const Batch& batch,
                               const ParamVec& v) const override
    {
        check(w, s, batch);
        check_direction(v);
        ParamVec out = ParamVec::Zero(w.size());
        for (auto j : batch)
        {
            out += (2.0 * s.x.row(j).dot(v)) * s.x.row(j).transpose();
        }
        return out / static_cast<double>(batch.size());
    }

  private:
    std::size_t dim_;
};

/*!
 * Quadratic bowl 1/2 (w - c)^T A (w - c) around a per-sample center c
 * (row of x). A must be symmetric positive semidefinite, which keeps the
 * loss convex and the Hessian-vector product exact.
 */
class QuadraticLoss final : public Loss
{
  public:
    explicit QuadraticLoss(Eigen::MatrixXd a) : a_(std::move(a))
    {
        if (a_.rows() != a_.cols())
        {
            throw ParameterError("quadratic: curvature matrix must be square");
        }
        if ((a_ - a_.transpose()).norm() > 1e-12 * std::max(1.0, a_.norm()))
        {
            throw ParameterError("quadratic: curvature matrix must be symmetric");
        }
        if (a_.size() > 0)
        {
            const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a_,
                                                                     Eigen::EigenvaluesOnly);
            if (eig.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, a_.norm()))
            {
                throw ParameterError("quadratic: curvature matrix must be positive semidefinite");
            }
        }
    }

    [[nodiscard]] std::size_t dim() const override
    {
        return static_cast<std::size_t>(a_.rows());
    }
    [[nodiscard]] std::string name() const override { return "quadratic"; }
    [[nodiscard]] const Eigen::MatrixXd& curvature() const noexcept { return a_; }

    [[nodiscard]] double value(const ParamVec& w,
                               const SampleSet& s,
                               const Batch& batch) const override
    {
        check(w, s, batch);
        double total = 0.0;
        for (auto j : batch)
        {
            const ParamVec r = w - s.x.row(j).transpose();
            total += 0.5 * r.dot(a_ * r);
        }
        return total / static_cast<double>(batch.size());
    }

    [[nodiscard]] ParamVec grad(const ParamVec& w,
                                const SampleSet& s,
                                const Batch& batch) const override
    {
        check(w, s, batch);
        return a_ * (w - mean_center(s, batch));
    }

    [[nodiscard]] ParamVec hvp(const ParamVec& w,
                               const SampleSet& s,
                               const Batch& batch,
                               const ParamVec& v) const override
    {
        check(w, s, batch);
        check_direction(v);
        return a_ * v;
    }

  private:
    static ParamVec mean_center(const SampleSet& s, const Batch& batch)
    {
        ParamVec c = ParamVec::Zero(s.x.cols());
        for (auto j : batch) c += s.x.row(j).transpose();
        return c / static_cast<double>(batch.size());
    }

    Eigen::MatrixXd a_;
};

namespace detail
{
// log(1 + exp(z)) without overflow.
inline double softplus(double z)
{
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z)
{
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}
}  // namespace detail

/// Coefficients of the penalties shared by the logistic families.
struct Regularization
{
    double l2 = 0.0;         // l2/2 * ||w||^2
    double nonconvex = 0.0;  // lambda * sum_j w_j^2 / (1 + w_j^2)
};

namespace detail
{
inline double penalty_value(const Regularization& reg, const ParamVec& w)
{
    double v = 0.5 * reg.l2 * w.squaredNorm();
    if (reg.nonconvex != 0.0)
    {
        for (Eigen::Index k = 0; k < w.size(); ++k)
        {
            const double s = w[k] * w[k];
            v += reg.nonconvex * s / (1.0 + s);
        }
    }
    return v;
}

inline void add_penalty_grad(const Regularization& reg, const ParamVec& w, ParamVec& g)
{
    g += reg.l2 * w;
    if (reg.nonconvex != 0.0)
    {
        for (Eigen::Index k = 0; k < w.size(); ++k)
        {
            const double q = 1.0 + w[k] * w[k];
            g[k] += reg.nonconvex * 2.0 * w[k] / (q * q);
        }
    }
}

inline void add_penalty_hvp(const Regularization& reg,
                            const ParamVec& w,
                            const ParamVec& v,
                            ParamVec& out)
{
    out += reg.l2 * v;
    if (reg.nonconvex != 0.0)
    {
        for (Eigen::Index k = 0; k < w.size(); ++k)
        {
            const double s = w[k] * w[k];
            const double q = 1.0 + s;
            out[k] += reg.nonconvex * (2.0 - 6.0 * s) / (q * q * q) * v[k];
        }
    }
}
}  // namespace detail

/*!
 * Binary logistic regression, labels in {-1, +1}:
 *   log(1 + exp(-y w^T x)) + penalties.
 * With a positive `nonconvex` coefficient the loss is nonconvex.
 */
class LogisticLoss final : public Loss
{
  public:
    explicit LogisticLoss(std::size_t dim, Regularization reg = {}) : dim_(dim), reg_(reg) {}

    [[nodiscard]] std::size_t dim() const override { return dim_; }
    [[nodiscard]] std::string name() const override { return "logistic"; }

    [[nodiscard]] double value(const ParamVec& w,
                               const SampleSet& s,
                               const Batch& batch) const override
    {
        check(w, s, batch);
        double total = 0.0;
        for (auto j : batch)
        {
            total += detail::softplus(-s.y[j] * s.x.row(j).dot(w));
        }
        return total / static_cast<double>(batch.size()) + detail::penalty_value(reg_, w);
    }

    [[nodiscard]] ParamVec grad(const ParamVec& w,
                                const SampleSet& s,
                                const Batch& batch) const override
    {
        check(w, s, batch);
        ParamVec g = ParamVec::Zero(w.size());
        for (auto j : batch)
        {
            const double margin = s.y[j] * s.x.row(j).dot(w);
            g -= (s.y[j] * detail::sigmoid(-margin)) * s.x.row(j).transpose();
        }
        g /= static_cast<double>(batch.size());
        detail::add_penalty_grad(reg_, w, g);
        return g;
    }

    // X^T diag(sigma'(Xw)) X v, formed one sample at a time.
    [[nodiscard]] ParamVec hvp(const ParamVec& w,
                               const SampleSet& s,
                               const Batch& batch,
                               const ParamVec& v) const override
    {
        check(w, s, batch);
        check_direction(v);
        ParamVec out = ParamVec::Zero(w.size());
        for (auto j : batch)
        {
            const double p = detail::sigmoid(s.x.row(j).dot(w));
            out += (p * (1.0 - p) * s.x.row(j).dot(v)) * s.x.row(j).transpose();
        }
        out /= static_cast<double>(batch.size());
        detail::add_penalty_hvp(reg_, w, v, out);
        return out;
    }

  private:
    std::size_t dim_;
    Regularization reg_;
};

/*!
 * Multinomial logistic regression. Parameters are a features x classes
 * weight matrix flattened column-major; labels are class indices stored
 * as doubles.
 */
class SoftmaxLoss final : public Loss
{
  public:
    SoftmaxLoss(std::size_t features, std::size_t classes, Regularization reg = {})
        : features_(features), classes_(classes), reg_(reg)
    {
        if (classes_ < 2) throw ParameterError("softmax: need at least two classes");
    }

    [[nodiscard]] std::size_t dim() const override { return features_ * classes_; }
    [[nodiscard]] std::string name() const override { return "softmax"; }
    [[nodiscard]] std::size_t classes() const noexcept { return classes_; }
    [[nodiscard]] std::size_t features() const noexcept { return features_; }

    [[nodiscard]] double value(const ParamVec& w,
                               const SampleSet& s,
                               const Batch& batch) const override
    {
        check(w, s, batch);
        const auto weights = as_matrix(w);
        double total = 0.0;
        for (auto j : batch)
        {
            const Eigen::VectorXd z = weights.transpose() * s.x.row(j).transpose();
            const double zmax = z.maxCoeff();
            const double lse = zmax + std::log((z.array() - zmax).exp().sum());
            total += lse - z[label(s, j)];
        }
        return total / static_cast<double>(batch.size()) + detail::penalty_value(reg_, w);
    }

    [[nodiscard]] ParamVec grad(const ParamVec& w,
                                const SampleSet& s,
                                const Batch& batch) const override
    {
        check(w, s, batch);
        const auto weights = as_matrix(w);
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(features_, classes_);
        for (auto j : batch)
        {
            Eigen::VectorXd p = probabilities(weights, s.x.row(j).transpose());
            p[label(s, j)] -= 1.0;
            g += s.x.row(j).transpose() * p.transpose();
        }
        ParamVec out = Eigen::Map<const ParamVec>(g.data(), g.size())
                       / static_cast<double>(batch.size());
        detail::add_penalty_grad(reg_, w, out);
        return out;
    }

    // Per sample: x (diag(p) - p p^T) V^T x, with V the reshaped direction.
    [[nodiscard]] ParamVec hvp(const ParamVec& w,
                               const SampleSet& s,
                               const Batch& batch,
                               const ParamVec& v) const override
    {
        check(w, s, batch);
        check_direction(v);
        const auto weights = as_matrix(w);
        const auto dir = as_matrix(v);
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(features_, classes_);
        for (auto j : batch)
        {
            const Eigen::VectorXd x = s.x.row(j).transpose();
            const Eigen::VectorXd p = probabilities(weights, x);
            const Eigen::VectorXd a = dir.transpose() * x;
            const Eigen::VectorXd q = p.cwiseProduct(a) - p * p.dot(a);
            out += x * q.transpose();
        }
        ParamVec flat = Eigen::Map<const ParamVec>(out.data(), out.size())
                        / static_cast<double>(batch.size());
        detail::add_penalty_hvp(reg_, w, v, flat);
        return flat;
    }

    /// Predicted class for a feature vector.
    [[nodiscard]] std::size_t predict(const ParamVec& w, const Eigen::VectorXd& x) const
    {
        Eigen::Index best = 0;
        (as_matrix(w).transpose() * x).maxCoeff(&best);
        return static_cast<std::size_t>(best);
    }

  private:
    [[nodiscard]] Eigen::Map<const Eigen::MatrixXd> as_matrix(const ParamVec& w) const
    {
        return {w.data(), static_cast<Eigen::Index>(features_),
                static_cast<Eigen::Index>(classes_)};
    }

    static Eigen::VectorXd probabilities(const Eigen::Map<const Eigen::MatrixXd>& weights,
                                         const Eigen::VectorXd& x)
    {
        Eigen::VectorXd z = weights.transpose() * x;
        z.array() -= z.maxCoeff();
        z = z.array().exp();
        return z / z.sum();
    }

    [[nodiscard]] Eigen::Index label(const SampleSet& s, std::size_t j) const
    {
        const double y = s.y[j];
        if (y < 0.0 || y >= static_cast<double>(classes_) || y != std::floor(y))
        {
            throw UsageError("softmax: label " + std::to_string(y) + " is not a class index");
        }
        return static_cast<Eigen::Index>(y);
    }

    std::size_t features_;
    std::size_t classes_;
    Regularization reg_;
};

}  // namespace comfed
