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

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace comfed
{

/// Model parameters w. Length is fixed per experiment.
using ParamVec = Eigen::VectorXd;

/// Output of a client's inner mapping; length p (1 for DRO, d for MAML).
using InnerVec = Eigen::VectorXd;

/// Indices into one of a client's sample lists.
using Batch = std::vector<std::size_t>;

// Error hierarchy. Everything derives from std::runtime_error so callers
// that do not care about the category can catch one type.

class DimensionError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

class ParameterError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Raised by config validation; `field()` names the offending key.
class ConfigError : public std::runtime_error
{
  public:
    ConfigError(std::string field, const std::string& message)
        : std::runtime_error(field.empty() ? message : field + ": " + message),
          field_(std::move(field))
    {
    }

    [[nodiscard]] const std::string& field() const noexcept { return field_; }

  private:
    std::string field_;
};

inline void require_same_size(const Eigen::VectorXd& x,
                              const Eigen::VectorXd& y,
                              const char* what)
{
    if (x.size() != y.size())
    {
        throw DimensionError(std::string(what) + ": length mismatch ("
                             + std::to_string(x.size()) + " vs "
                             + std::to_string(y.size()) + ")");
    }
}

[[nodiscard]] inline bool all_finite(const Eigen::VectorXd& x)
{
    for (Eigen::Index j = 0; j < x.size(); ++j)
    {
        if (!std::isfinite(x[j])) return false;
    }
    return true;
}

/// Returns alpha * x + y. Inputs are left untouched.
[[nodiscard]] inline ParamVec vec_axpy(double alpha,
                                       const ParamVec& x,
                                       const ParamVec& y)
{
    require_same_size(x, y, "vec_axpy");
    if (alpha == 0.0) return y;
    ParamVec out(y.size());
    for (Eigen::Index j = 0; j < y.size(); ++j)
    {
        out[j] = alpha * x[j] + y[j];
    }
    return out;
}

/// Batch holding every index 0..size-1.
[[nodiscard]] inline Batch full_batch(std::size_t size)
{
    Batch b(size);
    for (std::size_t j = 0; j < size; ++j) b[j] = j;
    return b;
}

}  // namespace comfed
