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
#include <string>

namespace comfed
{

/// Which constant an observation bounds.
enum class ObservationKind
{
    inner_jacobian_norm,  // ||grad f^i(w; batch)||_F   -> G_f
    outer_grad_norm,      // ||grad g^i(y; batch)||     -> G_g
    inner_lipschitz,      // gradient-difference ratio of f -> L_f
    outer_lipschitz,      // gradient-difference ratio of g -> L_g
    objective_lipschitz,  // gradient-difference ratio of F -> L
    sample_deviation,     // per-sample deviation proxy  -> sigma
};

struct Observation
{
    ObservationKind kind;
    double value;
};

/*!
 * Running maxima standing in for the constants G_f, G_g, L_f, L_g, L and
 * sigma, which the analysis assumes but never supplies. Fields only grow.
 *
 * G_f bounds the Frobenius norm of the inner Jacobian, which also bounds
 * the spectral norm.
 */
struct SmoothnessEstimate
{
    double G_f = 0.0;
    double G_g = 0.0;
    double L_f = 0.0;
    double L_g = 0.0;
    double L = 0.0;
    double sigma = 0.0;

    friend bool operator==(const SmoothnessEstimate&, const SmoothnessEstimate&) = default;
};

[[nodiscard]] inline SmoothnessEstimate update_smoothness(SmoothnessEstimate est,
                                                          Observation obs)
{
    if (!std::isfinite(obs.value))
    {
        throw NumericalError("update_smoothness: non-finite observation rejected (value="
                             + std::to_string(obs.value) + ")");
    }
    const double v = std::abs(obs.value);
    switch (obs.kind)
    {
        case ObservationKind::inner_jacobian_norm: est.G_f = std::max(est.G_f, v); break;
        case ObservationKind::outer_grad_norm: est.G_g = std::max(est.G_g, v); break;
        case ObservationKind::inner_lipschitz: est.L_f = std::max(est.L_f, v); break;
        case ObservationKind::outer_lipschitz: est.L_g = std::max(est.L_g, v); break;
        case ObservationKind::objective_lipschitz: est.L = std::max(est.L, v); break;
        case ObservationKind::sample_deviation: est.sigma = std::max(est.sigma, v); break;
    }
    return est;
}

/// Field-wise maximum; merging per-client estimates.
[[nodiscard]] inline SmoothnessEstimate merge(const SmoothnessEstimate& a,
                                              const SmoothnessEstimate& b)
{
    return {std::max(a.G_f, b.G_f),
            std::max(a.G_g, b.G_g),
            std::max(a.L_f, b.L_f),
            std::max(a.L_g, b.L_g),
            std::max(a.L, b.L),
            std::max(a.sigma, b.sigma)};
}

/// Squared-drift bound tau^2 eta^2 G_g^2 G_f^2.
[[nodiscard]] inline double drift_bound(const SmoothnessEstimate& est, int tau, double eta)
{
    const double t = static_cast<double>(tau);
    return t * t * eta * eta * est.G_g * est.G_g * est.G_f * est.G_f;
}

/*!
 * Bound on E||u_bar - U_0||^2:
 *   5(G_g^2 L_f^2 + G_f^4 L_g^2) tau^2 eta^2 G_g^2 G_f^2
 *     + 5 G_f^2 sigma^2 / b1 + 5 G_g^2 sigma^2 / b + 5 L_g^2 G_f^2 sigma^2 / b
 */
[[nodiscard]] inline double estimator_deviation_bound(const SmoothnessEstimate& e,
                                                      int tau,
                                                      double eta,
                                                      double b,
                                                      double b1)
{
    const double gf2 = e.G_f * e.G_f;
    const double gg2 = e.G_g * e.G_g;
    const double s2 = e.sigma * e.sigma;
    const double h2 = gg2 * e.L_f * e.L_f + gf2 * gf2 * e.L_g * e.L_g;
    return 5.0 * h2 * drift_bound(e, tau, eta) + 5.0 * gf2 * s2 / b1 + 5.0 * gg2 * s2 / b
           + 5.0 * e.L_g * e.L_g * gf2 * s2 / b;
}

}  // namespace comfed
