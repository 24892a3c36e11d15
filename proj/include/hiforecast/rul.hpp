#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "hiforecast/common.hpp"
#include "hiforecast/curves.hpp"
#include "hiforecast/grid.hpp"
#include "hiforecast/matcher.hpp"

namespace hiforecast {

template <typename Scalar>
struct RulEstimate {
    Scalar value = Scalar(0);      // predicted remaining life, >= 0
    Scalar threshold = Scalar(0);  // theta
    Scalar last_obs_time = Scalar(0);  // t*
    bool censored = false;         // no crossing inside [t*, M]; value = M - t*
};

using RulEstimated = RulEstimate<double>;

namespace detail {

// First t >= from_t with the piecewise-linear curve through (xs, vs) <= theta.
template <typename Scalar>
std::optional<Scalar> first_crossing_polyline(const VectorX<Scalar>& xs, const VectorX<Scalar>& vs,
                                              Scalar theta, Scalar from_t) {
    const Eigen::Index n = xs.size();
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
        if (xs[k + 1] < from_t) {
            continue;
        }
        Scalar a = xs[k], va = vs[k];
        const Scalar b = xs[k + 1], vb = vs[k + 1];
        if (a < from_t) {
            va += (from_t - a) / (b - a) * (vb - va);
            a = from_t;
        }
        if (va <= theta) {
            return a;
        }
        if (vb <= theta) {
            return a + (va - theta) / (va - vb) * (b - a);
        }
    }
    if (n == 1 && xs[0] >= from_t && vs[0] <= theta) {
        return xs[0];
    }
    return std::nullopt;
}

}  // namespace detail

// Smallest t in [from_t, M] where the curve is at or below theta, locating
// the crossing inside the first grid cell where the condition flips.
template <typename Scalar>
std::optional<Scalar> first_crossing(const GridFunction<Scalar>& curve, Scalar theta,
                                     Scalar from_t) {
    if (!(from_t >= Scalar(0)) || !(from_t < curve.lifespan)) {
        throw PreconditionError("first_crossing: start time " + format_double(double(from_t)) +
                                " outside [0, M)");
    }
    VectorX<Scalar> xs(curve.size());
    for (Eigen::Index k = 0; k < curve.size(); ++k) {
        xs[k] = curve.time_at(k);
    }
    return detail::first_crossing_polyline(xs, curve.values, theta, from_t);
}

template <typename Scalar>
RulEstimate<Scalar> estimate_rul(const Forecast<Scalar>& forecast, Scalar theta) {
    const Scalar t_star = forecast.observed_horizon;
    if (!(t_star >= Scalar(0)) || !(t_star < forecast.curve.lifespan)) {
        throw PreconditionError("estimate_rul: last observation time outside [0, M)");
    }
    if (!(interpolate(forecast.curve, t_star) > theta)) {
        throw PreconditionError(
            "estimate_rul: curve already at or below the threshold at t*=" +
            format_double(double(t_star)) + "; unit has reached soft failure");
    }
    RulEstimate<Scalar> est;
    est.threshold = theta;
    est.last_obs_time = t_star;
    const auto hit = first_crossing(forecast.curve, theta, t_star);
    if (hit) {
        est.value = *hit - t_star;
        est.censored = false;
    } else {
        est.value = forecast.curve.lifespan - t_star;
        est.censored = true;
    }
    return est;
}

// Ground-truth remaining life from the actual curve, same crossing logic.
template <typename Scalar>
RulEstimate<Scalar> true_rul(const GridFunction<Scalar>& truth, Scalar theta, Scalar t_star) {
    Forecast<Scalar> f;
    f.curve = truth;
    f.observed_horizon = t_star;
    return estimate_rul(f, theta);
}

// Overload for raw sampled curves: the curve is the polyline through the
// observations; lifespan_bound caps the censored value at M - t*.
template <typename Scalar>
RulEstimate<Scalar> true_rul(const SampledCurve<Scalar>& truth, Scalar theta, Scalar t_star,
                             Scalar lifespan_bound) {
    if (truth.size() == 0) {
        throw PreconditionError("true_rul: empty curve");
    }
    const Scalar m = std::max(lifespan_bound, truth.last_time());
    if (!(t_star >= Scalar(0)) || !(t_star < m)) {
        throw PreconditionError("true_rul: last observation time outside [0, M)");
    }
    RulEstimate<Scalar> est;
    est.threshold = theta;
    est.last_obs_time = t_star;
    const auto hit =
        detail::first_crossing_polyline(truth.times, truth.values, theta, t_star);
    if (hit && *hit == t_star) {
        throw PreconditionError("true_rul: curve already at or below the threshold at t*");
    }
    if (hit) {
        est.value = *hit - t_star;
        est.censored = false;
    } else {
        est.value = m - t_star;
        est.censored = true;
    }
    return est;
}

}  // namespace hiforecast
