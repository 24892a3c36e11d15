#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hiforecast/common.hpp"
#include "hiforecast/curves.hpp"
#include "hiforecast/generator.hpp"
#include "hiforecast/grid.hpp"

namespace hiforecast {

enum class Method { proposed, nn, nn_s, rg_linear, gp_posterior };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::proposed:
            return "proposed";
        case Method::nn:
            return "nn";
        case Method::nn_s:
            return "nn-s";
        case Method::rg_linear:
            return "rg-linear";
        case Method::gp_posterior:
            return "gp-posterior";
    }
    return "?";
}

// A full-lifespan curve chosen (or built) for one unit.
template <typename Scalar>
struct Forecast {
    GridFunction<Scalar> curve;
    Scalar matching_score = Scalar(0);  // RMSE against the observations used
    Scalar observed_horizon = Scalar(0);  // M*, last observation time used
    Eigen::Index selected_index = -1;     // -1: not a selection-based method
    Method method = Method::proposed;
    bool extended_beyond_life = false;  // candidate held constant past its end
};

using Forecastd = Forecast<double>;

// Root mean squared error between a candidate evaluated at the observation
// times and the observed values.
template <typename Scalar>
Scalar matching_score(const GridFunction<Scalar>& candidate, const SampledCurve<Scalar>& obs) {
    if (obs.size() == 0) {
        throw PreconditionError("matching_score: no observations");
    }
    Scalar acc = 0;
    for (Eigen::Index j = 0; j < obs.size(); ++j) {
        if (obs.times[j] > candidate.lifespan) {
            throw PreconditionError("matching_score: observation at t=" +
                                    format_double(double(obs.times[j])) +
                                    " lies beyond the lifespan bound " +
                                    format_double(double(candidate.lifespan)));
        }
        const Scalar d = interpolate(candidate, obs.times[j]) - obs.values[j];
        acc += d * d;
    }
    return std::sqrt(double(acc / Scalar(obs.size())));
}

// Index-ordered scan keeps the lowest index on ties and makes the selection
// independent of any parallel evaluation order.
template <typename Scalar>
Forecast<Scalar> select_forecast(const ScenarioSet<Scalar>& scenarios,
                                 const SampledCurve<Scalar>& obs) {
    if (scenarios.count() == 0) {
        throw PreconditionError("select_forecast: empty scenario set");
    }
    if (obs.size() == 0) {
        throw PreconditionError("select_forecast: no observations");
    }
    // per-observation interpolation stencil, shared across candidates
    const Eigen::Index g = scenarios.curves.cols();
    GridFunction<Scalar> probe{scenarios.lifespan, VectorX<Scalar>::Zero(g)};
    const Scalar dt = probe.step();
    std::vector<Eigen::Index> cell(obs.size());
    std::vector<Scalar> frac(obs.size());
    for (Eigen::Index j = 0; j < obs.size(); ++j) {
        const Scalar t = obs.times[j];
        if (!(t >= Scalar(0)) || t > scenarios.lifespan) {
            throw PreconditionError("select_forecast: observation at t=" +
                                    format_double(double(t)) + " outside [0, M]");
        }
        const Eigen::Index nearest =
            std::min<Eigen::Index>(g - 1, static_cast<Eigen::Index>(std::llround(t / dt)));
        if (probe.time_at(nearest) == t) {
            cell[j] = std::min<Eigen::Index>(nearest, g - 2);
            frac[j] = nearest == g - 1 ? Scalar(1) : Scalar(0);
        } else {
            const Eigen::Index k = std::min<Eigen::Index>(g - 2, static_cast<Eigen::Index>(t / dt));
            cell[j] = k;
            frac[j] = (t - probe.time_at(k)) / (probe.time_at(k + 1) - probe.time_at(k));
        }
    }

    Eigen::Index best = 0;
    Scalar best_sse = std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index i = 0; i < scenarios.count(); ++i) {
        Scalar sse = 0;
        for (Eigen::Index j = 0; j < obs.size(); ++j) {
            const Eigen::Index k = cell[j];
            const Scalar v = scenarios.curves(i, k) +
                             frac[j] * (scenarios.curves(i, k + 1) - scenarios.curves(i, k));
            const Scalar d = v - obs.values[j];
            sse += d * d;
        }
        if (sse < best_sse) {
            best_sse = sse;
            best = i;
        }
    }

    Forecast<Scalar> f;
    f.curve = scenarios.curve(best);
    f.matching_score = matching_score(f.curve, obs);
    f.observed_horizon = obs.last_time();
    f.selected_index = best;
    f.method = Method::proposed;
    return f;
}

// Diagnostic: the k best candidates with their scores, ascending score with
// index-order tie-breaks.
template <typename Scalar>
std::vector<std::pair<Eigen::Index, Scalar>> top_k(const ScenarioSet<Scalar>& scenarios,
                                                   const SampledCurve<Scalar>& obs,
                                                   Eigen::Index k) {
    std::vector<std::pair<Eigen::Index, Scalar>> scored(
        static_cast<std::size_t>(scenarios.count()));
    for (Eigen::Index i = 0; i < scenarios.count(); ++i) {
        scored[static_cast<std::size_t>(i)] = {i, matching_score(scenarios.curve(i), obs)};
    }
    const auto by_score = [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    };
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(std::max<Eigen::Index>(k, 0)),
                                                   scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                      scored.end(), by_score);
    scored.resize(keep);
    return scored;
}

}  // namespace hiforecast
