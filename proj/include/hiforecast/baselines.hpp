#pragma once

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hiforecast/common.hpp"
#include "hiforecast/curves.hpp"
#include "hiforecast/fpca.hpp"
#include "hiforecast/grid.hpp"
#include "hiforecast/matcher.hpp"
#include "hiforecast/smoothing.hpp"

namespace hiforecast {

namespace detail {

// Polyline evaluation with the ends held constant outside the sampled span.
template <typename Scalar>
Scalar sample_at(const SampledCurve<Scalar>& c, Scalar t) {
    if (t <= c.times[0]) {
        return c.values[0];
    }
    const Eigen::Index m = c.size();
    if (t >= c.times[m - 1]) {
        return c.values[m - 1];
    }
    const Scalar* begin = c.times.data();
    const Eigen::Index k =
        static_cast<Eigen::Index>(std::upper_bound(begin, begin + m, t) - begin) - 1;
    const Scalar a = (t - c.times[k]) / (c.times[k + 1] - c.times[k]);
    return c.values[k] + a * (c.values[k + 1] - c.values[k]);
}

template <typename Scalar>
GridFunction<Scalar> resample_to_grid(const SampledCurve<Scalar>& c, Scalar lifespan,
                                      Eigen::Index grid_size) {
    auto f = make_grid_function(lifespan, grid_size);
    for (Eigen::Index k = 0; k < grid_size; ++k) {
        f.values[k] = sample_at(c, f.time_at(k));
    }
    return f;
}

// Ladder choice shared with the smoothing module: min error, near-ties to
// the larger bandwidth.
template <typename Scalar>
Scalar pick_from_ladder(const std::vector<Scalar>& ladder, const std::vector<Scalar>& errors) {
    Scalar best = std::numeric_limits<Scalar>::infinity();
    for (Scalar e : errors) {
        best = std::min(best, e);
    }
    if (!std::isfinite(double(best))) {
        throw BandwidthError("bandwidth selection: no feasible ladder candidate");
    }
    const Scalar cut = best * Scalar(1 + 1e-9) + Scalar(1e-12);
    Scalar chosen = ladder.front();
    for (std::size_t c = 0; c < ladder.size(); ++c) {
        if (errors[c] <= cut) {
            chosen = ladder[c];
        }
    }
    return chosen;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Nearest-neighbor scenario matching against the training fleet
// ---------------------------------------------------------------------------

// Matches the observations against each training curve (piecewise-linear,
// scored over the overlapping time span only) and returns the closest one
// resampled to the grid. Ties keep the lowest unit index in input order.
template <typename Scalar>
Forecast<Scalar> nn_forecast(const CurveSet<Scalar>& train, const SampledCurve<Scalar>& obs,
                             Eigen::Index grid_size = 101) {
    if (train.size() == 0) {
        throw PreconditionError("nn_forecast: empty training set");
    }
    if (obs.size() == 0) {
        throw PreconditionError("nn_forecast: no observations");
    }
    Eigen::Index best = -1;
    Scalar best_score = std::numeric_limits<Scalar>::infinity();
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto& cand = train.curves[i];
        Scalar sse = 0;
        Eigen::Index used = 0;
        for (Eigen::Index j = 0; j < obs.size(); ++j) {
            const Scalar t = obs.times[j];
            if (t < cand.times[0] || t > cand.last_time()) {
                continue;
            }
            const Scalar d = detail::sample_at(cand, t) - obs.values[j];
            sse += d * d;
            ++used;
        }
        if (used == 0) {
            continue;
        }
        const Scalar h = std::sqrt(double(sse / Scalar(used)));
        if (h < best_score) {
            best_score = h;
            best = static_cast<Eigen::Index>(i);
        }
    }
    if (best < 0) {
        throw InsufficientDataError(
            "nn_forecast: no training curve overlaps the observation horizon");
    }
    const auto& sel = train.curves[static_cast<std::size_t>(best)];
    Forecast<Scalar> f;
    f.curve = detail::resample_to_grid(sel, train.lifespan_bound, grid_size);
    f.matching_score = best_score;
    f.observed_horizon = obs.last_time();
    f.selected_index = best;
    f.method = Method::nn;
    f.extended_beyond_life = sel.last_time() < train.lifespan_bound;
    return f;
}

// ---------------------------------------------------------------------------
// Post-hoc smoothing of a forecast curve
// ---------------------------------------------------------------------------

// Local-linear smoothing of the forecast curve, with the bandwidth chosen on
// the usual [0.02 M, 0.5 M] ladder by interleaved point cross-validation over
// the grid samples. The matching score is recomputed against obs.
template <typename Scalar>
Forecast<Scalar> smooth_forecast(const Forecast<Scalar>& f, const SampledCurve<Scalar>& obs,
                                 Kernel kernel = Kernel::epanechnikov, int folds = 5) {
    const Eigen::Index g = f.curve.size();
    VectorX<Scalar> xs(g);
    for (Eigen::Index k = 0; k < g; ++k) {
        xs[k] = f.curve.time_at(k);
    }
    const auto ladder = detail::bandwidth_ladder(f.curve.lifespan);
    std::vector<Scalar> errors(ladder.size(), std::numeric_limits<Scalar>::infinity());
    for (std::size_t c = 0; c < ladder.size(); ++c) {
        Scalar err = 0;
        bool feasible = true;
        for (int fold = 0; fold < folds && feasible; ++fold) {
            std::vector<Scalar> tx, ty, hx, hy;
            for (Eigen::Index k = 0; k < g; ++k) {
                if (static_cast<int>(k % folds) == fold) {
                    hx.push_back(xs[k]);
                    hy.push_back(f.curve.values[k]);
                } else {
                    tx.push_back(xs[k]);
                    ty.push_back(f.curve.values[k]);
                }
            }
            try {
                const auto fit = detail::local_linear_1d<Scalar>(
                    Eigen::Map<const VectorX<Scalar>>(tx.data(), static_cast<Eigen::Index>(tx.size())),
                    Eigen::Map<const VectorX<Scalar>>(ty.data(), static_cast<Eigen::Index>(ty.size())),
                    Eigen::Map<const VectorX<Scalar>>(hx.data(), static_cast<Eigen::Index>(hx.size())),
                    ladder[c], kernel);
                for (std::size_t k = 0; k < hy.size(); ++k) {
                    const Scalar d = fit.values[static_cast<Eigen::Index>(k)] - hy[k];
                    err += d * d;
                }
            } catch (const BandwidthError&) {
                feasible = false;
            }
        }
        if (feasible) {
            errors[c] = err;
        }
    }
    const Scalar h = detail::pick_from_ladder(ladder, errors);
    auto fit = detail::local_linear_1d<Scalar>(xs, f.curve.values, xs, h, kernel);

    Forecast<Scalar> out = f;
    out.curve.values = std::move(fit.values);
    out.matching_score = matching_score(out.curve, obs);
    out.method = Method::nn_s;
    return out;
}

// ---------------------------------------------------------------------------
// Regression on sliding windows ("RG-Linear")
// ---------------------------------------------------------------------------

struct SlidingWindowConfig {
    int window_in = 30;   // U
    int window_out = 1;   // V
    double step = 0.0;    // resampling spacing; 0: one cycle, or the grid
                          // step when the lifespan is too short for cycles
};

template <typename Scalar>
struct LinearWindowModel {
    int window_in = 0;
    int window_out = 0;
    Scalar step = Scalar(1);
    MatrixX<Scalar> coefficients;  // (U+1) x V, row 0 is the intercept
};

namespace detail {

template <typename Scalar>
Scalar resolve_window_step(const SlidingWindowConfig& cfg, Scalar lifespan,
                           Eigen::Index grid_size) {
    if (cfg.step > 0.0) {
        return Scalar(cfg.step);
    }
    if (double(lifespan) >= 3.0 * cfg.window_in) {
        return Scalar(1);
    }
    return lifespan / Scalar(grid_size - 1);
}

// Equal-spacing resample of a sampled curve over its own span.
template <typename Scalar>
std::vector<Scalar> resample_series(const SampledCurve<Scalar>& c, Scalar step) {
    std::vector<Scalar> out;
    for (Scalar t = c.times[0]; t <= c.last_time() + step * Scalar(1e-9); t += step) {
        out.push_back(sample_at(c, std::min(t, c.last_time())));
    }
    return out;
}

}  // namespace detail

template <typename Scalar>
LinearWindowModel<Scalar> sliding_window_fit(const CurveSet<Scalar>& train,
                                             const SlidingWindowConfig& cfg,
                                             Eigen::Index grid_size = 101) {
    if (cfg.window_in < 1 || cfg.window_out < 1) {
        throw ConfigError("sliding_window_fit: window sizes must be >= 1");
    }
    const int u = cfg.window_in;
    const int v = cfg.window_out;
    const Scalar step = detail::resolve_window_step(cfg, train.lifespan_bound, grid_size);

    std::vector<std::vector<Scalar>> series;
    std::size_t windows = 0;
    for (const auto& c : train.curves) {
        auto s = detail::resample_series(c, step);
        if (s.size() >= static_cast<std::size_t>(u + v)) {
            windows += s.size() - static_cast<std::size_t>(u + v) + 1;
            series.push_back(std::move(s));
        }
    }
    if (windows == 0) {
        throw InsufficientDataError(
            "sliding_window_fit: no training curve is long enough for one window (need " +
            std::to_string(u + v) + " samples)");
    }
    MatrixX<Scalar> x(windows, u + 1);
    MatrixX<Scalar> y(windows, v);
    std::size_t row = 0;
    for (const auto& s : series) {
        for (std::size_t k = 0; k + u + v <= s.size(); ++k) {
            x(row, 0) = Scalar(1);
            for (int j = 0; j < u; ++j) {
                x(row, j + 1) = s[k + static_cast<std::size_t>(j)];
            }
            for (int j = 0; j < v; ++j) {
                y(row, j) = s[k + static_cast<std::size_t>(u + j)];
            }
            ++row;
        }
    }
    LinearWindowModel<Scalar> model;
    model.window_in = u;
    model.window_out = v;
    model.step = step;
    model.coefficients = x.colPivHouseholderQr().solve(y);
    return model;
}

// Rolls the fitted window forward from the observed prefix, feeding
// predictions back in, until the lifespan bound is reached.
template <typename Scalar>
Forecast<Scalar> sliding_window_extrapolate(const LinearWindowModel<Scalar>& model,
                                            const SampledCurve<Scalar>& obs, Scalar lifespan,
                                            Eigen::Index grid_size = 101) {
    if (obs.size() == 0) {
        throw PreconditionError("sliding_window_extrapolate: no observations");
    }
    const int u = model.window_in;
    const int v = model.window_out;
    std::vector<Scalar> s = detail::resample_series(obs, model.step);
    if (s.size() < static_cast<std::size_t>(u)) {
        throw InsufficientDataError("sliding_window_extrapolate: observed series has " +
                                    std::to_string(s.size()) + " samples, window needs " +
                                    std::to_string(u));
    }
    const Scalar t0 = obs.times[0];
    while (t0 + Scalar(s.size() - 1) * model.step < lifespan) {
        VectorX<Scalar> in(u + 1);
        in[0] = Scalar(1);
        for (int j = 0; j < u; ++j) {
            in[j + 1] = s[s.size() - static_cast<std::size_t>(u - j)];
        }
        const VectorX<Scalar> pred = model.coefficients.transpose() * in;
        for (int j = 0; j < v; ++j) {
            s.push_back(pred[j]);
        }
    }

    SampledCurve<Scalar> full;
    full.unit_id = obs.unit_id;
    full.times.resize(static_cast<Eigen::Index>(s.size()));
    full.values.resize(static_cast<Eigen::Index>(s.size()));
    for (std::size_t k = 0; k < s.size(); ++k) {
        full.times[static_cast<Eigen::Index>(k)] = t0 + Scalar(k) * model.step;
        full.values[static_cast<Eigen::Index>(k)] = s[k];
    }
    Forecast<Scalar> f;
    f.curve = detail::resample_to_grid(full, lifespan, grid_size);
    f.matching_score = matching_score(f.curve, obs);
    f.observed_horizon = obs.last_time();
    f.selected_index = -1;
    f.method = Method::rg_linear;
    return f;
}

// ---------------------------------------------------------------------------
// Conditional-expectation forecast under the fitted Gaussian model
// ---------------------------------------------------------------------------

// Best linear predictor of the component scores given the observations:
// xi = Lambda Phi' (Phi Lambda Phi' + sigma^2 I)^{-1} (y - mu), forecast
// mean + sum_r xi_r phi_r. A zero noise variance gets a small ridge.
template <typename Scalar>
Forecast<Scalar> gp_posterior_forecast(const FpcaModel<Scalar>& model,
                                       const SampledCurve<Scalar>& obs) {
    if (obs.size() == 0) {
        throw PreconditionError("gp_posterior_forecast: no observations");
    }
    const Eigen::Index p = model.rank();
    Forecast<Scalar> f;
    f.observed_horizon = obs.last_time();
    f.selected_index = -1;
    f.method = Method::gp_posterior;
    if (p == 0) {
        f.curve = model.mean;
        f.matching_score = matching_score(f.curve, obs);
        return f;
    }
    const Eigen::Index m = obs.size();
    MatrixX<Scalar> phi(m, p);
    VectorX<Scalar> resid(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index r = 0; r < p; ++r) {
            phi(j, r) = interpolate(model.eigenfunction(r), obs.times[j]);
        }
        resid[j] = obs.values[j] - interpolate(model.mean, obs.times[j]);
    }
    MatrixX<Scalar> c = phi * model.eigenvalues.asDiagonal() * phi.transpose();
    Scalar ridge = model.noise_variance;
    if (!(ridge > Scalar(0))) {
        ridge = Scalar(1e-10) * c.trace() / Scalar(m);
    }
    c.diagonal().array() += ridge;
    Eigen::LDLT<MatrixX<Scalar>> ldlt(c);
    if (ldlt.info() != Eigen::Success) {
        throw NumericalError("gp_posterior_forecast: observation covariance is singular");
    }
    const VectorX<Scalar> alpha = ldlt.solve(resid);
    if (!alpha.allFinite()) {
        throw NumericalError("gp_posterior_forecast: singular system, non-finite solution");
    }
    const VectorX<Scalar> xi =
        model.eigenvalues.asDiagonal() * (phi.transpose() * alpha);
    f.curve = model.mean;
    f.curve.values += model.eigenfunctions.transpose() * xi;
    f.matching_score = matching_score(f.curve, obs);
    return f;
}

}  // namespace hiforecast
