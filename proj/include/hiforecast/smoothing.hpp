#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "hiforecast/common.hpp"
#include "hiforecast/curves.hpp"
#include "hiforecast/grid.hpp"
#include "hiforecast/local_linear.hpp"

namespace hiforecast {

template <typename Scalar>
struct SmootherConfig {
    Kernel kernel_1d = Kernel::epanechnikov;
    Kernel kernel_2d = Kernel::epanechnikov;  // product of two 1-d kernels
    std::optional<Scalar> bandwidth_mean;     // nullopt: select by CV
    std::optional<Scalar> bandwidth_cov;      // nullopt: select by CV
    int cv_folds = 5;
    Eigen::Index grid_size = 101;
};

using SmootherConfigd = SmootherConfig<double>;

enum class BandwidthTarget { mean, covariance };

struct SmootherWarnings {
    std::vector<std::string> messages;
};

namespace detail {

template <typename Scalar>
struct PooledSample {
    VectorX<Scalar> times;   // ascending
    VectorX<Scalar> values;  // parallel to times
};

// Pool observations of the units selected by `keep(unit_index)`, sorted by
// time with a stable order for equal times.
template <typename Scalar, typename Pred>
PooledSample<Scalar> pool_points(const CurveSet<Scalar>& set, Pred keep) {
    std::vector<std::pair<Scalar, Scalar>> pts;
    for (std::size_t i = 0; i < set.curves.size(); ++i) {
        if (!keep(i)) {
            continue;
        }
        const auto& c = set.curves[i];
        for (Eigen::Index j = 0; j < c.size(); ++j) {
            pts.emplace_back(c.times[j], c.values[j]);
        }
    }
    std::stable_sort(pts.begin(), pts.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    PooledSample<Scalar> out;
    out.times.resize(static_cast<Eigen::Index>(pts.size()));
    out.values.resize(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t k = 0; k < pts.size(); ++k) {
        out.times[static_cast<Eigen::Index>(k)] = pts[k].first;
        out.values[static_cast<Eigen::Index>(k)] = pts[k].second;
    }
    return out;
}

template <typename Scalar>
VectorX<Scalar> grid_times(Scalar lifespan, Eigen::Index size) {
    GridFunction<Scalar> g{lifespan, VectorX<Scalar>::Zero(size)};
    VectorX<Scalar> t(size);
    for (Eigen::Index k = 0; k < size; ++k) {
        t[k] = g.time_at(k);
    }
    return t;
}

// Log-spaced bandwidth ladder over [0.02 M, 0.5 M].
template <typename Scalar>
std::vector<Scalar> bandwidth_ladder(Scalar lifespan) {
    std::vector<Scalar> h(10);
    const double lo = 0.02, hi = 0.5;
    for (int k = 0; k < 10; ++k) {
        h[k] = lifespan * Scalar(lo * std::pow(hi / lo, k / 9.0));
    }
    return h;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Mean smoother, Eq.-style pooled local-linear fit
// ---------------------------------------------------------------------------

template <typename Scalar>
GridFunction<Scalar> fit_mean_at_bandwidth(const CurveSet<Scalar>& set, Scalar h, Kernel kernel,
                                           Eigen::Index grid_size,
                                           SmootherWarnings* warnings = nullptr) {
    auto pooled = detail::pool_points(set, [](std::size_t) { return true; });
    if (pooled.times.size() == 0) {
        throw InsufficientDataError("fit_mean: pooled sample is empty");
    }
    const VectorX<Scalar> targets = detail::grid_times(set.lifespan_bound, grid_size);
    auto fit = detail::local_linear_1d<Scalar>(pooled.times, pooled.values, targets, h, kernel);
    if (warnings != nullptr) {
        for (Eigen::Index k : fit.nw_fallbacks) {
            warnings->messages.push_back(
                "fit_mean: locally-constant fallback at grid node " + std::to_string(k) + " (t=" +
                format_double(double(targets[k])) + "), fewer than 2 distinct abscissae");
        }
    }
    return GridFunction<Scalar>{set.lifespan_bound, std::move(fit.values)};
}

// ---------------------------------------------------------------------------
// Covariance smoother
//
// Fits gamma_0 of the two-dimensional local-linear problem over all
// within-unit index pairs j != l, with raw responses
// (S_i(t_ij) - mu(t_ij)) (S_i(t_il) - mu(t_il)). The pair sums factorize per
// unit into products of one-dimensional kernel moments minus a same-index
// correction, which keeps the fit O(N G^2) instead of O(G^2 sum m_i^2).
// ---------------------------------------------------------------------------

template <typename Scalar>
CovarianceSurface<Scalar> fit_covariance_at_bandwidth(const CurveSet<Scalar>& set,
                                                      const GridFunction<Scalar>& mean, Scalar h,
                                                      Kernel kernel,
                                                      SmootherWarnings* warnings = nullptr) {
    const Eigen::Index g = mean.size();
    const Scalar m = mean.lifespan;
    const VectorX<Scalar> xs = detail::grid_times(m, g);
    const Scalar dt = mean.step();

    bool any_pair = false;
    for (const auto& c : set.curves) {
        if (c.size() >= 2) {
            any_pair = true;
            break;
        }
    }
    if (!any_pair) {
        throw InsufficientDataError(
            "fit_covariance: no unit has two observations, no off-diagonal pairs available");
    }

    using Mat = MatrixX<Scalar>;
    Mat s00 = Mat::Zero(g, g), s10 = Mat::Zero(g, g), s20 = Mat::Zero(g, g);
    Mat s11 = Mat::Zero(g, g), t00 = Mat::Zero(g, g), t10 = Mat::Zero(g, g);

    VectorX<Scalar> m0(g), m1(g), m2(g), me0(g), me1(g);
    for (const auto& c : set.curves) {
        m0.setZero();
        m1.setZero();
        m2.setZero();
        me0.setZero();
        me1.setZero();
        for (Eigen::Index j = 0; j < c.size(); ++j) {
            const Scalar tj = c.times[j];
            const Scalar e = c.values[j] - interpolate(mean, tj);
            const Eigen::Index k0 = std::max<Eigen::Index>(
                0, static_cast<Eigen::Index>(std::ceil(double((tj - h) / dt))));
            const Eigen::Index k1 = std::min<Eigen::Index>(
                g - 1, static_cast<Eigen::Index>(std::floor(double((tj + h) / dt))));
            if (k0 > k1) {
                continue;
            }
            const Eigen::Index len = k1 - k0 + 1;
            VectorX<Scalar> u0(len), u1(len), u2(len), ue0(len), ue1(len);
            for (Eigen::Index k = 0; k < len; ++k) {
                const Scalar d = tj - xs[k0 + k];
                const Scalar w = kernel_weight(kernel, d / h);
                u0[k] = w;
                u1[k] = w * d;
                u2[k] = w * d * d;
                ue0[k] = w * e;
                ue1[k] = w * d * e;
            }
            m0.segment(k0, len) += u0;
            m1.segment(k0, len) += u1;
            m2.segment(k0, len) += u2;
            me0.segment(k0, len) += ue0;
            me1.segment(k0, len) += ue1;
            // remove the j == l diagonal pairs from the factorized products
            s00.block(k0, k0, len, len) -= u0 * u0.transpose();
            s10.block(k0, k0, len, len) -= u1 * u0.transpose();
            s20.block(k0, k0, len, len) -= u2 * u0.transpose();
            s11.block(k0, k0, len, len) -= u1 * u1.transpose();
            t00.block(k0, k0, len, len) -= ue0 * ue0.transpose();
            t10.block(k0, k0, len, len) -= ue1 * ue0.transpose();
        }
        s00 += m0 * m0.transpose();
        s10 += m1 * m0.transpose();
        s20 += m2 * m0.transpose();
        s11 += m1 * m1.transpose();
        t00 += me0 * me0.transpose();
        t10 += me1 * me0.transpose();
    }

    Mat surface(g, g);
    std::size_t fallbacks = 0;
    for (Eigen::Index a = 0; a < g; ++a) {
        for (Eigen::Index b = 0; b < g; ++b) {
            const Scalar a00 = s00(a, b);
            if (a00 <= Scalar(0)) {
                throw BandwidthError("fit_covariance: empty kernel window at grid pair (" +
                                     std::to_string(a) + ", " + std::to_string(b) +
                                     "), bandwidth " + format_double(double(h)) + " too small");
            }
            // design [1, d1/h, d2/h]
            Eigen::Matrix<Scalar, 3, 3> n;
            Eigen::Matrix<Scalar, 3, 1> rhs;
            const Scalar a10 = s10(a, b) / h;
            const Scalar a01 = s10(b, a) / h;
            const Scalar a20 = s20(a, b) / (h * h);
            const Scalar a02 = s20(b, a) / (h * h);
            const Scalar a11 = s11(a, b) / (h * h);
            n << a00, a10, a01, a10, a20, a11, a01, a11, a02;
            rhs << t00(a, b), t10(a, b) / h, t10(b, a) / h;
            const Scalar det = n.determinant();
            if (std::abs(double(det)) <= 1e-10 * double(a00 * a00 * a00)) {
                surface(a, b) = t00(a, b) / a00;
                ++fallbacks;
            } else {
                surface(a, b) = n.partialPivLu().solve(rhs)[0];
            }
        }
    }
    if (warnings != nullptr && fallbacks > 0) {
        warnings->messages.push_back("fit_covariance: locally-constant fallback at " +
                                     std::to_string(fallbacks) + " of " + std::to_string(g * g) +
                                     " grid pairs");
    }
    surface = ((surface + surface.transpose()) / Scalar(2)).eval();
    return CovarianceSurface<Scalar>{m, std::move(surface)};
}

// ---------------------------------------------------------------------------
// Bandwidth selection: k-fold cross-validation over units
// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar select_bandwidth(const CurveSet<Scalar>& set, const SmootherConfig<Scalar>& cfg,
                        BandwidthTarget target) {
    const std::size_t n = set.size();
    if (cfg.cv_folds < 2) {
        throw ConfigError("select_bandwidth: cv_folds must be >= 2");
    }
    if (static_cast<std::size_t>(cfg.cv_folds) > n) {
        throw PreconditionError("select_bandwidth: cv_folds " + std::to_string(cfg.cv_folds) +
                                " exceeds the number of units " + std::to_string(n));
    }
    const int folds = cfg.cv_folds;
    const auto ladder = detail::bandwidth_ladder(set.lifespan_bound);

    // Mean function used to center raw covariance responses in CV. A fixed
    // explicit bandwidth avoids recursing into mean selection.
    GridFunction<Scalar> center;
    if (target == BandwidthTarget::covariance) {
        const Scalar h_mu = cfg.bandwidth_mean ? *cfg.bandwidth_mean
                                               : Scalar(0.1) * set.lifespan_bound;
        center = fit_mean_at_bandwidth(set, h_mu, cfg.kernel_1d, cfg.grid_size);
    }

    std::vector<Scalar> errors(ladder.size(), std::numeric_limits<Scalar>::infinity());
    for (std::size_t c = 0; c < ladder.size(); ++c) {
        const Scalar h = ladder[c];
        Scalar err = 0;
        bool feasible = true;
        for (int f = 0; f < folds && feasible; ++f) {
            auto in_train = [&](std::size_t i) { return static_cast<int>(i % folds) != f; };
            try {
                if (target == BandwidthTarget::mean) {
                    auto train = detail::pool_points(set, in_train);
                    auto held = detail::pool_points(set, std::not_fn(in_train));
                    if (train.times.size() == 0 || held.times.size() == 0) {
                        continue;
                    }
                    auto fit = detail::local_linear_1d<Scalar>(train.times, train.values,
                                                               held.times, h, cfg.kernel_1d);
                    err += (fit.values - held.values).squaredNorm();
                } else {
                    CurveSet<Scalar> train{{}, set.lifespan_bound};
                    for (std::size_t i = 0; i < n; ++i) {
                        if (in_train(i)) {
                            train.curves.push_back(set.curves[i]);
                        }
                    }
                    auto surf = fit_covariance_at_bandwidth(train, center, h, cfg.kernel_2d);
                    for (std::size_t i = 0; i < n; ++i) {
                        if (in_train(i)) {
                            continue;
                        }
                        const auto& cur = set.curves[i];
                        VectorX<Scalar> e(cur.size());
                        for (Eigen::Index j = 0; j < cur.size(); ++j) {
                            e[j] = cur.values[j] - interpolate(center, cur.times[j]);
                        }
                        for (Eigen::Index j = 0; j < cur.size(); ++j) {
                            for (Eigen::Index l = 0; l < cur.size(); ++l) {
                                if (j == l) {
                                    continue;
                                }
                                const Scalar raw = e[j] * e[l];
                                const Scalar pred =
                                    interpolate(surf, cur.times[j], cur.times[l]);
                                err += (raw - pred) * (raw - pred);
                            }
                        }
                    }
                }
            } catch (const BandwidthError&) {
                feasible = false;
            } catch (const InsufficientDataError&) {
                feasible = false;
            }
        }
        if (feasible) {
            errors[c] = err;
        }
    }

    Scalar best = std::numeric_limits<Scalar>::infinity();
    for (Scalar e : errors) {
        best = std::min(best, e);
    }
    if (!std::isfinite(double(best))) {
        throw BandwidthError(
            "select_bandwidth: every ladder candidate produced empty kernel windows; the data "
            "are too sparse for bandwidths in [0.02 M, 0.5 M]");
    }
    // Near-ties resolve toward the larger (smoother) bandwidth.
    const Scalar cut = best * Scalar(1 + 1e-9) + Scalar(1e-12);
    Scalar chosen = ladder.front();
    for (std::size_t c = 0; c < ladder.size(); ++c) {
        if (errors[c] <= cut) {
            chosen = ladder[c];
        }
    }
    return chosen;
}

template <typename Scalar>
GridFunction<Scalar> fit_mean(const CurveSet<Scalar>& set, const SmootherConfig<Scalar>& cfg,
                              SmootherWarnings* warnings = nullptr) {
    const Scalar h =
        cfg.bandwidth_mean ? *cfg.bandwidth_mean : select_bandwidth(set, cfg, BandwidthTarget::mean);
    if (!(h > Scalar(0))) {
        throw ConfigError("fit_mean: bandwidth must be positive");
    }
    return fit_mean_at_bandwidth(set, h, cfg.kernel_1d, cfg.grid_size, warnings);
}

template <typename Scalar>
CovarianceSurface<Scalar> fit_covariance(const CurveSet<Scalar>& set,
                                         const GridFunction<Scalar>& mean,
                                         const SmootherConfig<Scalar>& cfg,
                                         SmootherWarnings* warnings = nullptr) {
    const Scalar h = cfg.bandwidth_cov ? *cfg.bandwidth_cov
                                       : select_bandwidth(set, cfg, BandwidthTarget::covariance);
    if (!(h > Scalar(0))) {
        throw ConfigError("fit_covariance: bandwidth must be positive");
    }
    return fit_covariance_at_bandwidth(set, mean, h, cfg.kernel_2d, warnings);
}

// ---------------------------------------------------------------------------
// Measurement-noise variance: smooth the same-point squared residuals onto
// the grid and average V(t) - G(t, t) over the middle half of [0, M].
// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar estimate_noise_variance(const CurveSet<Scalar>& set, const GridFunction<Scalar>& mean,
                               const CovarianceSurface<Scalar>& cov,
                               Scalar residual_bandwidth = Scalar(0),
                               Kernel kernel = Kernel::epanechnikov) {
    if (mean.size() != cov.size() || mean.lifespan != cov.lifespan) {
        throw PreconditionError("estimate_noise_variance: mean and covariance grids differ");
    }
    const Scalar m = mean.lifespan;
    const Scalar h = residual_bandwidth > Scalar(0) ? residual_bandwidth : Scalar(0.1) * m;

    auto pooled = detail::pool_points(set, [](std::size_t) { return true; });
    VectorX<Scalar> sq(pooled.times.size());
    for (Eigen::Index k = 0; k < pooled.times.size(); ++k) {
        const Scalar r = pooled.values[k] - interpolate(mean, pooled.times[k]);
        sq[k] = r * r;
    }
    const VectorX<Scalar> targets = detail::grid_times(m, mean.size());
    auto v = detail::local_linear_1d<Scalar>(pooled.times, sq, targets, h, kernel);

    Scalar acc = 0;
    Eigen::Index count = 0;
    for (Eigen::Index k = 0; k < mean.size(); ++k) {
        if (targets[k] >= Scalar(0.25) * m && targets[k] <= Scalar(0.75) * m) {
            acc += v.values[k] - cov.values(k, k);
            ++count;
        }
    }
    if (count == 0) {
        return Scalar(0);
    }
    return std::max(Scalar(0), acc / Scalar(count));
}

}  // namespace hiforecast
