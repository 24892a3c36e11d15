#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hiforecast/common.hpp"
#include "hiforecast/grid.hpp"
#include "hiforecast/local_linear.hpp"

namespace hiforecast {

// One unit's health-indicator observations. Times are absolute (cycles or
// seconds), strictly increasing, within [0, M] of the owning set.
template <typename Scalar>
struct SampledCurve {
    std::string unit_id;
    VectorX<Scalar> times;
    VectorX<Scalar> values;
    // Dense-regular over the whole life (as opposed to sparse/intermittent).
    bool complete = false;

    Eigen::Index size() const { return times.size(); }
    Scalar last_time() const { return times[times.size() - 1]; }
};

using SampledCurved = SampledCurve<double>;

template <typename Scalar>
struct CurveSet {
    std::vector<SampledCurve<Scalar>> curves;
    Scalar lifespan_bound = Scalar(0);  // M

    std::size_t size() const { return curves.size(); }
};

using CurveSetd = CurveSet<double>;

// Regularly spaced and reasonably dense over the curve's own span.
template <typename Scalar>
bool detect_complete(const SampledCurve<Scalar>& c) {
    const Eigen::Index m = c.size();
    if (m < 20) {
        return false;
    }
    const Scalar dt = (c.times[m - 1] - c.times[0]) / Scalar(m - 1);
    for (Eigen::Index j = 1; j < m; ++j) {
        if (std::abs(c.times[j] - c.times[j - 1] - dt) > Scalar(1e-6) * std::max(dt, Scalar(1))) {
            return false;
        }
    }
    return true;
}

template <typename Scalar>
CurveSet<Scalar> make_curve_set(std::vector<SampledCurve<Scalar>> curves, Scalar lifespan_bound) {
    Scalar max_t = Scalar(0);
    for (const auto& c : curves) {
        if (c.size() > 0) {
            max_t = std::max(max_t, c.last_time());
        }
    }
    if (lifespan_bound <= Scalar(0)) {
        lifespan_bound = max_t;
    }
    if (lifespan_bound < max_t) {
        throw PreconditionError("curve set: lifespan bound " +
                                format_double(double(lifespan_bound)) +
                                " below the largest observed time " + format_double(double(max_t)));
    }
    return CurveSet<Scalar>{std::move(curves), lifespan_bound};
}

// ---------------------------------------------------------------------------
// Diagnostics (report-only; never mutates and never throws)
// ---------------------------------------------------------------------------

struct CurveViolation {
    std::string unit_id;   // empty for set-level findings
    Eigen::Index index;    // -1 when not tied to one observation
    std::string message;
    bool warning = false;  // true: coverage warnings; false: invariant breaks
};

struct CurveDiagnostics {
    std::vector<CurveViolation> violations;
    bool clean() const { return violations.empty(); }
};

template <typename Scalar>
CurveDiagnostics validate(const CurveSet<Scalar>& set, Scalar coverage_fraction = Scalar(0.05)) {
    CurveDiagnostics diag;
    auto add = [&](std::string unit, Eigen::Index idx, std::string msg, bool warn = false) {
        diag.violations.push_back({std::move(unit), idx, std::move(msg), warn});
    };
    if (!(set.lifespan_bound > Scalar(0))) {
        add("", -1, "lifespan bound must be positive");
        return diag;
    }
    std::vector<Scalar> pooled;
    for (const auto& c : set.curves) {
        if (c.size() == 0) {
            add(c.unit_id, -1, "curve has no observations");
            continue;
        }
        if (c.times.size() != c.values.size()) {
            add(c.unit_id, -1, "times/values length mismatch");
            continue;
        }
        for (Eigen::Index j = 0; j < c.size(); ++j) {
            if (!std::isfinite(double(c.times[j]))) {
                add(c.unit_id, j, "non-finite time");
            } else if (c.times[j] < Scalar(0) || c.times[j] > set.lifespan_bound) {
                add(c.unit_id, j, "time outside [0, M]");
            }
            if (!std::isfinite(double(c.values[j]))) {
                add(c.unit_id, j, "non-finite value");
            }
            if (j > 0 && !(c.times[j] > c.times[j - 1])) {
                add(c.unit_id, j, "times not strictly increasing");
            }
            pooled.push_back(c.times[j]);
        }
    }
    if (pooled.empty()) {
        add("", -1, "no observations in the set");
        return diag;
    }
    std::sort(pooled.begin(), pooled.end());
    Scalar max_gap = pooled.front();  // gap from 0
    Scalar gap_at = Scalar(0);
    for (std::size_t i = 1; i < pooled.size(); ++i) {
        if (pooled[i] - pooled[i - 1] > max_gap) {
            max_gap = pooled[i] - pooled[i - 1];
            gap_at = pooled[i - 1];
        }
    }
    if (set.lifespan_bound - pooled.back() > max_gap) {
        max_gap = set.lifespan_bound - pooled.back();
        gap_at = pooled.back();
    }
    if (max_gap >= coverage_fraction * set.lifespan_bound) {
        add("", -1,
            "pooled time points leave a gap of " + format_double(double(max_gap)) + " after t=" +
                format_double(double(gap_at)) + " (limit " +
                format_double(double(coverage_fraction * set.lifespan_bound)) + ")",
            /*warn=*/true);
    }
    return diag;
}

// ---------------------------------------------------------------------------
// Dense-data sample estimators
// ---------------------------------------------------------------------------

template <typename Scalar>
struct DenseMoments {
    GridFunction<Scalar> mean;
    CovarianceSurface<Scalar> covariance;  // unbiased (N-1), exactly symmetric
};

// Recover each complete curve on the grid with the shared local-linear
// smoother, then take the pointwise sample mean and the unbiased sample
// covariance. `recovery_bandwidth` <= 0 selects twice each curve's largest
// observation gap.
template <typename Scalar>
DenseMoments<Scalar> dense_mean_cov(const CurveSet<Scalar>& set, Eigen::Index grid_size = 101,
                                    Scalar recovery_bandwidth = Scalar(0),
                                    Kernel kernel = Kernel::epanechnikov) {
    const Eigen::Index n = static_cast<Eigen::Index>(set.size());
    if (n < 2) {
        throw InsufficientDataError("dense_mean_cov: need at least 2 curves, got " +
                                    std::to_string(n));
    }
    for (const auto& c : set.curves) {
        if (!c.complete) {
            throw PreconditionError("dense_mean_cov: curve " + c.unit_id +
                                    " is not flagged complete");
        }
    }
    const Scalar m = set.lifespan_bound;
    auto mean = make_grid_function(m, grid_size);
    VectorX<Scalar> targets(grid_size);
    for (Eigen::Index k = 0; k < grid_size; ++k) {
        targets[k] = mean.time_at(k);
    }

    MatrixX<Scalar> recovered(n, grid_size);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& c = set.curves[i];
        Scalar h = recovery_bandwidth;
        if (h <= Scalar(0)) {
            Scalar max_gap = std::max(c.times[0], m - c.last_time());
            for (Eigen::Index j = 1; j < c.size(); ++j) {
                max_gap = std::max(max_gap, c.times[j] - c.times[j - 1]);
            }
            h = Scalar(2) * max_gap;
        }
        recovered.row(i) =
            detail::local_linear_1d<Scalar>(c.times, c.values, targets, h, kernel).values;
    }

    mean.values = recovered.colwise().mean();
    MatrixX<Scalar> centered = recovered.rowwise() - mean.values.transpose();
    CovarianceSurface<Scalar> cov{m, (centered.transpose() * centered) / Scalar(n - 1)};
    cov.values = ((cov.values + cov.values.transpose()) / Scalar(2)).eval();
    return {std::move(mean), std::move(cov)};
}

}  // namespace hiforecast
