#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>

#include "hiforecast/common.hpp"

namespace hiforecast {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// A function sampled on the uniform grid {k * M / (G-1), k = 0..G-1} ⊂ [0, M].
template <typename Scalar>
struct GridFunction {
    Scalar lifespan = Scalar(1);  // M
    VectorX<Scalar> values;       // one value per grid node

    Eigen::Index size() const { return values.size(); }
    Scalar step() const { return lifespan / Scalar(values.size() - 1); }
    Scalar time_at(Eigen::Index k) const {
        return k + 1 == values.size() ? lifespan : Scalar(k) * step();
    }
};

using GridFunctiond = GridFunction<double>;

template <typename Scalar>
GridFunction<Scalar> make_grid_function(Scalar lifespan, Eigen::Index size) {
    if (!(lifespan > Scalar(0)) || size < 2) {
        throw PreconditionError("grid requires lifespan > 0 and at least 2 nodes");
    }
    return GridFunction<Scalar>{lifespan, VectorX<Scalar>::Zero(size)};
}

// Piecewise-linear evaluation, exact at grid nodes.
template <typename Scalar>
Scalar interpolate(const GridFunction<Scalar>& f, Scalar t) {
    if (!(t >= Scalar(0)) || !(t <= f.lifespan)) {
        throw PreconditionError("interpolate: time " + format_double(double(t)) +
                                " outside [0, " + format_double(double(f.lifespan)) + "]");
    }
    const Eigen::Index g = f.size();
    const Scalar dt = f.step();
    const Eigen::Index nearest =
        std::min<Eigen::Index>(g - 1, static_cast<Eigen::Index>(std::llround(t / dt)));
    if (f.time_at(nearest) == t) {
        return f.values[nearest];
    }
    Eigen::Index k = std::min<Eigen::Index>(g - 2, static_cast<Eigen::Index>(t / dt));
    const Scalar x0 = f.time_at(k);
    const Scalar x1 = f.time_at(k + 1);
    const Scalar a = (t - x0) / (x1 - x0);
    return f.values[k] + a * (f.values[k + 1] - f.values[k]);
}

// Trapezoid quadrature over [0, M] of grid samples.
template <typename Scalar, typename Derived>
Scalar trapezoid(const Eigen::MatrixBase<Derived>& values, Scalar step) {
    const Eigen::Index n = values.size();
    return step * (values.sum() - (values[0] + values[n - 1]) / Scalar(2));
}

template <typename Scalar>
Scalar trapezoid(const GridFunction<Scalar>& f) {
    return trapezoid<Scalar>(f.values, f.step());
}

// Trapezoid node weights: M/(G-1) interior, half at the boundaries.
template <typename Scalar>
VectorX<Scalar> trapezoid_weights(Scalar lifespan, Eigen::Index size) {
    const Scalar dt = lifespan / Scalar(size - 1);
    VectorX<Scalar> w = VectorX<Scalar>::Constant(size, dt);
    w[0] = dt / Scalar(2);
    w[size - 1] = dt / Scalar(2);
    return w;
}

// Symmetric covariance surface on the same uniform grid (G x G values).
template <typename Scalar>
struct CovarianceSurface {
    Scalar lifespan = Scalar(1);
    MatrixX<Scalar> values;

    Eigen::Index size() const { return values.rows(); }
    Scalar step() const { return lifespan / Scalar(values.rows() - 1); }
    Scalar time_at(Eigen::Index k) const {
        return k + 1 == values.rows() ? lifespan : Scalar(k) * step();
    }
};

using CovarianceSurfaced = CovarianceSurface<double>;

// Bilinear evaluation of the surface.
template <typename Scalar>
Scalar interpolate(const CovarianceSurface<Scalar>& s, Scalar t1, Scalar t2) {
    if (!(t1 >= Scalar(0)) || !(t1 <= s.lifespan) || !(t2 >= Scalar(0)) || !(t2 <= s.lifespan)) {
        throw PreconditionError("interpolate: point outside the covariance domain");
    }
    const Eigen::Index g = s.size();
    const Scalar dt = s.step();
    const auto cell = [&](Scalar t) {
        return std::min<Eigen::Index>(g - 2, static_cast<Eigen::Index>(t / dt));
    };
    const Eigen::Index i = cell(t1);
    const Eigen::Index j = cell(t2);
    const Scalar a = (t1 - s.time_at(i)) / (s.time_at(i + 1) - s.time_at(i));
    const Scalar b = (t2 - s.time_at(j)) / (s.time_at(j + 1) - s.time_at(j));
    return (Scalar(1) - a) * ((Scalar(1) - b) * s.values(i, j) + b * s.values(i, j + 1)) +
           a * ((Scalar(1) - b) * s.values(i + 1, j) + b * s.values(i + 1, j + 1));
}

}  // namespace hiforecast
