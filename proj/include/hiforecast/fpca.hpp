#pragma once

#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>
#include <vector>

#include "hiforecast/common.hpp"
#include "hiforecast/curves.hpp"
#include "hiforecast/grid.hpp"
#include "hiforecast/smoothing.hpp"

namespace hiforecast {

template <typename Scalar>
struct EigenPair {
    Scalar value;
    GridFunction<Scalar> function;  // unit L2 norm under trapezoid quadrature
};

// Fitted prior for the underlying health-indicator process.
template <typename Scalar>
struct FpcaModel {
    GridFunction<Scalar> mean;
    VectorX<Scalar> eigenvalues;        // descending, strictly positive
    MatrixX<Scalar> eigenfunctions;     // P x G, quadrature-orthonormal rows
    Scalar noise_variance = Scalar(0);
    Scalar fve = Scalar(1);             // fraction of variance explained by P
    // provenance
    Scalar bandwidth_mean = Scalar(0);
    Scalar bandwidth_cov = Scalar(0);
    Scalar fve_threshold = Scalar(1);

    Eigen::Index rank() const { return eigenvalues.size(); }
    Eigen::Index grid_size() const { return mean.size(); }
    Scalar lifespan() const { return mean.lifespan; }

    GridFunction<Scalar> eigenfunction(Eigen::Index r) const {
        return GridFunction<Scalar>{mean.lifespan, eigenfunctions.row(r).transpose()};
    }
};

using FpcaModeld = FpcaModel<double>;

// Solves the integral eigen-equation on the grid: with W the diagonal of
// trapezoid weights, the symmetric problem W^{1/2} G W^{1/2} v = lambda v is
// solved and eigenvectors are mapped back through W^{-1/2}, normalized to
// unit L2 norm. Non-positive eigenvalues (smoothing artifacts) are dropped.
// Sign convention: the trapezoid integral of each eigenfunction is >= 0,
// with the value at t = 0 breaking ties.
template <typename Scalar>
std::vector<EigenPair<Scalar>> eigendecompose(const CovarianceSurface<Scalar>& cov) {
    const Eigen::Index g = cov.size();
    const Scalar scale = cov.values.cwiseAbs().maxCoeff();
    const Scalar asym = (cov.values - cov.values.transpose()).cwiseAbs().maxCoeff();
    if (asym > Scalar(1e-12) * std::max(scale, Scalar(1))) {
        throw PreconditionError("eigendecompose: covariance surface is not symmetric");
    }

    const VectorX<Scalar> w = trapezoid_weights(cov.lifespan, g);
    const VectorX<Scalar> ws = w.cwiseSqrt();
    MatrixX<Scalar> a = ws.asDiagonal() * cov.values * ws.asDiagonal();
    a = ((a + a.transpose()) / Scalar(2)).eval();

    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> solver(a);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("eigendecompose: eigensolver failed to converge");
    }
    const auto& evals = solver.eigenvalues();    // ascending
    const auto& evecs = solver.eigenvectors();

    const Scalar lambda_max = evals[g - 1];
    std::vector<EigenPair<Scalar>> pairs;
    if (!(lambda_max > Scalar(0))) {
        return pairs;
    }
    const Scalar dt = cov.lifespan / Scalar(g - 1);
    for (Eigen::Index k = g - 1; k >= 0; --k) {
        const Scalar lambda = evals[k];
        if (!(lambda > Scalar(1e-12) * lambda_max)) {
            break;
        }
        VectorX<Scalar> phi = evecs.col(k).cwiseQuotient(ws);
        const Scalar norm = std::sqrt(double(trapezoid<Scalar>(phi.cwiseProduct(phi), dt)));
        phi /= norm;
        const Scalar integral = trapezoid<Scalar>(phi, dt);
        const bool flip = integral < -Scalar(1e-12) ||
                          (std::abs(double(integral)) <= 1e-12 && phi[0] < Scalar(0));
        if (flip) {
            phi = -phi;
        }
        pairs.push_back({lambda, GridFunction<Scalar>{cov.lifespan, std::move(phi)}});
    }
    return pairs;
}

// Smallest P whose leading eigenvalues reach the requested fraction of the
// total (positive) variance.
template <typename Scalar>
Eigen::Index select_truncation(const VectorX<Scalar>& eigenvalues, Scalar fve_threshold) {
    if (eigenvalues.size() == 0) {
        throw InsufficientDataError("select_truncation: empty eigenvalue list");
    }
    if (!(fve_threshold > Scalar(0)) || fve_threshold > Scalar(1)) {
        throw ConfigError("select_truncation: threshold must lie in (0, 1]");
    }
    Scalar total = 0;
    for (Eigen::Index r = 0; r < eigenvalues.size(); ++r) {
        if (eigenvalues[r] > Scalar(0)) {
            total += eigenvalues[r];
        }
    }
    if (!(total > Scalar(0))) {
        return 1;
    }
    Scalar cum = 0;
    for (Eigen::Index r = 0; r < eigenvalues.size(); ++r) {
        cum += std::max(Scalar(0), eigenvalues[r]);
        if (cum / total >= fve_threshold) {
            return r + 1;
        }
    }
    return eigenvalues.size();
}

// Full prior fit: mean, covariance, noise variance, eigenstructure, FVE
// truncation. Deterministic for a fixed input and configuration.
template <typename Scalar>
FpcaModel<Scalar> fit(const CurveSet<Scalar>& set, SmootherConfig<Scalar> cfg,
                      Scalar fve_threshold = Scalar(0.95),
                      SmootherWarnings* warnings = nullptr) {
    if (!cfg.bandwidth_mean) {
        cfg.bandwidth_mean = select_bandwidth(set, cfg, BandwidthTarget::mean);
    }
    if (!cfg.bandwidth_cov) {
        cfg.bandwidth_cov = select_bandwidth(set, cfg, BandwidthTarget::covariance);
    }

    FpcaModel<Scalar> model;
    model.mean = fit_mean(set, cfg, warnings);
    auto cov = fit_covariance(set, model.mean, cfg, warnings);
    model.noise_variance = estimate_noise_variance(set, model.mean, cov, *cfg.bandwidth_mean,
                                                   cfg.kernel_1d);
    model.bandwidth_mean = *cfg.bandwidth_mean;
    model.bandwidth_cov = *cfg.bandwidth_cov;
    model.fve_threshold = fve_threshold;

    const auto pairs = eigendecompose(cov);
    if (pairs.empty()) {
        model.eigenvalues.resize(0);
        model.eigenfunctions.resize(0, model.mean.size());
        model.fve = Scalar(1);  // a no-variance fleet explains itself
        if (warnings != nullptr) {
            warnings->messages.push_back(
                "fit: covariance surface has no positive eigenvalues; rank-0 model");
        }
        return model;
    }

    VectorX<Scalar> all(static_cast<Eigen::Index>(pairs.size()));
    for (std::size_t r = 0; r < pairs.size(); ++r) {
        all[static_cast<Eigen::Index>(r)] = pairs[r].value;
    }
    const Eigen::Index p = select_truncation(all, fve_threshold);
    model.eigenvalues = all.head(p);
    model.eigenfunctions.resize(p, model.mean.size());
    for (Eigen::Index r = 0; r < p; ++r) {
        model.eigenfunctions.row(r) = pairs[static_cast<std::size_t>(r)].function.values.transpose();
    }
    model.fve = model.eigenvalues.sum() / all.sum();
    return model;
}

// Max deviation of the trapezoid Gram matrix from identity; the model
// invariant requires this to stay within 1e-6.
template <typename Scalar>
Scalar orthonormality_defect(const FpcaModel<Scalar>& model) {
    const Eigen::Index p = model.rank();
    if (p == 0) {
        return Scalar(0);
    }
    const VectorX<Scalar> w = trapezoid_weights(model.mean.lifespan, model.grid_size());
    MatrixX<Scalar> gram =
        model.eigenfunctions * w.asDiagonal() * model.eigenfunctions.transpose();
    gram -= MatrixX<Scalar>::Identity(p, p);
    return gram.cwiseAbs().maxCoeff();
}

}  // namespace hiforecast
