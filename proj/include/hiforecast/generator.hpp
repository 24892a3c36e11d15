#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "hiforecast/common.hpp"
#include "hiforecast/fpca.hpp"
#include "hiforecast/grid.hpp"
#include "hiforecast/rng.hpp"

namespace hiforecast {

// W candidate lifespan curves drawn from the fitted prior.
template <typename Scalar>
struct ScenarioSet {
    MatrixX<Scalar> curves;  // W x G, row i = mean + sum_r scores(i, r) phi_r
    MatrixX<Scalar> scores;  // W x P
    std::uint64_t master_seed = 0;
    Scalar lifespan = Scalar(1);

    Eigen::Index count() const { return curves.rows(); }

    GridFunction<Scalar> curve(Eigen::Index i) const {
        return GridFunction<Scalar>{lifespan, curves.row(i).transpose()};
    }
};

using ScenarioSetd = ScenarioSet<double>;

// Draws scenario i from a sub-stream derived from (master_seed, i), so the
// set is reproducible for any generation order and W = w' extends W = w
// (w' > w) without changing the first w curves.
template <typename Scalar>
ScenarioSet<Scalar> generate(const FpcaModel<Scalar>& model, Eigen::Index w,
                             std::uint64_t master_seed) {
    if (w < 1) {
        throw PreconditionError("generate: need at least one scenario, got " + std::to_string(w));
    }
    const Eigen::Index p = model.rank();
    const Eigen::Index g = model.grid_size();

    ScenarioSet<Scalar> out;
    out.master_seed = master_seed;
    out.lifespan = model.lifespan();
    out.scores.resize(w, p);
    out.curves.resize(w, g);

    VectorX<Scalar> sd(p);
    for (Eigen::Index r = 0; r < p; ++r) {
        sd[r] = std::sqrt(double(model.eigenvalues[r]));
    }
    for (Eigen::Index i = 0; i < w; ++i) {
        rng::Engine eng(rng::derive_seed(master_seed, static_cast<std::uint64_t>(i)));
        for (Eigen::Index r = 0; r < p; ++r) {
            out.scores(i, r) = sd[r] * Scalar(eng.normal());
        }
        out.curves.row(i) = model.mean.values.transpose() +
                            out.scores.row(i) * model.eigenfunctions;
    }
    return out;
}

}  // namespace hiforecast
