#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "hiforecast/common.hpp"
#include "hiforecast/curves.hpp"
#include "hiforecast/fpca.hpp"
#include "hiforecast/grid.hpp"
#include "hiforecast/rng.hpp"

namespace hiforecast {

// ---------------------------------------------------------------------------
// Raw turbofan-style fleet table: unit, cycle, 3 settings, 21 sensors
// ---------------------------------------------------------------------------

struct FleetRow {
    int unit = 0;
    int cycle = 0;
    std::array<double, 3> settings{};
    std::array<double, 21> sensors{};
};

struct RawFleetTable {
    std::vector<FleetRow> rows;     // sorted by unit appearance, then cycle
    std::vector<int> unit_ids;      // first-appearance order
    std::vector<std::size_t> unit_begin;  // row offset per unit, + end sentinel

    std::size_t unit_count() const { return unit_ids.size(); }
    std::size_t unit_rows(std::size_t u) const { return unit_begin[u + 1] - unit_begin[u]; }
};

// Orders rows, indexes units, and enforces the contiguous-cycle invariant.
// Throws ParseError when cycles per unit do not run 1..m.
void index_fleet(RawFleetTable& table);

// Space-separated 26-column text file, one row per (unit, cycle).
RawFleetTable parse_fleet(const std::filesystem::path& path);

struct SignalSelection {
    int sensor = 0;      // 1-based sensor id
    double z_score = 0;  // end-of-life drift over pooled residual sd
    int sign = 1;        // -1 flips increasing sensors so the signal decreases
};

// Sensors whose end-of-life level drifts from the initial level by at least
// z_threshold pooled residual standard deviations.
std::vector<SignalSelection> select_degradation_signals(const RawFleetTable& table,
                                                        double z_threshold = 2.0);

// ---------------------------------------------------------------------------
// Operating-condition normalization
// ---------------------------------------------------------------------------

struct NormalizationMap {
    enum class Mode { none, ols, cluster };
    Mode mode = Mode::none;
    std::vector<int> sensors;  // 1-based ids the map covers
    // ols: per covered sensor, intercept + one coefficient per setting
    std::vector<std::array<double, 4>> ols_coefficients;
    // cluster: centroids in normalized setting space, per-cluster sensor means
    std::array<double, 3> setting_center{};
    std::array<double, 3> setting_scale{1.0, 1.0, 1.0};
    std::vector<std::array<double, 3>> centroids;
    std::vector<std::vector<double>> cluster_sensor_means;  // [cluster][sensor idx]
    std::vector<std::string> warnings;
};

// Fits the settings -> sensor map on training rows only. The map is meant to
// be persisted and reapplied; it is never refit on test data.
NormalizationMap fit_normalization(const RawFleetTable& train, const std::vector<int>& sensors,
                                   NormalizationMap::Mode mode, int max_clusters = 6);

// Deducts the would-be sensor value from each covered sensor reading.
RawFleetTable apply_normalization(const NormalizationMap& map, RawFleetTable table);

// Oriented health-indicator curves (times are cycles) for one sensor.
template <typename Scalar>
CurveSet<Scalar> fleet_signal_curves(const RawFleetTable& table, int sensor, int sign,
                                     Scalar lifespan_bound = Scalar(0)) {
    if (sensor < 1 || sensor > 21) {
        throw ConfigError("fleet_signal_curves: sensor id must be in 1..21");
    }
    std::vector<SampledCurve<Scalar>> curves;
    curves.reserve(table.unit_count());
    for (std::size_t u = 0; u < table.unit_count(); ++u) {
        SampledCurve<Scalar> c;
        c.unit_id = std::to_string(table.unit_ids[u]);
        const std::size_t n = table.unit_rows(u);
        c.times.resize(static_cast<Eigen::Index>(n));
        c.values.resize(static_cast<Eigen::Index>(n));
        for (std::size_t j = 0; j < n; ++j) {
            const FleetRow& row = table.rows[table.unit_begin[u] + j];
            c.times[static_cast<Eigen::Index>(j)] = Scalar(row.cycle);
            c.values[static_cast<Eigen::Index>(j)] =
                Scalar(sign) * Scalar(row.sensors[static_cast<std::size_t>(sensor - 1)]);
        }
        c.complete = detect_complete(c);
        curves.push_back(std::move(c));
    }
    return make_curve_set(std::move(curves), lifespan_bound);
}

// ---------------------------------------------------------------------------
// Stratified split / truncation
// ---------------------------------------------------------------------------

struct SplitSpec {
    double train_fraction = 0.7;
    int n_strata = 5;
    std::uint64_t seed = 0;
};

struct TruncationSpec {
    double percentile_cut = 0.8;
    std::array<double, 2> low_range{0.2, 0.97};   // below the lifetime percentile
    std::array<double, 2> high_range{0.6, 0.97};  // at or above it
    std::uint64_t seed = 0;
};

namespace detail {

// Nearest-rank percentile of a sample.
template <typename Scalar>
Scalar nearest_rank_percentile(std::vector<Scalar> values, double p) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
    rank = std::min(std::max<std::size_t>(rank, 1), n);
    return values[rank - 1];
}

}  // namespace detail

struct SplitAssignment {
    std::vector<std::size_t> train_indices;  // ascending positions in the input
    std::vector<std::size_t> test_indices;
    std::vector<int> stratum;  // per input position
};

// Quintile-style lifetime strata (ties fall to the lower stratum), simple
// random sampling within each stratum. Pure function of (lifetimes, spec).
template <typename Scalar>
SplitAssignment split_assignment(const std::vector<Scalar>& lifetimes, const SplitSpec& spec) {
    const std::size_t n = lifetimes.size();
    if (spec.n_strata < 1) {
        throw ConfigError("split: n_strata must be >= 1");
    }
    if (!(spec.train_fraction > 0.0) || !(spec.train_fraction < 1.0)) {
        throw ConfigError("split: train fraction must lie in (0, 1)");
    }
    if (n < static_cast<std::size_t>(spec.n_strata)) {
        throw InsufficientDataError("split: fewer units (" + std::to_string(n) +
                                    ") than strata (" + std::to_string(spec.n_strata) + ")");
    }
    std::vector<Scalar> cutoffs;
    for (int k = 1; k < spec.n_strata; ++k) {
        cutoffs.push_back(detail::nearest_rank_percentile(
            lifetimes, static_cast<double>(k) / spec.n_strata));
    }
    SplitAssignment out;
    out.stratum.resize(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        int s = 0;
        for (Scalar c : cutoffs) {
            if (c < lifetimes[i]) {
                ++s;
            }
        }
        out.stratum[i] = s;
    }
    for (int s = 0; s < spec.n_strata; ++s) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < n; ++i) {
            if (out.stratum[i] == s) {
                members.push_back(i);
            }
        }
        if (members.empty()) {
            continue;
        }
        rng::Engine eng(rng::derive_seed(spec.seed, static_cast<std::uint64_t>(s)));
        rng::shuffle(members, eng);
        const std::size_t n_train = static_cast<std::size_t>(
            std::llround(spec.train_fraction * static_cast<double>(members.size())));
        for (std::size_t k = 0; k < members.size(); ++k) {
            (k < n_train ? out.train_indices : out.test_indices).push_back(members[k]);
        }
    }
    std::sort(out.train_indices.begin(), out.train_indices.end());
    std::sort(out.test_indices.begin(), out.test_indices.end());
    return out;
}

template <typename Scalar>
std::pair<CurveSet<Scalar>, CurveSet<Scalar>> stratified_split(const CurveSet<Scalar>& set,
                                                               const SplitSpec& spec) {
    std::vector<Scalar> lifetimes;
    lifetimes.reserve(set.size());
    for (const auto& c : set.curves) {
        lifetimes.push_back(c.last_time());
    }
    const auto assign = split_assignment(lifetimes, spec);
    CurveSet<Scalar> train{{}, set.lifespan_bound}, test{{}, set.lifespan_bound};
    for (std::size_t i : assign.train_indices) {
        train.curves.push_back(set.curves[i]);
    }
    for (std::size_t i : assign.test_indices) {
        test.curves.push_back(set.curves[i]);
    }
    return {std::move(train), std::move(test)};
}

// Observation ratios r_i: units with lifetime strictly below the percentile
// cut draw from low_range, the rest from high_range. Stream i depends only on
// (seed, i), independent of the split seed.
template <typename Scalar>
std::vector<Scalar> truncation_ratios(const std::vector<Scalar>& lifetimes,
                                      const TruncationSpec& spec) {
    if (lifetimes.empty()) {
        throw PreconditionError("truncation: empty test set");
    }
    const Scalar cut = detail::nearest_rank_percentile(lifetimes, spec.percentile_cut);
    std::vector<Scalar> r(lifetimes.size());
    for (std::size_t i = 0; i < lifetimes.size(); ++i) {
        rng::Engine eng(rng::derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
        const auto& range = lifetimes[i] < cut ? spec.low_range : spec.high_range;
        r[i] = Scalar(eng.uniform(range[0], range[1]));
    }
    return r;
}

template <typename Scalar>
struct TruncationResult {
    CurveSet<Scalar> observations;  // strict prefixes
    CurveSet<Scalar> ground_truth;  // the full curves
    std::vector<Scalar> ratios;
};

// Keeps the first ceil(r_i * m_i) observations of each unit, never all of
// them and never fewer than one.
template <typename Scalar>
TruncationResult<Scalar> stratified_truncate(const CurveSet<Scalar>& test,
                                             const TruncationSpec& spec) {
    std::vector<Scalar> lifetimes;
    for (const auto& c : test.curves) {
        if (c.size() < 2) {
            throw InsufficientDataError("truncation: unit " + c.unit_id +
                                        " has fewer than 2 observations");
        }
        lifetimes.push_back(c.last_time());
    }
    TruncationResult<Scalar> out;
    out.ratios = truncation_ratios(lifetimes, spec);
    out.ground_truth = test;
    out.observations.lifespan_bound = test.lifespan_bound;
    for (std::size_t i = 0; i < test.curves.size(); ++i) {
        const auto& c = test.curves[i];
        const Eigen::Index m = c.size();
        Eigen::Index keep = static_cast<Eigen::Index>(
            std::ceil(double(out.ratios[i]) * static_cast<double>(m)));
        keep = std::clamp<Eigen::Index>(keep, 1, m - 1);
        SampledCurve<Scalar> obs;
        obs.unit_id = c.unit_id;
        obs.times = c.times.head(keep);
        obs.values = c.values.head(keep);
        obs.complete = false;
        out.observations.curves.push_back(std::move(obs));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic fleet with a known generating model (the test oracle)
// ---------------------------------------------------------------------------

template <typename Scalar>
struct SynthSpec {
    Scalar lifespan = Scalar(1);
    int units = 100;
    Scalar noise_sd = Scalar(0);
    int points_min = 10;
    int points_max = 20;
    bool regular = false;  // regular: points_max equispaced samples on [0, M]
    std::uint64_t seed = 0;
    Eigen::Index grid_size = 101;
    std::function<Scalar(Scalar)> mean;
    std::vector<std::pair<Scalar, std::function<Scalar(Scalar)>>> components;  // (lambda, phi)
};

template <typename Scalar>
struct SynthFleet {
    CurveSet<Scalar> set;
    FpcaModel<Scalar> model;   // the exact generating model, on the grid
    MatrixX<Scalar> scores;    // N x P drawn component scores
};

// Draws N curves mean + sum_r xi_r phi_r + noise at the requested sampling
// density. The supplied component functions are re-orthonormalized under
// trapezoid quadrature on the grid, and curves are generated from the grid
// carriers, so the returned model is exactly the data-generating one.
template <typename Scalar>
SynthFleet<Scalar> synth_fleet(const SynthSpec<Scalar>& spec) {
    if (!(spec.lifespan > Scalar(0)) || spec.units < 1 || spec.grid_size < 2) {
        throw ConfigError("synth_fleet: need lifespan > 0, units >= 1, grid_size >= 2");
    }
    if (!spec.mean) {
        throw ConfigError("synth_fleet: mean function not set");
    }
    if (spec.points_min < 1 || spec.points_max < spec.points_min) {
        throw ConfigError("synth_fleet: invalid sampling density");
    }
    const Scalar m = spec.lifespan;
    const Eigen::Index g = spec.grid_size;
    const Eigen::Index p = static_cast<Eigen::Index>(spec.components.size());

    SynthFleet<Scalar> out;
    out.model.mean = make_grid_function(m, g);
    for (Eigen::Index k = 0; k < g; ++k) {
        out.model.mean.values[k] = spec.mean(out.model.mean.time_at(k));
    }
    const VectorX<Scalar> w = trapezoid_weights(m, g);
    out.model.eigenfunctions.resize(p, g);
    out.model.eigenvalues.resize(p);
    for (Eigen::Index r = 0; r < p; ++r) {
        if (!(spec.components[static_cast<std::size_t>(r)].first > Scalar(0))) {
            throw ConfigError("synth_fleet: component variances must be positive");
        }
        out.model.eigenvalues[r] = spec.components[static_cast<std::size_t>(r)].first;
        VectorX<Scalar> phi(g);
        for (Eigen::Index k = 0; k < g; ++k) {
            phi[k] = spec.components[static_cast<std::size_t>(r)].second(out.model.mean.time_at(k));
        }
        // modified Gram-Schmidt in the trapezoid inner product
        for (Eigen::Index s = 0; s < r; ++s) {
            const Scalar proj =
                (out.model.eigenfunctions.row(s).transpose().cwiseProduct(w).cwiseProduct(phi))
                    .sum();
            phi -= proj * out.model.eigenfunctions.row(s).transpose();
        }
        const Scalar norm = std::sqrt(double(phi.cwiseProduct(w).cwiseProduct(phi).sum()));
        if (!(norm > Scalar(1e-12))) {
            throw ConfigError("synth_fleet: component " + std::to_string(r) +
                              " is linearly dependent on earlier ones");
        }
        phi /= norm;
        const Scalar integral = phi.dot(w);
        if (integral < -Scalar(1e-12) ||
            (std::abs(double(integral)) <= 1e-12 && phi[0] < Scalar(0))) {
            phi = -phi;
        }
        out.model.eigenfunctions.row(r) = phi.transpose();
    }
    out.model.noise_variance = spec.noise_sd * spec.noise_sd;
    out.model.fve = Scalar(1);
    out.model.fve_threshold = Scalar(1);

    out.scores.resize(spec.units, p);
    std::vector<SampledCurve<Scalar>> curves;
    curves.reserve(static_cast<std::size_t>(spec.units));
    for (int i = 0; i < spec.units; ++i) {
        rng::Engine eng(rng::derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
        const int count =
            spec.regular ? spec.points_max
                         : spec.points_min +
                               static_cast<int>(eng.below(static_cast<std::uint64_t>(
                                   spec.points_max - spec.points_min + 1)));
        for (Eigen::Index r = 0; r < p; ++r) {
            out.scores(i, r) =
                std::sqrt(double(out.model.eigenvalues[r])) * Scalar(eng.normal());
        }
        SampledCurve<Scalar> c;
        c.unit_id = std::to_string(i + 1);
        c.times.resize(count);
        if (spec.regular) {
            for (int j = 0; j < count; ++j) {
                c.times[j] = count == 1 ? Scalar(0) : m * Scalar(j) / Scalar(count - 1);
            }
        } else {
            std::vector<Scalar> t(static_cast<std::size_t>(count));
            bool distinct = false;
            while (!distinct) {
                for (auto& x : t) {
                    x = Scalar(eng.uniform(0.0, double(m)));
                }
                std::sort(t.begin(), t.end());
                distinct = std::adjacent_find(t.begin(), t.end()) == t.end();
            }
            for (int j = 0; j < count; ++j) {
                c.times[j] = t[static_cast<std::size_t>(j)];
            }
        }
        c.values.resize(count);
        for (int j = 0; j < count; ++j) {
            Scalar v = interpolate(out.model.mean, c.times[j]);
            for (Eigen::Index r = 0; r < p; ++r) {
                v += out.scores(i, r) *
                     interpolate(out.model.eigenfunction(r), c.times[j]);
            }
            if (spec.noise_sd > Scalar(0)) {
                v += spec.noise_sd * Scalar(eng.normal());
            }
            c.values[j] = v;
        }
        c.complete = spec.regular;
        curves.push_back(std::move(c));
    }
    out.set = make_curve_set(std::move(curves), m);
    return out;
}

}  // namespace hiforecast
