#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hiforecast/baselines.hpp"
#include "hiforecast/common.hpp"
#include "hiforecast/curves.hpp"
#include "hiforecast/fpca.hpp"
#include "hiforecast/generator.hpp"
#include "hiforecast/grid.hpp"
#include "hiforecast/matcher.hpp"
#include "hiforecast/rul.hpp"

namespace hiforecast {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Pooled RMSE over the unobserved part of each test curve, starting at the
// last observed index, so each unit contributes m_i - m_i* + 1 residuals.
// Forecast curves are held at their final value past the lifespan bound;
// `beyond_horizon` counts such clamped evaluations.
template <typename Scalar>
Scalar rmse_ext(const std::vector<GridFunction<Scalar>>& forecasts,
                const std::vector<SampledCurve<Scalar>>& truths,
                const std::vector<Eigen::Index>& observed_counts,
                Eigen::Index* beyond_horizon = nullptr) {
    if (forecasts.size() != truths.size() || truths.size() != observed_counts.size()) {
        throw PreconditionError("rmse_ext: forecasts, truths and counts must align");
    }
    Scalar sse = 0;
    Eigen::Index n = 0;
    Eigen::Index clamped = 0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        const auto& truth = truths[i];
        const auto& curve = forecasts[i];
        const Eigen::Index m_star = observed_counts[i];
        if (m_star < 1 || m_star > truth.size()) {
            throw PreconditionError("rmse_ext: observed count out of range for unit " +
                                    truth.unit_id);
        }
        for (Eigen::Index j = m_star - 1; j < truth.size(); ++j) {
            Scalar t = truth.times[j];
            if (t > curve.lifespan) {
                t = curve.lifespan;
                ++clamped;
            }
            const Scalar d = interpolate(curve, t) - truth.values[j];
            sse += d * d;
            ++n;
        }
    }
    if (n == 0) {
        throw InsufficientDataError("rmse_ext: no held-out points");
    }
    if (beyond_horizon != nullptr) {
        *beyond_horizon = clamped;
    }
    return std::sqrt(double(sse / Scalar(n)));
}

enum class CensorPolicy {
    exclude,  // drop pairs where either estimate is censored (count reported)
    cap       // keep them at their capped M - t* values
};

template <typename Scalar>
struct RulAccuracy {
    Scalar value = Scalar(0);
    Eigen::Index used = 0;
    Eigen::Index censored = 0;
};

// Root mean squared RUL error over the test units. `take_root = false`
// reports the plain mean of squared errors instead.
template <typename Scalar>
RulAccuracy<Scalar> rmse_rul(const std::vector<RulEstimate<Scalar>>& truth,
                             const std::vector<RulEstimate<Scalar>>& pred,
                             CensorPolicy policy = CensorPolicy::exclude, bool take_root = true) {
    if (truth.size() != pred.size()) {
        throw PreconditionError("rmse_rul: length mismatch");
    }
    RulAccuracy<Scalar> out;
    Scalar sse = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool censored = truth[i].censored || pred[i].censored;
        if (censored) {
            ++out.censored;
            if (policy == CensorPolicy::exclude) {
                continue;
            }
        }
        const Scalar d = truth[i].value - pred[i].value;
        sse += d * d;
        ++out.used;
    }
    if (out.used == 0) {
        throw InsufficientDataError("rmse_rul: no usable pairs (" + std::to_string(out.censored) +
                                    " censored, policy excludes them)");
    }
    const Scalar mean = sse / Scalar(out.used);
    out.value = take_root ? Scalar(std::sqrt(double(mean))) : mean;
    return out;
}

// 1 - metric(candidate) / metric(best baseline).
template <typename Scalar>
Scalar improvement(Scalar metric_proposed, Scalar metric_best_baseline) {
    if (!(metric_best_baseline > Scalar(0))) {
        throw Error("improvement: undefined for a non-positive baseline metric");
    }
    return Scalar(1) - metric_proposed / metric_best_baseline;
}

// ---------------------------------------------------------------------------
// Full method comparison over one signal's test fleet
// ---------------------------------------------------------------------------

template <typename Scalar>
struct ComparisonConfig {
    std::vector<Method> methods{Method::proposed, Method::nn, Method::nn_s, Method::rg_linear,
                                Method::gp_posterior};
    Scalar theta = Scalar(0);
    Eigen::Index scenario_count = 1000;
    std::uint64_t master_seed = 0;
    SmootherConfig<Scalar> smoother;
    Scalar fve_threshold = Scalar(0.95);
    SlidingWindowConfig sliding_window;
    CensorPolicy censor_policy = CensorPolicy::exclude;
    bool take_root = true;
};

template <typename Scalar>
struct MethodReport {
    Method method = Method::proposed;
    std::optional<Scalar> rmse_ext;
    std::optional<Scalar> rmse_rul;
    Eigen::Index n_test = 0;
    Eigen::Index n_forecast_failed = 0;
    Eigen::Index n_rul_failed = 0;
    Eigen::Index censored = 0;
    Eigen::Index beyond_horizon_points = 0;
    std::vector<std::string> failures;  // "unit id: reason"
};

template <typename Scalar>
struct UnitForecast {
    Method method = Method::proposed;
    std::string unit_id;
    GridFunction<Scalar> curve;
};

template <typename Scalar>
struct ComparisonReport {
    std::vector<MethodReport<Scalar>> methods;
    std::optional<Scalar> improvement_ext;
    std::optional<Scalar> improvement_rul;
    FpcaModel<Scalar> model;
    Eigen::Index true_rul_censored = 0;
    std::vector<UnitForecast<Scalar>> unit_forecasts;  // every successful forecast
};

// Runs every requested method over the test fleet and assembles the pooled
// metrics. Per-unit failures are recorded, not fatal; a fixed configuration
// reproduces the report bit for bit.
template <typename Scalar>
ComparisonReport<Scalar> run_comparison(const CurveSet<Scalar>& train,
                                        const CurveSet<Scalar>& test_obs,
                                        const CurveSet<Scalar>& test_truth,
                                        const ComparisonConfig<Scalar>& cfg,
                                        const FpcaModel<Scalar>* fitted = nullptr) {
    if (test_obs.size() != test_truth.size()) {
        throw PreconditionError("run_comparison: observation/truth fleets must align");
    }
    const std::size_t n = test_obs.size();
    ComparisonReport<Scalar> report;

    bool needs_model = false;
    bool needs_scenarios = false;
    bool needs_window = false;
    for (Method m : cfg.methods) {
        needs_model |= m == Method::proposed || m == Method::gp_posterior;
        needs_scenarios |= m == Method::proposed;
        needs_window |= m == Method::rg_linear;
    }
    if (fitted != nullptr) {
        report.model = *fitted;
    } else if (needs_model) {
        report.model = fit(train, cfg.smoother, cfg.fve_threshold);
    } else {
        report.model.mean = fit_mean(train, cfg.smoother);
        report.model.eigenfunctions.resize(0, report.model.mean.size());
    }
    const Scalar lifespan = report.model.lifespan();
    const Eigen::Index grid_size = report.model.grid_size();

    ScenarioSet<Scalar> scenarios;
    if (needs_scenarios) {
        scenarios = generate(report.model, cfg.scenario_count, cfg.master_seed);
    }
    std::optional<LinearWindowModel<Scalar>> window;
    std::string window_failure;
    if (needs_window) {
        try {
            window = sliding_window_fit(train, cfg.sliding_window, grid_size);
        } catch (const Error& e) {
            window_failure = e.what();
        }
    }

    // Ground-truth remaining life per unit, shared by all methods.
    std::vector<std::optional<RulEstimate<Scalar>>> truth_rul(n);
    for (std::size_t i = 0; i < n; ++i) {
        try {
            truth_rul[i] = true_rul(test_truth.curves[i], cfg.theta,
                                    test_obs.curves[i].last_time(), lifespan);
            if (truth_rul[i]->censored) {
                ++report.true_rul_censored;
            }
        } catch (const Error&) {
            truth_rul[i] = std::nullopt;  // already failed at t*; excluded everywhere
        }
    }

    for (Method method : cfg.methods) {
        MethodReport<Scalar> mr;
        mr.method = method;
        mr.n_test = static_cast<Eigen::Index>(n);
        std::vector<GridFunction<Scalar>> curves;
        std::vector<SampledCurve<Scalar>> truths;
        std::vector<Eigen::Index> counts;
        std::vector<RulEstimate<Scalar>> rul_true_list, rul_pred_list;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& obs = test_obs.curves[i];
            Forecast<Scalar> fc;
            try {
                switch (method) {
                    case Method::proposed:
                        fc = select_forecast(scenarios, obs);
                        break;
                    case Method::nn:
                        fc = nn_forecast(train, obs, grid_size);
                        break;
                    case Method::nn_s:
                        fc = smooth_forecast(nn_forecast(train, obs, grid_size), obs,
                                             cfg.smoother.kernel_1d);
                        break;
                    case Method::rg_linear:
                        if (!window) {
                            throw InsufficientDataError(window_failure);
                        }
                        fc = sliding_window_extrapolate(*window, obs, lifespan, grid_size);
                        break;
                    case Method::gp_posterior:
                        fc = gp_posterior_forecast(report.model, obs);
                        break;
                }
            } catch (const Error& e) {
                ++mr.n_forecast_failed;
                mr.failures.push_back(obs.unit_id + ": " + e.what());
                continue;
            }
            curves.push_back(fc.curve);
            truths.push_back(test_truth.curves[i]);
            counts.push_back(obs.size());
            if (truth_rul[i]) {
                try {
                    rul_pred_list.push_back(estimate_rul(fc, cfg.theta));
                    rul_true_list.push_back(*truth_rul[i]);
                } catch (const Error& e) {
                    ++mr.n_rul_failed;
                    mr.failures.push_back(obs.unit_id + " (rul): " + e.what());
                }
            }
        }
        if (!curves.empty()) {
            mr.rmse_ext = rmse_ext(curves, truths, counts, &mr.beyond_horizon_points);
        }
        if (!rul_true_list.empty()) {
            try {
                const auto acc =
                    rmse_rul(rul_true_list, rul_pred_list, cfg.censor_policy, cfg.take_root);
                mr.rmse_rul = acc.value;
                mr.censored = acc.censored;
            } catch (const InsufficientDataError&) {
                mr.censored = static_cast<Eigen::Index>(rul_true_list.size());
            }
        }
        report.methods.push_back(std::move(mr));
    }

    // Improvement of the proposed method over the best baseline, per metric.
    const MethodReport<Scalar>* proposed = nullptr;
    std::optional<Scalar> best_ext, best_rul;
    for (const auto& mr : report.methods) {
        if (mr.method == Method::proposed) {
            proposed = &mr;
            continue;
        }
        if (mr.rmse_ext && (!best_ext || *mr.rmse_ext < *best_ext)) {
            best_ext = mr.rmse_ext;
        }
        if (mr.rmse_rul && (!best_rul || *mr.rmse_rul < *best_rul)) {
            best_rul = mr.rmse_rul;
        }
    }
    if (proposed != nullptr) {
        if (proposed->rmse_ext && best_ext) {
            report.improvement_ext = improvement(*proposed->rmse_ext, *best_ext);
        }
        if (proposed->rmse_rul && best_rul) {
            report.improvement_rul = improvement(*proposed->rmse_rul, *best_rul);
        }
    }
    return report;
}

}  // namespace hiforecast
