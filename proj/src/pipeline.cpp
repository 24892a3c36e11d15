#include "hiforecast/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "hiforecast/baselines.hpp"
#include "hiforecast/common.hpp"
#include "hiforecast/dataprep.hpp"
#include "hiforecast/eval.hpp"
#include "hiforecast/fpca.hpp"
#include "hiforecast/generator.hpp"
#include "hiforecast/io.hpp"
#include "hiforecast/rul.hpp"

namespace hiforecast::pipeline {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// One run per workspace at a time.
class WorkspaceLock {
public:
    explicit WorkspaceLock(const fs::path& workspace) : path_(workspace / ".lock") {
        fs::create_directories(workspace);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            throw Error("workspace " + workspace.string() +
                        " is locked by another run (remove " + path_.string() +
                        " if that run crashed)");
        }
    }
    WorkspaceLock(const WorkspaceLock&) = delete;
    WorkspaceLock& operator=(const WorkspaceLock&) = delete;
    ~WorkspaceLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
        }
    }

private:
    fs::path path_;
    int fd_ = -1;
};

void append_log(const PipelineConfig& cfg, const std::string& message) {
    std::ofstream log(cfg.workspace / "hiforecast.log", std::ios::app);
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    log << stamp << " " << message << "\n";
}

void write_snapshot(const PipelineConfig& cfg) {
    io::write_text_file(cfg.workspace / "resolved_config.json", cfg.resolved_json);
}

std::string config_hash(const PipelineConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(cfg.resolved_json)));
    return buf;
}

fs::path signal_csv(const PipelineConfig& cfg, int signal, const char* part) {
    return cfg.workspace / "signals" /
           ("signal_" + std::to_string(signal) + "_" + part + ".csv");
}

fs::path model_path(const PipelineConfig& cfg, int signal) {
    return cfg.workspace / "models" / ("signal_" + std::to_string(signal) + "_model.json");
}

struct ManifestUnit {
    std::string id;
    double lifetime = 0.0;
    std::string role;  // train | test
    int stratum = 0;
    double ratio = 0.0;      // test only
    Eigen::Index observed = 0;  // test only
};

struct Manifest {
    double lifespan = 0.0;
    std::vector<SignalSelection> signals;
    std::vector<ManifestUnit> units;
    std::string source;
};

void save_manifest(const PipelineConfig& cfg, const Manifest& m) {
    json j;
    j["lifespan_bound"] = m.lifespan;
    j["source"] = m.source;
    j["seeds"] = {{"split", cfg.split.seed},
                  {"truncation", cfg.truncation.seed},
                  {"master", cfg.master_seed}};
    json signals = json::array();
    for (const auto& s : m.signals) {
        signals.push_back({{"id", s.sensor}, {"z_score", s.z_score}, {"sign", s.sign}});
    }
    j["signals"] = signals;
    json units = json::array();
    for (const auto& u : m.units) {
        json entry = {{"id", u.id},
                      {"lifetime", u.lifetime},
                      {"role", u.role},
                      {"stratum", u.stratum}};
        if (u.role == "test") {
            entry["ratio"] = u.ratio;
            entry["observed"] = u.observed;
        }
        units.push_back(entry);
    }
    j["units"] = units;
    io::write_text_file(cfg.workspace / "manifest.json", j.dump(2) + "\n");
}

Manifest load_manifest(const PipelineConfig& cfg) {
    const fs::path path = cfg.workspace / "manifest.json";
    if (!fs::exists(path)) {
        throw ConfigError("no manifest at " + path.string() + "; run prep or synth first");
    }
    json j;
    try {
        j = json::parse(io::read_text_file(path));
        Manifest m;
        m.lifespan = j.at("lifespan_bound").get<double>();
        m.source = j.value("source", "");
        for (const auto& s : j.at("signals")) {
            m.signals.push_back({s.at("id").get<int>(), s.at("z_score").get<double>(),
                                 s.at("sign").get<int>()});
        }
        for (const auto& u : j.at("units")) {
            ManifestUnit mu;
            mu.id = u.at("id").get<std::string>();
            mu.lifetime = u.at("lifetime").get<double>();
            mu.role = u.at("role").get<std::string>();
            mu.stratum = u.at("stratum").get<int>();
            mu.ratio = u.value("ratio", 0.0);
            mu.observed = u.value("observed", 0);
            m.units.push_back(std::move(mu));
        }
        return m;
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void save_normalization_map(const PipelineConfig& cfg, const NormalizationMap& map) {
    json j;
    switch (map.mode) {
        case NormalizationMap::Mode::none:
            j["mode"] = "none";
            break;
        case NormalizationMap::Mode::ols:
            j["mode"] = "ols";
            break;
        case NormalizationMap::Mode::cluster:
            j["mode"] = "cluster";
            break;
    }
    j["sensors"] = map.sensors;
    if (map.mode == NormalizationMap::Mode::ols) {
        json coeffs = json::array();
        for (const auto& b : map.ols_coefficients) {
            coeffs.push_back({b[0], b[1], b[2], b[3]});
        }
        j["coefficients"] = coeffs;
    }
    if (map.mode == NormalizationMap::Mode::cluster) {
        j["setting_center"] = map.setting_center;
        j["setting_scale"] = map.setting_scale;
        j["centroids"] = map.centroids;
        j["cluster_sensor_means"] = map.cluster_sensor_means;
    }
    j["warnings"] = map.warnings;
    io::write_text_file(cfg.workspace / "normalization_map.json", j.dump(2) + "\n");
}

std::vector<int> target_signals(const PipelineConfig& cfg, const Manifest& manifest,
                                std::optional<int> signal) {
    std::vector<int> ids;
    for (const auto& s : manifest.signals) {
        ids.push_back(s.sensor);
    }
    if (!signal) {
        return ids;
    }
    if (std::find(ids.begin(), ids.end(), *signal) == ids.end()) {
        throw ConfigError("signal " + std::to_string(*signal) +
                          " is not in the workspace manifest");
    }
    return {*signal};
}

CurveSetd load_signal(const PipelineConfig& cfg, int signal, const char* part, double lifespan) {
    const fs::path path = signal_csv(cfg, signal, part);
    if (!fs::exists(path)) {
        throw ConfigError("missing " + path.string() + "; run prep or synth first");
    }
    return io::load_curve_csv(path, lifespan);
}

std::vector<Method> target_methods(const PipelineConfig& cfg, std::optional<Method> method) {
    if (method) {
        return {*method};
    }
    return cfg.methods;
}

// Shared manifest assembly for prep and synth.
Manifest build_manifest(const PipelineConfig& cfg, const CurveSetd& all,
                        const SplitAssignment& assign,
                        const std::vector<double>& test_ratios,
                        const std::vector<Eigen::Index>& test_observed, double lifespan,
                        const std::vector<SignalSelection>& signals, const std::string& source) {
    Manifest m;
    m.lifespan = lifespan;
    m.signals = signals;
    m.source = source;
    std::vector<std::size_t> role(all.size(), 0);  // 0 train, 1.. -> test position+1
    for (std::size_t k = 0; k < assign.test_indices.size(); ++k) {
        role[assign.test_indices[k]] = k + 1;
    }
    for (std::size_t i = 0; i < all.size(); ++i) {
        ManifestUnit u;
        u.id = all.curves[i].unit_id;
        u.lifetime = all.curves[i].last_time();
        u.stratum = assign.stratum[i];
        if (role[i] == 0) {
            u.role = "train";
        } else {
            u.role = "test";
            u.ratio = test_ratios[role[i] - 1];
            u.observed = test_observed[role[i] - 1];
        }
        m.units.push_back(std::move(u));
    }
    return m;
}

}  // namespace

std::vector<int> manifest_signals(const PipelineConfig& cfg) {
    const Manifest m = load_manifest(cfg);
    std::vector<int> ids;
    for (const auto& s : m.signals) {
        ids.push_back(s.sensor);
    }
    return ids;
}

void run_synth(const PipelineConfig& cfg) {
    if (!cfg.synth) {
        throw ConfigError("synth: the configuration has no \"synth\" block");
    }
    WorkspaceLock lock(cfg.workspace);
    write_snapshot(cfg);
    const SynthConfig& sc = *cfg.synth;

    SynthSpec<double> spec;
    spec.lifespan = sc.lifespan;
    spec.units = sc.units;
    spec.noise_sd = sc.noise_sd;
    spec.points_min = sc.points_min;
    spec.points_max = sc.points_max;
    spec.regular = sc.regular;
    spec.seed = sc.seed;
    spec.grid_size = cfg.grid_size;
    spec.mean = [&sc](double t) { return sc.mean(t, sc.lifespan); };
    for (const auto& [lambda, poly] : sc.components) {
        const PolySpec p = poly;
        spec.components.emplace_back(lambda,
                                     [p, &sc](double t) { return p(t, sc.lifespan); });
    }
    const auto fleet = synth_fleet(spec);

    std::vector<double> lifetimes;
    for (const auto& c : fleet.set.curves) {
        lifetimes.push_back(c.last_time());
    }
    const auto assign = split_assignment(lifetimes, cfg.split);
    CurveSetd train{{}, fleet.set.lifespan_bound}, test{{}, fleet.set.lifespan_bound};
    for (std::size_t i : assign.train_indices) {
        train.curves.push_back(fleet.set.curves[i]);
    }
    for (std::size_t i : assign.test_indices) {
        test.curves.push_back(fleet.set.curves[i]);
    }
    const auto truncated = stratified_truncate(test, cfg.truncation);

    const int signal = 0;
    io::save_curve_csv(signal_csv(cfg, signal, "train"), train);
    io::save_curve_csv(signal_csv(cfg, signal, "test_observed"), truncated.observations);
    io::save_curve_csv(signal_csv(cfg, signal, "test_full"), truncated.ground_truth);
    io::save_model_json(cfg.workspace / "models" / "signal_0_true_model.json", fleet.model);

    std::vector<Eigen::Index> observed;
    for (const auto& c : truncated.observations.curves) {
        observed.push_back(c.size());
    }
    const Manifest manifest =
        build_manifest(cfg, fleet.set, assign, truncated.ratios, observed,
                       fleet.set.lifespan_bound, {{signal, 0.0, 1}}, "synthetic");
    save_manifest(cfg, manifest);
    append_log(cfg, "synth: " + std::to_string(train.size()) + " train / " +
                        std::to_string(test.size()) + " test units, config " + config_hash(cfg));
}

void run_prep(const PipelineConfig& cfg) {
    if (cfg.raw_data.empty()) {
        throw ConfigError("prep: the configuration has no \"raw_data\" path");
    }
    WorkspaceLock lock(cfg.workspace);
    write_snapshot(cfg);

    const RawFleetTable table = parse_fleet(cfg.raw_data);

    std::vector<double> lifetimes;
    for (std::size_t u = 0; u < table.unit_count(); ++u) {
        lifetimes.push_back(static_cast<double>(table.unit_rows(u)));
    }
    const auto assign = split_assignment(lifetimes, cfg.split);
    std::vector<bool> is_train(table.unit_count(), false);
    for (std::size_t i : assign.train_indices) {
        is_train[i] = true;
    }

    RawFleetTable train_table;
    for (std::size_t u = 0; u < table.unit_count(); ++u) {
        if (is_train[u]) {
            for (std::size_t j = 0; j < table.unit_rows(u); ++j) {
                train_table.rows.push_back(table.rows[table.unit_begin[u] + j]);
            }
        }
    }
    index_fleet(train_table);

    // The settings -> sensor map is fitted on training units only and then
    // applied to the whole fleet.
    std::vector<int> norm_sensors = cfg.signal_select;
    if (norm_sensors.empty()) {
        for (int s = 1; s <= 21; ++s) {
            norm_sensors.push_back(s);
        }
    }
    const NormalizationMap norm =
        fit_normalization(train_table, norm_sensors, cfg.normalization_mode, cfg.max_clusters);
    save_normalization_map(cfg, norm);
    for (const auto& w : norm.warnings) {
        append_log(cfg, "prep: " + w);
    }
    const RawFleetTable normalized = apply_normalization(norm, table);
    RawFleetTable normalized_train = apply_normalization(norm, train_table);

    std::vector<SignalSelection> signals;
    if (cfg.signal_select.empty()) {
        signals = select_degradation_signals(normalized_train, cfg.z_threshold);
        if (signals.empty()) {
            throw InsufficientDataError(
                "prep: no sensor passed the degradation-signal rule; lower z_threshold or list "
                "signals explicitly");
        }
    } else {
        const auto all = select_degradation_signals(normalized_train, 0.0);
        for (int id : cfg.signal_select) {
            const auto it = std::find_if(all.begin(), all.end(),
                                         [id](const SignalSelection& s) { return s.sensor == id; });
            if (it == all.end()) {
                throw ConfigError("prep: signal id " + std::to_string(id) + " is not a sensor");
            }
            signals.push_back(*it);
        }
    }

    // M: the longest training lifetime (forecasts beyond it are flagged).
    double lifespan = 0.0;
    for (std::size_t i : assign.train_indices) {
        lifespan = std::max(lifespan, lifetimes[i]);
    }

    std::vector<double> test_lifetimes;
    for (std::size_t i : assign.test_indices) {
        test_lifetimes.push_back(lifetimes[i]);
    }
    const auto ratios = truncation_ratios(test_lifetimes, cfg.truncation);

    std::vector<Eigen::Index> observed;
    bool first_signal = true;
    for (const auto& sel : signals) {
        const CurveSetd all = fleet_signal_curves<double>(normalized, sel.sensor, sel.sign);
        CurveSetd train{{}, lifespan};
        CurveSetd test{{}, all.lifespan_bound};
        for (std::size_t i : assign.train_indices) {
            train.curves.push_back(all.curves[i]);
        }
        for (std::size_t i : assign.test_indices) {
            test.curves.push_back(all.curves[i]);
        }
        CurveSetd obs{{}, test.lifespan_bound};
        for (std::size_t k = 0; k < test.curves.size(); ++k) {
            const auto& c = test.curves[k];
            Eigen::Index keep = static_cast<Eigen::Index>(
                std::ceil(ratios[k] * static_cast<double>(c.size())));
            keep = std::clamp<Eigen::Index>(keep, 1, c.size() - 1);
            SampledCurved prefix;
            prefix.unit_id = c.unit_id;
            prefix.times = c.times.head(keep);
            prefix.values = c.values.head(keep);
            obs.curves.push_back(std::move(prefix));
            if (first_signal) {
                observed.push_back(keep);
            }
        }
        first_signal = false;
        io::save_curve_csv(signal_csv(cfg, sel.sensor, "train"), train);
        io::save_curve_csv(signal_csv(cfg, sel.sensor, "test_observed"), obs);
        io::save_curve_csv(signal_csv(cfg, sel.sensor, "test_full"), test);
    }

    CurveSetd fleet_for_manifest{{}, 0.0};
    {
        // lifetimes and ids only; values are irrelevant for the manifest
        const CurveSetd first = fleet_signal_curves<double>(normalized, signals.front().sensor,
                                                            signals.front().sign);
        fleet_for_manifest = first;
    }
    const Manifest manifest =
        build_manifest(cfg, fleet_for_manifest, assign, ratios, observed, lifespan, signals,
                       cfg.raw_data.filename().string());
    save_manifest(cfg, manifest);
    append_log(cfg, "prep: " + std::to_string(assign.train_indices.size()) + " train / " +
                        std::to_string(assign.test_indices.size()) + " test units, " +
                        std::to_string(signals.size()) + " signals, config " + config_hash(cfg));
}

void run_fit(const PipelineConfig& cfg, std::optional<int> signal) {
    WorkspaceLock lock(cfg.workspace);
    write_snapshot(cfg);
    const Manifest manifest = load_manifest(cfg);
    for (int id : target_signals(cfg, manifest, signal)) {
        const CurveSetd train = load_signal(cfg, id, "train", manifest.lifespan);
        SmootherWarnings warnings;
        const FpcaModeld model = fit(train, cfg.smoother, cfg.fve_threshold, &warnings);
        const double defect = orthonormality_defect(model);
        if (defect > 1e-6) {
            throw NumericalError("fit: eigenfunctions for signal " + std::to_string(id) +
                                 " are not orthonormal (defect " + format_double(defect) + ")");
        }
        io::save_model_json(model_path(cfg, id), model);
        for (const auto& w : warnings.messages) {
            append_log(cfg, "fit signal " + std::to_string(id) + ": " + w);
        }
        append_log(cfg, "fit signal " + std::to_string(id) + ": rank " +
                            std::to_string(model.rank()) + ", fve " + format_double(model.fve) +
                            ", config " + config_hash(cfg));
    }
}

void run_forecast(const PipelineConfig& cfg, std::optional<int> signal,
                  std::optional<Method> method, const std::string& unit, bool all_units,
                  bool dump_scenarios) {
    WorkspaceLock lock(cfg.workspace);
    write_snapshot(cfg);
    const Manifest manifest = load_manifest(cfg);
    for (int id : target_signals(cfg, manifest, signal)) {
        const fs::path mpath = model_path(cfg, id);
        if (!fs::exists(mpath)) {
            throw ConfigError("missing model " + mpath.string() + "; run fit first");
        }
        const FpcaModeld model = io::load_model_json(mpath);
        const CurveSetd train = load_signal(cfg, id, "train", manifest.lifespan);
        const CurveSetd obs_set = load_signal(cfg, id, "test_observed", 0.0);

        std::vector<std::size_t> unit_rows;
        if (all_units || unit.empty()) {
            for (std::size_t i = 0; i < obs_set.size(); ++i) {
                unit_rows.push_back(i);
            }
        } else {
            const auto it = std::find_if(
                obs_set.curves.begin(), obs_set.curves.end(),
                [&unit](const SampledCurved& c) { return c.unit_id == unit; });
            if (it == obs_set.curves.end()) {
                throw ConfigError("unit '" + unit + "' is not in the test set of signal " +
                                  std::to_string(id));
            }
            unit_rows.push_back(static_cast<std::size_t>(it - obs_set.curves.begin()));
        }

        const auto methods = target_methods(cfg, method);
        ScenarioSetd scenarios;
        bool have_scenarios = false;
        std::optional<LinearWindowModel<double>> window;
        std::string window_failure;
        for (Method m : methods) {
            if (m == Method::proposed && !have_scenarios) {
                scenarios = generate(model, cfg.scenario_count, cfg.master_seed);
                have_scenarios = true;
                if (dump_scenarios) {
                    io::save_scenarios_csv(cfg.workspace / "scenarios" /
                                               ("signal_" + std::to_string(id) + "_scenarios.csv"),
                                           scenarios);
                    io::save_scenario_scores_csv(
                        cfg.workspace / "scenarios" /
                            ("signal_" + std::to_string(id) + "_scores.csv"),
                        scenarios);
                }
            }
            if (m == Method::rg_linear && !window) {
                try {
                    window = sliding_window_fit(train, cfg.sliding_window, model.grid_size());
                } catch (const Error& e) {
                    window_failure = e.what();
                }
            }
        }

        for (Method m : methods) {
            const fs::path dir =
                cfg.workspace / "forecasts" / ("signal_" + std::to_string(id)) / method_name(m);
            std::string failures = "unit_id,reason\n";
            std::size_t ok = 0;
            for (std::size_t row : unit_rows) {
                const SampledCurved& obs = obs_set.curves[row];
                try {
                    Forecastd fc;
                    switch (m) {
                        case Method::proposed:
                            fc = select_forecast(scenarios, obs);
                            break;
                        case Method::nn:
                            fc = nn_forecast(train, obs, model.grid_size());
                            break;
                        case Method::nn_s:
                            fc = smooth_forecast(nn_forecast(train, obs, model.grid_size()), obs,
                                                 cfg.smoother.kernel_1d);
                            break;
                        case Method::rg_linear:
                            if (!window) {
                                throw InsufficientDataError(window_failure);
                            }
                            fc = sliding_window_extrapolate(*window, obs, model.lifespan(),
                                                            model.grid_size());
                            break;
                        case Method::gp_posterior:
                            fc = gp_posterior_forecast(model, obs);
                            break;
                    }
                    io::save_forecast(dir / ("unit_" + obs.unit_id + ".csv"),
                                      dir / ("unit_" + obs.unit_id + ".json"), fc, obs.unit_id);
                    ++ok;
                } catch (const Error& e) {
                    std::string reason = e.what();
                    std::replace(reason.begin(), reason.end(), ',', ';');
                    std::replace(reason.begin(), reason.end(), '\n', ' ');
                    failures += obs.unit_id + "," + reason + "\n";
                }
            }
            io::write_text_file(dir / "failures.csv", failures);
            append_log(cfg, "forecast signal " + std::to_string(id) + " " + method_name(m) +
                                ": " + std::to_string(ok) + "/" +
                                std::to_string(unit_rows.size()) + " units, config " +
                                config_hash(cfg));
            if (ok == 0) {
                throw Error(std::string("forecast: method ") + method_name(m) +
                            " failed for every requested unit of signal " + std::to_string(id));
            }
        }
    }
}

void run_rul(const PipelineConfig& cfg, std::optional<int> signal, std::optional<Method> method) {
    WorkspaceLock lock(cfg.workspace);
    write_snapshot(cfg);
    const Manifest manifest = load_manifest(cfg);
    for (int id : target_signals(cfg, manifest, signal)) {
        const double theta = theta_for_signal(cfg, id);
        const CurveSetd obs_set = load_signal(cfg, id, "test_observed", 0.0);
        const CurveSetd full_set = load_signal(cfg, id, "test_full", 0.0);
        for (Method m : target_methods(cfg, method)) {
            const fs::path dir =
                cfg.workspace / "forecasts" / ("signal_" + std::to_string(id)) / method_name(m);
            std::string out = "unit_id,method,theta,t_star,rul_true,rul_pred,censored\n";
            std::string failures = "unit_id,reason\n";
            std::size_t rows = 0;
            for (std::size_t i = 0; i < obs_set.size(); ++i) {
                const auto& obs = obs_set.curves[i];
                const auto& truth = full_set.curves[i];
                const fs::path csv = dir / ("unit_" + obs.unit_id + ".csv");
                if (!fs::exists(csv)) {
                    failures += obs.unit_id + ",no forecast file (see failures.csv)\n";
                    continue;
                }
                try {
                    const Forecastd fc =
                        io::load_forecast(csv, dir / ("unit_" + obs.unit_id + ".json"));
                    const RulEstimated pred = estimate_rul(fc, theta);
                    const RulEstimated tru =
                        true_rul(truth, theta, obs.last_time(), manifest.lifespan);
                    out += obs.unit_id;
                    out += ",";
                    out += method_name(m);
                    out += ",";
                    out += format_double(theta);
                    out += ",";
                    out += format_double(pred.last_obs_time);
                    out += ",";
                    out += format_double(tru.value);
                    out += ",";
                    out += format_double(pred.value);
                    out += ",";
                    out += (pred.censored || tru.censored) ? "true" : "false";
                    out += "\n";
                    ++rows;
                } catch (const Error& e) {
                    std::string reason = e.what();
                    std::replace(reason.begin(), reason.end(), ',', ';');
                    std::replace(reason.begin(), reason.end(), '\n', ' ');
                    failures += obs.unit_id + "," + reason + "\n";
                }
            }
            const fs::path out_dir = cfg.workspace / "rul";
            io::write_text_file(
                out_dir / ("signal_" + std::to_string(id) + "_" + method_name(m) + ".csv"), out);
            io::write_text_file(out_dir / ("signal_" + std::to_string(id) + "_" +
                                           method_name(m) + "_failures.csv"),
                                failures);
            append_log(cfg, "rul signal " + std::to_string(id) + " " + method_name(m) + ": " +
                                std::to_string(rows) + " units, config " + config_hash(cfg));
        }
    }
}

void run_eval(const PipelineConfig& cfg, bool literal_eq15) {
    WorkspaceLock lock(cfg.workspace);
    write_snapshot(cfg);
    const Manifest manifest = load_manifest(cfg);

    json report;
    report["provenance"] = {{"master_seed", cfg.master_seed},
                            {"scenarios", cfg.scenario_count},
                            {"split_seed", cfg.split.seed},
                            {"truncation_seed", cfg.truncation.seed},
                            {"config_hash", config_hash(cfg)},
                            {"literal_eq15", literal_eq15}};
    json signals = json::array();

    // Tables II/III-shaped CSVs: one row per method, one column per signal.
    std::vector<int> ids;
    for (const auto& s : manifest.signals) {
        ids.push_back(s.sensor);
    }
    std::map<std::string, std::map<int, std::string>> ext_cells, rul_cells;
    std::map<int, std::string> imp_ext_cells, imp_rul_cells;

    for (int id : ids) {
        const double theta = theta_for_signal(cfg, id);
        const CurveSetd train = load_signal(cfg, id, "train", manifest.lifespan);
        const CurveSetd obs_set = load_signal(cfg, id, "test_observed", 0.0);
        const CurveSetd full_set = load_signal(cfg, id, "test_full", 0.0);

        ComparisonConfig<double> cc;
        cc.methods = cfg.methods;
        cc.theta = theta;
        cc.scenario_count = cfg.scenario_count;
        cc.master_seed = cfg.master_seed;
        cc.smoother = cfg.smoother;
        cc.fve_threshold = cfg.fve_threshold;
        cc.sliding_window = cfg.sliding_window;
        cc.censor_policy = cfg.censor_policy;
        cc.take_root = !literal_eq15;

        std::optional<FpcaModeld> fitted;
        if (fs::exists(model_path(cfg, id))) {
            fitted = io::load_model_json(model_path(cfg, id));
        }
        const auto result =
            run_comparison(train, obs_set, full_set, cc, fitted ? &*fitted : nullptr);

        json sig;
        sig["id"] = id;
        sig["theta"] = theta;
        sig["true_rul_censored"] = result.true_rul_censored;
        json methods = json::array();
        for (const auto& mr : result.methods) {
            json entry;
            entry["method"] = method_name(mr.method);
            entry["n_test"] = mr.n_test;
            entry["n_forecast_failed"] = mr.n_forecast_failed;
            entry["n_rul_failed"] = mr.n_rul_failed;
            entry["censored"] = mr.censored;
            entry["beyond_horizon_points"] = mr.beyond_horizon_points;
            entry["rmse_ext"] = mr.rmse_ext ? json(*mr.rmse_ext) : json(nullptr);
            entry["rmse_rul"] = mr.rmse_rul ? json(*mr.rmse_rul) : json(nullptr);
            entry["failures"] = mr.failures;
            methods.push_back(entry);
            ext_cells[method_name(mr.method)][id] =
                mr.rmse_ext ? format_double(*mr.rmse_ext) : "n/a";
            rul_cells[method_name(mr.method)][id] =
                mr.rmse_rul ? format_double(*mr.rmse_rul) : "n/a";
        }
        sig["methods"] = methods;
        sig["improvement_ext"] =
            result.improvement_ext ? json(*result.improvement_ext) : json(nullptr);
        sig["improvement_rul"] =
            result.improvement_rul ? json(*result.improvement_rul) : json(nullptr);
        signals.push_back(sig);
        imp_ext_cells[id] =
            result.improvement_ext ? format_double(*result.improvement_ext) : "n/a";
        imp_rul_cells[id] =
            result.improvement_rul ? format_double(*result.improvement_rul) : "n/a";

        // plot-ready per-unit residuals over the held-out span
        std::string residuals = "unit_id,method,time,truth,forecast,residual\n";
        for (const auto& uf : result.unit_forecasts) {
            const auto it = std::find_if(
                full_set.curves.begin(), full_set.curves.end(),
                [&uf](const SampledCurved& c) { return c.unit_id == uf.unit_id; });
            const auto obs_it = std::find_if(
                obs_set.curves.begin(), obs_set.curves.end(),
                [&uf](const SampledCurved& c) { return c.unit_id == uf.unit_id; });
            const Eigen::Index m_star = obs_it->size();
            for (Eigen::Index jx = m_star - 1; jx < it->size(); ++jx) {
                const double t = it->times[jx];
                const double fv = interpolate(uf.curve, std::min(t, uf.curve.lifespan));
                residuals += uf.unit_id;
                residuals += ",";
                residuals += method_name(uf.method);
                residuals += ",";
                residuals += format_double(t);
                residuals += ",";
                residuals += format_double(it->values[jx]);
                residuals += ",";
                residuals += format_double(fv);
                residuals += ",";
                residuals += format_double(fv - it->values[jx]);
                residuals += "\n";
            }
        }
        io::write_text_file(
            cfg.workspace / "eval" / ("residuals_signal_" + std::to_string(id) + ".csv"),
            residuals);
        append_log(cfg, "eval signal " + std::to_string(id) + " done, config " + config_hash(cfg));
    }

    report["signals"] = signals;
    io::write_text_file(cfg.workspace / "eval" / "report.json", report.dump(2) + "\n");

    const auto write_table = [&](const char* name,
                                 std::map<std::string, std::map<int, std::string>>& cells,
                                 std::map<int, std::string>& imp) {
        std::string csv = "model";
        for (int id : ids) {
            csv += ",signal_" + std::to_string(id);
        }
        csv += "\n";
        for (Method m : cfg.methods) {
            csv += method_name(m);
            for (int id : ids) {
                csv += "," + cells[method_name(m)][id];
            }
            csv += "\n";
        }
        csv += "imp";
        for (int id : ids) {
            csv += "," + imp[id];
        }
        csv += "\n";
        io::write_text_file(cfg.workspace / "eval" / name, csv);
    };
    write_table("ext.csv", ext_cells, imp_ext_cells);
    write_table("rul.csv", rul_cells, imp_rul_cells);
}

}  // namespace hiforecast::pipeline
