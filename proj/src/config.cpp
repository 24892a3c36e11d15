#include "hiforecast/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hiforecast/common.hpp"

namespace hiforecast {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& what) {
    throw ConfigError("config: " + what);
}

double require_positive(double v, const char* name) {
    if (!(v > 0.0)) {
        fail(std::string(name) + " must be positive");
    }
    return v;
}

Kernel parse_kernel(const std::string& name) {
    if (name == "epanechnikov") {
        return Kernel::epanechnikov;
    }
    if (name == "uniform") {
        return Kernel::uniform;
    }
    fail("unknown kernel '" + name + "' (valid: epanechnikov, uniform)");
}

std::optional<double> parse_bandwidth(const json& j, const char* key) {
    if (!j.contains(key)) {
        return std::nullopt;
    }
    if (j.at(key).is_string()) {
        if (j.at(key).get<std::string>() == "auto") {
            return std::nullopt;
        }
        fail(std::string(key) + " must be a positive number or \"auto\"");
    }
    return require_positive(j.at(key).get<double>(), key);
}

PolySpec parse_poly(const json& j, const char* what) {
    if (!j.is_array() || j.empty()) {
        fail(std::string(what) + " must be a non-empty coefficient array");
    }
    PolySpec p;
    for (const auto& c : j) {
        p.coefficients.push_back(c.get<double>());
    }
    return p;
}

}  // namespace

Method parse_method(const std::string& name) {
    for (Method m : {Method::proposed, Method::nn, Method::nn_s, Method::rg_linear,
                     Method::gp_posterior}) {
        if (name == method_name(m)) {
            return m;
        }
    }
    throw ConfigError("unknown method '" + name +
                      "' (valid: proposed, nn, nn-s, rg-linear, gp-posterior)");
}

double theta_for_signal(const PipelineConfig& cfg, int signal) {
    const auto it = cfg.theta.find(signal);
    if (it == cfg.theta.end()) {
        throw ConfigError("config: no failure threshold for signal " + std::to_string(signal) +
                          "; add it under \"theta\"");
    }
    return it->second;
}

PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    PipelineConfig cfg;
    try {
        if (!j.contains("workspace")) {
            fail("missing required key 'workspace'");
        }
        cfg.workspace = base / j.at("workspace").get<std::string>();
        if (j.contains("raw_data")) {
            cfg.raw_data = base / j.at("raw_data").get<std::string>();
        }
        cfg.grid_size = j.value("grid_size", 101);
        if (cfg.grid_size < 3) {
            fail("grid_size must be >= 3");
        }
        cfg.fve_threshold = j.value("fve_threshold", 0.95);
        if (!(cfg.fve_threshold > 0.0) || cfg.fve_threshold > 1.0) {
            fail("fve_threshold must lie in (0, 1]");
        }
        cfg.scenario_count = j.value("scenarios", 1000);
        if (cfg.scenario_count < 1) {
            fail("scenarios must be >= 1");
        }
        if (!j.contains("master_seed")) {
            fail("missing required key 'master_seed' (runs never seed from the clock)");
        }
        cfg.master_seed = j.at("master_seed").get<std::uint64_t>();

        cfg.smoother.grid_size = cfg.grid_size;
        if (j.contains("smoother")) {
            const auto& s = j.at("smoother");
            cfg.smoother.kernel_1d = parse_kernel(s.value("kernel", "epanechnikov"));
            cfg.smoother.kernel_2d = cfg.smoother.kernel_1d;
            cfg.smoother.bandwidth_mean = parse_bandwidth(s, "bandwidth_mean");
            cfg.smoother.bandwidth_cov = parse_bandwidth(s, "bandwidth_cov");
            cfg.smoother.cv_folds = s.value("cv_folds", 5);
            if (cfg.smoother.cv_folds < 2) {
                fail("cv_folds must be >= 2");
            }
        }
        if (j.contains("split")) {
            const auto& s = j.at("split");
            cfg.split.train_fraction = s.value("train_fraction", 0.7);
            cfg.split.n_strata = s.value("n_strata", 5);
            cfg.split.seed = s.value("seed", std::uint64_t{0});
            if (!(cfg.split.train_fraction > 0.0) || !(cfg.split.train_fraction < 1.0)) {
                fail("split.train_fraction must lie in (0, 1)");
            }
            if (cfg.split.n_strata < 1) {
                fail("split.n_strata must be >= 1");
            }
        }
        if (j.contains("truncation")) {
            const auto& s = j.at("truncation");
            cfg.truncation.percentile_cut = s.value("percentile_cut", 0.8);
            cfg.truncation.seed = s.value("seed", std::uint64_t{0});
            auto parse_range = [&](const char* key, std::array<double, 2>& out) {
                if (!s.contains(key)) {
                    return;
                }
                const auto& r = s.at(key);
                if (!r.is_array() || r.size() != 2) {
                    fail(std::string("truncation.") + key + " must be [lo, hi]");
                }
                out = {r[0].get<double>(), r[1].get<double>()};
                if (!(out[0] > 0.0) || !(out[0] <= out[1]) || !(out[1] < 1.0)) {
                    fail(std::string("truncation.") + key + " must satisfy 0 < lo <= hi < 1");
                }
            };
            parse_range("low_range", cfg.truncation.low_range);
            parse_range("high_range", cfg.truncation.high_range);
            if (cfg.truncation.low_range[0] > cfg.truncation.high_range[0]) {
                fail("truncation.low_range must start at or below high_range");
            }
        }
        if (j.contains("signals")) {
            const auto& s = j.at("signals");
            cfg.z_threshold = s.value("z_threshold", 2.0);
            if (s.contains("select")) {
                for (const auto& id : s.at("select")) {
                    cfg.signal_select.push_back(id.get<int>());
                }
            }
        }
        if (j.contains("normalization")) {
            const auto& s = j.at("normalization");
            const std::string mode = s.value("mode", "none");
            if (mode == "none") {
                cfg.normalization_mode = NormalizationMap::Mode::none;
            } else if (mode == "ols") {
                cfg.normalization_mode = NormalizationMap::Mode::ols;
            } else if (mode == "cluster") {
                cfg.normalization_mode = NormalizationMap::Mode::cluster;
            } else {
                fail("normalization.mode must be none, ols or cluster");
            }
            cfg.max_clusters = s.value("max_clusters", 6);
            if (cfg.max_clusters < 1) {
                fail("normalization.max_clusters must be >= 1");
            }
        }
        if (j.contains("theta")) {
            for (const auto& [key, value] : j.at("theta").items()) {
                int id = 0;
                try {
                    id = std::stoi(key);
                } catch (const std::exception&) {
                    fail("theta keys must be signal ids, got '" + key + "'");
                }
                cfg.theta[id] = value.get<double>();
            }
        }
        if (j.contains("methods")) {
            cfg.methods.clear();
            for (const auto& name : j.at("methods")) {
                cfg.methods.push_back(parse_method(name.get<std::string>()));
            }
            if (cfg.methods.empty()) {
                fail("methods must not be empty");
            }
        }
        if (j.contains("sliding_window")) {
            const auto& s = j.at("sliding_window");
            cfg.sliding_window.window_in = s.value("window_in", 30);
            cfg.sliding_window.window_out = s.value("window_out", 1);
            cfg.sliding_window.step = s.value("step", 0.0);
            if (cfg.sliding_window.window_in < 1 || cfg.sliding_window.window_out < 1) {
                fail("sliding_window sizes must be >= 1");
            }
        }
        if (j.contains("censored")) {
            const std::string policy = j.at("censored").get<std::string>();
            if (policy == "exclude") {
                cfg.censor_policy = CensorPolicy::exclude;
            } else if (policy == "cap") {
                cfg.censor_policy = CensorPolicy::cap;
            } else {
                fail("censored must be 'exclude' or 'cap'");
            }
        }
        if (j.contains("synth")) {
            const auto& s = j.at("synth");
            SynthConfig sc;
            sc.lifespan = require_positive(s.value("lifespan", 1.0), "synth.lifespan");
            sc.units = s.value("units", 120);
            sc.noise_sd = s.value("noise_sd", 0.05);
            sc.points_min = s.value("points_min", 15);
            sc.points_max = s.value("points_max", 25);
            sc.regular = s.value("regular", false);
            sc.seed = s.value("seed", std::uint64_t{7});
            if (sc.units < 2 || sc.points_min < 1 || sc.points_max < sc.points_min ||
                sc.noise_sd < 0.0) {
                fail("invalid synth block");
            }
            sc.mean = parse_poly(s.at("mean_poly"), "synth.mean_poly");
            if (s.contains("components")) {
                for (const auto& comp : s.at("components")) {
                    sc.components.emplace_back(
                        require_positive(comp.at("lambda").get<double>(),
                                         "synth component lambda"),
                        parse_poly(comp.at("poly"), "synth component poly"));
                }
            }
            cfg.synth = std::move(sc);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    // Normalized snapshot: re-serialized parse result, so equal configurations
    // produce identical snapshots regardless of input formatting.
    cfg.resolved_json = j.dump(2) + "\n";
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.parent_path());
}

}  // namespace hiforecast
