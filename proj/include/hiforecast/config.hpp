#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hiforecast/dataprep.hpp"
#include "hiforecast/eval.hpp"
#include "hiforecast/matcher.hpp"
#include "hiforecast/smoothing.hpp"

namespace hiforecast {

// Polynomial in t / M, lowest degree first.
struct PolySpec {
    std::vector<double> coefficients;

    double operator()(double t, double lifespan) const {
        const double x = t / lifespan;
        double acc = 0.0;
        for (std::size_t k = coefficients.size(); k > 0; --k) {
            acc = acc * x + coefficients[k - 1];
        }
        return acc;
    }
};

struct SynthConfig {
    double lifespan = 1.0;
    int units = 120;
    double noise_sd = 0.05;
    int points_min = 15;
    int points_max = 25;
    bool regular = false;
    std::uint64_t seed = 7;
    PolySpec mean;
    std::vector<std::pair<double, PolySpec>> components;
};

struct PipelineConfig {
    std::filesystem::path workspace;
    std::filesystem::path raw_data;  // prep input; empty for synth workspaces

    Eigen::Index grid_size = 101;
    double fve_threshold = 0.95;
    Eigen::Index scenario_count = 1000;
    std::uint64_t master_seed = 0;

    SmootherConfigd smoother;
    SplitSpec split;
    TruncationSpec truncation;

    double z_threshold = 2.0;
    std::vector<int> signal_select;  // explicit sensor ids; empty: auto rule
    NormalizationMap::Mode normalization_mode = NormalizationMap::Mode::none;
    int max_clusters = 6;

    std::map<int, double> theta;  // per signal id, on the oriented scale
    std::vector<Method> methods{Method::proposed, Method::nn, Method::nn_s, Method::rg_linear,
                                Method::gp_posterior};
    SlidingWindowConfig sliding_window;
    CensorPolicy censor_policy = CensorPolicy::exclude;

    std::optional<SynthConfig> synth;

    std::string resolved_json;  // normalized snapshot of the configuration
};

// Parses and validates a pipeline configuration file (JSON). Relative paths
// are resolved against the file's directory.
PipelineConfig load_config(const std::filesystem::path& path);

// Same, from a JSON string (paths resolved against `base`).
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base);

Method parse_method(const std::string& name);

double theta_for_signal(const PipelineConfig& cfg, int signal);

}  // namespace hiforecast
