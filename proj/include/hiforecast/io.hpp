#pragma once

#include <filesystem>
#include <string>

#include "hiforecast/curves.hpp"
#include "hiforecast/fpca.hpp"
#include "hiforecast/generator.hpp"
#include "hiforecast/matcher.hpp"

namespace hiforecast::io {

// Curve CSV: header `unit_id,time,value`, UTF-8, rows in any order (the
// loader sorts each unit by time). One file per signal.
CurveSetd load_curve_csv(const std::filesystem::path& path, double lifespan_bound = 0.0);
void save_curve_csv(const std::filesystem::path& path, const CurveSetd& set);

// Model JSON round-trips doubles exactly (shortest round-trip formatting).
void save_model_json(const std::filesystem::path& path, const FpcaModeld& model);
FpcaModeld load_model_json(const std::filesystem::path& path);

// Forecast dump: `time,value` CSV plus a JSON sidecar with the score, the
// selected index, the method tag and the observed horizon.
void save_forecast(const std::filesystem::path& csv_path,
                   const std::filesystem::path& sidecar_path, const Forecastd& forecast,
                   const std::string& unit_id);
Forecastd load_forecast(const std::filesystem::path& csv_path,
                        const std::filesystem::path& sidecar_path);

// Optional scenario dumps for plotting.
void save_scenarios_csv(const std::filesystem::path& path, const ScenarioSetd& scenarios);
void save_scenario_scores_csv(const std::filesystem::path& path, const ScenarioSetd& scenarios);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace hiforecast::io
