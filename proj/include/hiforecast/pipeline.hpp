#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hiforecast/config.hpp"
#include "hiforecast/matcher.hpp"

namespace hiforecast::pipeline {

// Workspace commands behind the CLI subcommands. Each acquires the workspace
// lock, writes a resolved-config snapshot, and emits byte-stable outputs
// (timestamps only ever go to the log file). Errors are thrown; the CLI maps
// them to exit codes.

void run_synth(const PipelineConfig& cfg);
void run_prep(const PipelineConfig& cfg);
void run_fit(const PipelineConfig& cfg, std::optional<int> signal);
void run_forecast(const PipelineConfig& cfg, std::optional<int> signal,
                  std::optional<Method> method, const std::string& unit, bool all_units,
                  bool dump_scenarios);
void run_rul(const PipelineConfig& cfg, std::optional<int> signal, std::optional<Method> method);
void run_eval(const PipelineConfig& cfg, bool literal_eq15);

// Signals listed in the workspace manifest (id order as written by prep).
std::vector<int> manifest_signals(const PipelineConfig& cfg);

}  // namespace hiforecast::pipeline
