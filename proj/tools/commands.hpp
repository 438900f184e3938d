#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace spatnet::cli {

namespace fs = std::filesystem;

/// Dataset CSVs for [dgp] case and seed, plus truth.json with the true effects.
void cmd_simulate(const RunConfig& c, const fs::path& out_dir);

/// One report per estimator, written as a JSON array.
void cmd_estimate(const RunConfig& c, const fs::path& data_dir, const std::vector<std::string>& estimators,
                  const fs::path& out_path);

/// Monte Carlo sweep. Records are appended to mc_records.csv as replications
/// finish, so a rerun into the same directory resumes. Returns false when
/// cancelled; completed records are on disk either way.
bool cmd_mc(const RunConfig& c, const fs::path& out_dir, bool fresh, const std::atomic<bool>* cancel = nullptr);

/// Fits full_gmm on the [fk] case and writes gmm_report.json, profile.csv and uncertainty.csv.
void cmd_fk(const RunConfig& c, const fs::path& out_dir);

/// Timestamps and the effective config; the only output that differs between reruns.
void write_run_info(const fs::path& out_dir, const std::string& command, const RunConfig& c);

}  // namespace spatnet::cli
