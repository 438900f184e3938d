#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "spatnet/mc.hpp"

namespace spatnet::cli {

/// Everything a command needs, parsed from one config file. Defaults are the
/// reference settings, so an empty file is a valid reference run.
struct RunConfig {
  // [dgp]
  ConfigId case_id = ConfigId::FullModel;
  std::uint64_t seed = 20240601;
  DgpSettings dgp{};
  // [mc]
  McPlan mc{};
  bool event_study = true;
  int event_study_replications = 200;
  // [gmm] plus the conventional estimator knobs in [mc]
  EstimatorOptions estimator{};
  // [fk]
  ConfigId fk_case = ConfigId::FullModel;
  double fk_source_scale = 0.025;
  FkPlan fk{};

  /// Throws InputError on any broken invariant of the parts.
  void check() const;
  /// Applies a seed override to every seed in the file.
  void override_seed(std::uint64_t s);
  /// Applies a worker-count override to every parallel stage.
  void override_workers(unsigned w);
};

/// Parses and validates; unknown sections, unknown keys, duplicate keys and
/// ill-typed values throw InputError naming `origin` and the key.
RunConfig parse_run_config(std::istream& is, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its effective value, in the file format; parses back to the same config.
std::string dump_run_config(const RunConfig& c);

}  // namespace spatnet::cli
