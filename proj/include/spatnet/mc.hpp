#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spatnet/core.hpp"
#include "spatnet/dgp.hpp"
#include "spatnet/estimators.hpp"
#include "spatnet/fk.hpp"

namespace spatnet {

struct McPlan {
  std::vector<ConfigId> configs{kAllConfigs.begin(), kAllConfigs.end()};
  std::vector<std::string> estimators = estimator_names();
  int replications = 200;
  std::uint64_t base_seed = 20240601;
  DgpSettings dgp{};
  EstimatorOptions estimator{};
  unsigned workers = 1;

  /// Throws InputError on broken invariants.
  void check() const;
};

/// One (config, replication, estimator) outcome with the truths it is scored against.
struct McRecord {
  ConfigId config = ConfigId::NoSpillovers;
  int replication = 0;
  std::string estimator;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  double direct = 0.0, direct_se = 0.0;
  double total_border = 0.0, total_border_se = 0.0;
  double true_direct = 0.0, true_total_border = 0.0;
  bool operator==(const McRecord&) const = default;
};

/// Dataset seed for a replication; a pure function of (base seed, config, replication).
std::uint64_t replication_seed(std::uint64_t base_seed, ConfigId config, int replication);

struct McRunOptions {
  /// Records from an interrupted run; replications already complete are not redone.
  std::span<const McRecord> completed;
  /// Called once per finished replication (serialized), e.g. to append to disk.
  std::function<void(std::span<const McRecord>)> on_replication;
  /// Checked before each replication starts.
  const std::atomic<bool>* cancel = nullptr;
};

/// Records sorted by (config, replication, estimator) in plan order, so the
/// result does not depend on scheduling or the worker count.
std::vector<McRecord> run_mc(const McPlan& plan, const McRunOptions& run = {});

struct McSummaryRow {
  ConfigId config = ConfigId::NoSpillovers;
  std::string estimator;
  std::string target;  // "direct" or "total_border"
  int replications = 0;
  int failures = 0;
  double bias = 0.0, bias_mc_se = 0.0;
  double variance = 0.0;  // of the estimate, population form (divide by n)
  double rmse = 0.0;
  double coverage = 0.0, coverage_mc_se = 0.0;
  /// More than 20% of the cell's replications failed.
  bool unreliable = false;
};

/// Failed or non-finite replications are excluded from the moments and counted.
/// Coverage uses the closed interval estimate +- 1.96 SE.
std::vector<McSummaryRow> summarize(std::span<const McRecord> records);

void write_records_csv(const std::filesystem::path& path, std::span<const McRecord> records);
std::vector<McRecord> read_records_csv(const std::filesystem::path& path);
/// Header line of the records file.
std::string records_csv_header();
/// One CSV line (no newline) for a record.
std::string record_csv_line(const McRecord& r);
void write_summary_csv(const std::filesystem::path& path, std::span<const McSummaryRow> rows);

// ------------------------------------------------------------ event study

/// Binary-timing panel on its own square domain [0, domain_size]^2 x [0, 1];
/// units with x1 past the midline switch on a source of intensity
/// 0.7 + 0.6 alpha at treat_time and the outcome follows the transient master equation.
struct EventStudySpec {
  StructuralParams params{0.0, 0.0, 0.3, 0.0};
  int n_units = 500;
  int periods = 16;
  int treat_time = 8;
  double dt = 1.0;
  int replications = 200;
  std::uint64_t seed = 20240601;
  double noise_sd = 0.1;
  double unit_effect_sd = 0.5;
  double period_effect_sd = 0.2;
  double domain_size = 10.0;
  std::array<int, 3> grid{40, 3, 9};
  /// Transient solver step; the panel period dt must be a multiple of it.
  double solver_dt = 0.25;
  unsigned workers = 1;

  void check() const;
};

struct EventStudyResult {
  std::vector<int> event_time;
  /// Mean treated-region effect per unit of intensity.
  std::vector<double> truth;
  /// Mean coefficient paths (per unit of intensity) for twfe, gps, restricted_pde, full_pde.
  std::map<std::string, std::vector<double>> mean_path;
  std::map<std::string, std::vector<double>> path_mc_se;
  /// Decay test on increments of the twfe path, averaged over replications where it applies.
  double mean_kappa_hat = 0.0;
  int decay_applicable = 0;
  int failures = 0;
};

const std::vector<std::string>& event_study_estimators();
EventStudyResult event_study_panel(const EventStudySpec& spec);

// ------------------------------------------------------- uncertainty table

struct FkPlan {
  std::size_t draws = 1000;  // posterior draws B
  std::size_t paths = 500;   // paths per draw M
  double horizon = 40.0;
  double dt = 0.25;
  std::uint64_t seed = 20240601;
  bool antithetic = false;
  unsigned workers = 1;
  /// Band edges in miles from the border into the untreated side.
  std::vector<double> band_edges{0.0, 25.0, 50.0, 75.0, 100.0};
  /// Distances for the posterior profile.
  std::vector<double> profile_distances{0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};

  void check() const;
};

/// Geography for fk analyses: a 200 x 100 mile strip with the border at x1 = 100,
/// so distances up to 100 miles into the untreated side stay inside the domain.
SpatialDomain fk_domain();
SourceFn fk_border_source(double s0);
/// Start point at `distance` miles from the border on the untreated side.
Point3 fk_locate(double distance);

struct UncertaintyRow {
  double lo = 0.0, hi = 0.0;  // band edges
  double distance = 0.0;      // evaluation point (band midpoint)
  double mean = 0.0;
  double total_variance = 0.0;
  double within_model_variance = 0.0, parameter_variance = 0.0;
  double within_pct = 0.0, parameter_pct = 0.0;
};

/// Posterior N(theta_hat, V_theta) from a full_gmm report, PIMC at each band midpoint.
std::vector<UncertaintyRow> uncertainty_table(const EstimateReport& gmm_report, const FkPlan& plan, double s0);
/// Gaussian around the fit, with each draw projected onto the admissible parameter set.
ParamPosterior posterior_from_report(const EstimateReport& gmm_report);

void write_event_study_csv(const std::filesystem::path& path, const EventStudyResult& panel_a,
                           const EventStudyResult& panel_b);
void write_uncertainty_csv(const std::filesystem::path& path, std::span<const UncertaintyRow> rows);
void write_profile_csv(const std::filesystem::path& path, std::span<const ProfileRow> rows);

}  // namespace spatnet
