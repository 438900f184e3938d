#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "spatnet/core.hpp"
#include "spatnet/grid.hpp"

namespace spatnet {

struct Point3 {
  double x1 = 0.0;
  double x2 = 0.0;
  double alpha = 0.0;
};

/// Source S(point, time) in the master equation's calendar time.
using SourceFn = std::function<double(const Point3&, double)>;
/// Time-independent scalar function over the domain (initial condition, volatility).
using FieldFn = std::function<double(const Point3&)>;

SourceFn source_from_field(const GridField& field);
FieldFn function_from_field(const GridField& field);
SourceFn constant_source(double value);

struct PathOptions {
  double horizon = 1.0;  // t
  double dt = 0.01;
  std::size_t paths = 1000;  // M; doubled when antithetic
  std::uint64_t seed = 1;
  bool antithetic = false;
  SpatialDomain domain{};  // reflecting faces
  unsigned workers = 1;

  std::size_t steps() const;
  std::size_t total_paths() const { return antithetic ? 2 * paths : paths; }
};

/// Simulated trajectories of the diffusion with generator covariance
/// [[2nu_s,0,lambda],[0,2nu_s,0],[lambda,0,2nu_n]]. Trajectory time u runs
/// backward from the evaluation time t, so the calendar-time discount
/// e^{-kappa (t - s)} becomes e^{-kappa u} along the stored path.
struct PathBundle {
  std::size_t n_paths = 0;
  std::size_t steps = 0;
  double dt = 0.0;
  double horizon = 0.0;
  std::size_t stored_points = 0;  // steps + 1, 2 for endpoints only, 0 when not stored
  std::vector<double> trajectories;  // n_paths * stored_points * 3
  std::vector<double> discounted_source;  // per path; empty without a source
  std::vector<std::uint8_t> antithetic_mirror;  // 1 for the negated member of a pair

  /// Point `index` of the stored trajectory (0 = start; last = terminal).
  Point3 position(std::size_t path, std::size_t index) const;
};

enum class TrajectoryStorage { Full, Endpoints, None };

PathBundle simulate_paths(const StructuralParams& params, const Point3& start,
                          const PathOptions& opts, const SourceFn* source = nullptr,
                          TrajectoryStorage storage = TrajectoryStorage::Full);

struct FkEstimate {
  double estimate = 0.0;
  double path_se = 0.0;   // standard error of the Monte Carlo mean
  double path_variance = 0.0;  // across-path variance of per-path values
  std::size_t paths = 0;
};

/// E[e^{-kappa t} tau0(X_t) + integral of discounted source], left-endpoint rule.
FkEstimate fk_effect(const StructuralParams& params, const SourceFn& source, const FieldFn& tau0,
                     const Point3& start, const PathOptions& opts);

/// Control-variate estimate: per-path value minus beta (C - E[C]), where C is
/// the discounted integral of `control` and E[C] is supplied analytically.
struct ControlVariateEstimate {
  FkEstimate plain;
  FkEstimate controlled;
  double beta = 0.0;
  double variance_reduction = 1.0;  // var(controlled) / var(plain)
};
ControlVariateEstimate fk_effect_control_variate(const StructuralParams& params,
                                                 const SourceFn& source, const FieldFn& control,
                                                 double control_mean, const Point3& start,
                                                 const PathOptions& opts);

struct StochasticSource {
  SourceFn mean;
  FieldFn volatility;  // sigma_S >= 0
};

/// Across-path variance of the discounted source integral (deterministic source).
double fk_variance(const StructuralParams& params, const SourceFn& source, const Point3& start,
                   const PathOptions& opts);
/// E[integral of e^{-2 kappa (t-s)} sigma_S^2] along paths (stochastic source).
double fk_variance(const StructuralParams& params, const StochasticSource& source,
                   const Point3& start, const PathOptions& opts);

/// -E[integral of (t-s) e^{-kappa (t-s)} S ds]; returns value and its standard error.
FkEstimate sensitivity_kappa(const StructuralParams& params, const SourceFn& source,
                             const Point3& start, const PathOptions& opts);

/// Central finite differences of fk_effect with common random numbers over
/// (nu_s, nu_n, kappa, lambda). Steps shrink when a perturbation leaves the
/// valid region; at a hard bound a one-sided difference is used, and a
/// component with no admissible perturbation is NaN.
std::array<double, 4> sensitivities_fd(const StructuralParams& params, const SourceFn& source,
                                       const Point3& start, const PathOptions& opts,
                                       const std::array<double, 4>& h);

double delta_method_variance(const Eigen::Vector4d& gradient, const Eigen::Matrix4d& v_theta);

/// Gaussian posterior over (nu_s, nu_n, kappa, lambda), or a custom sampler.
struct ParamPosterior {
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();
  Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
  std::function<StructuralParams(std::mt19937_64&)> sampler;  // overrides mean/cov when set

  static ParamPosterior gaussian(const StructuralParams& mean, const Eigen::Matrix4d& cov);
};

struct PosteriorSummary {
  double mean = 0.0;
  double total_variance = 0.0;
  double within_model_variance = 0.0;
  double parameter_variance = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  std::size_t draws = 0;
  std::size_t rejected = 0;
  std::vector<double> draw_means;
};

/// Path Integral Monte Carlo: B parameter draws, M paths per draw.
PosteriorSummary pimc(const ParamPosterior& posterior, std::size_t draws,
                      const SourceFn& source, const Point3& start, PathOptions opts,
                      double level = 0.95);

struct ProfileRow {
  double distance = 0.0;
  double mean = 0.0;
  double lo68 = 0.0, hi68 = 0.0;
  double lo95 = 0.0, hi95 = 0.0;
  double within_model_variance = 0.0;
  double parameter_variance = 0.0;
};

/// Posterior profile at each distance; `locate` maps a distance to the start point.
std::vector<ProfileRow> distance_profile(const ParamPosterior& posterior, std::size_t draws,
                                         const SourceFn& source,
                                         const std::function<Point3(double)>& locate,
                                         const std::vector<double>& distances,
                                         const PathOptions& opts);

/// Linear-interpolation sample quantile (type 7).
double quantile(std::vector<double> values, double p);

}  // namespace spatnet
