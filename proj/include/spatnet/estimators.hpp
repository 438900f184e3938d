#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spatnet/core.hpp"

namespace spatnet {

struct EstimateReport {
  std::string estimator;
  bool ok = true;
  std::string error;

  double direct = 0.0, direct_se = 0.0;
  double total_border = 0.0, total_border_se = 0.0;
  /// Covariance of (direct, total_border).
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  std::array<double, 2> direct_ci{}, total_border_ci{};

  std::optional<StructuralParams> theta;
  std::optional<Eigen::Matrix4d> theta_cov;

  std::optional<double> j_stat;
  int j_dof = 0;
  double j_pvalue = 1.0;

  std::map<std::string, double> diagnostics;
  std::map<std::string, std::string> notes;

  /// Fills SEs from `cov` and the 95% intervals as estimate +- 1.96 SE.
  void finalize();
};

std::string report_to_json(const EstimateReport& r, int indent = 2);
std::string reports_to_json(const std::vector<EstimateReport>& rs, int indent = 2);
EstimateReport report_from_json(const std::string& text);

/// Product Bartlett taper over geographic distance (miles) and network hops.
struct HacSpec {
  double spatial_bandwidth = 10.0;
  double network_bandwidth = 3.0;
  void check() const;
};

struct GmmOptions {
  /// Model lattice for tau_theta; an even x1 count keeps the border between nodes.
  std::array<int, 3> grid{40, 3, 9};
  /// Signed distances to the border (miles) where the residual profile is matched.
  std::array<double, 5> rd_knots{-12.0, -6.0, 0.0, 6.0, 12.0};
  double rd_halfwidth = 6.0;
  int mi_neighbors = 5;
  int max_evaluations = 600;
  /// Simplex stopping spread of the objective, in J-statistic units (n x objective).
  double tolerance = 1e-6;
  /// Extra multistart points on top of the four case parameter sets.
  std::vector<StructuralParams> starts;
};

struct EstimatorOptions {
  double effect_scale = 0.025;
  double border = 50.0;
  double border_band = 5.0;
  int n_bins = 20;
  std::optional<double> gps_bandwidth;
  std::optional<double> rd_bandwidth;
  int bootstrap = 99;
  std::uint64_t seed = 1;
  HacSpec hac{};
  GmmOptions gmm{};
  /// Distance transform for the spillover test.
  std::function<double(double)> spillover_transform;
};

// Conventional estimators. Each returns a finalized report; failures surface as
// EstimatorError / InputError exceptions.
EstimateReport twfe(const Dataset& data, const EstimatorOptions& opts = {});
EstimateReport did(const Dataset& data, const EstimatorOptions& opts = {});
EstimateReport gps(const Dataset& data, const EstimatorOptions& opts = {});
EstimateReport spatial_rd(const Dataset& data, const EstimatorOptions& opts = {});
EstimateReport network_iv(const Dataset& data, const EstimatorOptions& opts = {});
EstimateReport full_gmm(const Dataset& data, const EstimatorOptions& opts = {});

/// Standardized full_gmm moment vector at theta (the identity-weight objective is its squared norm).
Eigen::VectorXd gmm_moments(const Dataset& data, const StructuralParams& theta, const EstimatorOptions& opts = {});

const std::vector<std::string>& estimator_names();
/// Runs the named estimator; errors are caught and returned with ok = false.
EstimateReport run_estimator(const std::string& name, const Dataset& data, const EstimatorOptions& opts = {});

/// Sum over pairs of k_s(d_ij / b_s) k_n(h_ij / b_n) m_i m_j'. Without a network
/// only the spatial taper applies. Symmetrized, eigenvalues clipped at 0.
Eigen::MatrixXd hac_cov(const Eigen::MatrixXd& contributions, std::span<const std::array<double, 2>> coords,
                        const Adjacency* network, const HacSpec& hac);

struct SpilloverTest {
  double wald = 0.0;
  int dof = 0;
  double pvalue = 1.0;
  Eigen::VectorXd coefficients;  // (beta_d, beta_n, beta_lambda) where estimable
  std::vector<std::string> tested;
  bool rank_deficient = false;
};

SpilloverTest spillover_test(const Dataset& data, const EstimatorOptions& opts = {});

/// KSG estimate of I(x; alpha) in nats, clipped at 0. Per-unit terms (whose mean
/// is the unclipped estimate) are written to `terms` when given.
double mutual_information(std::span<const std::array<double, 2>> coords, std::span<const double> alphas, int k = 5,
                          std::vector<double>* terms = nullptr);

struct DecayTest {
  bool applicable = true;
  std::string reason;
  /// -slope / dt: the continuous-time rate.
  double kappa_hat = 0.0;
  /// (1 - exp(slope)) / dt: the rate of the discretized recursion.
  double kappa_hat_discrete = 0.0;
  double slope = 0.0, intercept = 0.0;
  double wald = 0.0;
  int dof = 0;
  double joint_p = 1.0;
};

DecayTest event_study_decay_test(std::span<const double> coeffs, std::span<const double> ses, double dt);

// Shared regression helpers.
struct LinearFit {
  Eigen::VectorXd beta;        // NaN for dropped columns
  Eigen::VectorXd residuals;
  Eigen::MatrixXd bread;       // (X'X)^-1 over kept columns
  std::vector<int> kept;       // kept column indices
  int position(int column) const;  // index within kept, -1 when dropped
};

/// OLS with rank-revealing QR; collinear columns are dropped with a warning.
LinearFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, bool warn_on_drop = true);
/// HC1 covariance over kept columns.
Eigen::MatrixXd hc1_cov(const Eigen::MatrixXd& x, const LinearFit& fit);
/// CR1 cluster-robust covariance over kept columns.
Eigen::MatrixXd cluster_cov(const Eigen::MatrixXd& x, const LinearFit& fit, std::span<const int> cluster);

/// Row-normalized neighbour average of S (0 for isolated units).
std::vector<double> network_exposure(const Adjacency& adj, std::span<const double> values);

double chi2_sf(double x, int dof);

}  // namespace spatnet
