#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "spatnet/core.hpp"
#include "spatnet/grid.hpp"
#include "spatnet/netgen.hpp"
#include "spatnet/pde.hpp"

namespace spatnet {

enum class Geography { Homogeneous, Clustered };

struct DgpSettings {
  int n_units = 500;
  double s0 = 0.10;
  GravityParams gravity{};
  double control_sd = 0.25;
  double noise_sd = 0.05;
  std::array<double, 3> gamma{0.1, 0.1, 0.1};
  /// PDE lattice; tau does not vary with x2, so that axis can stay coarse.
  std::array<int, 3> grid{64, 32, 16};
  double rewire_fraction = 0.2;
  double border = 50.0;
  /// Reports carry effects per unit of S, scaled by this constant so the
  /// no-spillover direct effect equals 0.100 (= 0.025 / kappa).
  double effect_scale = 0.025;
  double border_band = 5.0;
  Geography geography = Geography::Homogeneous;
  int cluster_parents = 25;
  double cluster_sd = 6.0;
  /// Gaussian-copula correlation between x1 and alpha; 0 keeps them independent.
  double industry_correlation = 0.0;

  SpatialDomain domain() const;
  /// Throws InputError on broken invariants.
  void check() const;
};

struct Geo {
  std::vector<std::array<double, 2>> coords;
  std::vector<double> alphas;
};

Geo make_geography(const DgpSettings& settings, Rng& rng);

double source_value(double x1, double alpha, double s0, double border = 50.0);
std::vector<double> source_term(std::span<const std::array<double, 2>> coords,
                                std::span<const double> alphas, double s0, double border = 50.0);

std::vector<std::array<double, 3>> make_controls(std::span<const double> alphas,
                                                 std::span<const std::array<double, 2>> coords,
                                                 std::span<const int> degrees, double control_sd,
                                                 Rng& rng, double border = 50.0);

/// Source sampled at lattice nodes and the steady-state field it implies.
GridField source_field(const DgpSettings& settings);
GridField treatment_field(ConfigId config, const DgpSettings& settings, const SolverOptions& opts = {});

/// `field` may carry a precomputed treatment_field for the same config and
/// settings; geography never enters the field, so replications can share it.
Dataset simulate_dataset(ConfigId config, const DgpSettings& settings, std::uint64_t seed,
                         const GridField* field = nullptr);

struct TrueEffects {
  double direct = 0.0;
  double total_border = 0.0;
};

TrueEffects true_effects(const Dataset& data, const DgpSettings& settings);

/// Standard normal CDF and quantile.
double normal_cdf(double z);
double normal_quantile(double p);

}  // namespace spatnet
