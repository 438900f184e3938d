#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spatnet {

// Error taxonomy shared by every module.
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SolverError : std::runtime_error {
  SolverError(const std::string& what, double final_residual = 0.0, int iterations = 0)
      : std::runtime_error(what), residual(final_residual), iterations(iterations) {}
  double residual;
  int iterations;
};

struct EstimatorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Writes a warning line to std::clog unless warnings were silenced.
void warn(std::string_view message);
void set_warnings_enabled(bool enabled);

/// Structural parameters of the master equation.
///   nu_s    spatial diffusivity (sq. miles / quarter)
///   nu_n    network diffusivity (sq. market-position units / quarter)
///   kappa   decay rate (1 / quarter)
///   lambda  spatial-network interaction, enters as the x1-alpha mixed-derivative coefficient
struct StructuralParams {
  double nu_s = 0.0;
  double nu_n = 0.0;
  double kappa = 0.25;
  double lambda = 0.0;

  std::array<double, 4> as_array() const { return {nu_s, nu_n, kappa, lambda}; }
  static StructuralParams from_array(const std::array<double, 4>& v) {
    return {v[0], v[1], v[2], v[3]};
  }
  /// Step covariance per unit time over (x1, x2, alpha).
  std::array<std::array<double, 3>, 3> generator_covariance() const {
    return {{{2.0 * nu_s, 0.0, lambda}, {0.0, 2.0 * nu_s, 0.0}, {lambda, 0.0, 2.0 * nu_n}}};
  }
  bool operator==(const StructuralParams&) const = default;
};

/// Returns every violated invariant; empty means valid.
std::vector<std::string> validate(const StructuralParams& params);
inline bool is_valid(const StructuralParams& params) { return validate(params).empty(); }

enum class ConfigId { NoSpillovers, SpatialOnly, NetworkOnly, FullModel };

inline constexpr std::array<ConfigId, 4> kAllConfigs = {
    ConfigId::NoSpillovers, ConfigId::SpatialOnly, ConfigId::NetworkOnly, ConfigId::FullModel};

StructuralParams config_params(ConfigId id);
std::string to_string(ConfigId id);
ConfigId config_from_string(std::string_view name);
/// Case number 1..4.
int case_number(ConfigId id);

/// Rectangular (x1, x2) extent in miles times the alpha interval, plus lattice sizes.
struct SpatialDomain {
  double x1_lo = 0.0, x1_hi = 100.0;
  double x2_lo = 0.0, x2_hi = 100.0;
  double alpha_lo = 0.0, alpha_hi = 1.0;
  std::array<int, 3> grid = {64, 64, 16};

  void check() const;
  bool contains(double x1, double x2, double alpha) const {
    return x1 >= x1_lo && x1 <= x1_hi && x2 >= x2_lo && x2 <= x2_hi && alpha >= alpha_lo &&
           alpha <= alpha_hi;
  }
  bool operator==(const SpatialDomain&) const = default;
};

struct UnitRecord {
  std::int64_t id = 0;
  std::array<double, 2> x{};
  double alpha = 0.0;
  double source = 0.0;
  std::array<double, 3> controls{};
  double outcome = 0.0;
  int degree = 0;
  bool operator==(const UnitRecord&) const = default;
};

/// Undirected simple graph over unit indices 0..n-1; neighbor lists kept sorted.
struct Adjacency {
  std::vector<std::vector<int>> neighbors;

  Adjacency() = default;
  explicit Adjacency(std::size_t n) : neighbors(n) {}
  std::size_t size() const { return neighbors.size(); }
  std::size_t edge_count() const;
  bool has_edge(int i, int j) const;
  void add_edge(int i, int j);
  void finalize();  // sort and dedupe
  /// Symmetric, zero diagonal, indices in range.
  bool is_valid() const;
  std::vector<std::pair<int, int>> edges() const;  // i < j
  bool operator==(const Adjacency&) const = default;
};

struct Dataset {
  std::vector<UnitRecord> units;
  Adjacency network;
  std::optional<Adjacency> lagged_network;
  std::optional<ConfigId> config_id;
  std::uint64_t seed = 0;
  /// True treatment functional per unit; only present for simulated data.
  std::optional<std::vector<double>> tau_true;

  std::size_t size() const { return units.size(); }
  /// Throws InputError on broken invariants.
  void check() const;
};

/// Splittable deterministic seeding: (base_seed, label, index) -> child seed.
struct SeedSpec {
  std::uint64_t base_seed = 20240601;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(const SeedSpec& spec, std::string_view label, std::uint64_t index);

}  // namespace spatnet
