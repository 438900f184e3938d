#pragma once

#include <array>
#include <random>
#include <span>
#include <vector>

#include "spatnet/core.hpp"

namespace spatnet {

using Rng = std::mt19937_64;

/// Gravity connection model: p_ij = exp(-theta_d |x_i - x_j| - theta_alpha |a_i - a_j|).
struct GravityParams {
  double theta_d = 0.02;
  double theta_alpha = 2.0;
};

struct NetworkStats {
  double avg_degree = 0.0;
  double clustering = 0.0;
  double avg_path_length = 0.0;  // over the largest connected component
  double degree_cv = 0.0;
  std::size_t largest_component = 0;
};

double connection_probability(const std::array<double, 2>& xi, double ai,
                              const std::array<double, 2>& xj, double aj, const GravityParams& g);

Adjacency generate_network(std::span<const std::array<double, 2>> coords,
                           std::span<const double> alphas, const GravityParams& g, Rng& rng);

NetworkStats graph_stats(const Adjacency& adj);

/// Historical snapshot: keep each edge with probability 1 - rewire_fraction and
/// add fresh gravity edges so the expected edge count is unchanged.
Adjacency lag_network(const Adjacency& adj, std::span<const std::array<double, 2>> coords,
                      std::span<const double> alphas, const GravityParams& g,
                      double rewire_fraction, Rng& rng);

/// Breadth-first hop distances from `source`; -1 for unreachable, truncated at max_hops.
std::vector<int> hop_distances(const Adjacency& adj, int source, int max_hops = -1);

}  // namespace spatnet
