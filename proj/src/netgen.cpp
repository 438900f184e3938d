#include "spatnet/netgen.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace spatnet {

double connection_probability(const std::array<double, 2>& xi, double ai,
                              const std::array<double, 2>& xj, double aj,
                              const GravityParams& g) {
  const double d = std::hypot(xi[0] - xj[0], xi[1] - xj[1]);
  return std::exp(-g.theta_d * d - g.theta_alpha * std::abs(ai - aj));
}

Adjacency generate_network(std::span<const std::array<double, 2>> coords,
                           std::span<const double> alphas, const GravityParams& g, Rng& rng) {
  if (coords.size() != alphas.size()) throw InputError("coords and alphas differ in length");
  if (coords.size() < 2) throw InputError("need at least two units");
  if (g.theta_d < 0.0 || g.theta_alpha < 0.0) throw InputError("gravity decays must be >= 0");
  const std::size_t n = coords.size();
  Adjacency adj(n);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  // one uniform per unordered pair in (i, j > i) order, so common random
  // numbers across parameter values give monotone edge sets
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double u = unif(rng);
      if (u < connection_probability(coords[i], alphas[i], coords[j], alphas[j], g)) {
        adj.add_edge(static_cast<int>(i), static_cast<int>(j));
      }
    }
  }
  adj.finalize();
  return adj;
}

std::vector<int> hop_distances(const Adjacency& adj, int source, int max_hops) {
  std::vector<int> dist(adj.size(), -1);
  std::deque<int> queue;
  dist[static_cast<std::size_t>(source)] = 0;
  queue.push_back(source);
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    const int dv = dist[static_cast<std::size_t>(v)];
    if (max_hops >= 0 && dv >= max_hops) continue;
    for (int w : adj.neighbors[static_cast<std::size_t>(v)]) {
      if (dist[static_cast<std::size_t>(w)] < 0) {
        dist[static_cast<std::size_t>(w)] = dv + 1;
        queue.push_back(w);
      }
    }
  }
  return dist;
}

NetworkStats graph_stats(const Adjacency& adj) {
  const std::size_t n = adj.size();
  if (n == 0) throw InputError("graph_stats requires a nonempty graph");
  NetworkStats s;

  std::vector<double> deg(n);
  for (std::size_t i = 0; i < n; ++i) deg[i] = static_cast<double>(adj.neighbors[i].size());
  s.avg_degree = std::accumulate(deg.begin(), deg.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double d : deg) var += (d - s.avg_degree) * (d - s.avg_degree);
  var /= static_cast<double>(n);
  s.degree_cv = s.avg_degree > 0.0 ? std::sqrt(var) / s.avg_degree : 0.0;

  // degree < 2 contributes 0
  double csum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nb = adj.neighbors[i];
    const std::size_t k = nb.size();
    if (k < 2) continue;
    std::size_t links = 0;
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) {
        if (adj.has_edge(nb[a], nb[b])) ++links;
      }
    }
    csum += 2.0 * static_cast<double>(links) / static_cast<double>(k * (k - 1));
  }
  s.clustering = csum / static_cast<double>(n);

  // largest connected component
  std::vector<int> comp(n, -1);
  int best = -1;
  std::size_t best_size = 0;
  int label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (comp[i] >= 0) continue;
    auto dist = hop_distances(adj, static_cast<int>(i));
    std::size_t size = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (dist[j] >= 0) {
        comp[j] = label;
        ++size;
      }
    }
    if (size > best_size) {
      best_size = size;
      best = label;
    }
    ++label;
  }
  s.largest_component = best_size;
  if (best_size < 2) {
    s.avg_path_length = 0.0;
    return s;
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (comp[i] != best) continue;
    auto dist = hop_distances(adj, static_cast<int>(i));
    for (std::size_t j = i + 1; j < n; ++j) {
      if (dist[j] > 0) {
        total += dist[j];
        ++pairs;
      }
    }
  }
  s.avg_path_length = total / static_cast<double>(pairs);
  return s;
}

Adjacency lag_network(const Adjacency& adj, std::span<const std::array<double, 2>> coords,
                      std::span<const double> alphas, const GravityParams& g,
                      double rewire_fraction, Rng& rng) {
  if (rewire_fraction < 0.0 || rewire_fraction > 1.0) {
    throw InputError("rewire_fraction must lie in [0,1]");
  }
  if (coords.size() != adj.size() || alphas.size() != adj.size()) {
    throw InputError("coords/alphas do not match the adjacency");
  }
  if (rewire_fraction == 0.0) return adj;

  const std::size_t n = adj.size();
  Adjacency out(n);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (auto [i, j] : adj.edges()) {
    if (unif(rng) >= rewire_fraction) out.add_edge(i, j);
  }
  // Fresh draws: each pair gets an independent gravity edge with probability
  // rewire_fraction * p_ij, which adds rewire_fraction * E|E| edges on average.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double u = unif(rng);
      const double p = connection_probability(coords[i], alphas[i], coords[j], alphas[j], g);
      if (u < rewire_fraction * p) out.add_edge(static_cast<int>(i), static_cast<int>(j));
    }
  }
  out.finalize();
  return out;
}

}  // namespace spatnet
