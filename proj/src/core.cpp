#include "spatnet/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <sstream>

namespace spatnet {

namespace {
std::atomic<bool> g_warnings_enabled{true};
}

void warn(std::string_view message) {
  if (g_warnings_enabled.load(std::memory_order_relaxed)) {
    std::clog << "warning: " << message << '\n';
  }
}

void set_warnings_enabled(bool enabled) { g_warnings_enabled.store(enabled); }

std::vector<std::string> validate(const StructuralParams& p) {
  std::vector<std::string> out;
  if (!std::isfinite(p.nu_s) || !std::isfinite(p.nu_n) || !std::isfinite(p.kappa) ||
      !std::isfinite(p.lambda)) {
    out.emplace_back("parameters must be finite");
    return out;
  }
  if (p.nu_s < 0.0) out.emplace_back("nu_s < 0");
  if (p.nu_n < 0.0) out.emplace_back("nu_n < 0");
  if (p.kappa <= 0.0) out.emplace_back("kappa <= 0");
  if (p.nu_s > 0.0 && p.nu_n > 0.0) {
    if (p.lambda * p.lambda > 4.0 * p.nu_s * p.nu_n) {
      out.emplace_back("lambda² > 4·nu_s·nu_n");
    }
  } else if (p.lambda != 0.0) {
    out.emplace_back("lambda must be 0 when a diffusivity is 0");
  }
  return out;
}

StructuralParams config_params(ConfigId id) {
  switch (id) {
    case ConfigId::NoSpillovers: return {0.0, 0.0, 0.25, 0.0};
    case ConfigId::SpatialOnly: return {100.0, 0.0, 0.25, 0.0};
    case ConfigId::NetworkOnly: return {0.0, 0.015, 0.25, 0.0};
    case ConfigId::FullModel: return {100.0, 0.015, 0.25, 0.04};
  }
  return {};
}

std::string to_string(ConfigId id) {
  switch (id) {
    case ConfigId::NoSpillovers: return "no_spillovers";
    case ConfigId::SpatialOnly: return "spatial_only";
    case ConfigId::NetworkOnly: return "network_only";
    case ConfigId::FullModel: return "full_model";
  }
  return "unknown";
}

ConfigId config_from_string(std::string_view name) {
  for (auto id : kAllConfigs) {
    if (name == to_string(id)) return id;
  }
  if (name == "1" || name == "case1") return ConfigId::NoSpillovers;
  if (name == "2" || name == "case2") return ConfigId::SpatialOnly;
  if (name == "3" || name == "case3") return ConfigId::NetworkOnly;
  if (name == "4" || name == "case4") return ConfigId::FullModel;
  throw InputError("unknown configuration '" + std::string(name) +
                   "' (expected no_spillovers, spatial_only, network_only, full_model)");
}

int case_number(ConfigId id) { return static_cast<int>(id) + 1; }

void SpatialDomain::check() const {
  if (!(x1_hi > x1_lo) || !(x2_hi > x2_lo) || !(alpha_hi > alpha_lo)) {
    throw InputError("domain extents must be strictly positive");
  }
  for (int n : grid) {
    if (n < 3) throw InputError("grid sizes must be >= 3 per axis");
  }
}

std::size_t Adjacency::edge_count() const {
  std::size_t twice = 0;
  for (const auto& nb : neighbors) twice += nb.size();
  return twice / 2;
}

bool Adjacency::has_edge(int i, int j) const {
  const auto& nb = neighbors.at(static_cast<std::size_t>(i));
  return std::binary_search(nb.begin(), nb.end(), j);
}

void Adjacency::add_edge(int i, int j) {
  if (i == j) return;
  neighbors.at(static_cast<std::size_t>(i)).push_back(j);
  neighbors.at(static_cast<std::size_t>(j)).push_back(i);
}

void Adjacency::finalize() {
  for (auto& nb : neighbors) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
}

bool Adjacency::is_valid() const {
  const int n = static_cast<int>(neighbors.size());
  for (int i = 0; i < n; ++i) {
    const auto& nb = neighbors[static_cast<std::size_t>(i)];
    if (!std::is_sorted(nb.begin(), nb.end())) return false;
    for (int j : nb) {
      if (j < 0 || j >= n || j == i) return false;
      if (!has_edge(j, i)) return false;
    }
  }
  return true;
}

std::vector<std::pair<int, int>> Adjacency::edges() const {
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    for (int j : neighbors[i]) {
      if (static_cast<int>(i) < j) out.emplace_back(static_cast<int>(i), j);
    }
  }
  return out;
}

void Dataset::check() const {
  const std::size_t n = units.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = units[i];
    if (u.alpha < 0.0 || u.alpha > 1.0) throw InputError("unit alpha outside [0,1]");
    if (u.degree < 0) throw InputError("negative degree");
  }
  if (network.size() != n) throw InputError("network size does not match unit count");
  if (!network.is_valid()) throw InputError("network must be symmetric with zero diagonal");
  if (lagged_network) {
    if (lagged_network->size() != n) throw InputError("lagged network size mismatch");
    if (!lagged_network->is_valid()) throw InputError("lagged network invalid");
  }
  if (tau_true && tau_true->size() != n) throw InputError("truth size mismatch");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(const SeedSpec& spec, std::string_view label, std::uint64_t index) {
  // FNV-1a over the label, then a bijective finalizer over an injective
  // function of the index so indices under one label never collide.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  const std::uint64_t stream = splitmix64(spec.base_seed ^ splitmix64(h));
  return splitmix64(stream + index * 0xD1B54A32D192ED03ULL);
}

}  // namespace spatnet
