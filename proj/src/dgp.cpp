#include "spatnet/dgp.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <algorithm>
#include <cmath>

namespace spatnet {

SpatialDomain DgpSettings::domain() const {
  SpatialDomain d;
  d.grid = grid;
  return d;
}

void DgpSettings::check() const {
  if (n_units < 10) throw InputError("n_units must be at least 10");
  if (!(control_sd > 0) || !(noise_sd > 0)) throw InputError("noise sds must be positive");
  if (grid[0] < 32 || grid[1] < 32 || grid[2] < 8) throw InputError("grid must be at least 32x32x8");
  if (!(rewire_fraction >= 0 && rewire_fraction <= 1)) throw InputError("rewire_fraction must be in [0,1]");
  if (!(effect_scale > 0)) throw InputError("effect_scale must be positive");
  if (!(border_band > 0)) throw InputError("border_band must be positive");
  if (!(std::abs(industry_correlation) < 1)) throw InputError("industry_correlation must be in (-1,1)");
  if (geography == Geography::Clustered && (cluster_parents < 1 || !(cluster_sd > 0)))
    throw InputError("cluster process needs parents >= 1 and sd > 0");
  if (!(border > 0 && border < 100)) throw InputError("border must lie inside the domain");
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0 && p < 1)) throw InputError("normal_quantile needs p in (0,1)");
  return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
}

namespace {

double reflect(double v, double lo, double hi) {
  const double w = hi - lo;
  double r = std::fmod(v - lo, 2.0 * w);
  if (r < 0) r += 2.0 * w;
  return lo + (r <= w ? r : 2.0 * w - r);
}

}  // namespace

Geo make_geography(const DgpSettings& s, Rng& rng) {
  const auto d = s.domain();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  Geo g;
  g.coords.resize(static_cast<std::size_t>(s.n_units));
  g.alphas.resize(g.coords.size());
  if (s.geography == Geography::Homogeneous) {
    for (auto& c : g.coords) {
      c[0] = d.x1_lo + (d.x1_hi - d.x1_lo) * u01(rng);
      c[1] = d.x2_lo + (d.x2_hi - d.x2_lo) * u01(rng);
    }
  } else {
    // Thomas process conditioned on N: Gaussian offspring around uniform parents
    std::vector<std::array<double, 2>> parents(static_cast<std::size_t>(s.cluster_parents));
    for (auto& p : parents) {
      p[0] = d.x1_lo + (d.x1_hi - d.x1_lo) * u01(rng);
      p[1] = d.x2_lo + (d.x2_hi - d.x2_lo) * u01(rng);
    }
    std::uniform_int_distribution<std::size_t> pick(0, parents.size() - 1);
    for (auto& c : g.coords) {
      const auto& p = parents[pick(rng)];
      c[0] = reflect(p[0] + s.cluster_sd * z(rng), d.x1_lo, d.x1_hi);
      c[1] = reflect(p[1] + s.cluster_sd * z(rng), d.x2_lo, d.x2_hi);
    }
  }
  const double rho = s.industry_correlation;
  for (std::size_t i = 0; i < g.coords.size(); ++i) {
    if (rho == 0.0) {
      g.alphas[i] = d.alpha_lo + (d.alpha_hi - d.alpha_lo) * u01(rng);
      continue;
    }
    double u = (g.coords[i][0] - d.x1_lo) / (d.x1_hi - d.x1_lo);
    u = std::clamp(u, 1e-12, 1.0 - 1e-12);
    const double score = rho * normal_quantile(u) + std::sqrt(1.0 - rho * rho) * z(rng);
    g.alphas[i] = d.alpha_lo + (d.alpha_hi - d.alpha_lo) * normal_cdf(score);
  }
  return g;
}

double source_value(double x1, double alpha, double s0, double border) {
  return x1 > border ? s0 * (1.0 + 0.3 * alpha) : 0.0;
}

std::vector<double> source_term(std::span<const std::array<double, 2>> coords,
                                std::span<const double> alphas, double s0, double border) {
  if (coords.size() != alphas.size()) throw InputError("coords and alphas differ in length");
  std::vector<double> s(coords.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = source_value(coords[i][0], alphas[i], s0, border);
  return s;
}

std::vector<std::array<double, 3>> make_controls(std::span<const double> alphas,
                                                 std::span<const std::array<double, 2>> coords,
                                                 std::span<const int> degrees, double control_sd,
                                                 Rng& rng, double border) {
  if (coords.size() != alphas.size() || degrees.size() != alphas.size())
    throw InputError("control inputs differ in length");
  std::normal_distribution<double> u(0.0, control_sd);
  std::vector<std::array<double, 3>> x(alphas.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
    x[i][0] = 0.5 * alphas[i] + u1;
    x[i][1] = std::log(std::abs(coords[i][0] - border) + 1.0) + u2;
    x[i][2] = degrees[i] / 15.0 + u3;
  }
  return x;
}

GridField source_field(const DgpSettings& s) {
  const double s0 = s.s0, border = s.border;
  return GridField::sample(s.domain(), [=](double x1, double, double a) { return source_value(x1, a, s0, border); });
}

GridField treatment_field(ConfigId config, const DgpSettings& settings, const SolverOptions& opts) {
  settings.check();
  return steady_state_dgp(config_params(config), source_field(settings), opts);
}

Dataset simulate_dataset(ConfigId config, const DgpSettings& settings, std::uint64_t seed,
                         const GridField* field) {
  settings.check();
  const SeedSpec spec{seed};
  GridField own;
  if (field == nullptr) {
    own = treatment_field(config, settings);
    field = &own;
  } else if (!(field->domain() == settings.domain())) {
    throw InputError("precomputed field lattice does not match the settings");
  }

  Rng geo_rng(derive_seed(spec, "dgp-geography", 0));
  const Geo geo = make_geography(settings, geo_rng);
  Rng net_rng(derive_seed(spec, "dgp-network", 0));
  Adjacency net = generate_network(geo.coords, geo.alphas, settings.gravity, net_rng);
  Rng lag_rng(derive_seed(spec, "dgp-lagged-network", 0));
  Adjacency lag = lag_network(net, geo.coords, geo.alphas, settings.gravity, settings.rewire_fraction, lag_rng);

  std::vector<int> degrees(geo.coords.size());
  for (std::size_t i = 0; i < degrees.size(); ++i) degrees[i] = static_cast<int>(net.neighbors[i].size());
  Rng ctl_rng(derive_seed(spec, "dgp-controls", 0));
  const auto controls = make_controls(geo.alphas, geo.coords, degrees, settings.control_sd, ctl_rng, settings.border);
  const auto source = source_term(geo.coords, geo.alphas, settings.s0, settings.border);

  Rng eps_rng(derive_seed(spec, "dgp-noise", 0));
  std::normal_distribution<double> eps(0.0, settings.noise_sd);
  Dataset data;
  data.seed = seed;
  data.config_id = config;
  data.units.resize(geo.coords.size());
  std::vector<double> tau(geo.coords.size());
  for (std::size_t i = 0; i < data.units.size(); ++i) {
    auto& u = data.units[i];
    u.id = static_cast<int>(i);
    u.x = geo.coords[i];
    u.alpha = geo.alphas[i];
    u.source = source[i];
    u.controls = controls[i];
    u.degree = degrees[i];
    tau[i] = field->interpolate(u.x[0], u.x[1], u.alpha, settings.border);
    double xg = 0.0;
    for (int c = 0; c < 3; ++c) xg += u.controls[c] * settings.gamma[c];
    u.outcome = tau[i] + xg + eps(eps_rng);
  }
  data.network = std::move(net);
  data.lagged_network = std::move(lag);
  data.tau_true = std::move(tau);
  return data;
}

TrueEffects true_effects(const Dataset& data, const DgpSettings& settings) {
  if (!data.config_id || !data.tau_true) throw InputError("true effects need a simulated dataset");
  const auto p = config_params(*data.config_id);
  TrueEffects t;
  t.direct = settings.effect_scale / p.kappa;
  double tau_sum = 0.0, s_sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& u = data.units[i];
    const double d = u.x[0] - settings.border;
    if (d > 0 && d <= settings.border_band) {
      tau_sum += (*data.tau_true)[i];
      s_sum += u.source;
    }
  }
  if (s_sum <= 0) throw InputError("no treated units within the border band");
  t.total_border = settings.effect_scale * tau_sum / s_sum;
  return t;
}

}  // namespace spatnet
