#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <limits>
#include <random>

#include "spatnet/estimators.hpp"
#include "spatnet/netgen.hpp"

namespace spatnet {

void HacSpec::check() const {
  if (!(spatial_bandwidth > 0) || !(network_bandwidth > 0)) throw InputError("HAC bandwidths must be positive");
}

Eigen::MatrixXd hac_cov(const Eigen::MatrixXd& m, std::span<const std::array<double, 2>> coords,
                        const Adjacency* network, const HacSpec& hac) {
  hac.check();
  const auto n = static_cast<std::size_t>(m.rows());
  if (coords.size() != n) throw InputError("contributions and coordinates differ in length");
  if (network && network->size() != n) throw InputError("network size does not match contributions");
  const Eigen::Index p = m.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p, p);
  auto spatial = [&](std::size_t i, std::size_t j) {
    const double d = std::hypot(coords[i][0] - coords[j][0], coords[i][1] - coords[j][1]);
    return std::max(0.0, 1.0 - d / hac.spatial_bandwidth);
  };
  if (network) {
    // hops at or beyond the bandwidth get weight 0, so the search stops there
    const int max_hops = static_cast<int>(std::ceil(hac.network_bandwidth)) - 1;
    for (std::size_t i = 0; i < n; ++i) {
      const auto hops = hop_distances(*network, static_cast<int>(i), std::max(0, max_hops));
      for (std::size_t j = 0; j < n; ++j) {
        if (hops[j] < 0) continue;
        const double w = std::max(0.0, 1.0 - hops[j] / hac.network_bandwidth) * spatial(i, j);
        if (w > 0) out.noalias() += w * m.row(static_cast<Eigen::Index>(i)).transpose() * m.row(static_cast<Eigen::Index>(j));
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      out.noalias() += m.row(static_cast<Eigen::Index>(i)).transpose() * m.row(static_cast<Eigen::Index>(i));
      for (std::size_t j = i + 1; j < n; ++j) {
        const double w = spatial(i, j);
        if (w <= 0) continue;
        const Eigen::MatrixXd c = w * m.row(static_cast<Eigen::Index>(i)).transpose() * m.row(static_cast<Eigen::Index>(j));
        out += c + c.transpose();
      }
    }
  }
  out = 0.5 * (out + out.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out);
  const Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

SpilloverTest spillover_test(const Dataset& data, const EstimatorOptions& opts) {
  data.check();
  const auto n = static_cast<Eigen::Index>(data.size());
  std::vector<double> s(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) s[i] = data.units[i].source;
  const auto exposure = network_exposure(data.network, s);
  const auto f = opts.spillover_transform ? opts.spillover_transform : [](double d) { return std::exp(-d / 20.0); };
  Eigen::MatrixXd x(n, 8);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& u = data.units[static_cast<std::size_t>(i)];
    const double fd = f(std::abs(u.x[0] - opts.border));
    const double ne = exposure[static_cast<std::size_t>(i)];
    x.row(i) << 1.0, u.source, fd, ne, fd * ne, u.controls[0], u.controls[1], u.controls[2];
    y[i] = u.outcome;
  }
  const LinearFit fit = ols(x, y, false);
  std::vector<std::array<double, 2>> coords(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) coords[i] = data.units[i].x;
  Eigen::MatrixXd xk(n, static_cast<Eigen::Index>(fit.kept.size()));
  for (std::size_t j = 0; j < fit.kept.size(); ++j) xk.col(static_cast<Eigen::Index>(j)) = x.col(fit.kept[j]);
  const Eigen::MatrixXd scores = xk.array().colwise() * fit.residuals.array();
  const Eigen::MatrixXd v = fit.bread * hac_cov(scores, coords, &data.network, opts.hac) * fit.bread;

  SpilloverTest t;
  const std::array<const char*, 3> names{"beta_d", "beta_n", "beta_lambda"};
  std::vector<int> pos;
  for (int c = 2; c <= 4; ++c) {
    const int q = fit.position(c);
    if (q < 0) {
      t.rank_deficient = true;
      continue;
    }
    pos.push_back(q);
    t.tested.emplace_back(names[static_cast<std::size_t>(c - 2)]);
  }
  t.dof = static_cast<int>(pos.size());
  t.coefficients.resize(t.dof);
  Eigen::MatrixXd vv(t.dof, t.dof);
  for (int a = 0; a < t.dof; ++a) {
    t.coefficients[a] = fit.beta[fit.kept[static_cast<std::size_t>(pos[static_cast<std::size_t>(a)])]];
    for (int b = 0; b < t.dof; ++b) vv(a, b) = v(pos[static_cast<std::size_t>(a)], pos[static_cast<std::size_t>(b)]);
  }
  if (t.dof > 0) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(vv);
    t.wald = t.coefficients.dot(cod.solve(t.coefficients));
    t.pvalue = chi2_sf(t.wald, t.dof);
  }
  return t;
}

double mutual_information(std::span<const std::array<double, 2>> coords, std::span<const double> alphas, int k,
                          std::vector<double>* terms) {
  const std::size_t n = coords.size();
  if (alphas.size() != n) throw InputError("coords and alphas differ in length");
  if (n < 50) throw InputError("mutual_information needs at least 50 points");
  if (k < 1 || static_cast<std::size_t>(k) >= n) throw InputError("neighbor count out of range");
  // standardized copies; the max-norm needs comparable scales
  std::vector<std::array<double, 3>> z(n);
  for (int c = 0; c < 3; ++c) {
    double mean = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = c < 2 ? coords[i][static_cast<std::size_t>(c)] : alphas[i];
      mean += v;
      sq += v * v;
    }
    mean /= static_cast<double>(n);
    double sd = std::sqrt(std::max(0.0, sq / static_cast<double>(n) - mean * mean));
    if (sd == 0) sd = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = c < 2 ? coords[i][static_cast<std::size_t>(c)] : alphas[i];
      z[i][static_cast<std::size_t>(c)] = (v - mean) / sd;
    }
  }
  auto joint = [&](std::size_t i, std::size_t j) {
    return std::max({std::abs(z[i][0] - z[j][0]), std::abs(z[i][1] - z[j][1]), std::abs(z[i][2] - z[j][2])});
  };
  std::vector<double> d(n), eps(n);
  bool duplicates = false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[j] = j == i ? std::numeric_limits<double>::infinity() : joint(i, j);
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    eps[i] = d[static_cast<std::size_t>(k - 1)];
    if (eps[i] == 0.0) duplicates = true;
  }
  if (duplicates) {
    warn("mutual_information: duplicate points jittered by 1e-9");
    std::mt19937_64 rng(0x6d69);
    std::uniform_real_distribution<double> u(-1e-9, 1e-9);
    for (auto& p : z)
      for (auto& v : p) v += u(rng);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) d[j] = j == i ? std::numeric_limits<double>::infinity() : joint(i, j);
      std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
      eps[i] = d[static_cast<std::size_t>(k - 1)];
    }
  }
  using boost::math::digamma;
  const double base = digamma(static_cast<double>(k)) + digamma(static_cast<double>(n));
  double total = 0.0;
  if (terms) terms->assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    int nx = 0, na = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (std::max(std::abs(z[i][0] - z[j][0]), std::abs(z[i][1] - z[j][1])) < eps[i]) ++nx;
      if (std::abs(z[i][2] - z[j][2]) < eps[i]) ++na;
    }
    const double t = base - digamma(nx + 1.0) - digamma(na + 1.0);
    if (terms) (*terms)[i] = t;
    total += t;
  }
  return std::max(0.0, total / static_cast<double>(n));
}

DecayTest event_study_decay_test(std::span<const double> coeffs, std::span<const double> ses, double dt) {
  if (!(dt > 0)) throw InputError("dt must be positive");
  if (coeffs.size() != ses.size()) throw InputError("coefficients and SEs differ in length");
  if (coeffs.size() < 3) throw InputError("decay test needs at least 3 post-treatment coefficients");
  DecayTest t;
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    if (!(std::abs(coeffs[i]) > 0) || !std::isfinite(coeffs[i])) {
      t.applicable = false;
      t.reason = "zero or non-finite coefficient";
      return t;
    }
    if (!(ses[i] >= 0)) throw InputError("standard errors must be non-negative");
    if (i > 0 && (coeffs[i] > 0) != (coeffs[0] > 0)) {
      t.applicable = false;
      t.reason = "coefficients change sign";
      return t;
    }
  }
  const auto k = static_cast<Eigen::Index>(coeffs.size());
  const bool weighted = std::all_of(ses.begin(), ses.end(), [](double s) { return s > 0; });
  Eigen::MatrixXd x(k, 2);
  Eigen::VectorXd y(k), w(k), sd(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    x.row(i) << 1.0, static_cast<double>(i + 1);
    y[i] = std::log(std::abs(coeffs[static_cast<std::size_t>(i)]));
    sd[i] = ses[static_cast<std::size_t>(i)] / std::abs(coeffs[static_cast<std::size_t>(i)]);  // delta method
    w[i] = weighted ? 1.0 / (sd[i] * sd[i]) : 1.0;
  }
  const Eigen::MatrixXd xtw = x.transpose() * w.asDiagonal();
  const Eigen::Vector2d b = (xtw * x).ldlt().solve(xtw * y);
  t.intercept = b[0];
  t.slope = b[1];
  t.kappa_hat = -t.slope / dt;
  t.kappa_hat_discrete = (1.0 - std::exp(t.slope)) / dt;
  const Eigen::VectorXd eta = y - x * b;
  t.dof = static_cast<int>(k) - 2;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (std::abs(eta[i]) <= 1e-12) continue;
    t.wald += sd[i] > 0 ? eta[i] * eta[i] / (sd[i] * sd[i]) : std::numeric_limits<double>::infinity();
  }
  t.joint_p = chi2_sf(t.wald, t.dof);
  return t;
}

}  // namespace spatnet
