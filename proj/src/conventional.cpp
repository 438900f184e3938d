#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "spatnet/estimators.hpp"

namespace spatnet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Columns {
  std::vector<double> y, s, x1, x2, alpha;
  std::vector<std::array<double, 3>> controls;
  std::vector<bool> treated, band;
  double s_treated = 0.0, s_band = 0.0;
  std::size_t n_treated = 0, n_band = 0;
};

Columns columns(const Dataset& data, const EstimatorOptions& o, bool require_exposure = true) {
  data.check();
  Columns c;
  const std::size_t n = data.size();
  for (const auto& u : data.units) {
    c.y.push_back(u.outcome);
    c.s.push_back(u.source);
    c.x1.push_back(u.x[0]);
    c.x2.push_back(u.x[1]);
    c.alpha.push_back(u.alpha);
    c.controls.push_back(u.controls);
    const bool t = u.x[0] > o.border;
    const bool b = t && u.x[0] - o.border <= o.border_band;
    c.treated.push_back(t);
    c.band.push_back(b);
    if (t) c.s_treated += u.source, ++c.n_treated;
    if (b) c.s_band += u.source, ++c.n_band;
  }
  if (c.n_treated == 0 || c.n_treated == n) throw EstimatorError("need both treated and untreated units");
  if (c.n_band == 0) throw EstimatorError("no treated units inside the border band");
  c.s_treated /= static_cast<double>(c.n_treated);
  c.s_band /= static_cast<double>(c.n_band);
  if (require_exposure && (!(c.s_treated > 0) || !(c.s_band > 0))) throw EstimatorError("treated units carry no source exposure");
  return c;
}

// Linear map of a parameter covariance onto (direct, total_border).
Eigen::Matrix2d project(const Eigen::MatrixXd& v, const Eigen::VectorXd& g_direct, const Eigen::VectorXd& g_total) {
  Eigen::Matrix2d out;
  out(0, 0) = g_direct.dot(v * g_direct);
  out(1, 1) = g_total.dot(v * g_total);
  out(0, 1) = out(1, 0) = g_direct.dot(v * g_total);
  return out;
}


// ---------------------------------------------------------------- logistic
struct Logit {
  Eigen::VectorXd beta, p;
  Eigen::MatrixXd info_inv;  // (sum p(1-p) z z')^-1
};

Logit logistic(const Eigen::MatrixXd& z, const Eigen::VectorXd& d) {
  Logit l;
  l.beta = Eigen::VectorXd::Zero(z.cols());
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd eta = z * l.beta;
    l.p = (1.0 + (-eta.array()).exp()).inverse().matrix();
    const Eigen::VectorXd w = (l.p.array() * (1.0 - l.p.array())).matrix();
    const Eigen::MatrixXd h = z.transpose() * w.asDiagonal() * z;
    const Eigen::VectorXd step = h.ldlt().solve(z.transpose() * (d - l.p));
    if (!step.allFinite()) throw EstimatorError("propensity model is degenerate");
    l.beta += step;
    if (l.beta.cwiseAbs().maxCoeff() > 50.0 || (z * l.beta).cwiseAbs().maxCoeff() > 35.0)
      throw EstimatorError("propensity model is degenerate (perfect separation)");
    if (step.cwiseAbs().maxCoeff() < 1e-10) {
      const Eigen::VectorXd e2 = z * l.beta;
      l.p = (1.0 + (-e2.array()).exp()).inverse().matrix();
      const Eigen::VectorXd w2 = (l.p.array() * (1.0 - l.p.array())).matrix();
      l.info_inv = (z.transpose() * w2.asDiagonal() * z).ldlt().solve(Eigen::MatrixXd::Identity(z.cols(), z.cols()));
      return l;
    }
  }
  throw EstimatorError("propensity model did not converge");
}

// IPW ATT of `treat` against `control` units with its influence function.
struct Att {
  double att = 0.0;
  Eigen::VectorXd influence;  // zero outside the two groups
};

Att ipw_att(const Columns& c, const std::vector<bool>& treat, const std::vector<bool>& control) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < c.y.size(); ++i)
    if (treat[i] || control[i]) idx.push_back(i);
  const auto m = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd z(m, 4);
  Eigen::VectorXd d(m), y(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = idx[static_cast<std::size_t>(r)];
    z.row(r) << 1.0, c.controls[i][0], c.controls[i][1], c.controls[i][2];
    d[r] = treat[i] ? 1.0 : 0.0;
  }
  // centred outcomes make a constant outcome give exactly zero
  const double ref = c.y[idx.front()];
  for (Eigen::Index r = 0; r < m; ++r) y[r] = c.y[idx[static_cast<std::size_t>(r)]] - ref;
  const Logit l = logistic(z, d);
  Eigen::VectorXd p = l.p.cwiseMax(0.01).cwiseMin(0.99);
  const Eigen::VectorXd w = (p.array() / (1.0 - p.array())).matrix();
  const double n1 = d.sum();
  double sw = 0.0, swy = 0.0, sy1 = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    if (d[r] > 0) {
      sy1 += y[r];
    } else {
      sw += w[r];
      swy += w[r] * y[r];
    }
  }
  const double mu1 = sy1 / n1, mu0 = swy / sw;
  Att a;
  a.att = mu1 - mu0;
  // influence: treated mean, weighted control mean, and the propensity step
  const double nn = static_cast<double>(m);
  const double pbar = n1 / nn, ew = sw / nn;
  Eigen::VectorXd dmu0 = Eigen::VectorXd::Zero(4);
  for (Eigen::Index r = 0; r < m; ++r)
    if (d[r] == 0) dmu0 += w[r] * (y[r] - mu0) * z.row(r).transpose();
  dmu0 /= nn * ew;
  a.influence = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.y.size()));
  for (Eigen::Index r = 0; r < m; ++r) {
    const double if1 = d[r] * (y[r] - mu1) / pbar;
    const double if0 = (1.0 - d[r]) * w[r] * (y[r] - mu0) / ew;
    const Eigen::VectorXd ifb = nn * l.info_inv * z.row(r).transpose() * (d[r] - l.p[r]);
    a.influence[static_cast<Eigen::Index>(idx[static_cast<std::size_t>(r)])] = if1 - if0 - dmu0.dot(ifb);
  }
  a.influence *= static_cast<double>(c.y.size()) / nn;  // rescale to the full-sample mean
  return a;
}

// ---------------------------------------------------------------- GPS pieces
struct GpsModel {
  Eigen::Vector4d b;
  double sigma = 0.0;
  double density(double s, const std::array<double, 3>& x) const {
    const double mu = b[0] + b[1] * x[0] + b[2] * x[1] + b[3] * x[2];
    const double z = (s - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
  }
};

GpsModel fit_gps(const Columns& c, const std::vector<std::size_t>& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(n, 4);
  Eigen::VectorXd s(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto i = rows[static_cast<std::size_t>(r)];
    x.row(r) << 1.0, c.controls[i][0], c.controls[i][1], c.controls[i][2];
    s[r] = c.s[i];
  }
  GpsModel g;
  g.b = x.colPivHouseholderQr().solve(s);
  const Eigen::VectorXd e = s - x * g.b;
  g.sigma = std::sqrt(e.squaredNorm() / static_cast<double>(n));
  if (!(g.sigma > 0)) throw EstimatorError("treatment has no residual variation given controls");
  return g;
}

using Vec7 = Eigen::Matrix<double, 7, 1>;

struct LocalFit {
  Vec7 beta;  // intercept, slope in s, R, R^2, controls
  bool ok = false;
  double at(double r, const std::array<double, 3>& x) const {
    return beta[0] + beta[2] * r + beta[3] * r * r + beta[4] * x[0] + beta[5] * x[1] + beta[6] * x[2];
  }
};

// Kernel-weighted regression of y on (1, s - s0, R, R^2, X); `skip` drops one row.
LocalFit local_fit(const Columns& c, const std::vector<double>& r, const std::vector<std::size_t>& rows, double s0,
                   double h, std::size_t skip = SIZE_MAX) {
  Eigen::Matrix<double, 7, 7> a = Eigen::Matrix<double, 7, 7>::Zero();
  Vec7 b = Vec7::Zero();
  for (std::size_t q = 0; q < rows.size(); ++q) {
    if (q == skip) continue;
    const auto i = rows[q];
    const double u = (c.s[i] - s0) / h;
    const double w = std::exp(-0.5 * u * u);
    if (w < 1e-14) continue;
    const auto& x = c.controls[i];
    Vec7 v;
    v << 1.0, c.s[i] - s0, r[q], r[q] * r[q], x[0], x[1], x[2];
    a.noalias() += w * v * v.transpose();
    b.noalias() += w * v * c.y[i];
  }
  LocalFit f;
  // scale-aware ridge guard against empty kernels
  const double ridge = 1e-12 * std::max(1.0, a.diagonal().maxCoeff());
  a.diagonal().array() += ridge;
  Eigen::LDLT<Eigen::Matrix<double, 7, 7>> ldlt(a);
  if (ldlt.info() != Eigen::Success) return f;
  f.beta = ldlt.solve(b);
  f.ok = f.beta.allFinite();
  return f;
}

struct GpsEstimate {
  double direct = 0.0, total = 0.0;
};

GpsEstimate gps_point(const Columns& c, const std::vector<std::size_t>& rows, double h, double scale) {
  const GpsModel g = fit_gps(c, rows);
  std::vector<double> r(rows.size());
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t q = 0; q < rows.size(); ++q) {
    const auto i = rows[q];
    r[q] = g.density(c.s[i], c.controls[i]);
    if (c.s[i] > 0) lo = std::min(lo, c.s[i]), hi = std::max(hi, c.s[i]);
  }
  if (!(hi >= lo)) throw EstimatorError("no units with positive treatment");
  // Hirano-Imbens dose response: average the fitted surface over the GPS at s,
  // with the controls entering the kernel regression linearly
  auto mu = [&](double s0) {
    const LocalFit f = local_fit(c, r, rows, s0, h);
    if (!f.ok) throw EstimatorError("dose-response fit failed");
    double m = 0.0;
    for (const auto i : rows) m += f.at(g.density(s0, c.controls[i]), c.controls[i]);
    return m / static_cast<double>(rows.size());
  };
  // derivative of the dose response on a grid over the treated support
  const int grid = hi > lo ? 25 : 1;
  const double delta = 0.01 * h;
  std::vector<double> slope(static_cast<std::size_t>(grid));
  for (int k = 0; k < grid; ++k) {
    const double s0 = grid == 1 ? lo : lo + (hi - lo) * k / (grid - 1);
    slope[static_cast<std::size_t>(k)] = (mu(s0 + delta) - mu(s0 - delta)) / (2.0 * delta);
  }
  double sum = 0.0;
  int n = 0;
  for (const auto i : rows) {
    if (!(c.s[i] > 0)) continue;
    double v = slope[0];
    if (grid > 1) {
      const double t = (c.s[i] - lo) / (hi - lo) * (grid - 1);
      const int k = std::min(grid - 2, static_cast<int>(t));
      v = slope[static_cast<std::size_t>(k)] + (t - k) * (slope[static_cast<std::size_t>(k + 1)] - slope[static_cast<std::size_t>(k)]);
    }
    sum += v;
    ++n;
  }
  double s_band = 0.0;
  int nb = 0;
  for (const auto i : rows)
    if (c.band[i]) s_band += c.s[i], ++nb;
  if (nb == 0) throw EstimatorError("no treated units inside the border band");
  s_band /= nb;
  GpsEstimate e;
  e.direct = scale * sum / n;
  e.total = scale * (mu(s_band) - mu(0.0)) / s_band;
  return e;
}

double gps_cv_bandwidth(const Columns& c, const std::vector<std::size_t>& rows) {
  const GpsModel g = fit_gps(c, rows);
  std::vector<double> r(rows.size());
  double mean = 0, sq = 0;
  for (std::size_t q = 0; q < rows.size(); ++q) {
    const auto i = rows[q];
    r[q] = g.density(c.s[i], c.controls[i]);
    mean += c.s[i];
    sq += c.s[i] * c.s[i];
  }
  mean /= static_cast<double>(rows.size());
  const double sd = std::sqrt(std::max(1e-300, sq / static_cast<double>(rows.size()) - mean * mean));
  const std::array<double, 11> mult{0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0};
  double best_h = sd, best = std::numeric_limits<double>::infinity();
  for (double m : mult) {
    const double h = m * sd;
    double cv = 0.0;
    bool ok = true;
    for (std::size_t q = 0; q < rows.size() && ok; ++q) {
      const LocalFit f = local_fit(c, r, rows, c.s[rows[q]], h, q);
      if (!f.ok) {
        ok = false;
        break;
      }
      const double pred = f.at(r[q], c.controls[rows[q]]);
      cv += (c.y[rows[q]] - pred) * (c.y[rows[q]] - pred);
    }
    if (ok && cv < best) best = cv, best_h = h;
  }
  return best_h;
}

// ---------------------------------------------------------------- RD pieces
struct SideFit {
  double intercept = 0.0, var = 0.0;
  int n = 0;
};

// Local linear fit at the cutoff with a triangular kernel, one side.
SideFit local_linear_side(const Columns& c, double border, double h, bool right) {
  Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  std::vector<std::size_t> used;
  for (std::size_t i = 0; i < c.y.size(); ++i) {
    const double r = c.x1[i] - border;
    if ((r > 0) != right || std::abs(r) >= h) continue;
    const double w = 1.0 - std::abs(r) / h;
    const Eigen::Vector2d v(1.0, r);
    a += w * v * v.transpose();
    b += w * v * c.y[i];
    used.push_back(i);
  }
  SideFit s;
  s.n = static_cast<int>(used.size());
  if (s.n < 3) return s;
  const Eigen::Matrix2d ai = a.inverse();
  const Eigen::Vector2d beta = ai * b;
  s.intercept = beta[0];
  Eigen::Matrix2d meat = Eigen::Matrix2d::Zero();
  for (const auto i : used) {
    const double r = c.x1[i] - border;
    const double w = 1.0 - std::abs(r) / h;
    const Eigen::Vector2d v(1.0, r);
    const double e = c.y[i] - v.dot(beta);
    meat += w * w * e * e * v * v.transpose();
  }
  const double k = static_cast<double>(s.n);
  s.var = (ai * meat * ai)(0, 0) * k / (k - 2.0);
  return s;
}

// Imbens-Kalyanaraman (2012) bandwidth for a sharp design, triangular kernel.
double ik_bandwidth(const Columns& c, double border, std::map<std::string, double>& diag) {
  const std::size_t n = c.y.size();
  std::vector<double> r(n);
  double mean = 0, sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = c.x1[i] - border;
    mean += r[i];
    sq += r[i] * r[i];
  }
  mean /= static_cast<double>(n);
  const double sx = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  const double h1 = 1.84 * sx * std::pow(static_cast<double>(n), -0.2);
  // step 1: density and conditional variances near the cutoff
  int nl = 0, nr = 0;
  double yl = 0, yl2 = 0, yr = 0, yr2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(r[i]) > h1) continue;
    if (r[i] > 0) {
      ++nr, yr += c.y[i], yr2 += c.y[i] * c.y[i];
    } else {
      ++nl, yl += c.y[i], yl2 += c.y[i] * c.y[i];
    }
  }
  if (nl < 2 || nr < 2) throw EstimatorError("too few units near the border for bandwidth selection");
  const double var_l = (yl2 - yl * yl / nl) / (nl - 1), var_r = (yr2 - yr * yr / nr) / (nr - 1);
  const double f = (nl + nr) / (2.0 * static_cast<double>(n) * h1);
  // step 2: third derivative from a global cubic between the side medians
  std::vector<double> left, right;
  for (double v : r) (v > 0 ? right : left).push_back(v);
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  const double ml = median(left), mr = median(right);
  std::vector<std::size_t> mid;
  for (std::size_t i = 0; i < n; ++i)
    if (r[i] >= ml && r[i] <= mr) mid.push_back(i);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(mid.size()), 5);
  Eigen::VectorXd yy(static_cast<Eigen::Index>(mid.size()));
  for (std::size_t q = 0; q < mid.size(); ++q) {
    const double v = r[mid[q]];
    x.row(static_cast<Eigen::Index>(q)) << 1.0, v > 0 ? 1.0 : 0.0, v, v * v, v * v * v;
    yy[static_cast<Eigen::Index>(q)] = c.y[mid[q]];
  }
  const Eigen::VectorXd g = x.colPivHouseholderQr().solve(yy);
  const double m3 = 6.0 * g[4];
  // step 3: second derivatives on each side with pilot bandwidths
  const double m3sq = std::max(m3 * m3, 1e-300);
  const double nlf = static_cast<double>(left.size()), nrf = static_cast<double>(right.size());
  const double h2l = 3.56 * std::pow(var_l / (f * m3sq), 1.0 / 7.0) * std::pow(nlf, -1.0 / 7.0);
  const double h2r = 3.56 * std::pow(var_r / (f * m3sq), 1.0 / 7.0) * std::pow(nrf, -1.0 / 7.0);
  auto curvature = [&](bool side, double h2, int& count) {
    std::vector<std::size_t> use;
    for (std::size_t i = 0; i < n; ++i)
      if ((r[i] > 0) == side && std::abs(r[i]) <= h2) use.push_back(i);
    count = static_cast<int>(use.size());
    if (count < 4) return 0.0;
    Eigen::MatrixXd xx(count, 3);
    Eigen::VectorXd y2(count);
    for (int q = 0; q < count; ++q) {
      const double v = r[use[static_cast<std::size_t>(q)]];
      xx.row(q) << 1.0, v, v * v;
      y2[q] = c.y[use[static_cast<std::size_t>(q)]];
    }
    return 2.0 * xx.colPivHouseholderQr().solve(y2)[2];
  };
  int n2l = 0, n2r = 0;
  const double m2l = curvature(false, h2l, n2l), m2r = curvature(true, h2r, n2r);
  // step 4: regularization and the optimal bandwidth
  const double rl = n2l > 0 ? 2160.0 * var_l / (n2l * std::pow(h2l, 4)) : 0.0;
  const double rr = n2r > 0 ? 2160.0 * var_r / (n2r * std::pow(h2r, 4)) : 0.0;
  const double ck = 3.4375;
  const double h = ck * std::pow((var_l + var_r) / (f * ((m2r - m2l) * (m2r - m2l) + rl + rr)), 0.2) *
                   std::pow(static_cast<double>(n), -0.2);
  diag["ik_pilot_h1"] = h1;
  if (!std::isfinite(h) || !(h > 0)) {
    // zero conditional variance (noiseless data): keep the pilot bandwidth
    diag["ik_degenerate"] = 1.0;
    return h1;
  }
  diag["ik_m3"] = m3;
  diag["ik_regularization"] = rl + rr;
  diag["ik_constant"] = ck;
  return h;
}

// Steady profile of a unit step source at `border` on [lo, hi] with zero-flux
// walls and decay length ell: 0 far on the untreated side, 1 far inside.
double step_profile(double x, double border, double lo, double hi, double ell) {
  const double a = (border - lo) / ell, c = (hi - border) / ell;
  const double tc = std::tanh(a) / std::tanh(c);
  const double left = 1.0 / (1.0 + tc);  // C1 cosh(a)
  if (x <= border) {
    const double t = (x - lo) / ell;
    const double ratio = (std::exp(t - a) + std::exp(-t - a)) / (1.0 + std::exp(-2.0 * a));
    return left * ratio;
  }
  const double t = (hi - x) / ell;
  const double ratio = (std::exp(t - c) + std::exp(-t - c)) / (1.0 + std::exp(-2.0 * c));
  return 1.0 - tc * left * ratio;
}

}  // namespace

// ------------------------------------------------------------------- TWFE
EstimateReport twfe(const Dataset& data, const EstimatorOptions& o) {
  if (o.n_bins < 2) throw InputError("twfe needs at least two bins");
  const Columns c = columns(data, o, false);
  const auto n = static_cast<Eigen::Index>(c.y.size());
  const int k = 5 + o.n_bins;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, k);
  std::vector<int> bin(c.y.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto q = static_cast<std::size_t>(i);
    bin[q] = std::clamp(static_cast<int>(c.x2[q] / 100.0 * o.n_bins), 0, o.n_bins - 1);
    x(i, 0) = c.s[q];
    x(i, 1) = c.treated[q] ? 1.0 : 0.0;
    x(i, 2) = c.controls[q][0];
    x(i, 3) = c.controls[q][1];
    x(i, 4) = c.controls[q][2];
    x(i, 5 + bin[q]) = 1.0;
  }
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(c.y.data(), n);
  const LinearFit f = ols(x, y);
  const Eigen::MatrixXd v = cluster_cov(x, f, bin);
  EstimateReport r;
  r.estimator = "twfe";
  // bins act as periods and the treated side as the unit effect; the border
  // contrast combines both treatment terms
  const int ps = f.position(0), pd = f.position(1);
  const double bs = ps >= 0 ? f.beta[0] : 0.0;
  const double bd = pd >= 0 ? f.beta[1] : 0.0;
  if (ps < 0) r.notes["warning"] = "S has no variation net of the other regressors; its effect is set to 0";
  const bool exposed = c.s_band > 0;
  r.direct = o.effect_scale * bs;
  r.total_border = o.effect_scale * (bs + (exposed ? bd / c.s_band : 0.0));
  Eigen::VectorXd gd = Eigen::VectorXd::Zero(v.rows()), gt = gd;
  if (ps >= 0) gd[ps] = gt[ps] = o.effect_scale;
  if (pd >= 0 && exposed) gt[pd] = o.effect_scale / c.s_band;
  r.cov = project(v, gd, gt);
  r.diagnostics["n_bins"] = o.n_bins;
  r.diagnostics["beta_treated_side"] = bd;
  r.diagnostics["beta_s"] = bs;
  r.finalize();
  return r;
}

// ------------------------------------------------------------------- DiD
EstimateReport did(const Dataset& data, const EstimatorOptions& o) {
  const Columns c = columns(data, o);
  std::vector<bool> control(c.y.size());
  for (std::size_t i = 0; i < c.y.size(); ++i) control[i] = !c.treated[i];
  const Att all = ipw_att(c, c.treated, control);
  const Att band = ipw_att(c, c.band, control);
  EstimateReport r;
  r.estimator = "did";
  r.direct = o.effect_scale * all.att / c.s_treated;
  r.total_border = o.effect_scale * band.att / c.s_band;
  const double n = static_cast<double>(c.y.size());
  const Eigen::VectorXd a = all.influence * (o.effect_scale / c.s_treated);
  const Eigen::VectorXd b = band.influence * (o.effect_scale / c.s_band);
  r.cov(0, 0) = a.squaredNorm() / (n * n);
  r.cov(1, 1) = b.squaredNorm() / (n * n);
  r.cov(0, 1) = r.cov(1, 0) = a.dot(b) / (n * n);
  r.diagnostics["att"] = all.att;
  r.diagnostics["att_border_band"] = band.att;
  r.diagnostics["propensity_trim_lo"] = 0.01;
  r.diagnostics["propensity_trim_hi"] = 0.99;
  r.finalize();
  return r;
}

// ------------------------------------------------------------------- GPS
EstimateReport gps(const Dataset& data, const EstimatorOptions& o) {
  data.check();
  if (std::none_of(data.units.begin(), data.units.end(), [](const UnitRecord& u) { return u.source != 0.0; }))
    throw EstimatorError("treatment is zero for every unit");
  const Columns c = columns(data, o);
  std::vector<std::size_t> rows(c.y.size());
  std::iota(rows.begin(), rows.end(), 0);
  const double h = o.gps_bandwidth ? *o.gps_bandwidth : gps_cv_bandwidth(c, rows);
  if (!(h > 0)) throw InputError("GPS bandwidth must be positive");
  const GpsEstimate e = gps_point(c, rows, h, o.effect_scale);
  EstimateReport r;
  r.estimator = "gps";
  r.direct = e.direct;
  r.total_border = e.total;
  if (o.bootstrap >= 2) {
    std::mt19937_64 rng(derive_seed(SeedSpec{o.seed}, "gps-bootstrap", 0));
    std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
    std::vector<Eigen::Vector2d> draws;
    int failed = 0;
    for (int b = 0; b < o.bootstrap; ++b) {
      std::vector<std::size_t> sample(rows.size());
      for (auto& s : sample) s = pick(rng);
      try {
        const GpsEstimate eb = gps_point(c, sample, h, o.effect_scale);
        draws.emplace_back(eb.direct, eb.total);
      } catch (const EstimatorError&) {
        ++failed;
      }
    }
    if (draws.size() < 2) throw EstimatorError("bootstrap failed");
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& d : draws) mean += d;
    mean /= static_cast<double>(draws.size());
    for (const auto& d : draws) r.cov += (d - mean) * (d - mean).transpose();
    r.cov /= static_cast<double>(draws.size() - 1);
    r.diagnostics["bootstrap_failures"] = failed;
  }
  r.diagnostics["bandwidth"] = h;
  r.diagnostics["bootstrap"] = o.bootstrap;
  r.finalize();
  return r;
}

// ------------------------------------------------------------------- RD
EstimateReport spatial_rd(const Dataset& data, const EstimatorOptions& o) {
  const Columns c = columns(data, o);
  EstimateReport r;
  r.estimator = "spatial_rd";
  const double h = o.rd_bandwidth ? *o.rd_bandwidth : ik_bandwidth(c, o.border, r.diagnostics);
  if (!(h > 0)) throw InputError("RD bandwidth must be positive");
  const SideFit left = local_linear_side(c, o.border, h, false), right = local_linear_side(c, o.border, h, true);
  if (left.n < 20 || right.n < 20) throw EstimatorError("fewer than 20 units per side within the RD bandwidth");
  const double jump = right.intercept - left.intercept;
  r.diagnostics["bandwidth"] = h;
  r.diagnostics["discontinuity"] = jump;
  r.diagnostics["discontinuity_se"] = std::sqrt(left.var + right.var);
  r.diagnostics["n_left"] = left.n;
  r.diagnostics["n_right"] = right.n;
  r.diagnostics["discontinuity_direct"] = o.effect_scale * jump / c.s_band;

  // attenuation profile Y = a + A h(x1; ell) + X'g, ell profiled out
  SpatialDomain dom;
  const auto n = static_cast<Eigen::Index>(c.y.size());
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(c.y.data(), n);
  auto design = [&](double ell) {
    Eigen::MatrixXd x(n, 5);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto q = static_cast<std::size_t>(i);
      x.row(i) << 1.0, step_profile(c.x1[q], o.border, dom.x1_lo, dom.x1_hi, ell), c.controls[q][0],
          c.controls[q][1], c.controls[q][2];
    }
    return x;
  };
  auto ssr = [&](double ell) {
    const Eigen::MatrixXd x = design(ell);
    return (y - x * x.colPivHouseholderQr().solve(y)).squaredNorm();
  };
  const double lo = std::log(0.25), hi = std::log(100.0);
  const int grid = 36;
  int best = 0;
  double best_v = std::numeric_limits<double>::infinity();
  for (int k = 0; k < grid; ++k) {
    const double v = ssr(std::exp(lo + (hi - lo) * k / (grid - 1)));
    if (v < best_v) best_v = v, best = k;
  }
  double a = lo + (hi - lo) * std::max(0, best - 1) / (grid - 1);
  double b = lo + (hi - lo) * std::min(grid - 1, best + 1) / (grid - 1);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 40; ++it) {
    const double m1 = b - gr * (b - a), m2 = a + gr * (b - a);
    if (ssr(std::exp(m1)) < ssr(std::exp(m2))) b = m2; else a = m1;
  }
  const double ell = std::exp(0.5 * (a + b));
  const Eigen::MatrixXd x = design(ell);
  const Eigen::VectorXd beta = x.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd e = y - x * beta;
  const double amp = beta[1];
  // sandwich over (a, A, g, ell) with a numerical profile derivative
  const double dl = 1e-4 * ell;
  Eigen::MatrixXd j(n, 6);
  j.leftCols(5) = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto q = static_cast<std::size_t>(i);
    j(i, 5) = amp * (step_profile(c.x1[q], o.border, dom.x1_lo, dom.x1_hi, ell + dl) -
                     step_profile(c.x1[q], o.border, dom.x1_lo, dom.x1_hi, ell - dl)) / (2.0 * dl);
  }
  const Eigen::MatrixXd jtj = j.transpose() * j;
  const Eigen::MatrixXd bread = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(jtj).pseudoInverse();
  const Eigen::MatrixXd meat = j.transpose() * e.array().square().matrix().asDiagonal() * j;
  const double dof = static_cast<double>(n) / static_cast<double>(n - 6);
  const Eigen::MatrixXd v = dof * bread * meat * bread;

  auto band_mean = [&](double l) {
    double m = 0;
    for (std::size_t i = 0; i < c.y.size(); ++i)
      if (c.band[i]) m += step_profile(c.x1[i], o.border, dom.x1_lo, dom.x1_hi, l);
    return m / static_cast<double>(c.n_band);
  };
  const double hb = band_mean(ell);
  const double dhb = (band_mean(ell + dl) - band_mean(ell - dl)) / (2.0 * dl);
  r.direct = o.effect_scale * amp / c.s_treated;
  r.total_border = o.effect_scale * amp * hb / c.s_band;
  Eigen::VectorXd gd = Eigen::VectorXd::Zero(6), gt = gd;
  gd[1] = o.effect_scale / c.s_treated;
  gt[1] = o.effect_scale * hb / c.s_band;
  gt[5] = o.effect_scale * amp * dhb / c.s_band;
  r.cov = project(v, gd, gt);
  r.diagnostics["decay_length"] = ell;
  r.diagnostics["amplitude"] = amp;
  r.finalize();
  return r;
}

// ------------------------------------------------------------------- IV
EstimateReport network_iv(const Dataset& data, const EstimatorOptions& o) {
  if (!data.lagged_network) throw InputError("network_iv needs a lagged network");
  const Columns c = columns(data, o);
  const auto ne = network_exposure(data.network, c.s);
  const auto zl = network_exposure(*data.lagged_network, c.s);
  const auto n = static_cast<Eigen::Index>(c.y.size());
  Eigen::MatrixXd x(n, 6), z(n, 6);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto q = static_cast<std::size_t>(i);
    x.row(i) << 1.0, c.s[q], ne[q], c.controls[q][0], c.controls[q][1], c.controls[q][2];
    z.row(i) << 1.0, c.s[q], zl[q], c.controls[q][0], c.controls[q][1], c.controls[q][2];
  }
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(c.y.data(), n);
  // first stage
  const Eigen::VectorXd nev = x.col(2);
  const LinearFit fs = ols(z, nev, false);
  if (fs.position(2) < 0) throw EstimatorError("lagged exposure is collinear with the other instruments");
  const Eigen::MatrixXd vfs = hc1_cov(z, fs);
  const double t = fs.beta[2] / std::sqrt(vfs(fs.position(2), fs.position(2)));
  const double f_stat = t * t;
  const Eigen::MatrixXd ztz = z.transpose() * z;
  const Eigen::MatrixXd xhat = z * ztz.ldlt().solve(z.transpose() * x);
  const Eigen::MatrixXd a = xhat.transpose() * xhat;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) throw EstimatorError("2SLS design is singular");
  const Eigen::VectorXd beta = ldlt.solve(xhat.transpose() * y);
  const Eigen::VectorXd e = y - x * beta;
  const Eigen::MatrixXd ai = ldlt.solve(Eigen::MatrixXd::Identity(6, 6));
  const Eigen::MatrixXd meat = xhat.transpose() * e.array().square().matrix().asDiagonal() * xhat;
  const Eigen::MatrixXd v = static_cast<double>(n) / static_cast<double>(n - 6) * ai * meat * ai;
  double ne_band = 0.0;
  for (std::size_t i = 0; i < c.y.size(); ++i)
    if (c.band[i]) ne_band += ne[i];
  ne_band /= static_cast<double>(c.n_band);
  EstimateReport r;
  r.estimator = "network_iv";
  r.direct = o.effect_scale * beta[1];
  r.total_border = o.effect_scale * (beta[1] * c.s_band + beta[2] * ne_band) / c.s_band;
  Eigen::VectorXd gd = Eigen::VectorXd::Zero(6), gt = gd;
  gd[1] = o.effect_scale;
  gt[1] = o.effect_scale;
  gt[2] = o.effect_scale * ne_band / c.s_band;
  r.cov = project(v, gd, gt);
  r.diagnostics["beta_s"] = beta[1];
  r.diagnostics["beta_n"] = beta[2];
  r.diagnostics["first_stage_f"] = f_stat;
  r.diagnostics["weak_instrument"] = f_stat < 4.0 ? 1.0 : 0.0;
  if (f_stat < 4.0) r.notes["warning"] = "weak first stage (F < 4)";
  r.finalize();
  return r;
}

}  // namespace spatnet
