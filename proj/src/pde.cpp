#include "spatnet/pde.hpp"

#include <Eigen/Sparse>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

extern "C" void dgbsv_(int* n, int* kl, int* ku, int* nrhs, double* ab, int* ldab, int* ipiv, double* b, int* ldb,
                       int* info);
extern "C" void dgbtrf_(int* m, int* n, int* kl, int* ku, double* ab, int* ldab, int* ipiv, int* info);
extern "C" void dgbtrs_(const char* trans, int* n, int* kl, int* ku, int* nrhs, const double* ab, int* ldab,
                        const int* ipiv, double* b, int* ldb, int* info, std::size_t trans_len);

namespace spatnet {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

void SolverOptions::check() const {
  if (!(tolerance > 0.0)) throw InputError("solver tolerance must be > 0");
  if (max_iterations < 1) throw InputError("max_iterations must be >= 1");
  if (!(picard_damping > 0.0 && picard_damping <= 1.0)) {
    throw InputError("picard_damping must lie in (0, 1]");
  }
}

namespace {

// Mirror ghost index for a vertex-centred axis: -1 -> 1, n -> n-2.
inline int mirror(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

void require_valid(const StructuralParams& p) {
  auto v = validate(p);
  if (!v.empty()) {
    std::ostringstream os;
    os << "invalid structural parameters:";
    for (const auto& s : v) os << ' ' << s << ';';
    throw InputError(os.str());
  }
}

// Triplets of the operator L (without the decay term).
std::vector<Eigen::Triplet<double>> operator_triplets(const StructuralParams& p,
                                                      const GridField& g) {
  const int n1 = g.n1(), n2 = g.n2(), na = g.na();
  const auto h = g.spacing();
  const double c1 = p.nu_s / (h[0] * h[0]);
  const double c2 = p.nu_s / (h[1] * h[1]);
  const double ca = p.nu_n / (h[2] * h[2]);
  const double cx = p.lambda / (4.0 * h[0] * h[2]);

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(g.size() * 11);
  for (int i = 0; i < n1; ++i) {
    for (int j = 0; j < n2; ++j) {
      for (int k = 0; k < na; ++k) {
        const auto row = static_cast<int>(g.index(i, j, k));
        auto add = [&](int ii, int jj, int kk, double v) {
          trip.emplace_back(row, static_cast<int>(g.index(mirror(ii, n1), mirror(jj, n2), mirror(kk, na))), v);
        };
        if (c1 != 0.0) {
          add(i + 1, j, k, c1);
          add(i - 1, j, k, c1);
          add(i, j, k, -2.0 * c1);
        }
        if (c2 != 0.0) {
          add(i, j + 1, k, c2);
          add(i, j - 1, k, c2);
          add(i, j, k, -2.0 * c2);
        }
        if (ca != 0.0) {
          add(i, j, k + 1, ca);
          add(i, j, k - 1, ca);
          add(i, j, k, -2.0 * ca);
        }
        if (cx != 0.0) {
          add(i + 1, j, k + 1, cx);
          add(i + 1, j, k - 1, -cx);
          add(i - 1, j, k + 1, -cx);
          add(i - 1, j, k - 1, cx);
        }
      }
    }
  }
  return trip;
}

// Returns a * I - b * L.
constexpr Eigen::Index kDirectLimit = 20000;

SpMat shifted_operator(const StructuralParams& p, const GridField& g, double a, double b) {
  auto trip = operator_triplets(p, g);
  for (auto& t : trip) t = Eigen::Triplet<double>(t.row(), t.col(), -b * t.value());
  const auto n = static_cast<int>(g.size());
  for (int r = 0; r < n; ++r) trip.emplace_back(r, r, a);
  SpMat m(n, n);
  m.setFromTriplets(trip.begin(), trip.end());
  m.makeCompressed();
  return m;
}

Vec to_vec(const GridField& f) {
  return Eigen::Map<const Vec>(f.values().data(), static_cast<Eigen::Index>(f.size()));
}

void from_vec(const Vec& v, GridField& f) {
  std::copy(v.data(), v.data() + v.size(), f.values().begin());
}

bool is_pure_decay(const StructuralParams& p) {
  return p.nu_s == 0.0 && p.nu_n == 0.0 && p.lambda == 0.0;
}

// Solves m x = rhs until the sup-norm residual is below tol, restarting the
// Krylov iteration from the current iterate when needed.
Vec krylov_solve(const SpMat& m, const Vec& rhs, const Vec& guess, const SolverOptions& opts,
                 double tol, SolveInfo* info) {
  Eigen::BiCGSTAB<SpMat, Eigen::DiagonalPreconditioner<double>> solver;
  solver.setTolerance(opts.inner_tolerance);
  solver.setMaxIterations(opts.max_inner_iterations);
  solver.compute(m);
  Vec x = guess;
  double res = (rhs - m * x).lpNorm<Eigen::Infinity>();
  int restarts = 0;
  int total_iters = 0;
  while (res > tol) {
    if (restarts >= opts.max_iterations) {
      throw SolverError("linear solve did not reach tolerance", res, total_iters);
    }
    x = solver.solveWithGuess(rhs, x);
    total_iters += static_cast<int>(solver.iterations());
    const double next = (rhs - m * x).lpNorm<Eigen::Infinity>();
    ++restarts;
    if (!std::isfinite(next)) throw SolverError("linear solve produced non-finite values", next, total_iters);
    if (next >= res && restarts > 3) {
      throw SolverError("linear solve stalled", next, total_iters);
    }
    res = next;
  }
  if (info) {
    info->iterations = total_iters;
    info->residual = res;
  }
  return x;
}

GridField first_derivative(const GridField& f, int axis) {
  GridField d(f.domain());
  const auto h = f.spacing();
  const int n1 = f.n1(), n2 = f.n2(), na = f.na();
  for (int i = 0; i < n1; ++i) {
    for (int j = 0; j < n2; ++j) {
      for (int k = 0; k < na; ++k) {
        double v = 0.0;
        if (axis == 0) {
          v = (f.at(mirror(i + 1, n1), j, k) - f.at(mirror(i - 1, n1), j, k)) / (2.0 * h[0]);
        } else if (axis == 1) {
          v = (f.at(i, mirror(j + 1, n2), k) - f.at(i, mirror(j - 1, n2), k)) / (2.0 * h[1]);
        } else {
          v = (f.at(i, j, mirror(k + 1, na)) - f.at(i, j, mirror(k - 1, na))) / (2.0 * h[2]);
        }
        d.at(i, j, k) = v;
      }
    }
  }
  return d;
}

GridField interaction_product(double lambda, const GridField& tau) {
  GridField dx = first_derivative(tau, 0);
  const GridField da = first_derivative(tau, 2);
  for (std::size_t i = 0; i < dx.size(); ++i) dx.values()[i] *= lambda * da.values()[i];
  return dx;
}

}  // namespace

GridField apply_operator(const StructuralParams& params, const GridField& tau) {
  const auto trip = operator_triplets(params, tau);
  GridField out(tau.domain());
  for (const auto& t : trip) {
    out.values()[static_cast<std::size_t>(t.row())] += t.value() * tau.values()[static_cast<std::size_t>(t.col())];
  }
  return out;
}

double linear_residual(const StructuralParams& params, const GridField& tau, const GridField& S) {
  GridField r = apply_operator(params, tau);
  for (std::size_t i = 0; i < r.size(); ++i) {
    r.values()[i] += -params.kappa * tau.values()[i] + S.values()[i];
  }
  return r.sup_norm();
}

double dgp_residual(const StructuralParams& params, const GridField& tau, const GridField& S) {
  StructuralParams diffusion_only = params;
  diffusion_only.lambda = 0.0;
  GridField r = apply_operator(diffusion_only, tau);
  const GridField prod = interaction_product(params.lambda, tau);
  for (std::size_t i = 0; i < r.size(); ++i) {
    r.values()[i] += -params.kappa * tau.values()[i] + prod.values()[i] + S.values()[i];
  }
  return r.sup_norm();
}

GridField steady_state_linear(const StructuralParams& params, const GridField& S,
                              const SolverOptions& opts, SolveInfo* info, const GridField* guess) {
  require_valid(params);
  opts.check();
  if (!S.all_finite()) throw InputError("source field has non-finite values");
  GridField tau(S.domain());
  if (is_pure_decay(params)) {
    for (std::size_t i = 0; i < tau.size(); ++i) tau.values()[i] = S.values()[i] / params.kappa;
    if (info) *info = {0, linear_residual(params, tau, S)};
    return tau;
  }
  const SpMat m = shifted_operator(params, S, params.kappa, 1.0);
  const Vec rhs = to_vec(S);
  Vec start;
  if (guess != nullptr && guess->same_lattice(S) && guess->all_finite()) {
    start = to_vec(*guess);
  } else {
    start = rhs / params.kappa;
  }
  from_vec(krylov_solve(m, rhs, start, opts, opts.tolerance, info), tau);
  return tau;
}

GridField steady_state_dgp(const StructuralParams& params, const GridField& S,
                           const SolverOptions& opts, SolveInfo* info) {
  require_valid(params);
  opts.check();
  StructuralParams diffusion_only = params;
  diffusion_only.lambda = 0.0;
  if (params.lambda == 0.0) return steady_state_linear(diffusion_only, S, opts, info);

  const SpMat m = shifted_operator(diffusion_only, S, params.kappa, 1.0);
  const Vec s = to_vec(S);
  GridField tau(S.domain());
  SolverOptions inner = opts;
  inner.max_iterations = 50;
  // start from the lambda = 0 solution
  from_vec(krylov_solve(m, s, s / params.kappa, inner, opts.tolerance * 0.1, nullptr), tau);

  double res = dgp_residual(params, tau, S);
  int growth = 0;
  int it = 0;
  while (res > opts.tolerance) {
    if (it >= opts.max_iterations) {
      throw SolverError("Picard iteration did not converge", res, it);
    }
    const GridField prod = interaction_product(params.lambda, tau);
    const Vec rhs = s + to_vec(prod);
    const Vec cur = to_vec(tau);
    const Vec next = krylov_solve(m, rhs, cur, inner, opts.tolerance * 0.1, nullptr);
    from_vec((1.0 - opts.picard_damping) * cur + opts.picard_damping * next, tau);
    ++it;
    const double r = dgp_residual(params, tau, S);
    if (!std::isfinite(r)) throw SolverError("Picard iteration produced non-finite values", r, it);
    growth = r > res ? growth + 1 : 0;
    res = r;
    if (growth >= 3) throw SolverError("Picard iteration diverging", res, it);
  }
  if (info) *info = {it, res};
  return tau;
}

namespace {

// LAPACK band storage of a I - b L on the reduced (x1, alpha) lattice, rows
// ordered i * na + k. Node (i, k) couples to i +- 1 and k +- 1, so both
// bandwidths are na + 1; ldab leaves room for the LU fill.
struct PlanarBand {
  int n = 0, kl = 0, ku = 0, ldab = 0;
  std::vector<double> ab;
};

PlanarBand planar_band(const StructuralParams& params, const std::array<double, 3>& h, int n1, int na, double a,
                       double b) {
  const double c1 = b * params.nu_s / (h[0] * h[0]);
  const double ca = b * params.nu_n / (h[2] * h[2]);
  const double cx = b * params.lambda / (4.0 * h[0] * h[2]);
  PlanarBand band;
  band.n = n1 * na;
  band.kl = band.ku = na + 1;
  band.ldab = 2 * band.kl + band.ku + 1;
  band.ab.assign(static_cast<std::size_t>(band.ldab) * static_cast<std::size_t>(band.n), 0.0);
  auto add = [&](int r, int c, double v) {
    band.ab[static_cast<std::size_t>(band.kl + band.ku + r - c) + static_cast<std::size_t>(c) * static_cast<std::size_t>(band.ldab)] += v;
  };
  auto id = [&](int i, int k) { return i * na + k; };
  for (int i = 0; i < n1; ++i)
    for (int k = 0; k < na; ++k) {
      const int r = id(i, k);
      const int ip = mirror(i + 1, n1), im = mirror(i - 1, n1), kp = mirror(k + 1, na), km = mirror(k - 1, na);
      add(r, r, a + 2.0 * c1 + 2.0 * ca);
      add(r, id(ip, k), -c1);
      add(r, id(im, k), -c1);
      add(r, id(i, kp), -ca);
      add(r, id(i, km), -ca);
      add(r, id(ip, kp), -cx);
      add(r, id(ip, km), cx);
      add(r, id(im, kp), cx);
      add(r, id(im, km), -cx);
    }
  return band;
}

void require_x2_constant(const GridField& f, const char* what) {
  for (int i = 0; i < f.n1(); ++i)
    for (int j = 1; j < f.n2(); ++j)
      for (int k = 0; k < f.na(); ++k)
        if (f.at(i, j, k) != f.at(i, 0, k)) throw InputError(std::string("planar solver needs ") + what + " constant in x2");
}

}  // namespace

GridField steady_state_linear_planar(const StructuralParams& params, const GridField& S,
                                     const SolverOptions& opts, SolveInfo* info) {
  require_valid(params);
  opts.check();
  if (!S.all_finite()) throw InputError("source field has non-finite values");
  const int n1 = S.n1(), n2 = S.n2(), na = S.na();
  require_x2_constant(S, "a source");
  if (is_pure_decay(params)) return steady_state_linear(params, S, opts, info);

  const auto h = S.spacing();
  const double c1 = params.nu_s / (h[0] * h[0]);
  const double cx = params.lambda / (4.0 * h[0] * h[2]);
  // Mirrored second difference in alpha is diagonalised by cos(pi m k / (na - 1)).
  Eigen::MatrixXd v(na, na);
  Eigen::VectorXd mu(na);
  for (int m = 0; m < na; ++m) {
    const double th = M_PI * m / (na - 1);
    mu[m] = params.nu_n * (2.0 - 2.0 * std::cos(th)) / (h[2] * h[2]);
    for (int k = 0; k < na; ++k) v(k, m) = std::cos(th * k);
  }
  const Eigen::MatrixXd vinv = v.inverse();

  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Mat src(n1, na), tau = Mat::Zero(n1, na);
  for (int i = 0; i < n1; ++i)
    for (int k = 0; k < na; ++k) src(i, k) = S.at(i, 0, k);

  // (kappa + mu_m) u - nu_s D1 u = r for every alpha mode (Thomas algorithm).
  auto solve_modes = [&](const Mat& rhs) {
    Mat hat = rhs * vinv.transpose();
    std::vector<double> cp(static_cast<std::size_t>(n1)), dp(static_cast<std::size_t>(n1));
    for (int m = 0; m < na; ++m) {
      const double diag = params.kappa + mu[m] + 2.0 * c1;
      for (int i = 0; i < n1; ++i) {
        const double lo = i == 0 ? 0.0 : (i == n1 - 1 ? -2.0 * c1 : -c1);
        const double up = i == n1 - 1 ? 0.0 : (i == 0 ? -2.0 * c1 : -c1);
        const double denom = i == 0 ? diag : diag - lo * cp[static_cast<std::size_t>(i - 1)];
        cp[static_cast<std::size_t>(i)] = up / denom;
        dp[static_cast<std::size_t>(i)] =
            (hat(i, m) - (i == 0 ? 0.0 : lo * dp[static_cast<std::size_t>(i - 1)])) / denom;
      }
      for (int i = n1 - 1; i >= 0; --i) {
        hat(i, m) = dp[static_cast<std::size_t>(i)] -
                    (i == n1 - 1 ? 0.0 : cp[static_cast<std::size_t>(i)] * hat(i + 1, m));
      }
    }
    return Mat(hat * v.transpose());
  };
  auto mixed = [&](const Mat& t) {
    Mat out(n1, na);
    for (int i = 0; i < n1; ++i)
      for (int k = 0; k < na; ++k) {
        const int ip = mirror(i + 1, n1), im = mirror(i - 1, n1), kp = mirror(k + 1, na), km = mirror(k - 1, na);
        out(i, k) = cx * (t(ip, kp) - t(ip, km) - t(im, kp) + t(im, km));
      }
    return out;
  };
  auto residual = [&](const Mat& t) {
    double worst = 0.0;
    const double ca = params.nu_n / (h[2] * h[2]);
    const Mat mx = mixed(t);
    for (int i = 0; i < n1; ++i)
      for (int k = 0; k < na; ++k) {
        const int ip = mirror(i + 1, n1), im = mirror(i - 1, n1), kp = mirror(k + 1, na), km = mirror(k - 1, na);
        const double r = c1 * (t(ip, k) + t(im, k) - 2.0 * t(i, k)) + ca * (t(i, kp) + t(i, km) - 2.0 * t(i, k)) +
                         mx(i, k) - params.kappa * t(i, k) + src(i, k);
        worst = std::max(worst, std::abs(r));
      }
    return worst;
  };

  // Banded LU (LAPACK) on the reduced (x1, alpha) system. Node (i, k) couples
  // to i +- 1 and k +- 1, so both bandwidths are na + 1.
  auto solve_direct = [&]() {
    PlanarBand band = planar_band(params, h, n1, na, params.kappa, 1.0);
    int nrhs = 1, ldb = band.n, status = 0;
    std::vector<int> piv(static_cast<std::size_t>(band.n));
    Mat out = src;  // row-major (i, k) matches the unknown ordering
    dgbsv_(&band.n, &band.kl, &band.ku, &nrhs, band.ab.data(), &band.ldab, piv.data(), out.data(), &ldb, &status);
    if (status != 0) throw SolverError("planar banded factorization failed");
    return out;
  };

  // Without the mixed term the alpha modes decouple exactly.
  tau = params.lambda == 0.0 ? solve_modes(src) : solve_direct();
  double res = residual(tau);
  const int it = 1;
  if (!std::isfinite(res)) throw SolverError("planar solve produced non-finite values", res, it);
  if (res > opts.tolerance * 1e3) throw SolverError("planar solve did not reach tolerance", res, it);
  if (info) *info = {it, res};
  GridField out(S.domain());
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n2; ++j)
      for (int k = 0; k < na; ++k) out.at(i, j, k) = tau(i, k);
  return out;
}

TransientResult transient(const StructuralParams& params, const GridField& tau0,
                          const TimeSource& source, double dt, double horizon,
                          const SolverOptions& opts, int save_every) {
  require_valid(params);
  opts.check();
  if (!(dt > 0.0)) throw InputError("dt must be > 0");
  if (!(dt * params.kappa < 1.0)) throw InputError("dt * kappa must be < 1");
  if (!(horizon >= 0.0)) throw InputError("horizon must be >= 0");
  if (save_every < 1) throw InputError("save_every must be >= 1");

  const auto steps = static_cast<long>(std::llround(horizon / dt));
  const SpMat m = shifted_operator(params, tau0, 1.0 + dt * params.kappa, dt);
  const bool diagonal = is_pure_decay(params);
  // small lattices: factor once and reuse; large ones: warm-started BiCGSTAB
  const bool direct = !diagonal && m.rows() <= kDirectLimit;
  Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
  Eigen::BiCGSTAB<SpMat, Eigen::DiagonalPreconditioner<double>> solver;
  if (direct) {
    lu.compute(m);
    if (lu.info() != Eigen::Success) throw SolverError("transient factorization failed");
  } else if (!diagonal) {
    solver.setTolerance(opts.inner_tolerance);
    solver.setMaxIterations(opts.max_inner_iterations);
    solver.compute(m);
  }

  TransientResult out;
  out.times.push_back(0.0);
  out.fields.push_back(tau0);
  const double initial = std::max(tau0.sup_norm(), 1e-300);
  double max_source = 0.0;

  Vec x = to_vec(tau0);
  for (long n = 0; n < steps; ++n) {
    const double t = static_cast<double>(n) * dt;
    const GridField s = source(t);
    if (!s.same_lattice(tau0)) throw InputError("source lattice differs from tau0 lattice");
    max_source = std::max(max_source, s.sup_norm());
    const Vec rhs = x + dt * to_vec(s);
    if (diagonal) {
      x = rhs / (1.0 + dt * params.kappa);
    } else if (direct) {
      x = lu.solve(rhs);
    } else {
      Vec next = solver.solveWithGuess(rhs, x);
      double res = (rhs - m * next).lpNorm<Eigen::Infinity>();
      for (int r = 0; r < 5 && res > opts.tolerance * dt; ++r) {
        next = solver.solveWithGuess(rhs, next);
        res = (rhs - m * next).lpNorm<Eigen::Infinity>();
      }
      x = std::move(next);
    }
    const double sup = x.lpNorm<Eigen::Infinity>();
    // growth beyond what the source alone could produce
    const double bound = 1e6 * std::max(initial, max_source * std::max(horizon, 1.0));
    if (!std::isfinite(sup) || sup > bound) {
      throw SolverError("transient solution unstable", sup, static_cast<int>(n + 1));
    }
    if ((n + 1) % save_every == 0 || n + 1 == steps) {
      GridField f(tau0.domain());
      from_vec(x, f);
      out.times.push_back(static_cast<double>(n + 1) * dt);
      out.fields.push_back(std::move(f));
    }
  }
  return out;
}

TransientResult transient(const StructuralParams& params, const GridField& tau0,
                          const GridField& source, double dt, double horizon,
                          const SolverOptions& opts, int save_every) {
  return transient(params, tau0, [&source](double) { return source; }, dt, horizon, opts,
                   save_every);
}

TransientResult transient_planar(const StructuralParams& params, const GridField& tau0, const GridField& source,
                                 double dt, double horizon, int save_every) {
  require_valid(params);
  if (!(dt > 0.0)) throw InputError("dt must be > 0");
  if (!(dt * params.kappa < 1.0)) throw InputError("dt * kappa must be < 1");
  if (!(horizon >= 0.0)) throw InputError("horizon must be >= 0");
  if (save_every < 1) throw InputError("save_every must be >= 1");
  if (!source.same_lattice(tau0)) throw InputError("source lattice differs from tau0 lattice");
  if (!source.all_finite() || !tau0.all_finite()) throw InputError("transient inputs have non-finite values");
  require_x2_constant(tau0, "an initial state");
  require_x2_constant(source, "a source");

  const int n1 = tau0.n1(), n2 = tau0.n2(), na = tau0.na();
  PlanarBand band = planar_band(params, tau0.spacing(), n1, na, 1.0 + dt * params.kappa, dt);
  std::vector<int> piv(static_cast<std::size_t>(band.n));
  int status = 0;
  dgbtrf_(&band.n, &band.n, &band.kl, &band.ku, band.ab.data(), &band.ldab, piv.data(), &status);
  if (status != 0) throw SolverError("planar transient factorization failed");

  std::vector<double> x(static_cast<std::size_t>(band.n)), s(x.size());
  for (int i = 0; i < n1; ++i)
    for (int k = 0; k < na; ++k) {
      x[static_cast<std::size_t>(i * na + k)] = tau0.at(i, 0, k);
      s[static_cast<std::size_t>(i * na + k)] = dt * source.at(i, 0, k);
    }
  auto to_field = [&] {
    GridField f(tau0.domain());
    for (int i = 0; i < n1; ++i)
      for (int j = 0; j < n2; ++j)
        for (int k = 0; k < na; ++k) f.at(i, j, k) = x[static_cast<std::size_t>(i * na + k)];
    return f;
  };
  TransientResult out;
  out.times.push_back(0.0);
  out.fields.push_back(tau0);
  const auto steps = static_cast<long>(std::llround(horizon / dt));
  const char trans = 'N';
  int nrhs = 1, ldb = band.n;
  for (long n = 0; n < steps; ++n) {
    for (std::size_t q = 0; q < x.size(); ++q) x[q] += s[q];
    dgbtrs_(&trans, &band.n, &band.kl, &band.ku, &nrhs, band.ab.data(), &band.ldab, piv.data(), x.data(), &ldb,
            &status, 1);
    if (status != 0) throw SolverError("planar transient solve failed", 0.0, static_cast<int>(n + 1));
    if ((n + 1) % save_every == 0 || n + 1 == steps) {
      out.times.push_back(static_cast<double>(n + 1) * dt);
      out.fields.push_back(to_field());
    }
  }
  for (const auto& f : out.fields)
    if (!f.all_finite()) throw SolverError("planar transient produced non-finite values");
  return out;
}

double amplification_factor(const StructuralParams& p) {
  if (!(p.kappa > 0.0)) throw InputError("kappa must be > 0");
  const double nu = p.nu_s + p.nu_n;
  if (nu == 0.0) return 1.0;
  return 1.0 + nu / p.kappa + p.lambda * p.lambda / (p.kappa * nu);
}

Ar1Coefficients ar1_from_structural(double kappa, double dt) {
  if (!(dt > 0.0)) throw InputError("dt must be > 0");
  return {1.0 - kappa * dt, dt};
}

double structural_from_ar1(double rho, double dt) {
  if (!(dt > 0.0)) throw InputError("dt must be > 0");
  if (!(rho < 1.0)) throw InputError("rho >= 1 implies a unit root; no positive decay rate");
  return (1.0 - rho) / dt;
}

double half_life(double kappa) {
  if (!(kappa > 0.0)) throw InputError("half-life requires kappa > 0");
  return std::log(2.0) / kappa;
}

EcmCoefficients ecm_from_structural(double kappa, double dt) {
  if (!(kappa > 0.0) || !(dt > 0.0)) throw InputError("kappa and dt must be > 0");
  return {kappa * dt, 1.0 / kappa, dt};
}

double sar_from_structural(double nu_s, double kappa, double dx, int n_neighbors) {
  if (nu_s < 0.0 || !(kappa > 0.0) || !(dx > 0.0) || n_neighbors <= 0) {
    throw InputError("sar conversion requires nu_s >= 0 and positive kappa, dx, n");
  }
  return nu_s * n_neighbors / (kappa * dx * dx);
}

double structural_from_sar(double rho, double kappa, double dx, int n_neighbors) {
  if (!(kappa > 0.0) || !(dx > 0.0) || n_neighbors <= 0) {
    throw InputError("sar inversion requires positive kappa, dx, n");
  }
  return rho * kappa * dx * dx / n_neighbors;
}

NetworkTeCoefficients network_te_coefficients(double nu_n, double kappa) {
  if (!(kappa > 0.0)) throw InputError("kappa must be > 0");
  return {1.0 / kappa, nu_n / kappa};
}

std::vector<double> predicted_event_study(double beta0, double kappa, double dt, int pre_len,
                                          int post_len) {
  const double r = kappa * dt;
  if (!(r > 0.0 && r < 1.0)) throw InputError("kappa * dt must lie in (0, 1)");
  if (pre_len < 0 || post_len < 0) throw InputError("window lengths must be >= 0");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(pre_len + post_len + 1));
  for (int k = -pre_len; k <= post_len; ++k) {
    out.push_back(k < 0 ? 0.0 : beta0 * std::pow(1.0 - r, k));
  }
  return out;
}

double diffusion_from_volatility(double sigma_sq, double kappa) {
  if (!(sigma_sq > 0.0) || !(kappa > 0.0)) throw InputError("inputs must be positive");
  return sigma_sq / (2.0 * kappa);
}

}  // namespace spatnet
