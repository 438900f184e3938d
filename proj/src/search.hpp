#pragma once
// Search-space helpers shared by the structural optimizers.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "spatnet/core.hpp"

namespace spatnet::detail {

constexpr int kParams = 4;
using Vec4 = Eigen::Vector4d;

// Slightly inside the PSD limit so rounding never trips parameter validation.
inline double lambda_bound(double nu_s, double nu_n) { return 2.0 * std::sqrt(nu_s * nu_n) * (1.0 - 1e-12); }

// Search coordinates: sqrt(nu_s), sqrt(nu_n), log(kappa), lambda / bound. Signed
// roots keep lambda = 2 u0 u1 u3 smooth through nu = 0; |u3| <= 1 is the PSD cone.
inline StructuralParams from_search(const Vec4& u) {
  return {u[0] * u[0], u[1] * u[1], std::exp(u[2]), 2.0 * u[0] * u[1] * (1.0 - 1e-12) * u[3]};
}
inline Vec4 to_search(const StructuralParams& p) {
  const double nu_s = std::max(0.0, p.nu_s), nu_n = std::max(0.0, p.nu_n);
  const double b = lambda_bound(nu_s, nu_n);
  const double rho = b > 0 ? std::clamp(p.lambda / b, -1.0, 1.0) : 0.0;
  return {std::sqrt(nu_s), std::sqrt(nu_n), std::log(p.kappa), rho};
}

// Parameter box in search coordinates.
struct SearchBox {
  double max_sqrt_nu_s = 40.0;  // nu_s <= 1600
  double max_sqrt_nu_n = 1.0;   // nu_n <= 1
  double kappa_lo = 0.01, kappa_hi = 10.0;
};

// Projects onto the box and the PSD cone; `penalty` receives the squared
// distance barrier.
inline StructuralParams project_search(const Vec4& u, const SearchBox& box, double* penalty) {
  Vec4 v;
  v[0] = std::clamp(u[0], -box.max_sqrt_nu_s, box.max_sqrt_nu_s);
  v[1] = std::clamp(u[1], -box.max_sqrt_nu_n, box.max_sqrt_nu_n);
  v[2] = std::clamp(u[2], std::log(box.kappa_lo), std::log(box.kappa_hi));
  v[3] = std::clamp(u[3], -1.0, 1.0);
  if (penalty) *penalty = 1e2 * (u - v).squaredNorm();
  return from_search(v);
}

struct NmResult {
  Vec4 x;
  double f = 0.0;
  int evaluations = 0;
  bool converged = false;
};

// Downhill simplex with the usual coefficients (1, 2, 0.5, 0.5); stops when the
// objective spread over the simplex is at most ftol.
template <class F>
NmResult nelder_mead(const F& f, const Vec4& x0, const Vec4& step, int max_evals, double ftol) {
  std::array<Vec4, kParams + 1> x;
  std::array<double, kParams + 1> fx{};
  NmResult r;
  x[0] = x0;
  for (int j = 0; j < kParams; ++j) {
    x[j + 1] = x0;
    x[j + 1][j] += step[j];
  }
  for (int j = 0; j <= kParams; ++j) fx[j] = f(x[j]);
  r.evaluations = kParams + 1;
  std::array<int, kParams + 1> ord{};
  while (true) {
    std::iota(ord.begin(), ord.end(), 0);
    std::sort(ord.begin(), ord.end(), [&](int a, int b) { return fx[a] < fx[b]; });
    const int best = ord[0], worst = ord[kParams], second = ord[kParams - 1];
    double xs = 0.0;
    for (int j = 1; j <= kParams; ++j) xs = std::max(xs, (x[ord[j]] - x[best]).cwiseAbs().maxCoeff());
    if (fx[worst] - fx[best] <= ftol || xs < 1e-9) {
      r.converged = true;
      break;
    }
    if (r.evaluations >= max_evals) break;
    Vec4 centroid = Vec4::Zero();
    for (int j = 0; j < kParams; ++j) centroid += x[ord[j]];
    centroid /= kParams;
    const Vec4 xr = centroid + (centroid - x[worst]);
    const double fr = f(xr);
    ++r.evaluations;
    if (fr < fx[best]) {
      const Vec4 xe = centroid + 2.0 * (centroid - x[worst]);
      const double fe = f(xe);
      ++r.evaluations;
      if (fe < fr) x[worst] = xe, fx[worst] = fe; else x[worst] = xr, fx[worst] = fr;
    } else if (fr < fx[second]) {
      x[worst] = xr, fx[worst] = fr;
    } else {
      const bool outside = fr < fx[worst];
      const Vec4 xc = outside ? Vec4(centroid + 0.5 * (xr - centroid)) : Vec4(centroid + 0.5 * (x[worst] - centroid));
      const double fc = f(xc);
      ++r.evaluations;
      if (fc < std::min(fr, fx[worst])) {
        x[worst] = xc, fx[worst] = fc;
      } else {
        for (int j = 1; j <= kParams; ++j) {
          const int i = ord[j];
          x[i] = x[best] + 0.5 * (x[i] - x[best]);
          fx[i] = f(x[i]);
        }
        r.evaluations += kParams;
      }
    }
  }
  const auto it = std::min_element(fx.begin(), fx.end());
  r.f = *it;
  r.x = x[static_cast<std::size_t>(it - fx.begin())];
  return r;
}

// One pass of per-coordinate parabola fits around x.
template <class F>
void coordinate_refine(const F& f, NmResult& r, const Vec4& step) {
  for (int j = 0; j < kParams; ++j) {
    const double h = 1e-3 * step[j];
    Vec4 a = r.x, b = r.x;
    a[j] -= h;
    b[j] += h;
    const double fa = f(a), fb = f(b);
    r.evaluations += 2;
    const double curv = fa + fb - 2.0 * r.f;
    if (!(curv > 0)) continue;
    Vec4 c = r.x;
    c[j] -= 0.5 * h * (fb - fa) / curv;
    const double fc = f(c);
    ++r.evaluations;
    if (fc < r.f) r.x = c, r.f = fc;
  }
}

}  // namespace spatnet::detail
