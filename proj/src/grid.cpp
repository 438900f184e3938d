#include "spatnet/grid.hpp"

#include <algorithm>
#include <cmath>

namespace spatnet {

GridField::GridField(const SpatialDomain& domain, double fill) : domain_(domain) {
  domain_.check();
  values_.assign(static_cast<std::size_t>(domain.grid[0]) * static_cast<std::size_t>(domain.grid[1]) *
                     static_cast<std::size_t>(domain.grid[2]),
                 fill);
}

GridField GridField::sample(const SpatialDomain& domain,
                            const std::function<double(double, double, double)>& f) {
  GridField g(domain);
  for (int i = 0; i < g.n1(); ++i) {
    const double x1 = g.coord(0, i);
    for (int j = 0; j < g.n2(); ++j) {
      const double x2 = g.coord(1, j);
      for (int k = 0; k < g.na(); ++k) g.at(i, j, k) = f(x1, x2, g.coord(2, k));
    }
  }
  return g;
}

std::array<double, 3> GridField::spacing() const {
  return {(domain_.x1_hi - domain_.x1_lo) / (n1() - 1), (domain_.x2_hi - domain_.x2_lo) / (n2() - 1),
          (domain_.alpha_hi - domain_.alpha_lo) / (na() - 1)};
}

double GridField::coord(int axis, int index) const {
  const auto h = spacing();
  switch (axis) {
    case 0: return domain_.x1_lo + index * h[0];
    case 1: return domain_.x2_lo + index * h[1];
    default: return domain_.alpha_lo + index * h[2];
  }
}

namespace {

struct AxisStencil {
  int lo;
  double w;  // value = (1 - w) * f[lo] + w * f[lo + 1]
};

AxisStencil locate(double x, double origin, double h, int n) {
  double t = (x - origin) / h;
  int lo = static_cast<int>(std::floor(t));
  lo = std::clamp(lo, 0, n - 2);
  return {lo, t - lo};
}

}  // namespace

double GridField::interpolate(double x1, double x2, double alpha,
                              std::optional<double> x1_break) const {
  const auto h = spacing();
  AxisStencil s1 = locate(x1, domain_.x1_lo, h[0], n1());
  const AxisStencil s2 = locate(x2, domain_.x2_lo, h[1], n2());
  const AxisStencil sa = locate(alpha, domain_.alpha_lo, h[2], na());

  if (x1_break) {
    const double left = coord(0, s1.lo);
    const double right = coord(0, s1.lo + 1);
    const double b = *x1_break;
    if (left < b && right > b) {
      const double t = (x1 - domain_.x1_lo) / h[0];
      if (x1 > b && s1.lo + 2 <= n1() - 1) {
        s1.lo += 1;  // extrapolate from the two nodes right of the break
      } else if (x1 <= b && s1.lo - 1 >= 0) {
        s1.lo -= 1;  // extrapolate from the two nodes left of the break
      }
      s1.w = t - s1.lo;
    }
  }

  double out = 0.0;
  for (int a = 0; a < 2; ++a) {
    const double wa = a ? s1.w : 1.0 - s1.w;
    for (int b = 0; b < 2; ++b) {
      const double wb = b ? s2.w : 1.0 - s2.w;
      for (int c = 0; c < 2; ++c) {
        const double wc = c ? sa.w : 1.0 - sa.w;
        out += wa * wb * wc * at(s1.lo + a, s2.lo + b, sa.lo + c);
      }
    }
  }
  return out;
}

double GridField::integral() const {
  const auto h = spacing();
  auto weight = [](int i, int n) { return (i == 0 || i == n - 1) ? 0.5 : 1.0; };
  double sum = 0.0;
  for (int i = 0; i < n1(); ++i) {
    for (int j = 0; j < n2(); ++j) {
      const double wij = weight(i, n1()) * weight(j, n2());
      for (int k = 0; k < na(); ++k) sum += wij * weight(k, na()) * at(i, j, k);
    }
  }
  return sum * h[0] * h[1] * h[2];
}

double GridField::sup_norm() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

bool GridField::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

GridField& GridField::operator+=(const GridField& o) {
  if (!same_lattice(o)) throw InputError("grid fields live on different lattices");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
  return *this;
}

GridField& GridField::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

GridField operator+(GridField a, const GridField& b) { return a += b; }
GridField operator-(GridField a, const GridField& b) {
  GridField nb = b;
  nb *= -1.0;
  return a += nb;
}
GridField operator*(double s, GridField a) { return a *= s; }

}  // namespace spatnet
