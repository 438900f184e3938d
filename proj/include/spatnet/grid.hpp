#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "spatnet/core.hpp"

namespace spatnet {

/// Scalar field sampled on a vertex-centred (x1, x2, alpha) lattice. Nodes sit
/// on the domain faces, so node i on axis a is at lo_a + i * spacing_a.
class GridField {
 public:
  GridField() = default;
  explicit GridField(const SpatialDomain& domain, double fill = 0.0);

  /// Samples f at every node.
  static GridField sample(const SpatialDomain& domain,
                          const std::function<double(double, double, double)>& f);

  const SpatialDomain& domain() const { return domain_; }
  int n1() const { return domain_.grid[0]; }
  int n2() const { return domain_.grid[1]; }
  int na() const { return domain_.grid[2]; }
  std::size_t size() const { return values_.size(); }
  std::array<double, 3> spacing() const;
  double coord(int axis, int index) const;

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(n2()) +
            static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(na()) +
           static_cast<std::size_t>(k);
  }
  double& at(int i, int j, int k) { return values_[index(i, j, k)]; }
  double at(int i, int j, int k) const { return values_[index(i, j, k)]; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  /// Piecewise-linear interpolation per axis with linear extrapolation past the
  /// outer nodes. When x1_break is set and a cell straddles it, the x1 direction
  /// uses the two nodes on the query's side of the break instead.
  double interpolate(double x1, double x2, double alpha,
                     std::optional<double> x1_break = std::nullopt) const;

  /// Trapezoid-rule integral over the domain.
  double integral() const;
  double sup_norm() const;
  bool all_finite() const;
  bool same_lattice(const GridField& other) const { return domain_ == other.domain_; }

  GridField& operator+=(const GridField& o);
  GridField& operator*=(double s);

 private:
  SpatialDomain domain_;
  std::vector<double> values_;
};

GridField operator+(GridField a, const GridField& b);
GridField operator-(GridField a, const GridField& b);
GridField operator*(double s, GridField a);

}  // namespace spatnet
