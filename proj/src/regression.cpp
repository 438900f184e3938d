#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <limits>
#include <map>

#include "spatnet/estimators.hpp"

namespace spatnet {

int LinearFit::position(int column) const {
  for (std::size_t i = 0; i < kept.size(); ++i)
    if (kept[i] == column) return static_cast<int>(i);
  return -1;
}

LinearFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, bool warn_on_drop) {
  if (x.rows() != y.size()) throw InputError("design and outcome differ in length");
  if (x.rows() == 0 || x.cols() == 0) throw InputError("empty design");
  // scale columns so the rank threshold is unit free
  Eigen::VectorXd scale = x.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < scale.size(); ++j)
    if (scale[j] == 0.0) scale[j] = 1.0;
  const Eigen::MatrixXd xs = x * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  qr.setThreshold(1e-10);
  qr.compute(xs);
  const auto rank = qr.rank();
  LinearFit fit;
  std::vector<int> kept;
  for (Eigen::Index i = 0; i < rank; ++i) kept.push_back(static_cast<int>(qr.colsPermutation().indices()[i]));
  std::sort(kept.begin(), kept.end());
  if (static_cast<Eigen::Index>(kept.size()) < x.cols() && warn_on_drop)
    warn("dropping " + std::to_string(x.cols() - static_cast<Eigen::Index>(kept.size())) + " collinear column(s)");
  Eigen::MatrixXd xk(x.rows(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j) xk.col(static_cast<Eigen::Index>(j)) = x.col(kept[j]);
  const Eigen::MatrixXd xtx = xk.transpose() * xk;
  fit.bread = xtx.ldlt().solve(Eigen::MatrixXd::Identity(xtx.rows(), xtx.cols()));
  const Eigen::VectorXd b = fit.bread * (xk.transpose() * y);
  fit.beta = Eigen::VectorXd::Constant(x.cols(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < kept.size(); ++j) fit.beta[kept[j]] = b[static_cast<Eigen::Index>(j)];
  fit.residuals = y - xk * b;
  fit.kept = std::move(kept);
  return fit;
}

namespace {

Eigen::MatrixXd kept_columns(const Eigen::MatrixXd& x, const LinearFit& fit) {
  Eigen::MatrixXd xk(x.rows(), static_cast<Eigen::Index>(fit.kept.size()));
  for (std::size_t j = 0; j < fit.kept.size(); ++j) xk.col(static_cast<Eigen::Index>(j)) = x.col(fit.kept[j]);
  return xk;
}

}  // namespace

Eigen::MatrixXd hc1_cov(const Eigen::MatrixXd& x, const LinearFit& fit) {
  const Eigen::MatrixXd xk = kept_columns(x, fit);
  const auto n = static_cast<double>(x.rows()), k = static_cast<double>(xk.cols());
  const Eigen::MatrixXd meat = xk.transpose() * fit.residuals.array().square().matrix().asDiagonal() * xk;
  return n / (n - k) * fit.bread * meat * fit.bread;
}

Eigen::MatrixXd cluster_cov(const Eigen::MatrixXd& x, const LinearFit& fit, std::span<const int> cluster) {
  if (static_cast<Eigen::Index>(cluster.size()) != x.rows()) throw InputError("cluster ids differ in length");
  const Eigen::MatrixXd xk = kept_columns(x, fit);
  std::map<int, Eigen::VectorXd> scores;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto [it, fresh] = scores.try_emplace(cluster[static_cast<std::size_t>(i)], Eigen::VectorXd::Zero(xk.cols()));
    it->second += xk.row(i).transpose() * fit.residuals[i];
  }
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(xk.cols(), xk.cols());
  for (const auto& [id, s] : scores) meat += s * s.transpose();
  const auto g = static_cast<double>(scores.size());
  const auto n = static_cast<double>(x.rows()), k = static_cast<double>(xk.cols());
  if (g < 2) throw EstimatorError("cluster-robust covariance needs at least two clusters");
  const double adj = g / (g - 1.0) * (n - 1.0) / (n - k);
  return adj * fit.bread * meat * fit.bread;
}

std::vector<double> network_exposure(const Adjacency& adj, std::span<const double> values) {
  if (adj.size() != values.size()) throw InputError("network and values differ in size");
  std::vector<double> out(values.size(), 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& nb = adj.neighbors[i];
    if (nb.empty()) continue;
    double s = 0.0;
    for (int j : nb) s += values[static_cast<std::size_t>(j)];
    out[i] = s / static_cast<double>(nb.size());
  }
  return out;
}

double chi2_sf(double x, int dof) {
  if (dof <= 0) return 1.0;
  if (!(x > 0)) return 1.0;
  if (!std::isfinite(x)) return 0.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), x));
}

}  // namespace spatnet
