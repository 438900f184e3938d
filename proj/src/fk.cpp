#include "spatnet/fk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <thread>

namespace spatnet {

SourceFn source_from_field(const GridField& field) {
  return [field](const Point3& p, double) { return field.interpolate(p.x1, p.x2, p.alpha); };
}

FieldFn function_from_field(const GridField& field) {
  return [field](const Point3& p) { return field.interpolate(p.x1, p.x2, p.alpha); };
}

SourceFn constant_source(double value) {
  return [value](const Point3&, double) { return value; };
}

std::size_t PathOptions::steps() const {
  const auto n = static_cast<long long>(std::llround(horizon / dt));
  return static_cast<std::size_t>(std::max<long long>(n, 0));
}

Point3 PathBundle::position(std::size_t path, std::size_t index) const {
  if (index >= stored_points || path >= n_paths) throw InputError("trajectory point not stored");
  const double* p = trajectories.data() + (path * stored_points + index) * 3;
  return {p[0], p[1], p[2]};
}

namespace {

void check_inputs(const StructuralParams& params, const PathOptions& opts) {
  auto v = validate(params);
  if (!v.empty()) {
    std::ostringstream os;
    os << "diffusion covariance not admissible:";
    for (const auto& s : v) os << ' ' << s << ';';
    throw InputError(os.str());
  }
  if (!(opts.dt > 0.0)) throw InputError("dt must be > 0");
  if (!(opts.horizon >= 0.0)) throw InputError("horizon must be >= 0");
  if (opts.paths < 1) throw InputError("need at least one path");
  opts.domain.check();
}

inline double reflect(double x, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0.0) return lo;
  // fold into [lo, hi] by repeated mirroring
  double y = std::fmod(x - lo, 2.0 * span);
  if (y < 0.0) y += 2.0 * span;
  return lo + (y <= span ? y : 2.0 * span - y);
}

// Cholesky factor of the (x1, alpha) block plus the x2 scale, per sqrt(dt).
struct StepFactor {
  double l11, l21, l22, s2;
};

StepFactor step_factor(const StructuralParams& p, double dt) {
  const double a = 2.0 * p.nu_s, c = 2.0 * p.nu_n;
  StepFactor f{};
  f.l11 = std::sqrt(a);
  f.l21 = a > 0.0 ? p.lambda / f.l11 : 0.0;
  f.l22 = std::sqrt(std::max(c - f.l21 * f.l21, 0.0));
  f.s2 = std::sqrt(a);
  const double sq = std::sqrt(dt);
  f.l11 *= sq;
  f.l21 *= sq;
  f.l22 *= sq;
  f.s2 *= sq;
  return f;
}

// Simulates every path and calls fn(path_index, trajectory, steps) with a
// (steps + 1) * 3 buffer. Work is split by pair index across workers; each
// pair owns a seed derived from (opts.seed, pair), so results do not depend
// on the worker count.
template <class Fn>
void for_each_path(const StructuralParams& params, const Point3& start, const PathOptions& opts,
                   Fn&& fn) {
  check_inputs(params, opts);
  const std::size_t steps = opts.steps();
  const double dt = steps > 0 ? opts.horizon / static_cast<double>(steps) : opts.dt;
  const StepFactor f = step_factor(params, dt);
  const SpatialDomain& d = opts.domain;
  const std::size_t pairs = opts.paths;

  auto run_range = [&](std::size_t begin, std::size_t end) {
    std::vector<double> a((steps + 1) * 3), b(opts.antithetic ? (steps + 1) * 3 : 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t p = begin; p < end; ++p) {
      std::mt19937_64 rng(derive_seed(SeedSpec{opts.seed}, "fk-path", p));
      a[0] = start.x1;
      a[1] = start.x2;
      a[2] = start.alpha;
      if (opts.antithetic) std::copy(a.begin(), a.begin() + 3, b.begin());
      for (std::size_t k = 0; k < steps; ++k) {
        const double z1 = normal(rng), z2 = normal(rng), z3 = normal(rng);
        const double dx1 = f.l11 * z1;
        const double dx2 = f.s2 * z2;
        const double da = f.l21 * z1 + f.l22 * z3;
        double* cur = &a[k * 3];
        cur[3] = reflect(cur[0] + dx1, d.x1_lo, d.x1_hi);
        cur[4] = reflect(cur[1] + dx2, d.x2_lo, d.x2_hi);
        cur[5] = reflect(cur[2] + da, d.alpha_lo, d.alpha_hi);
        if (opts.antithetic) {
          double* mir = &b[k * 3];
          mir[3] = reflect(mir[0] - dx1, d.x1_lo, d.x1_hi);
          mir[4] = reflect(mir[1] - dx2, d.x2_lo, d.x2_hi);
          mir[5] = reflect(mir[2] - da, d.alpha_lo, d.alpha_hi);
        }
      }
      if (opts.antithetic) {
        fn(2 * p, a.data(), steps, dt);
        fn(2 * p + 1, b.data(), steps, dt);
      } else {
        fn(p, a.data(), steps, dt);
      }
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(opts.workers, static_cast<unsigned>(pairs)));
  if (workers == 1) {
    run_range(0, pairs);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (pairs + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk, end = std::min(pairs, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(run_range, begin, end);
  }
  for (auto& t : pool) t.join();
}

// Discounted left-endpoint integral of g(position, calendar time) * weight(u).
template <class Weight>
double path_integral(const double* traj, std::size_t steps, double dt, double horizon,
                     const SourceFn& source, Weight&& weight) {
  double acc = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double u = static_cast<double>(k) * dt;
    const Point3 p{traj[k * 3], traj[k * 3 + 1], traj[k * 3 + 2]};
    acc += weight(u) * source(p, horizon - u) * dt;
  }
  return acc;
}

// Mean and standard error; antithetic pairs are averaged first.
FkEstimate summarize(const std::vector<double>& values, bool antithetic) {
  std::vector<double> units;
  if (antithetic) {
    units.reserve(values.size() / 2);
    for (std::size_t i = 0; i + 1 < values.size(); i += 2) units.push_back(0.5 * (values[i] + values[i + 1]));
  } else {
    units = values;
  }
  FkEstimate e;
  const double n = static_cast<double>(units.size());
  for (double v : units) e.estimate += v;
  e.estimate /= n;
  double ss = 0.0;
  for (double v : units) ss += (v - e.estimate) * (v - e.estimate);
  const double var_units = units.size() > 1 ? ss / (n - 1.0) : 0.0;
  e.path_se = std::sqrt(var_units / n);
  double mean_all = 0.0;
  for (double v : values) mean_all += v;
  mean_all /= static_cast<double>(values.size());
  double ss_all = 0.0;
  for (double v : values) ss_all += (v - mean_all) * (v - mean_all);
  e.path_variance = values.size() > 1 ? ss_all / static_cast<double>(values.size() - 1) : 0.0;
  e.paths = values.size();
  return e;
}

}  // namespace

PathBundle simulate_paths(const StructuralParams& params, const Point3& start,
                          const PathOptions& opts, const SourceFn* source,
                          TrajectoryStorage storage) {
  PathBundle bundle;
  bundle.n_paths = opts.total_paths();
  bundle.steps = opts.steps();
  bundle.horizon = opts.horizon;
  bundle.dt = bundle.steps > 0 ? opts.horizon / static_cast<double>(bundle.steps) : opts.dt;
  bundle.stored_points = storage == TrajectoryStorage::Full        ? bundle.steps + 1
                         : storage == TrajectoryStorage::Endpoints ? 2
                                                                   : 0;
  const std::size_t stride = bundle.stored_points * 3;
  bundle.trajectories.resize(bundle.n_paths * stride);
  if (source) bundle.discounted_source.resize(bundle.n_paths);
  bundle.antithetic_mirror.assign(bundle.n_paths, 0);
  const double kappa = params.kappa;
  for_each_path(params, start, opts, [&](std::size_t idx, const double* traj, std::size_t steps, double dt) {
    auto out = bundle.trajectories.begin() + static_cast<long>(idx * stride);
    if (storage == TrajectoryStorage::Full) {
      std::copy(traj, traj + stride, out);
    } else if (storage == TrajectoryStorage::Endpoints) {
      std::copy(traj, traj + 3, out);
      std::copy(traj + steps * 3, traj + steps * 3 + 3, out + 3);
    }
    if (source) {
      bundle.discounted_source[idx] = path_integral(traj, steps, dt, opts.horizon, *source,
                                                    [kappa](double u) { return std::exp(-kappa * u); });
    }
    if (opts.antithetic) bundle.antithetic_mirror[idx] = static_cast<std::uint8_t>(idx % 2);
  });
  return bundle;
}

FkEstimate fk_effect(const StructuralParams& params, const SourceFn& source, const FieldFn& tau0,
                     const Point3& start, const PathOptions& opts) {
  std::vector<double> values(opts.total_paths());
  const double kappa = params.kappa;
  const double terminal_discount = std::exp(-kappa * opts.horizon);
  for_each_path(params, start, opts, [&](std::size_t idx, const double* traj, std::size_t steps, double dt) {
    double v = path_integral(traj, steps, dt, opts.horizon, source,
                             [kappa](double u) { return std::exp(-kappa * u); });
    if (tau0) {
      const double* end = traj + steps * 3;
      v += terminal_discount * tau0(Point3{end[0], end[1], end[2]});
    }
    values[idx] = v;
  });
  return summarize(values, opts.antithetic);
}

ControlVariateEstimate fk_effect_control_variate(const StructuralParams& params,
                                                 const SourceFn& source, const FieldFn& control,
                                                 double control_mean, const Point3& start,
                                                 const PathOptions& opts) {
  const std::size_t n = opts.total_paths();
  std::vector<double> y(n), c(n);
  const double kappa = params.kappa;
  const SourceFn control_source = [&control](const Point3& p, double) { return control(p); };
  auto discount = [kappa](double u) { return std::exp(-kappa * u); };
  for_each_path(params, start, opts, [&](std::size_t idx, const double* traj, std::size_t steps, double dt) {
    y[idx] = path_integral(traj, steps, dt, opts.horizon, source, discount);
    c[idx] = path_integral(traj, steps, dt, opts.horizon, control_source, discount);
  });
  double my = 0.0, mc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    my += y[i];
    mc += c[i];
  }
  my /= static_cast<double>(n);
  mc /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (y[i] - my) * (c[i] - mc);
    sxx += (c[i] - mc) * (c[i] - mc);
  }
  ControlVariateEstimate out;
  out.beta = sxx > 0.0 ? sxy / sxx : 0.0;
  std::vector<double> adjusted(n);
  for (std::size_t i = 0; i < n; ++i) adjusted[i] = y[i] - out.beta * (c[i] - control_mean);
  out.plain = summarize(y, opts.antithetic);
  out.controlled = summarize(adjusted, opts.antithetic);
  out.variance_reduction =
      out.plain.path_variance > 0.0 ? out.controlled.path_variance / out.plain.path_variance : 1.0;
  return out;
}

double fk_variance(const StructuralParams& params, const SourceFn& source, const Point3& start,
                   const PathOptions& opts) {
  std::vector<double> values(opts.total_paths());
  const double kappa = params.kappa;
  for_each_path(params, start, opts, [&](std::size_t idx, const double* traj, std::size_t steps, double dt) {
    values[idx] = path_integral(traj, steps, dt, opts.horizon, source,
                                [kappa](double u) { return std::exp(-kappa * u); });
  });
  return summarize(values, false).path_variance;
}

double fk_variance(const StructuralParams& params, const StochasticSource& source,
                   const Point3& start, const PathOptions& opts) {
  if (!source.volatility) throw InputError("stochastic source needs a volatility field");
  std::vector<double> values(opts.total_paths());
  const double kappa = params.kappa;
  const FieldFn& vol = source.volatility;
  const SourceFn sq = [&vol](const Point3& p, double) {
    const double s = vol(p);
    if (s < 0.0) throw InputError("volatility must be >= 0");
    return s * s;
  };
  for_each_path(params, start, opts, [&](std::size_t idx, const double* traj, std::size_t steps, double dt) {
    values[idx] = path_integral(traj, steps, dt, opts.horizon, sq,
                                [kappa](double u) { return std::exp(-2.0 * kappa * u); });
  });
  return summarize(values, opts.antithetic).estimate;
}

FkEstimate sensitivity_kappa(const StructuralParams& params, const SourceFn& source,
                             const Point3& start, const PathOptions& opts) {
  std::vector<double> values(opts.total_paths());
  const double kappa = params.kappa;
  for_each_path(params, start, opts, [&](std::size_t idx, const double* traj, std::size_t steps, double dt) {
    values[idx] = -path_integral(traj, steps, dt, opts.horizon, source,
                                 [kappa](double u) { return u * std::exp(-kappa * u); });
  });
  return summarize(values, opts.antithetic);
}

std::array<double, 4> sensitivities_fd(const StructuralParams& params, const SourceFn& source,
                                       const Point3& start, const PathOptions& opts,
                                       const std::array<double, 4>& h) {
  for (double v : h) {
    if (!(v > 0.0)) throw InputError("finite-difference steps must be > 0");
  }
  if (!is_valid(params)) throw InputError("base parameters invalid");
  const FieldFn none;
  auto eval = [&](const StructuralParams& p) { return fk_effect(p, source, none, start, opts).estimate; };
  const auto base = params.as_array();
  std::array<double, 4> grad{};
  for (std::size_t c = 0; c < 4; ++c) {
    double step = h[c];
    auto shifted = [&](double delta) {
      auto v = base;
      v[c] += delta;
      return StructuralParams::from_array(v);
    };
    bool done = false;
    for (int shrink = 0; shrink < 40 && step > 1e-300; ++shrink) {
      const auto up = shifted(step), down = shifted(-step);
      if (is_valid(up) && is_valid(down)) {
        grad[c] = (eval(up) - eval(down)) / (2.0 * step);
        if (shrink > 0) warn("sensitivities_fd: shrank step for component " + std::to_string(c));
        done = true;
        break;
      }
      step *= 0.5;
    }
    if (done) continue;
    step = h[c];
    const auto up = shifted(step), down = shifted(-step);
    if (is_valid(up)) {
      grad[c] = (eval(up) - eval(params)) / step;
      warn("sensitivities_fd: one-sided forward difference for component " + std::to_string(c));
    } else if (is_valid(down)) {
      grad[c] = (eval(params) - eval(down)) / step;
      warn("sensitivities_fd: one-sided backward difference for component " + std::to_string(c));
    } else {
      grad[c] = std::numeric_limits<double>::quiet_NaN();
      warn("sensitivities_fd: no admissible perturbation for component " + std::to_string(c));
    }
  }
  return grad;
}

double delta_method_variance(const Eigen::Vector4d& gradient, const Eigen::Matrix4d& v_theta) {
  if ((v_theta - v_theta.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
    throw InputError("parameter covariance must be symmetric");
  }
  return gradient.dot(v_theta * gradient);
}

ParamPosterior ParamPosterior::gaussian(const StructuralParams& mean, const Eigen::Matrix4d& cov) {
  ParamPosterior p;
  const auto m = mean.as_array();
  p.mean = Eigen::Vector4d(m[0], m[1], m[2], m[3]);
  p.cov = cov;
  return p;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw InputError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

std::vector<StructuralParams> draw_parameters(const ParamPosterior& posterior, std::size_t draws,
                                              std::uint64_t seed, std::size_t& rejected) {
  std::mt19937_64 rng(derive_seed(SeedSpec{seed}, "pimc-theta", 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Matrix4d root = Eigen::Matrix4d::Zero();
  if (!posterior.sampler) {
    const Eigen::Matrix4d sym = 0.5 * (posterior.cov + posterior.cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(sym);
    const Eigen::Vector4d ev = es.eigenvalues().cwiseMax(0.0);
    root = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
  }
  std::vector<StructuralParams> out;
  out.reserve(draws);
  rejected = 0;
  const std::size_t max_attempts = 2 * draws + 1;
  std::size_t attempts = 0;
  while (out.size() < draws) {
    if (attempts >= max_attempts) {
      throw EstimatorError("pimc: more than half of the posterior draws violate the diffusion constraints");
    }
    ++attempts;
    StructuralParams p;
    if (posterior.sampler) {
      p = posterior.sampler(rng);
    } else {
      Eigen::Vector4d z;
      for (int i = 0; i < 4; ++i) z[i] = normal(rng);
      const Eigen::Vector4d v = posterior.mean + root * z;
      p = StructuralParams{v[0], v[1], v[2], v[3]};
    }
    if (!is_valid(p)) {
      ++rejected;
      continue;
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace

PosteriorSummary pimc(const ParamPosterior& posterior, std::size_t draws, const SourceFn& source,
                      const Point3& start, PathOptions opts, double level) {
  if (draws < 2) throw InputError("pimc needs B >= 2 parameter draws");
  if (opts.paths < 2) throw InputError("pimc needs M >= 2 paths per draw");
  if (!(level > 0.0 && level < 1.0)) throw InputError("credible level must lie in (0,1)");
  PosteriorSummary s;
  s.level = level;
  const auto thetas = draw_parameters(posterior, draws, opts.seed, s.rejected);
  s.draws = draws;
  const std::uint64_t base = opts.seed;
  std::vector<double> within(draws);
  s.draw_means.resize(draws);
  const FieldFn none;
  // common random numbers: every draw reuses one path set, so the spread of
  // draw means reflects the parameters only
  opts.seed = derive_seed(SeedSpec{base}, "pimc-paths", 0);
  for (std::size_t b = 0; b < draws; ++b) {
    const FkEstimate e = fk_effect(thetas[b], source, none, start, opts);
    s.draw_means[b] = e.estimate;
    within[b] = e.path_se * e.path_se;  // variance of the per-draw mean
  }
  const double nb = static_cast<double>(draws);
  for (double m : s.draw_means) s.mean += m;
  s.mean /= nb;
  for (std::size_t b = 0; b < draws; ++b) {
    s.parameter_variance += (s.draw_means[b] - s.mean) * (s.draw_means[b] - s.mean);
    s.within_model_variance += within[b];
  }
  s.parameter_variance /= nb;
  s.within_model_variance /= nb;
  // total from the mixture second moment, computed independently of the split
  double second = 0.0;
  for (std::size_t b = 0; b < draws; ++b) second += s.draw_means[b] * s.draw_means[b] + within[b];
  s.total_variance = second / nb - s.mean * s.mean;
  const double a = 1.0 - level;
  s.lo = quantile(s.draw_means, a / 2.0);
  s.hi = quantile(s.draw_means, 1.0 - a / 2.0);
  return s;
}

std::vector<ProfileRow> distance_profile(const ParamPosterior& posterior, std::size_t draws,
                                         const SourceFn& source,
                                         const std::function<Point3(double)>& locate,
                                         const std::vector<double>& distances,
                                         const PathOptions& opts) {
  std::vector<ProfileRow> rows;
  rows.reserve(distances.size());
  for (double d : distances) {
    const PosteriorSummary s = pimc(posterior, draws, source, locate(d), opts, 0.95);
    ProfileRow r;
    r.distance = d;
    r.mean = s.mean;
    r.lo95 = s.lo;
    r.hi95 = s.hi;
    r.lo68 = quantile(s.draw_means, 0.16);
    r.hi68 = quantile(s.draw_means, 0.84);
    r.within_model_variance = s.within_model_variance;
    r.parameter_variance = s.parameter_variance;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace spatnet
