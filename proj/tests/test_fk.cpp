#include "doctest.h"

#include <cmath>
#include <random>

#include "spatnet/fk.hpp"
#include "spatnet/pde.hpp"

using namespace spatnet;

namespace {

SpatialDomain wide_domain() {
  SpatialDomain d;
  d.x1_hi = 200.0;
  return d;
}

// treated for x1 > border with the market-position tilt
SourceFn border_source(double border = 100.0, double s0 = 0.10) {
  return [=](const Point3& p, double) { return p.x1 > border ? s0 * (1.0 + 0.3 * p.alpha) : 0.0; };
}

PathOptions options(double t, double dt, std::size_t m, std::uint64_t seed) {
  PathOptions o;
  o.horizon = t;
  o.dt = dt;
  o.paths = m;
  o.seed = seed;
  o.domain = wide_domain();
  return o;
}

}  // namespace

TEST_CASE("zero diffusion keeps every trajectory at its start") {
  auto o = options(1.0, 0.1, 20, 3);
  auto b = simulate_paths({0, 0, 0.25, 0}, {30, 40, 0.2}, o);
  for (std::size_t p = 0; p < b.n_paths; ++p) {
    for (std::size_t k = 0; k <= b.steps; ++k) {
      auto x = b.position(p, k);
      CHECK(x.x1 == 30.0);
      CHECK(x.x2 == 40.0);
      CHECK(x.alpha == 0.2);
    }
  }
}

TEST_CASE("increment covariance per unit time matches the generator") {
  SUBCASE("case 2") {
    auto o = options(1.0, 0.001, 100000, 17);
    const StructuralParams p{100, 0, 0.25, 0};
    auto b = simulate_paths(p, {100, 50, 0.5}, o, nullptr, TrajectoryStorage::Endpoints);
    double s11 = 0, s22 = 0, s12 = 0, saa = 0;
    for (std::size_t i = 0; i < b.n_paths; ++i) {
      auto a = b.position(i, 0), z = b.position(i, 1);
      const double d1 = z.x1 - a.x1, d2 = z.x2 - a.x2, da = z.alpha - a.alpha;
      s11 += d1 * d1;
      s22 += d2 * d2;
      s12 += d1 * d2;
      saa += da * da;
    }
    const double n = static_cast<double>(b.n_paths);
    CHECK(s11 / n == doctest::Approx(200.0).epsilon(0.02));
    CHECK(s22 / n == doctest::Approx(200.0).epsilon(0.02));
    CHECK(std::abs(s12 / n) < 0.02 * 200.0);
    CHECK(saa == 0.0);
  }
  SUBCASE("correlated spatial-network block") {
    // alpha range widened so reflection does not bias the moments
    auto o = options(1.0, 0.01, 100000, 23);
    o.domain.alpha_lo = -10.0;
    o.domain.alpha_hi = 10.0;
    const StructuralParams p{1.0, 0.5, 0.25, 0.6};
    auto b = simulate_paths(p, {100, 50, 0.0}, o, nullptr, TrajectoryStorage::Endpoints);
    double s11 = 0, s1a = 0, saa = 0;
    for (std::size_t i = 0; i < b.n_paths; ++i) {
      auto a = b.position(i, 0), z = b.position(i, 1);
      const double d1 = z.x1 - a.x1, da = z.alpha - a.alpha;
      s11 += d1 * d1;
      s1a += d1 * da;
      saa += da * da;
    }
    const double n = static_cast<double>(b.n_paths);
    CHECK(s11 / n == doctest::Approx(2.0).epsilon(0.02));
    CHECK(s1a / n == doctest::Approx(0.6).epsilon(0.03));
    CHECK(saa / n == doctest::Approx(1.0).epsilon(0.02));
  }
}

TEST_CASE("antithetic pairs cancel displacement exactly") {
  auto o = options(1.0, 0.01, 500, 5);
  o.antithetic = true;
  o.domain.alpha_lo = -50.0;
  o.domain.alpha_hi = 50.0;
  auto b = simulate_paths({100, 0.015, 0.25, 0.04}, {100, 50, 0.5}, o);
  REQUIRE(b.n_paths == 1000);
  double m1 = 0, m2 = 0, ma = 0;
  for (std::size_t i = 0; i < b.n_paths; ++i) {
    auto z = b.position(i, b.steps);
    m1 += z.x1 - 100;
    m2 += z.x2 - 50;
    ma += z.alpha - 0.5;
  }
  CHECK(std::abs(m1) < 1e-9);
  CHECK(std::abs(m2) < 1e-9);
  CHECK(std::abs(ma) < 1e-9);
}

TEST_CASE("results do not depend on the worker count") {
  auto o = options(2.0, 0.02, 400, 99);
  const StructuralParams p{100, 0.015, 0.25, 0.04};
  auto one = fk_effect(p, border_source(), {}, {95, 50, 0.5}, o);
  o.workers = 4;
  auto four = fk_effect(p, border_source(), {}, {95, 50, 0.5}, o);
  CHECK(one.estimate == four.estimate);
  CHECK(one.path_se == four.path_se);
}

TEST_CASE("fk_effect scalar limits") {
  const double kappa = 0.25, t = 4.0, dt = 0.01;
  auto o = options(t, dt, 200, 1);
  SUBCASE("constant source") {
    auto e = fk_effect({100, 0.015, kappa, 0.04}, constant_source(0.1), {}, {100, 50, 0.5}, o);
    const double exact = 0.1 / kappa * (1.0 - std::exp(-kappa * t));
    CHECK(std::abs(exact - 0.2528) < 1e-4);
    // left-endpoint quadrature error is at most dt * max S
    CHECK(std::abs(e.estimate - exact) <= 3.0 * e.path_se + dt * 0.1);
  }
  SUBCASE("terminal condition only") {
    const double c = 1.7;
    auto e = fk_effect({100, 0.015, kappa, 0.04}, constant_source(0.0), [c](const Point3&) { return c; },
                       {100, 50, 0.5}, o);
    CHECK(e.estimate == doctest::Approx(c * std::exp(-kappa * t)).epsilon(1e-14));
    CHECK(e.path_se == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("doubling kappa squares the terminal factor") {
    auto a = fk_effect({50, 0, kappa, 0}, constant_source(0.0), [](const Point3&) { return 1.0; }, {100, 50, 0.5}, o);
    auto b = fk_effect({50, 0, 2 * kappa, 0}, constant_source(0.0), [](const Point3&) { return 1.0; }, {100, 50, 0.5}, o);
    CHECK(b.estimate == doctest::Approx(a.estimate * a.estimate).epsilon(1e-14));
  }
}

TEST_CASE("fk_effect matches the transient PDE at lambda = 0") {
  // smooth source on a modest lattice; both sides carry O(dt) quadrature error
  SpatialDomain d;
  d.x1_hi = 40.0;
  d.x2_hi = 40.0;
  d.grid = {41, 41, 11};
  const StructuralParams p{4.0, 0.02, 0.25, 0.0};
  auto f = [](double x1, double x2, double a) {
    return std::exp(-((x1 - 20) * (x1 - 20) + (x2 - 20) * (x2 - 20)) / 50.0) * (1.0 + a);
  };
  auto s = GridField::sample(d, f);
  SolverOptions so;
  so.tolerance = 1e-10;
  const double t = 2.0, dt = 0.005;
  auto pde = transient(p, GridField(d, 0.0), s, dt, t, so, 100000);
  PathOptions o;
  o.horizon = t;
  o.dt = dt;
  o.paths = 10000;
  o.domain = d;
  const SourceFn src = [&f](const Point3& q, double) { return f(q.x1, q.x2, q.alpha); };
  int within = 0;
  const int probes = 5;
  for (int i = 0; i < probes; ++i) {
    Point3 start{14.0 + 3.0 * i, 20.0 + 2.0 * i, 0.2 + 0.15 * i};
    o.seed = 1000 + static_cast<std::uint64_t>(i);
    auto e = fk_effect(p, src, {}, start, o);
    const double ref = pde.fields.back().interpolate(start.x1, start.x2, start.alpha);
    within += std::abs(e.estimate - ref) <= 3.0 * e.path_se;
  }
  CHECK(within == probes);
}

TEST_CASE("fk_variance") {
  const double kappa = 0.25, t = 4.0;
  auto o = options(t, 0.01, 400, 31);
  SUBCASE("deterministic constant source without diffusion") {
    CHECK(fk_variance({0, 0, kappa, 0}, constant_source(0.1), {100, 50, 0.5}, o) <= 1e-25);
  }
  SUBCASE("stochastic source with constant volatility") {
    StochasticSource ss{constant_source(0.1), [](const Point3&) { return 0.3; }};
    const double v = fk_variance({0, 0, kappa, 0}, ss, {100, 50, 0.5}, o);
    CHECK(v == doctest::Approx(0.09 * (1.0 - std::exp(-2.0 * kappa * t)) / (2.0 * kappa)).epsilon(0.03));
  }
  SUBCASE("spatially varying source against a brute-force population") {
    // independent Euler simulation with its own generator
    const StructuralParams p{100, 0, kappa, 0};
    const double dt = 0.05;
    const auto steps = static_cast<int>(t / dt);
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> z(0.0, 1.0);
    const double sd = std::sqrt(2.0 * p.nu_s * dt);
    const int n = 1'000'000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      double x = 95.0, acc = 0.0;
      for (int k = 0; k < steps; ++k) {
        acc += std::exp(-kappa * k * dt) * (x > 100.0 ? 0.1 * 1.15 : 0.0) * dt;
        x += sd * z(rng);
        if (x < 0) x = -x;
        if (x > 200) x = 400 - x;
      }
      sum += acc;
      sum_sq += acc * acc;
    }
    const double population = sum_sq / n - (sum / n) * (sum / n);
    auto o2 = options(t, dt, 100000, 7);
    const double v = fk_variance(p, border_source(), {95, 50, 0.5}, o2);
    CHECK(v == doctest::Approx(population).epsilon(0.05));
  }
}

TEST_CASE("sensitivity to the decay rate") {
  const double kappa = 0.25, t = 4.0, dt = 0.01;
  auto o = options(t, dt, 300, 41);
  SUBCASE("zero source") {
    CHECK(sensitivity_kappa({100, 0, kappa, 0}, constant_source(0.0), {100, 50, 0.5}, o).estimate == 0.0);
  }
  SUBCASE("constant source matches the analytic derivative") {
    const double s = 0.1;
    const double exact = -s * (1.0 - std::exp(-kappa * t)) / (kappa * kappa) + s * t * std::exp(-kappa * t) / kappa;
    auto e = sensitivity_kappa({100, 0, kappa, 0}, constant_source(s), {100, 50, 0.5}, o);
    // left-endpoint quadrature of u e^{-kappa u} is off by at most dt * max|integrand| * t
    CHECK(std::abs(e.estimate - exact) <= 3.0 * e.path_se + dt * s * t);
    CHECK(e.estimate <= 0.0);
  }
  SUBCASE("analytic path formula equals a common-random-number finite difference") {
    const StructuralParams p{100, 0.015, kappa, 0.04};
    const Point3 start{100, 50, 0.5};
    auto analytic = sensitivity_kappa(p, border_source(), start, o).estimate;
    const double h = 1e-3;
    auto up = fk_effect({p.nu_s, p.nu_n, kappa + h, p.lambda}, border_source(), {}, start, o).estimate;
    auto down = fk_effect({p.nu_s, p.nu_n, kappa - h, p.lambda}, border_source(), {}, start, o).estimate;
    CHECK(analytic == doctest::Approx((up - down) / (2 * h)).epsilon(0.01));
  }
}

TEST_CASE("finite-difference sensitivities") {
  auto o = options(4.0, 0.02, 400, 43);
  SUBCASE("spatially constant problem has no diffusion gradient") {
    set_warnings_enabled(false);
    auto g = sensitivities_fd({0, 0, 0.25, 0}, constant_source(0.1), {100, 50, 0.5}, o, {1.0, 0.001, 1e-3, 0.001});
    set_warnings_enabled(true);
    CHECK(g[0] == doctest::Approx(0.0));
    CHECK(g[1] == doctest::Approx(0.0));
    CHECK(std::isnan(g[3]));
  }
  SUBCASE("case 4 at the border") {
    const StructuralParams p = config_params(ConfigId::FullModel);
    auto g = sensitivities_fd(p, border_source(), {100, 50, 0.5}, o, {1.0, 0.001, 1e-3, 0.005});
    for (double v : g) CHECK(std::isfinite(v));
    CHECK(g[2] < 0.0);
    auto analytic = sensitivity_kappa(p, border_source(), {100, 50, 0.5}, o).estimate;
    CHECK(g[2] == doctest::Approx(analytic).epsilon(0.01));
  }
  SUBCASE("steps must be positive") {
    CHECK_THROWS_AS(sensitivities_fd({0, 0, 0.25, 0}, constant_source(0.1), {}, o, {0, 1, 1, 1}), InputError);
  }
}

TEST_CASE("delta method quadratic form") {
  CHECK(delta_method_variance(Eigen::Vector4d::Zero(), Eigen::Matrix4d::Identity()) == 0.0);
  CHECK(delta_method_variance(Eigen::Vector4d::Ones(), Eigen::Matrix4d::Identity()) == 4.0);
  Eigen::Matrix4d asym = Eigen::Matrix4d::Identity();
  asym(0, 1) = 1e-6;
  CHECK_THROWS_AS(delta_method_variance(Eigen::Vector4d::Ones(), asym), InputError);
}

TEST_CASE("delta-method variance agrees with sampling the parameter distribution") {
  const StructuralParams p = config_params(ConfigId::SpatialOnly);
  const Point3 start{95, 50, 0.5};
  auto o = options(8.0, 0.05, 2000, 61);
  Eigen::Matrix4d v = Eigen::Matrix4d::Zero();
  v(0, 0) = 16.0;   // sd 4 sq. miles / quarter
  v(2, 2) = 1e-4;   // sd 0.01 / quarter
  v(0, 2) = v(2, 0) = 0.01;
  auto g = sensitivities_fd(p, border_source(), start, o, {0.5, 1e-4, 1e-3, 1e-4});
  g[1] = 0.0;  // nu_n and lambda have zero variance here
  g[3] = 0.0;
  const double dm = delta_method_variance(Eigen::Vector4d(g[0], g[1], g[2], g[3]), v);
  // sampling oracle: common random numbers isolate parameter variation
  std::mt19937_64 rng(5);
  Eigen::LLT<Eigen::Matrix2d> llt(Eigen::Matrix2d{{16.0, 0.01}, {0.01, 1e-4}});
  std::normal_distribution<double> z(0.0, 1.0);
  const int draws = 400;
  std::vector<double> vals;
  for (int b = 0; b < draws; ++b) {
    Eigen::Vector2d e = llt.matrixL() * Eigen::Vector2d(z(rng), z(rng));
    StructuralParams q{p.nu_s + e[0], 0.0, p.kappa + e[1], 0.0};
    vals.push_back(fk_effect(q, border_source(), {}, start, o).estimate);
  }
  double m = 0, ss = 0;
  for (double x : vals) m += x;
  m /= draws;
  for (double x : vals) ss += (x - m) * (x - m);
  const double sampled = ss / (draws - 1);
  MESSAGE("delta " << dm << " sampled " << sampled);
  CHECK(dm > 0.0);
  // 400 draws give a sampling sd of about 7% on the variance
  CHECK(dm == doctest::Approx(sampled).epsilon(0.2));
}

TEST_CASE("antithetic pairing lowers the standard error for the border source") {
  const StructuralParams p = config_params(ConfigId::FullModel);
  auto plain = options(4.0, 0.02, 4000, 71);
  auto anti = plain;
  anti.paths = 2000;
  anti.antithetic = true;
  auto a = fk_effect(p, border_source(), {}, {100, 50, 0.5}, plain);
  auto b = fk_effect(p, border_source(), {}, {100, 50, 0.5}, anti);
  MESSAGE("plain se " << a.path_se << " antithetic se " << b.path_se);
  CHECK(b.path_se <= a.path_se);
}

TEST_CASE("linear control variate reduces variance for the border source") {
  const StructuralParams p = config_params(ConfigId::SpatialOnly);
  const double kappa = p.kappa, t = 4.0;
  auto o = options(t, 0.02, 4000, 73);
  const Point3 start{100, 50, 0.5};
  // E[x1(u)] = start.x1 away from the walls, so the control's mean is closed form
  const FieldFn ramp = [](const Point3& q) { return 0.01 * (q.x1 - 100.0); };
  const double control_mean = 0.01 * (start.x1 - 100.0) * (1.0 - std::exp(-kappa * t)) / kappa;
  auto cv = fk_effect_control_variate(p, border_source(), ramp, control_mean, start, o);
  MESSAGE("variance reduction factor " << cv.variance_reduction);
  CHECK(cv.variance_reduction < 1.0);
  CHECK(cv.controlled.estimate == doctest::Approx(cv.plain.estimate).epsilon(0.05));
}

TEST_CASE("path integral Monte Carlo") {
  const StructuralParams p = config_params(ConfigId::FullModel);
  auto o = options(8.0, 0.1, 200, 81);
  SUBCASE("degenerate posterior has no parameter variance") {
    auto s = pimc(ParamPosterior::gaussian(p, Eigen::Matrix4d::Zero()), 10, border_source(), {95, 50, 0.5}, o);
    CHECK(s.parameter_variance == doctest::Approx(0.0).epsilon(1e-20));
    CHECK(s.within_model_variance > 0.0);
  }
  SUBCASE("decomposition identity") {
    Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
    cov(0, 0) = 100.0;
    cov(1, 1) = 1e-6;
    cov(2, 2) = 4e-4;
    auto s = pimc(ParamPosterior::gaussian(p, cov), 20, border_source(), {95, 50, 0.5}, o);
    CHECK(std::abs(s.total_variance - s.within_model_variance - s.parameter_variance) <= 1e-10);
    CHECK(s.lo <= s.hi);
  }
  SUBCASE("mostly inadmissible draws are an error") {
    Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
    cov(3, 3) = 100.0;  // lambda far outside the PSD region
    CHECK_THROWS_AS(pimc(ParamPosterior::gaussian(p, cov), 10, border_source(), {95, 50, 0.5}, o), EstimatorError);
  }
  SUBCASE("input checks") {
    CHECK_THROWS_AS(pimc(ParamPosterior::gaussian(p, Eigen::Matrix4d::Zero()), 1, border_source(), {}, o), InputError);
  }
}

TEST_CASE("distance profile shape") {
  auto o = options(40.0, 0.25, 300, 91);
  Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
  cov(0, 0) = 100.0;
  cov(2, 2) = 4e-4;
  cov(1, 1) = 1e-6;
  const std::vector<double> distances = {0, 25, 50, 75, 100};
  auto locate = [](double d) { return Point3{100.0 - d, 50.0, 0.5}; };
  SUBCASE("spillover posterior declines with distance") {
    auto rows = distance_profile(ParamPosterior::gaussian(config_params(ConfigId::FullModel), cov), 30,
                                 border_source(), locate, distances, o);
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].mean < rows[i - 1].mean);
    CHECK(rows.front().hi95 - rows.front().lo95 > rows.back().hi95 - rows.back().lo95);
    for (const auto& r : rows) CHECK((r.lo95 <= r.lo68 && r.lo68 <= r.hi68 && r.hi68 <= r.hi95));
  }
  SUBCASE("no spillovers: flat inside the treated region, zero beyond the border") {
    Eigen::Matrix4d c1 = Eigen::Matrix4d::Zero();
    c1(2, 2) = 4e-4;
    auto rows = distance_profile(ParamPosterior::gaussian(config_params(ConfigId::NoSpillovers), c1), 10,
                                 border_source(), locate, {-30, -10, 0, 10, 50}, o);
    CHECK(rows[0].mean == doctest::Approx(rows[1].mean).epsilon(1e-12));
    CHECK(rows[0].mean > 0.0);
    for (std::size_t i = 2; i < rows.size(); ++i) CHECK(rows[i].mean == 0.0);
  }
}
