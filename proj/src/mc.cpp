#include "spatnet/mc.hpp"

#include <algorithm>
#include <cmath>
#include <Eigen/Eigenvalues>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "search.hpp"
#include "spatnet/io.hpp"
#include "spatnet/pde.hpp"

namespace spatnet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kZ95 = 1.96;

// Runs body(i) for i in [0, n) on `workers` threads; each index exactly once.
template <class F>
void parallel_for(std::size_t n, unsigned workers, const F& body) {
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < n; i = next++) body(i);
  };
  const unsigned w = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), std::max<std::size_t>(n, 1)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < w; ++t) pool.emplace_back(loop);
  loop();
  for (auto& t : pool) t.join();
}

std::string sanitize(std::string s) {
  for (auto& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  return s;
}

std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw InputError("cannot write " + p.string());
  return os;
}

int index_of(const std::vector<std::string>& v, const std::string& s) {
  const auto it = std::find(v.begin(), v.end(), s);
  return it == v.end() ? static_cast<int>(v.size()) : static_cast<int>(it - v.begin());
}

}  // namespace

// ------------------------------------------------------------------ plan

void McPlan::check() const {
  if (configs.empty()) throw InputError("plan needs at least one config");
  if (std::set<ConfigId>(configs.begin(), configs.end()).size() != configs.size())
    throw InputError("plan lists a config twice");
  if (estimators.empty()) throw InputError("plan needs at least one estimator");
  const auto& known = estimator_names();
  for (const auto& e : estimators) {
    if (std::find(known.begin(), known.end(), e) == known.end()) {
      std::string list;
      for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
      throw InputError("unknown estimator '" + e + "' (valid: " + list + ")");
    }
  }
  if (std::set<std::string>(estimators.begin(), estimators.end()).size() != estimators.size())
    throw InputError("plan lists an estimator twice");
  if (replications < 2) throw InputError("replications must be >= 2");
  if (workers < 1) throw InputError("workers must be >= 1");
  dgp.check();
  estimator.hac.check();
}

std::uint64_t replication_seed(std::uint64_t base_seed, ConfigId config, int replication) {
  return derive_seed(SeedSpec{base_seed}, "mc/" + to_string(config), static_cast<std::uint64_t>(replication));
}

// ------------------------------------------------------------------- run

std::vector<McRecord> run_mc(const McPlan& plan, const McRunOptions& run) {
  plan.check();
  EstimatorOptions opts = plan.estimator;
  opts.effect_scale = plan.dgp.effect_scale;
  opts.border = plan.dgp.border;
  opts.border_band = plan.dgp.border_band;

  // replications already on record for every requested estimator are reused
  std::map<std::pair<ConfigId, int>, std::vector<McRecord>> done;
  for (const auto& r : run.completed) {
    if (std::find(plan.configs.begin(), plan.configs.end(), r.config) == plan.configs.end()) continue;
    if (r.replication < 0 || r.replication >= plan.replications) continue;
    if (index_of(plan.estimators, r.estimator) == static_cast<int>(plan.estimators.size())) continue;
    auto& v = done[{r.config, r.replication}];
    if (std::none_of(v.begin(), v.end(), [&](const McRecord& q) { return q.estimator == r.estimator; })) v.push_back(r);
  }
  std::vector<McRecord> out;
  std::vector<std::pair<ConfigId, int>> tasks;
  for (ConfigId c : plan.configs) {
    for (int rep = 0; rep < plan.replications; ++rep) {
      const auto it = done.find({c, rep});
      if (it != done.end() && it->second.size() == plan.estimators.size()) {
        out.insert(out.end(), it->second.begin(), it->second.end());
      } else {
        tasks.emplace_back(c, rep);
      }
    }
  }

  // the treatment field depends only on the config, so replications share it
  std::map<ConfigId, GridField> fields;
  for (ConfigId c : plan.configs)
    if (std::any_of(tasks.begin(), tasks.end(), [&](const auto& t) { return t.first == c; }))
      fields.emplace(c, treatment_field(c, plan.dgp));

  std::mutex mu;
  parallel_for(tasks.size(), plan.workers, [&](std::size_t k) {
    if (run.cancel && run.cancel->load()) return;
    const auto [config, rep] = tasks[k];
    const std::uint64_t seed = replication_seed(plan.base_seed, config, rep);
    std::vector<McRecord> recs;
    Dataset data;
    TrueEffects truth{kNaN, kNaN};
    std::string sim_error;
    try {
      data = simulate_dataset(config, plan.dgp, seed, &fields.at(config));
      truth = true_effects(data, plan.dgp);
    } catch (const std::exception& e) {
      sim_error = std::string("simulation: ") + e.what();
    }
    EstimatorOptions o = opts;
    o.seed = derive_seed(SeedSpec{plan.base_seed}, "mc-estimator/" + to_string(config), static_cast<std::uint64_t>(rep));
    for (const auto& name : plan.estimators) {
      McRecord r;
      r.config = config;
      r.replication = rep;
      r.estimator = name;
      r.seed = seed;
      r.true_direct = truth.direct;
      r.true_total_border = truth.total_border;
      if (sim_error.empty()) {
        try {
          const EstimateReport e = run_estimator(name, data, o);
          r.ok = e.ok;
          r.error = e.error;
          r.direct = e.direct;
          r.direct_se = e.direct_se;
          r.total_border = e.total_border;
          r.total_border_se = e.total_border_se;
        } catch (const std::exception& e) {
          r.ok = false;
          r.error = e.what();
        }
      } else {
        r.ok = false;
        r.error = sim_error;
      }
      if (!r.ok) r.direct = r.direct_se = r.total_border = r.total_border_se = kNaN;
      r.error = sanitize(r.error);
      recs.push_back(std::move(r));
    }
    std::lock_guard<std::mutex> lock(mu);
    if (run.on_replication) run.on_replication(recs);
    out.insert(out.end(), recs.begin(), recs.end());
  });

  auto cfg_rank = [&](ConfigId c) { return std::find(plan.configs.begin(), plan.configs.end(), c) - plan.configs.begin(); };
  std::sort(out.begin(), out.end(), [&](const McRecord& a, const McRecord& b) {
    const auto ka = std::make_tuple(cfg_rank(a.config), a.replication, index_of(plan.estimators, a.estimator));
    const auto kb = std::make_tuple(cfg_rank(b.config), b.replication, index_of(plan.estimators, b.estimator));
    return ka < kb;
  });
  return out;
}

// -------------------------------------------------------------- summary

std::vector<McSummaryRow> summarize(std::span<const McRecord> records) {
  if (records.empty()) throw InputError("no records to summarize");
  const auto& known = estimator_names();
  using Key = std::tuple<int, int, std::string>;
  std::map<Key, std::vector<const McRecord*>> cells;
  for (const auto& r : records) cells[{case_number(r.config), index_of(known, r.estimator), r.estimator}].push_back(&r);

  std::vector<McSummaryRow> rows;
  for (const auto& [key, recs] : cells) {
    for (int target = 0; target < 2; ++target) {
      McSummaryRow row;
      row.config = recs.front()->config;
      row.estimator = recs.front()->estimator;
      row.target = target == 0 ? "direct" : "total_border";
      std::vector<double> err;
      int covered = 0;
      for (const McRecord* r : recs) {
        const double est = target == 0 ? r->direct : r->total_border;
        const double se = target == 0 ? r->direct_se : r->total_border_se;
        const double truth = target == 0 ? r->true_direct : r->true_total_border;
        if (!r->ok || !std::isfinite(est) || !std::isfinite(se) || !std::isfinite(truth)) {
          ++row.failures;
          continue;
        }
        err.push_back(est - truth);
        covered += est - kZ95 * se <= truth && truth <= est + kZ95 * se;
      }
      const double total = static_cast<double>(recs.size());
      row.unreliable = row.failures > 0.2 * total;
      row.replications = static_cast<int>(err.size());
      if (err.empty()) {
        row.bias = row.bias_mc_se = row.variance = row.rmse = row.coverage = row.coverage_mc_se = kNaN;
        row.unreliable = true;
      } else {
        const double n = static_cast<double>(err.size());
        double sum = 0.0;
        for (double e : err) sum += e;
        row.bias = sum / n;
        double var = 0.0;
        for (double e : err) var += (e - row.bias) * (e - row.bias);
        row.variance = var / n;
        row.rmse = std::sqrt(row.bias * row.bias + row.variance);
        row.bias_mc_se = err.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : kNaN;
        row.coverage = covered / n;
        row.coverage_mc_se = std::sqrt(row.coverage * (1.0 - row.coverage) / n);
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// ------------------------------------------------------------------ CSV

std::string records_csv_header() {
  return "config,replication,estimator,seed,ok,direct,direct_se,total_border,total_border_se,true_direct,"
         "true_total_border,error";
}

std::string record_csv_line(const McRecord& r) {
  std::ostringstream os;
  os << to_string(r.config) << ',' << r.replication << ',' << r.estimator << ',' << r.seed << ',' << (r.ok ? 1 : 0)
     << ',' << format_real(r.direct) << ',' << format_real(r.direct_se) << ',' << format_real(r.total_border) << ','
     << format_real(r.total_border_se) << ',' << format_real(r.true_direct) << ',' << format_real(r.true_total_border)
     << ',' << sanitize(r.error);
  return os.str();
}

void write_records_csv(const std::filesystem::path& path, std::span<const McRecord> records) {
  auto os = open_out(path);
  os << records_csv_header() << '\n';
  for (const auto& r : records) os << record_csv_line(r) << '\n';
  if (!os) throw InputError("failed writing " + path.string());
}

std::vector<McRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != records_csv_header()) throw InputError("unexpected header in " + path.string());
  std::vector<McRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    // a truncated trailing line from an interrupted run is dropped
    if (f.size() != 12) continue;
    try {
      McRecord r;
      r.config = config_from_string(f[0]);
      r.replication = std::stoi(f[1]);
      r.estimator = f[2];
      r.seed = std::stoull(f[3]);
      r.ok = f[4] == "1";
      r.direct = std::stod(f[5]);
      r.direct_se = std::stod(f[6]);
      r.total_border = std::stod(f[7]);
      r.total_border_se = std::stod(f[8]);
      r.true_direct = std::stod(f[9]);
      r.true_total_border = std::stod(f[10]);
      r.error = f[11];
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      continue;
    }
  }
  return out;
}

void write_summary_csv(const std::filesystem::path& path, std::span<const McSummaryRow> rows) {
  auto os = open_out(path);
  os << "config,case,estimator,target,replications,failures,bias,bias_mc_se,variance,rmse,coverage,coverage_mc_se,"
        "unreliable\n";
  for (const auto& r : rows) {
    os << to_string(r.config) << ',' << case_number(r.config) << ',' << r.estimator << ',' << r.target << ','
       << r.replications << ',' << r.failures << ',' << format_real(r.bias) << ',' << format_real(r.bias_mc_se) << ','
       << format_real(r.variance) << ',' << format_real(r.rmse) << ',' << format_real(r.coverage) << ','
       << format_real(r.coverage_mc_se) << ',' << (r.unreliable ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------- event study

void EventStudySpec::check() const {
  const auto bad = validate(params);
  if (!bad.empty()) throw InputError("event study parameters: " + bad.front());
  if (n_units < 20) throw InputError("event study needs at least 20 units");
  if (periods < 3) throw InputError("event study needs at least 3 periods");
  if (treat_time < 1 || treat_time >= periods) throw InputError("treat_time must lie in [1, periods)");
  if (!(dt > 0) || !(solver_dt > 0)) throw InputError("dt and solver_dt must be > 0");
  const double ratio = dt / solver_dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || std::round(ratio) < 1)
    throw InputError("dt must be a positive multiple of solver_dt");
  if (replications < 1) throw InputError("replications must be >= 1");
  if (noise_sd < 0 || unit_effect_sd < 0 || period_effect_sd < 0) throw InputError("standard deviations must be >= 0");
  if (!(domain_size > 0)) throw InputError("domain_size must be > 0");
  if (grid[0] < 3 || grid[1] < 3 || grid[2] < 3) throw InputError("event study lattice needs >= 3 nodes per axis");
  if (workers < 1) throw InputError("workers must be >= 1");
}

const std::vector<std::string>& event_study_estimators() {
  static const std::vector<std::string> names{"twfe", "gps", "restricted_pde", "full_pde"};
  return names;
}

namespace {

double intensity(double x1, double alpha, double border) { return x1 > border ? 0.7 + 0.6 * alpha : 0.0; }

struct PanelModel {
  SpatialDomain domain;
  double border = 0.0;
  GridField source;
  int post = 0;  // last event time

  explicit PanelModel(const EventStudySpec& s) {
    domain.x1_hi = domain.x2_hi = s.domain_size;
    domain.grid = s.grid;
    border = 0.5 * s.domain_size;
    const double b = border;
    source = GridField::sample(domain, [b](double x1, double, double a) { return intensity(x1, a, b); });
    post = s.periods - 1 - s.treat_time;
  }

  // Effect fields at event times 0..post (zero at 0: the source switches on then).
  std::vector<GridField> fields(const StructuralParams& p, const EventStudySpec& s) const {
    std::vector<GridField> out;
    if (p.nu_s == 0.0 && p.nu_n == 0.0 && p.lambda == 0.0) {
      for (int k = 0; k <= post; ++k) out.push_back(((1.0 - std::exp(-p.kappa * k * s.dt)) / p.kappa) * source);
      return out;
    }
    const int every = static_cast<int>(std::lround(s.dt / s.solver_dt));
    auto tr = transient_planar(p, GridField(domain), source, s.solver_dt, post * s.dt, every);
    return std::move(tr.fields);
  }

  // Population mean effect per unit of intensity over the treated half.
  std::vector<double> per_intensity(const std::vector<GridField>& f) const {
    const int nx = 200, na = 20;
    const double mid = 0.5 * (domain.x2_lo + domain.x2_hi);
    double s_sum = 0.0;
    std::vector<double> t_sum(f.size(), 0.0);
    for (int i = 0; i < nx; ++i) {
      const double x1 = border + (domain.x1_hi - border) * (i + 0.5) / nx;
      for (int j = 0; j < na; ++j) {
        const double a = (j + 0.5) / na;
        s_sum += intensity(x1, a, border);
        for (std::size_t k = 0; k < f.size(); ++k) t_sum[k] += f[k].interpolate(x1, mid, a, border);
      }
    }
    for (auto& v : t_sum) v /= s_sum;
    return t_sum;
  }
};

struct PanelDraw {
  std::vector<std::array<double, 3>> pos;
  std::vector<double> s;
  std::vector<bool> treated;
  // dy[k_index][i] = Y(t0 + k) - Y(t0 - 1) over event times k != -1, and
  // inc[k][i] = Y(t0 + k) - Y(t0 + k - 1) for k = 1..post.
  std::vector<std::vector<double>> dy, inc;
  std::vector<int> ks;
};

PanelDraw draw_panel(const EventStudySpec& s, const PanelModel& m, const std::vector<GridField>& f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, s.domain_size), ua(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  PanelDraw d;
  const int n = s.n_units;
  for (int i = 0; i < n; ++i) {
    const double x1 = ux(rng), x2 = ux(rng), a = ua(rng);
    d.pos.push_back({x1, x2, a});
    d.s.push_back(intensity(x1, a, m.border));
    d.treated.push_back(x1 > m.border);
  }
  std::vector<double> period(static_cast<std::size_t>(s.periods));
  for (auto& v : period) v = s.period_effect_sd * z(rng);
  std::vector<std::vector<double>> y(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(s.periods)));
  for (int i = 0; i < n; ++i) {
    const double unit = s.unit_effect_sd * z(rng);
    for (int t = 0; t < s.periods; ++t) {
      const int k = t - s.treat_time;
      const auto& p = d.pos[static_cast<std::size_t>(i)];
      const double tau = k >= 0 ? f[static_cast<std::size_t>(k)].interpolate(p[0], p[1], p[2], m.border) : 0.0;
      y[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] = unit + period[static_cast<std::size_t>(t)] + tau + s.noise_sd * z(rng);
    }
  }
  const int base = s.treat_time - 1;
  for (int t = 0; t < s.periods; ++t) {
    if (t == base) continue;
    d.ks.push_back(t - s.treat_time);
    std::vector<double> col(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] - y[static_cast<std::size_t>(i)][static_cast<std::size_t>(base)];
    d.dy.push_back(std::move(col));
  }
  for (int t = s.treat_time + 1; t < s.periods; ++t) {
    std::vector<double> col(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] - y[static_cast<std::size_t>(i)][static_cast<std::size_t>(t - 1)];
    d.inc.push_back(std::move(col));
  }
  return d;
}

// Event-time index of k in the full path (k = -treat_time .. post).
std::size_t path_index(const EventStudySpec& s, int k) { return static_cast<std::size_t>(k + s.treat_time); }

// Treated-minus-control contrast of a column and its variance, scaled by 1/sbar.
std::pair<double, double> contrast(const PanelDraw& d, const std::vector<double>& col, double sbar) {
  double mt = 0, mc = 0;
  int nt = 0, nc = 0;
  for (std::size_t i = 0; i < col.size(); ++i) (d.treated[i] ? (mt += col[i], ++nt) : (mc += col[i], ++nc));
  if (nt < 2 || nc < 2) throw EstimatorError("event study needs treated and control units");
  mt /= nt;
  mc /= nc;
  double vt = 0, vc = 0;
  for (std::size_t i = 0; i < col.size(); ++i) {
    const double e = col[i] - (d.treated[i] ? mt : mc);
    (d.treated[i] ? vt : vc) += e * e;
  }
  vt /= nt - 1;
  vc /= nc - 1;
  return {(mt - mc) / sbar, (vt / nt + vc / nc) / (sbar * sbar)};
}

// Sum over event times of the cross-sectional covariance of a model regressor
// with dy, and of its variance (time effects profiled out period by period).
struct Profiled {
  double c = 0.0, v = 0.0;
};
Profiled profile(const PanelDraw& d, const std::function<double(std::size_t, std::size_t)>& z) {
  Profiled p;
  const std::size_t n = d.s.size();
  for (std::size_t q = 0; q < d.ks.size(); ++q) {
    if (d.ks[q] < 0) continue;
    double zm = 0, ym = 0;
    for (std::size_t i = 0; i < n; ++i) zm += z(q, i), ym += d.dy[q][i];
    zm /= static_cast<double>(n);
    ym /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double dz = z(q, i) - zm;
      p.c += dz * (d.dy[q][i] - ym);
      p.v += dz * dz;
    }
  }
  return p;
}

struct Replication {
  std::map<std::string, std::vector<double>> path;
  DecayTest decay;
  bool failed = false;
};

Replication replicate_panel(const EventStudySpec& s, const PanelModel& m, const std::vector<GridField>& f, std::uint64_t seed) {
  const PanelDraw d = draw_panel(s, m, f, seed);
  const std::size_t len = static_cast<std::size_t>(s.periods);
  Replication out;
  const std::size_t n = d.s.size();

  double sbar = 0.0;
  int nt = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d.treated[i]) sbar += d.s[i], ++nt;
  if (nt == 0) throw EstimatorError("no treated units in the panel");
  sbar /= nt;

  // binary treated-by-event-time contrasts, per unit of mean intensity
  std::vector<double> twfe(len, 0.0);
  for (std::size_t q = 0; q < d.ks.size(); ++q) twfe[path_index(s, d.ks[q])] = contrast(d, d.dy[q], sbar).first;
  out.path["twfe"] = twfe;

  // continuous intensity: slope of dy on S within each event time
  double sm = 0;
  for (double v : d.s) sm += v;
  sm /= static_cast<double>(n);
  double ss = 0;
  for (double v : d.s) ss += (v - sm) * (v - sm);
  std::vector<double> gps(len, 0.0);
  for (std::size_t q = 0; q < d.ks.size(); ++q) {
    double c = 0, ym = 0;
    for (std::size_t i = 0; i < n; ++i) ym += d.dy[q][i];
    ym /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) c += (d.s[i] - sm) * (d.dy[q][i] - ym);
    gps[path_index(s, d.ks[q])] = c / ss;
  }
  out.path["gps"] = gps;

  // restricted model: tau_i(k) = A S_i (1 - exp(-kappa k dt)) / kappa, no spillovers
  auto g = [&](double kappa, int k) { return k > 0 ? (1.0 - std::exp(-kappa * k * s.dt)) / kappa : 0.0; };
  auto fit_of = [&](double kappa) {
    return profile(d, [&](std::size_t q, std::size_t i) { return d.s[i] * g(kappa, d.ks[q]); });
  };
  auto gain = [&](double log_kappa) {
    const Profiled p = fit_of(std::exp(log_kappa));
    return p.v > 0 ? p.c * p.c / p.v : 0.0;
  };
  const double lo = std::log(0.01), hi = std::log(3.0);
  double best = lo, best_gain = -1.0;
  for (int k = 0; k <= 60; ++k) {
    const double u = lo + (hi - lo) * k / 60.0;
    const double v = gain(u);
    if (v > best_gain) best_gain = v, best = u;
  }
  double a = std::max(lo, best - (hi - lo) / 60.0), b = std::min(hi, best + (hi - lo) / 60.0);
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 40; ++it) {
    const double c1 = b - phi * (b - a), c2 = a + phi * (b - a);
    if (gain(c1) > gain(c2)) b = c2; else a = c1;
  }
  const double kappa_r = std::exp(0.5 * (a + b));
  const Profiled pr = fit_of(kappa_r);
  const double amp_r = pr.v > 0 ? pr.c / pr.v : 0.0;
  std::vector<double> restricted(len, 0.0);
  for (int k = 0; k <= m.post; ++k) restricted[path_index(s, k)] = amp_r * g(kappa_r, k);
  out.path["restricted_pde"] = restricted;

  // full model: tau from the transient master equation at theta, amplitude profiled
  using namespace detail;
  const SearchBox box{5.0, 2.0, 0.01, 3.0};
  double total = 0.0;
  for (std::size_t q = 0; q < d.ks.size(); ++q) {
    if (d.ks[q] < 0) continue;
    double ym = 0;
    for (std::size_t i = 0; i < n; ++i) ym += d.dy[q][i];
    ym /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) total += (d.dy[q][i] - ym) * (d.dy[q][i] - ym);
  }
  auto unit_effects = [&](const std::vector<GridField>& fs) {
    std::vector<std::vector<double>> z(fs.size(), std::vector<double>(n));
    for (std::size_t k = 0; k < fs.size(); ++k)
      for (std::size_t i = 0; i < n; ++i) z[k][i] = fs[k].interpolate(d.pos[i][0], d.pos[i][1], d.pos[i][2], m.border);
    return z;
  };
  auto full_fit = [&](const StructuralParams& p) {
    const auto z = unit_effects(m.fields(p, s));
    return profile(d, [&](std::size_t q, std::size_t i) { return z[static_cast<std::size_t>(d.ks[q])][i]; });
  };
  auto objective = [&](const Vec4& u) {
    double penalty = 0.0;
    const StructuralParams p = project_search(u, box, &penalty);
    try {
      const Profiled q = full_fit(p);
      return (q.v > 0 ? 1.0 - q.c * q.c / (q.v * total) : 1.0) + penalty;
    } catch (const SolverError&) {
      return 1e30;
    }
  };
  const Vec4 step(0.5, 0.25, 0.25, 0.5);
  NmResult bestfit;
  bestfit.f = std::numeric_limits<double>::infinity();
  for (const StructuralParams& start : {StructuralParams{0.0, 0.0, kappa_r, 0.0}, StructuralParams{1.0, 0.25, kappa_r, 0.0}}) {
    NmResult r = nelder_mead(objective, to_search(start), step, 150, 1e-10);
    coordinate_refine(objective, r, step);
    if (r.f < bestfit.f) bestfit = r;
  }
  const StructuralParams theta = project_search(bestfit.x, box, nullptr);
  const auto fs = m.fields(theta, s);
  const auto z = unit_effects(fs);
  const Profiled pf = profile(d, [&](std::size_t q, std::size_t i) { return z[static_cast<std::size_t>(d.ks[q])][i]; });
  const double amp_f = pf.v > 0 ? pf.c / pf.v : 0.0;
  const auto pop = m.per_intensity(fs);
  std::vector<double> full(len, 0.0);
  for (int k = 0; k <= m.post; ++k) full[path_index(s, k)] = amp_f * pop[static_cast<std::size_t>(k)];
  out.path["full_pde"] = full;

  // impulse responses: increments of the treated-control contrast decay at kappa
  std::vector<double> inc, inc_se;
  for (const auto& col : d.inc) {
    const auto [v, var] = contrast(d, col, sbar);
    inc.push_back(v);
    inc_se.push_back(std::sqrt(var));
  }
  if (inc.size() >= 3) {
    try {
      out.decay = event_study_decay_test(inc, inc_se, s.dt);
    } catch (const InputError& e) {
      out.decay.applicable = false;
      out.decay.reason = e.what();
    }
  } else {
    out.decay.applicable = false;
    out.decay.reason = "fewer than 3 post-treatment increments";
  }
  return out;
}

}  // namespace

EventStudyResult event_study_panel(const EventStudySpec& spec) {
  spec.check();
  const PanelModel model(spec);
  const auto fields = model.fields(spec.params, spec);
  EventStudyResult res;
  for (int k = -spec.treat_time; k <= model.post; ++k) res.event_time.push_back(k);
  const auto pop = model.per_intensity(fields);
  res.truth.assign(res.event_time.size(), 0.0);
  for (int k = 0; k <= model.post; ++k) res.truth[path_index(spec, k)] = pop[static_cast<std::size_t>(k)];

  std::vector<Replication> reps(static_cast<std::size_t>(spec.replications));
  parallel_for(reps.size(), spec.workers, [&](std::size_t r) {
    try {
      reps[r] = replicate_panel(spec, model, fields, derive_seed(SeedSpec{spec.seed}, "event-study", r));
    } catch (const std::exception&) {
      reps[r].failed = true;
    }
  });

  const std::size_t len = res.event_time.size();
  for (const auto& name : event_study_estimators()) {
    std::vector<double> sum(len, 0.0), sq(len, 0.0);
    int n = 0;
    for (const auto& r : reps) {
      if (r.failed) continue;
      const auto& p = r.path.at(name);
      for (std::size_t k = 0; k < len; ++k) sum[k] += p[k], sq[k] += p[k] * p[k];
      ++n;
    }
    std::vector<double> mean(len, kNaN), se(len, kNaN);
    for (std::size_t k = 0; k < len && n > 0; ++k) {
      mean[k] = sum[k] / n;
      se[k] = n > 1 ? std::sqrt(std::max(0.0, sq[k] / n - mean[k] * mean[k]) / (n - 1)) : kNaN;
    }
    res.mean_path[name] = mean;
    res.path_mc_se[name] = se;
  }
  double ksum = 0.0;
  for (const auto& r : reps) {
    if (r.failed) {
      ++res.failures;
    } else if (r.decay.applicable) {
      ksum += r.decay.kappa_hat;
      ++res.decay_applicable;
    }
  }
  res.mean_kappa_hat = res.decay_applicable > 0 ? ksum / res.decay_applicable : kNaN;
  return res;
}

// --------------------------------------------------- uncertainty table

void FkPlan::check() const {
  if (draws < 2 || paths < 2) throw InputError("fk plan needs draws >= 2 and paths >= 2");
  if (!(horizon > 0) || !(dt > 0) || dt > horizon) throw InputError("fk plan needs 0 < dt <= horizon");
  if (workers < 1) throw InputError("workers must be >= 1");
  if (band_edges.size() < 2) throw InputError("fk plan needs at least one distance band");
  for (std::size_t i = 1; i < band_edges.size(); ++i)
    if (!(band_edges[i] > band_edges[i - 1])) throw InputError("band edges must increase");
  if (band_edges.front() < 0 || band_edges.back() > 100.0) throw InputError("band edges must lie in [0, 100] miles");
  for (double d : profile_distances)
    if (d < -100.0 || d > 100.0) throw InputError("profile distances must lie in [-100, 100] miles");
}

SpatialDomain fk_domain() {
  SpatialDomain d;
  d.x1_hi = 200.0;
  d.x2_hi = 100.0;
  return d;
}

SourceFn fk_border_source(double s0) {
  return [s0](const Point3& p, double) { return p.x1 > 100.0 ? s0 * (1.0 + 0.3 * p.alpha) : 0.0; };
}

Point3 fk_locate(double distance) { return {100.0 - distance, 50.0, 0.5}; }

namespace {
constexpr double kMinPosteriorKappa = 0.01;
}

ParamPosterior posterior_from_report(const EstimateReport& r) {
  if (!r.theta || !r.theta_cov) throw InputError("posterior needs a report with theta and its covariance");
  if (!r.theta_cov->allFinite()) throw EstimatorError("parameter covariance is not finite");
  const Eigen::Matrix4d cov = 0.5 * (*r.theta_cov + r.theta_cov->transpose());
  ParamPosterior post = ParamPosterior::gaussian(*r.theta, cov);
  // Fits often sit on a boundary (nu_n ~ 0); a raw Gaussian would then put half its
  // draws outside the admissible set, so each draw is projected back onto it.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(cov);
  const Eigen::Matrix4d root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  const Eigen::Vector4d mean = post.mean;
  post.sampler = [mean, root](std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Vector4d z;
    for (int i = 0; i < 4; ++i) z[i] = normal(rng);
    const Eigen::Vector4d v = mean + root * z;
    StructuralParams p{std::max(v[0], 0.0), std::max(v[1], 0.0), std::max(v[2], kMinPosteriorKappa), v[3]};
    const double bound = 2.0 * std::sqrt(p.nu_s * p.nu_n) * (1.0 - 1e-12);
    p.lambda = std::clamp(p.lambda, -bound, bound);
    return p;
  };
  return post;
}

std::vector<UncertaintyRow> uncertainty_table(const EstimateReport& gmm_report, const FkPlan& plan, double s0) {
  plan.check();
  const ParamPosterior post = posterior_from_report(gmm_report);
  const SourceFn source = fk_border_source(s0);
  std::vector<UncertaintyRow> rows;
  for (std::size_t b = 0; b + 1 < plan.band_edges.size(); ++b) {
    UncertaintyRow row;
    row.lo = plan.band_edges[b];
    row.hi = plan.band_edges[b + 1];
    row.distance = 0.5 * (row.lo + row.hi);
    PathOptions o;
    o.horizon = plan.horizon;
    o.dt = plan.dt;
    o.paths = plan.paths;
    o.antithetic = plan.antithetic;
    o.workers = plan.workers;
    o.domain = fk_domain();
    o.seed = derive_seed(SeedSpec{plan.seed}, "uncertainty", b);
    const PosteriorSummary s = pimc(post, plan.draws, source, fk_locate(row.distance), o);
    row.mean = s.mean;
    row.total_variance = s.total_variance;
    row.within_model_variance = s.within_model_variance;
    row.parameter_variance = s.parameter_variance;
    if (s.total_variance > 0) {
      row.within_pct = 100.0 * s.within_model_variance / s.total_variance;
      row.parameter_pct = 100.0 * s.parameter_variance / s.total_variance;
    }
    rows.push_back(row);
  }
  return rows;
}

void write_event_study_csv(const std::filesystem::path& path, const EventStudyResult& a, const EventStudyResult& b) {
  auto os = open_out(path);
  os << "panel,event_time,truth";
  for (const auto& n : event_study_estimators()) os << ',' << n << ',' << n << "_mc_se";
  os << '\n';
  for (const auto* res : {&a, &b}) {
    const char* panel = res == &a ? "A" : "B";
    for (std::size_t k = 0; k < res->event_time.size(); ++k) {
      os << panel << ',' << res->event_time[k] << ',' << format_real(res->truth[k]);
      for (const auto& n : event_study_estimators())
        os << ',' << format_real(res->mean_path.at(n)[k]) << ',' << format_real(res->path_mc_se.at(n)[k]);
      os << '\n';
    }
  }
}

void write_uncertainty_csv(const std::filesystem::path& path, std::span<const UncertaintyRow> rows) {
  auto os = open_out(path);
  os << "band_lo,band_hi,distance,mean,total_variance,within_model_variance,parameter_variance,within_pct,parameter_pct\n";
  for (const auto& r : rows)
    os << format_real(r.lo) << ',' << format_real(r.hi) << ',' << format_real(r.distance) << ',' << format_real(r.mean)
       << ',' << format_real(r.total_variance) << ',' << format_real(r.within_model_variance) << ','
       << format_real(r.parameter_variance) << ',' << format_real(r.within_pct) << ',' << format_real(r.parameter_pct)
       << '\n';
}

void write_profile_csv(const std::filesystem::path& path, std::span<const ProfileRow> rows) {
  auto os = open_out(path);
  os << "distance,mean,lo68,hi68,lo95,hi95\n";
  for (const auto& r : rows)
    os << format_real(r.distance) << ',' << format_real(r.mean) << ',' << format_real(r.lo68) << ','
       << format_real(r.hi68) << ',' << format_real(r.lo95) << ',' << format_real(r.hi95) << '\n';
}

}  // namespace spatnet
