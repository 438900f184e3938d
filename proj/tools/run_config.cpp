#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "CLI11.hpp"

namespace spatnet::cli {

namespace {

using Inputs = std::vector<std::string>;

struct Key {
  std::string section, name;
  std::function<void(RunConfig&, const Inputs&)> set;
  std::function<std::string(const RunConfig&)> get;
};

thread_local std::string where;  // key being parsed, for messages

[[noreturn]] void bad(const std::string& what) { throw InputError(where + ": " + what); }

const std::string& scalar(const Inputs& in) {
  if (in.size() != 1) bad("expected a single value");
  return in.front();
}

template <class T>
T number(const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) bad("'" + s + "' is not a valid number");
  return v;
}

double real(const Inputs& in) { return number<double>(scalar(in)); }
int integer(const Inputs& in) { return number<int>(scalar(in)); }
std::uint64_t u64(const Inputs& in) { return number<std::uint64_t>(scalar(in)); }
std::size_t count(const Inputs& in) { return number<std::size_t>(scalar(in)); }
unsigned uinteger(const Inputs& in) { return number<unsigned>(scalar(in)); }

bool boolean(const Inputs& in) {
  const std::string& s = scalar(in);
  if (s == "true") return true;
  if (s == "false") return false;
  bad("expected true or false, got '" + s + "'");
}

template <class T, std::size_t N>
std::array<T, N> fixed(const Inputs& in) {
  if (in.size() != N) bad("expected a list of " + std::to_string(N) + " values");
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = number<T>(in[i]);
  return out;
}

std::vector<double> reals(const Inputs& in) {
  std::vector<double> out;
  for (const auto& s : in) out.push_back(number<double>(s));
  return out;
}

ConfigId config_id(const Inputs& in) {
  try {
    return config_from_string(scalar(in));
  } catch (const InputError& e) {
    bad(e.what());
  }
}

std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, p);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(unsigned v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string quote(const std::string& s) { return '"' + s + '"'; }

template <class R>
std::string list(const R& r) {
  std::string out = "[";
  for (const auto& v : r) out += (out.size() > 1 ? ", " : "") + fmt(v);
  return out + "]";
}

std::string names(const std::vector<std::string>& v) {
  std::string out = "[";
  for (const auto& s : v) out += (out.size() > 1 ? ", " : "") + quote(s);
  return out + "]";
}

#define SCALAR(sec, key, field, parse) \
  Key { sec, key, [](RunConfig& c, const Inputs& in) { c.field = parse(in); }, [](const RunConfig& c) { return fmt(c.field); } }

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      {"dgp", "case", [](RunConfig& c, const Inputs& in) { c.case_id = config_id(in); },
       [](const RunConfig& c) { return quote(to_string(c.case_id)); }},
      SCALAR("dgp", "seed", seed, u64),
      SCALAR("dgp", "n_units", dgp.n_units, integer),
      SCALAR("dgp", "s0", dgp.s0, real),
      SCALAR("dgp", "theta_d", dgp.gravity.theta_d, real),
      SCALAR("dgp", "theta_alpha", dgp.gravity.theta_alpha, real),
      SCALAR("dgp", "control_sd", dgp.control_sd, real),
      SCALAR("dgp", "noise_sd", dgp.noise_sd, real),
      {"dgp", "gamma", [](RunConfig& c, const Inputs& in) { c.dgp.gamma = fixed<double, 3>(in); },
       [](const RunConfig& c) { return list(c.dgp.gamma); }},
      {"dgp", "grid", [](RunConfig& c, const Inputs& in) { c.dgp.grid = fixed<int, 3>(in); },
       [](const RunConfig& c) { return list(c.dgp.grid); }},
      SCALAR("dgp", "rewire_fraction", dgp.rewire_fraction, real),
      SCALAR("dgp", "effect_scale", dgp.effect_scale, real),
      SCALAR("dgp", "border_band", dgp.border_band, real),
      {"dgp", "geography",
       [](RunConfig& c, const Inputs& in) {
         const std::string& s = scalar(in);
         if (s == "homogeneous") c.dgp.geography = Geography::Homogeneous;
         else if (s == "clustered") c.dgp.geography = Geography::Clustered;
         else bad("expected \"homogeneous\" or \"clustered\", got '" + s + "'");
       },
       [](const RunConfig& c) {
         return quote(c.dgp.geography == Geography::Clustered ? "clustered" : "homogeneous");
       }},
      SCALAR("dgp", "cluster_parents", dgp.cluster_parents, integer),
      SCALAR("dgp", "cluster_sd", dgp.cluster_sd, real),
      SCALAR("dgp", "industry_correlation", dgp.industry_correlation, real),

      {"mc", "configs",
       [](RunConfig& c, const Inputs& in) {
         c.mc.configs.clear();
         for (const auto& s : in) c.mc.configs.push_back(config_id({s}));
       },
       [](const RunConfig& c) {
         std::vector<std::string> v;
         for (ConfigId id : c.mc.configs) v.push_back(to_string(id));
         return names(v);
       }},
      {"mc", "estimators", [](RunConfig& c, const Inputs& in) { c.mc.estimators = in; },
       [](const RunConfig& c) { return names(c.mc.estimators); }},
      SCALAR("mc", "replications", mc.replications, integer),
      SCALAR("mc", "base_seed", mc.base_seed, u64),
      SCALAR("mc", "workers", mc.workers, uinteger),
      SCALAR("mc", "bootstrap", estimator.bootstrap, integer),
      SCALAR("mc", "n_bins", estimator.n_bins, integer),
      SCALAR("mc", "event_study", event_study, boolean),
      SCALAR("mc", "event_study_replications", event_study_replications, integer),

      {"gmm", "grid", [](RunConfig& c, const Inputs& in) { c.estimator.gmm.grid = fixed<int, 3>(in); },
       [](const RunConfig& c) { return list(c.estimator.gmm.grid); }},
      {"gmm", "rd_knots", [](RunConfig& c, const Inputs& in) { c.estimator.gmm.rd_knots = fixed<double, 5>(in); },
       [](const RunConfig& c) { return list(c.estimator.gmm.rd_knots); }},
      SCALAR("gmm", "rd_halfwidth", estimator.gmm.rd_halfwidth, real),
      SCALAR("gmm", "mi_neighbors", estimator.gmm.mi_neighbors, integer),
      SCALAR("gmm", "max_evaluations", estimator.gmm.max_evaluations, integer),
      SCALAR("gmm", "tolerance", estimator.gmm.tolerance, real),
      SCALAR("gmm", "hac_spatial_bandwidth", estimator.hac.spatial_bandwidth, real),
      SCALAR("gmm", "hac_network_bandwidth", estimator.hac.network_bandwidth, real),

      {"fk", "case", [](RunConfig& c, const Inputs& in) { c.fk_case = config_id(in); },
       [](const RunConfig& c) { return quote(to_string(c.fk_case)); }},
      SCALAR("fk", "source_scale", fk_source_scale, real),
      SCALAR("fk", "draws", fk.draws, count),
      SCALAR("fk", "paths", fk.paths, count),
      SCALAR("fk", "horizon", fk.horizon, real),
      SCALAR("fk", "dt", fk.dt, real),
      SCALAR("fk", "seed", fk.seed, u64),
      SCALAR("fk", "antithetic", fk.antithetic, boolean),
      SCALAR("fk", "workers", fk.workers, uinteger),
      {"fk", "band_edges", [](RunConfig& c, const Inputs& in) { c.fk.band_edges = reals(in); },
       [](const RunConfig& c) { return list(c.fk.band_edges); }},
      {"fk", "profile_distances", [](RunConfig& c, const Inputs& in) { c.fk.profile_distances = reals(in); },
       [](const RunConfig& c) { return list(c.fk.profile_distances); }},
  };
  return k;
}

#undef SCALAR

const std::vector<std::string> kSections{"dgp", "mc", "gmm", "fk"};

}  // namespace

void RunConfig::check() const {
  dgp.check();
  if (!(dgp.s0 > 0)) throw InputError("[dgp] s0 must be positive");
  if (!(dgp.gravity.theta_d > 0) || !(dgp.gravity.theta_alpha >= 0))
    throw InputError("[dgp] theta_d must be positive and theta_alpha non-negative");
  mc.check();
  if (estimator.bootstrap < 19) throw InputError("[mc] bootstrap must be at least 19");
  if (estimator.n_bins < 2) throw InputError("[mc] n_bins must be at least 2");
  if (event_study_replications < 1) throw InputError("[mc] event_study_replications must be >= 1");
  const auto& g = estimator.gmm;
  if (g.grid[0] < 4 || g.grid[1] < 3 || g.grid[2] < 3) throw InputError("[gmm] grid must be at least 4x3x3");
  if (g.max_evaluations < 10) throw InputError("[gmm] max_evaluations must be at least 10");
  if (!(g.tolerance > 0)) throw InputError("[gmm] tolerance must be positive");
  if (g.mi_neighbors < 1) throw InputError("[gmm] mi_neighbors must be at least 1");
  if (!(g.rd_halfwidth > 0)) throw InputError("[gmm] rd_halfwidth must be positive");
  for (std::size_t i = 1; i < g.rd_knots.size(); ++i)
    if (!(g.rd_knots[i] > g.rd_knots[i - 1])) throw InputError("[gmm] rd_knots must increase");
  estimator.hac.check();
  if (!(fk_source_scale > 0)) throw InputError("[fk] source_scale must be positive");
  fk.check();
}

void RunConfig::override_seed(std::uint64_t s) {
  seed = s;
  mc.base_seed = s;
  fk.seed = s;
}

void RunConfig::override_workers(unsigned w) {
  if (w < 1) throw InputError("--workers must be >= 1");
  mc.workers = w;
  fk.workers = w;
}

namespace {

/// The TOML reader merges repeated keys into one list, so repeats are caught on the raw text.
void reject_repeated_keys(const std::string& text, const std::string& origin) {
  std::istringstream lines(text);
  std::string line, section;
  std::set<std::string> seen;
  while (std::getline(lines, line)) {
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    if (line[first] == '[') {
      section = line.substr(first, line.find(']') - first + 1);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(first, eq - first);
    key.erase(key.find_last_not_of(" \t") + 1);
    if (!seen.insert(section + key).second) throw InputError(origin + ": " + section + " " + key + ": key given twice");
  }
}

}  // namespace

RunConfig parse_run_config(std::istream& is, const std::string& origin) {
  std::ostringstream buffer;
  buffer << is.rdbuf();
  reject_repeated_keys(buffer.str(), origin);
  std::istringstream text(buffer.str());
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(text);
  } catch (const std::exception& e) {
    throw InputError(origin + ": " + e.what());
  }
  RunConfig c;
  std::set<std::string> seen;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const std::string section = item.parents.empty() ? "" : item.parents.front();
    where = origin + ": [" + section + "] " + item.name;
    if (item.parents.size() > 1 || std::find(kSections.begin(), kSections.end(), section) == kSections.end())
      throw InputError(origin + ": key '" + item.fullname() + "' is outside the [dgp], [mc], [gmm], [fk] sections");
    const auto& ks = keys();
    auto it = std::find_if(ks.begin(), ks.end(), [&](const Key& k) { return k.section == section && k.name == item.name; });
    if (it == ks.end()) throw InputError(where + ": unknown key");
    if (!seen.insert(section + "." + item.name).second) throw InputError(where + ": key given twice");
    it->set(c, item.inputs);
  }
  c.check();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read config " + path.string());
  return parse_run_config(is, path.string());
}

std::string dump_run_config(const RunConfig& c) {
  std::ostringstream os;
  std::string section;
  for (const auto& k : keys()) {
    if (k.section != section) {
      os << (section.empty() ? "" : "\n") << '[' << k.section << "]\n";
      section = k.section;
    }
    os << k.name << " = " << k.get(c) << '\n';
  }
  return os.str();
}

}  // namespace spatnet::cli
