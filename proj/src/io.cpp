#include "spatnet/io.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace spatnet {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string format_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

namespace {

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw InputError("cannot write " + p.string());
  return os;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw InputError("cannot read " + p.string());
  return is;
}

double to_real(const std::string& s, const fs::path& file) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError("bad number '" + s + "' in " + file.string());
  }
}

std::int64_t to_int(const std::string& s, const fs::path& file) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw InputError("bad integer '" + s + "' in " + file.string());
  return v;
}

// Reads a CSV with the expected header; returns the data rows.
std::vector<std::vector<std::string>> read_table(const fs::path& p, const std::vector<std::string>& header) {
  auto is = open_in(p);
  std::string line;
  if (!std::getline(is, line) || split_csv_line(line) != header) throw InputError("unexpected header in " + p.string());
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    auto r = split_csv_line(line);
    if (r.size() != header.size()) throw InputError("wrong column count in " + p.string());
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_edges(const fs::path& p, const Adjacency& adj, const std::vector<UnitRecord>& units) {
  auto os = open_out(p);
  os << "i,j\n";
  for (auto [i, j] : adj.edges()) os << units[i].id << ',' << units[j].id << '\n';
}

Adjacency read_edges(const fs::path& p, const std::unordered_map<std::int64_t, int>& index) {
  Adjacency adj(index.size());
  for (const auto& r : read_table(p, {"i", "j"})) {
    auto a = index.find(to_int(r[0], p)), b = index.find(to_int(r[1], p));
    if (a == index.end() || b == index.end()) throw InputError("edge references unknown id in " + p.string());
    if (a->second == b->second) throw InputError("self loop in " + p.string());
    adj.add_edge(a->second, b->second);
  }
  adj.finalize();
  return adj;
}

}  // namespace

void write_dataset(const fs::path& dir, const Dataset& data) {
  data.check();
  fs::create_directories(dir);
  {
    auto os = open_out(dir / "units.csv");
    os << "id,x1,x2,alpha,source,X1,X2,X3,Y,degree\n";
    for (const auto& u : data.units) {
      os << u.id << ',' << format_real(u.x[0]) << ',' << format_real(u.x[1]) << ',' << format_real(u.alpha) << ','
         << format_real(u.source) << ',' << format_real(u.controls[0]) << ',' << format_real(u.controls[1]) << ','
         << format_real(u.controls[2]) << ',' << format_real(u.outcome) << ',' << u.degree << '\n';
    }
  }
  write_edges(dir / "network.csv", data.network, data.units);
  if (data.lagged_network) {
    write_edges(dir / "lagged_network.csv", *data.lagged_network, data.units);
  } else {
    fs::remove(dir / "lagged_network.csv");
  }
  json meta;
  meta["seed"] = data.seed;
  meta["config_id"] = data.config_id ? json(to_string(*data.config_id)) : json(nullptr);
  meta["n_units"] = data.size();
  meta["has_lagged_network"] = data.lagged_network.has_value();
  meta["has_truth"] = data.tau_true.has_value();
  open_out(dir / "meta.json") << meta.dump(2) << '\n';
  if (data.tau_true) {
    auto os = open_out(dir / "truth.csv");
    os << "id,tau_true\n";
    for (std::size_t i = 0; i < data.size(); ++i) os << data.units[i].id << ',' << format_real((*data.tau_true)[i]) << '\n';
  } else {
    fs::remove(dir / "truth.csv");
  }
}

Dataset read_dataset(const fs::path& dir) {
  Dataset d;
  const fs::path units = dir / "units.csv";
  std::unordered_map<std::int64_t, int> index;
  for (const auto& r : read_table(units, {"id", "x1", "x2", "alpha", "source", "X1", "X2", "X3", "Y", "degree"})) {
    UnitRecord u;
    u.id = to_int(r[0], units);
    u.x = {to_real(r[1], units), to_real(r[2], units)};
    u.alpha = to_real(r[3], units);
    u.source = to_real(r[4], units);
    u.controls = {to_real(r[5], units), to_real(r[6], units), to_real(r[7], units)};
    u.outcome = to_real(r[8], units);
    u.degree = static_cast<int>(to_int(r[9], units));
    if (!index.emplace(u.id, static_cast<int>(d.units.size())).second) throw InputError("duplicate unit id");
    d.units.push_back(u);
  }
  d.network = read_edges(dir / "network.csv", index);
  if (fs::exists(dir / "lagged_network.csv")) d.lagged_network = read_edges(dir / "lagged_network.csv", index);
  if (fs::exists(dir / "meta.json")) {
    json meta;
    try {
      meta = json::parse(open_in(dir / "meta.json"));
      d.seed = meta.value("seed", std::uint64_t{0});
      if (meta.contains("config_id") && !meta["config_id"].is_null())
        d.config_id = config_from_string(meta["config_id"].get<std::string>());
    } catch (const json::exception& e) {
      throw InputError(std::string("bad meta.json: ") + e.what());
    }
  }
  if (fs::exists(dir / "truth.csv")) {
    const fs::path p = dir / "truth.csv";
    std::vector<double> tau(d.size(), std::numeric_limits<double>::quiet_NaN());
    for (const auto& r : read_table(p, {"id", "tau_true"})) {
      auto it = index.find(to_int(r[0], p));
      if (it == index.end()) throw InputError("truth references unknown id");
      tau[static_cast<std::size_t>(it->second)] = to_real(r[1], p);
    }
    d.tau_true = std::move(tau);
  }
  d.check();
  return d;
}

void write_field(const fs::path& path, const GridField& f) {
  const auto& d = f.domain();
  json h;
  h["x1"] = {d.x1_lo, d.x1_hi};
  h["x2"] = {d.x2_lo, d.x2_hi};
  h["alpha"] = {d.alpha_lo, d.alpha_hi};
  h["grid"] = d.grid;
  h["order"] = "x1-major, alpha fastest";
  open_out(fs::path(path.string() + ".json")) << h.dump(2) << '\n';
  auto os = open_out(path);
  os << "x1,x2,alpha,value\n";
  for (int i = 0; i < f.n1(); ++i)
    for (int j = 0; j < f.n2(); ++j)
      for (int k = 0; k < f.na(); ++k)
        os << format_real(f.coord(0, i)) << ',' << format_real(f.coord(1, j)) << ',' << format_real(f.coord(2, k))
           << ',' << format_real(f.at(i, j, k)) << '\n';
}

GridField read_field(const fs::path& path) {
  SpatialDomain d;
  try {
    const json h = json::parse(open_in(fs::path(path.string() + ".json")));
    d.x1_lo = h.at("x1")[0];
    d.x1_hi = h.at("x1")[1];
    d.x2_lo = h.at("x2")[0];
    d.x2_hi = h.at("x2")[1];
    d.alpha_lo = h.at("alpha")[0];
    d.alpha_hi = h.at("alpha")[1];
    d.grid = h.at("grid").get<std::array<int, 3>>();
  } catch (const json::exception& e) {
    throw InputError(std::string("bad field header: ") + e.what());
  }
  d.check();
  GridField f(d);
  const auto rows = read_table(path, {"x1", "x2", "alpha", "value"});
  if (rows.size() != f.size()) throw InputError("field row count does not match the lattice");
  for (std::size_t n = 0; n < rows.size(); ++n) f.values()[n] = to_real(rows[n][3], path);
  return f;
}

}  // namespace spatnet
