#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "spatnet/dgp.hpp"
#include "spatnet/io.hpp"

using namespace spatnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("spatnet_io_" + name);
  fs::remove_all(p);
  return p;
}

Dataset random_dataset(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  std::uniform_int_distribution<int> n_units(2, 40);
  Dataset d;
  const int n = n_units(rng);
  d.units.resize(static_cast<std::size_t>(n));
  d.network = Adjacency(d.units.size());
  for (int i = 0; i < n; ++i) {
    auto& r = d.units[static_cast<std::size_t>(i)];
    r.id = 1000 + 7 * i;
    std::uniform_real_distribution<double> in(0.0, 100.0), a(0.0, 1.0);
    r.x = {in(rng), in(rng)};
    r.alpha = a(rng);
    r.source = u(rng) * 1e-7;
    r.controls = {u(rng), u(rng) * 1e9, u(rng) * 1e-9};
    r.outcome = u(rng);
  }
  std::bernoulli_distribution e(0.2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (e(rng)) d.network.add_edge(i, j);
  d.network.finalize();
  for (int i = 0; i < n; ++i) d.units[static_cast<std::size_t>(i)].degree = static_cast<int>(d.network.neighbors[static_cast<std::size_t>(i)].size());
  if (e(rng)) {
    d.lagged_network = Adjacency(d.units.size());
    d.lagged_network->finalize();
  }
  if (e(rng)) {
    d.config_id = kAllConfigs[rng() % 4];
    std::vector<double> t;
    for (int i = 0; i < n; ++i) t.push_back(u(rng));
    d.tau_true = t;
  }
  d.seed = rng();
  return d;
}

}  // namespace

TEST_CASE("dataset round trip is exact") {
  std::mt19937_64 rng(12);
  const auto dir = scratch("prop");
  for (int trial = 0; trial < 50; ++trial) {
    const Dataset d = random_dataset(rng);
    write_dataset(dir, d);
    const Dataset back = read_dataset(dir);
    CHECK(back.units == d.units);
    CHECK(back.network == d.network);
    CHECK(back.lagged_network == d.lagged_network);
    CHECK(back.config_id == d.config_id);
    CHECK(back.seed == d.seed);
    CHECK(back.tau_true == d.tau_true);
  }
  fs::remove_all(dir);
}

TEST_CASE("simulated dataset round trip") {
  DgpSettings s;
  s.n_units = 80;
  const Dataset d = simulate_dataset(ConfigId::NetworkOnly, s, 3);
  const auto dir = scratch("sim");
  write_dataset(dir, d);
  const Dataset back = read_dataset(dir);
  CHECK(back.units == d.units);
  CHECK(back.network == d.network);
  CHECK(back.lagged_network == d.lagged_network);
  CHECK(back.tau_true == d.tau_true);
  CHECK(back.config_id == d.config_id);
  fs::remove_all(dir);
}

TEST_CASE("malformed inputs are rejected") {
  const auto dir = scratch("bad");
  fs::create_directories(dir);
  CHECK_THROWS_AS(read_dataset(dir), InputError);
  std::ofstream(dir / "units.csv") << "id,x1,x2,alpha,source,X1,X2,X3,Y,degree\n0,1,2,0.5,0,0,0,0,abc,0\n";
  std::ofstream(dir / "network.csv") << "i,j\n";
  CHECK_THROWS_AS(read_dataset(dir), InputError);
  std::ofstream(dir / "units.csv") << "id,x1,x2,alpha,source,X1,X2,X3,Y,degree\n0,1,2,0.5,0,0,0,0,1,0\n";
  std::ofstream(dir / "network.csv") << "i,j\n0,5\n";
  CHECK_THROWS_AS(read_dataset(dir), InputError);
  fs::remove_all(dir);
}

TEST_CASE("field round trip") {
  SpatialDomain d;
  d.grid = {5, 4, 3};
  const GridField f = GridField::sample(d, [](double a, double b, double c) { return std::sin(a) * b + c / 3.0; });
  const auto dir = scratch("field");
  fs::create_directories(dir);
  write_field(dir / "tau.csv", f);
  const GridField g = read_field(dir / "tau.csv");
  CHECK(g.same_lattice(f));
  CHECK(g.values() == f.values());
  fs::remove_all(dir);
}
