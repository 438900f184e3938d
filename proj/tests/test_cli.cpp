#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "json.hpp"

using namespace spatnet;
using namespace spatnet::cli;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_run_config(is);
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("spatnet_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Byte comparison of every file except the timestamped run_info.json.
bool same_tree(const fs::path& a, const fs::path& b) {
  std::set<std::string> fa, fb;
  for (const auto& e : fs::directory_iterator(a))
    if (e.path().filename() != "run_info.json") fa.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b))
    if (e.path().filename() != "run_info.json") fb.insert(e.path().filename().string());
  if (fa != fb) return false;
  for (const auto& f : fa)
    if (slurp(a / f) != slurp(b / f)) return false;
  return true;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SPATNET_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kSmallMc = R"([dgp]
n_units = 200
[mc]
configs = ["no_spillovers", "full_model"]
estimators = ["twfe", "did", "network_iv"]
replications = 3
event_study = false
)";

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("empty file gives the defaults") {
    const RunConfig c = parse("");
    CHECK(dump_run_config(c) == dump_run_config(RunConfig{}));
    CHECK(c.dgp.n_units == 500);
    CHECK(c.mc.replications == 200);
    CHECK(c.fk.draws == 1000);
  }
  SUBCASE("checked-in reference file equals the defaults") {
    CHECK(dump_run_config(load_run_config(fs::path(SPATNET_SOURCE_DIR) / "configs" / "paper.toml")) ==
          dump_run_config(RunConfig{}));
  }
  SUBCASE("typed values") {
    const RunConfig c = parse(
        "[dgp]\ncase = \"spatial_only\" # comment\nn_units = 300\ngamma = [0.2, 0.3, 0.4]\ngeography = 'clustered'\n"
        "[mc]\nconfigs = [\"1\", \"case4\"]\nestimators = [\"gps\"]\nevent_study = false\n"
        "[gmm]\ntolerance = 1e-5\n[fk]\nband_edges = [0, 50, 100]\n");
    CHECK(c.case_id == ConfigId::SpatialOnly);
    CHECK(c.dgp.n_units == 300);
    CHECK(c.dgp.gamma[2] == 0.4);
    CHECK(c.dgp.geography == Geography::Clustered);
    CHECK(c.mc.configs == std::vector<ConfigId>{ConfigId::NoSpillovers, ConfigId::FullModel});
    CHECK(c.mc.estimators == std::vector<std::string>{"gps"});
    CHECK_FALSE(c.event_study);
    CHECK(c.estimator.gmm.tolerance == 1e-5);
    CHECK(c.fk.band_edges.size() == 3);
  }
  SUBCASE("dump parses back to the same config") {
    const RunConfig c = parse("[dgp]\ns0 = 0.123456789012345\nseed = 18446744073709551615\n[fk]\ndt = 0.1\n");
    CHECK(dump_run_config(parse(dump_run_config(c))) == dump_run_config(c));
    CHECK(c.seed == 18446744073709551615ull);
  }
  SUBCASE("rejections") {
    for (const char* text : {
             "[dgp]\nn_unit = 5\n",                  // unknown key
             "[dgps]\nn_units = 5\n",                // unknown section
             "n_units = 5\n",                        // outside a section
             "[dgp]\nn_units = \"many\"\n",          // wrong type
             "[dgp]\nn_units = 2.5\n",               // not an integer
             "[dgp]\nn_units = 500\nn_units = 400\n",  // repeated
             "[dgp]\ngamma = [0.1, 0.1]\n",          // wrong arity
             "[dgp]\ncase = \"case9\"\n",            // unknown case
             "[dgp]\ngeography = \"dense\"\n",
             "[mc]\nestimators = [\"ols\"]\n",       // unknown estimator
             "[mc]\nreplications = 1\n",             // violates M >= 2
             "[mc]\nevent_study = yes\n",
             "[fk]\nband_edges = [0, 50, 40]\n",
             "[gmm]\ntolerance = -1\n",
         }) {
      CAPTURE(text);
      CHECK_THROWS_AS(parse(text), InputError);
    }
  }
  SUBCASE("overrides") {
    RunConfig c;
    c.override_seed(9);
    CHECK(c.seed == 9);
    CHECK(c.mc.base_seed == 9);
    CHECK(c.fk.seed == 9);
    c.override_workers(3);
    CHECK(c.mc.workers == 3);
    CHECK(c.fk.workers == 3);
    CHECK_THROWS_AS(c.override_workers(0), InputError);
  }
}

TEST_CASE("simulate and estimate") {
  const fs::path dir = scratch("sim");
  RunConfig c = parse("[dgp]\ncase = \"no_spillovers\"\n");
  cmd_simulate(c, dir / "a");
  cmd_simulate(c, dir / "b");
  CHECK(same_tree(dir / "a", dir / "b"));
  {
    std::ifstream is(dir / "a" / "units.csv");
    std::string line;
    int rows = -1;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 500);
  }
  const auto truth = nlohmann::json::parse(slurp(dir / "a" / "truth.json"));
  CHECK(truth["direct"].get<double>() == doctest::Approx(0.1));

  cmd_estimate(c, dir / "a", {"twfe", "gps"}, dir / "two.json");
  CHECK(nlohmann::json::parse(slurp(dir / "two.json")).size() == 2);
  cmd_estimate(c, dir / "a", {"full_gmm"}, dir / "gmm.json");
  const auto gmm = nlohmann::json::parse(slurp(dir / "gmm.json"));
  CHECK(report_from_json(gmm[0].dump()).theta->kappa == doctest::Approx(0.25).epsilon(0.15));
  CHECK_THROWS_AS(cmd_estimate(c, dir / "a", {"twfe", "ols"}, dir / "x.json"), InputError);
  CHECK_FALSE(fs::exists(dir / "x.json"));
  fs::remove(dir / "a" / "lagged_network.csv");
  CHECK_THROWS_AS(cmd_estimate(c, dir / "a", {"network_iv"}, dir / "x.json"), InputError);
  fs::remove_all(dir);
}

TEST_CASE("mc command: resume and parallelism leave the output unchanged") {
  const fs::path dir = scratch("mc");
  const RunConfig c = parse(kSmallMc);
  REQUIRE(cmd_mc(c, dir / "serial", false));
  RunConfig par = c;
  par.override_workers(2);
  REQUIRE(cmd_mc(par, dir / "parallel", false));
  CHECK(same_tree(dir / "serial", dir / "parallel"));

  // an interrupted run leaves completed replications on disk; rerunning finishes the rest
  std::atomic<bool> cancel{true};
  CHECK_FALSE(cmd_mc(c, dir / "resumed", false, &cancel));
  CHECK(fs::exists(dir / "resumed" / "mc_records.csv"));
  CHECK_FALSE(fs::exists(dir / "resumed" / "mc_summary.csv"));
  {
    // keep the first two replications' records and a torn line, as a kill mid-write would
    const auto records = read_records_csv(dir / "serial" / "mc_records.csv");
    std::ofstream os(dir / "resumed" / "mc_records.csv");
    os << records_csv_header() << '\n';
    for (std::size_t i = 0; i < 6; ++i) os << record_csv_line(records[i]) << '\n';
    os << record_csv_line(records[6]).substr(0, 20);
  }
  REQUIRE(cmd_mc(c, dir / "resumed", false));
  CHECK(same_tree(dir / "serial", dir / "resumed"));

  // summary layout: configs x estimators x two targets
  std::ifstream is(dir / "serial" / "mc_summary.csv");
  std::string line;
  int rows = -1;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 2 * 3 * 2);

  // a different plan may not reuse the directory
  RunConfig other = c;
  other.override_seed(5);
  CHECK_THROWS_AS(cmd_mc(other, dir / "serial", false), InputError);
  CHECK(cmd_mc(other, dir / "serial", true));
  fs::remove_all(dir);
}

TEST_CASE("exit statuses") {
  const fs::path dir = scratch("exit");
  {
    std::ofstream(dir / "bad.toml") << "[dgp]\nn_unit = 5\n";
    std::ofstream(dir / "small.toml") << "[dgp]\nn_units = 200\n";
  }
  const std::string d = dir.string();
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("simulate") == 2);
  CHECK(run_cli("simulate -c " + d + "/bad.toml -o " + d + "/out") == 2);
  CHECK_FALSE(fs::exists(dir / "out"));
  CHECK(run_cli("simulate -c " + d + "/missing.toml -o " + d + "/out") == 2);
  CHECK(run_cli("simulate -c " + d + "/small.toml -o " + d + "/data") == 0);
  CHECK(fs::exists(dir / "data" / "run_info.json"));
  CHECK(run_cli("estimate -d " + d + "/data -e twfe,bogus -o " + d + "/r.json") == 2);
  CHECK(run_cli("estimate -d " + d + "/data -e twfe,did -o " + d + "/r.json") == 0);
  fs::remove(dir / "data" / "lagged_network.csv");
  CHECK(run_cli("estimate -d " + d + "/data -e network_iv -o " + d + "/r.json") == 2);
  CHECK(run_cli("estimate -d " + d + "/nowhere -e twfe -o " + d + "/r.json") == 2);
  fs::remove_all(dir);
}
