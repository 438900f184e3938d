// spatnet command-line tool. Exit status: 0 success, 2 usage or config error,
// 3 numerical failure, 130 interrupted.

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

std::atomic<bool> g_cancel{false};

extern "C" void on_sigint(int) { g_cancel.store(true); }

constexpr int kUsage = 2;
constexpr int kNumerical = 3;
constexpr int kInterrupted = 130;

}  // namespace

int main(int argc, char** argv) {
  using namespace spatnet;
  using namespace spatnet::cli;

  CLI::App app{"Spatial and network spillover estimation, simulation and Monte Carlo studies"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "spatnet 1.0.0");

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  auto common = [&](CLI::App* sub, bool with_workers) {
    sub->add_option("-c,--config", config_path, "Config file ([dgp] [mc] [gmm] [fk]); defaults to the reference values");
    sub->add_option("--seed", seed, "Override every seed in the config");
    if (with_workers) sub->add_option("-j,--workers", workers, "Worker threads (results do not depend on it)");
  };

  std::string out;
  auto* simulate = app.add_subcommand("simulate", "Simulate one dataset for [dgp] case");
  common(simulate, false);
  simulate->add_option("-o,--out", out, "Output directory")->required();

  std::string data_dir;
  std::vector<std::string> estimators;
  auto* estimate = app.add_subcommand("estimate", "Run estimators on a dataset directory");
  common(estimate, false);
  estimate->add_option("-d,--data", data_dir, "Dataset directory")->required();
  estimate->add_option("-e,--estimators", estimators, "Comma-separated estimator names")
      ->delimiter(',')
      ->required();
  estimate->add_option("-o,--out", out, "Output JSON file")->required();

  bool fresh = false;
  auto* mc = app.add_subcommand("mc", "Monte Carlo sweep; reruns into the same directory resume");
  common(mc, true);
  mc->add_option("-o,--out", out, "Output directory")->required();
  mc->add_flag("--fresh", fresh, "Discard records already in the output directory");

  auto* fk = app.add_subcommand("fk", "Feynman-Kac distance profile and uncertainty decomposition");
  common(fk, true);
  fk->add_option("-o,--out", out, "Output directory")->required();

  bool dump = false;
  auto* config = app.add_subcommand("config", "Validate a config and print every effective value");
  common(config, true);
  config->add_flag("--dump", dump, "Print the effective config (default)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.override_seed(*seed);
    if (workers) cfg.override_workers(*workers);
    cfg.check();

    if (config->parsed()) {
      std::cout << dump_run_config(cfg);
      return 0;
    }
    if (simulate->parsed()) {
      cmd_simulate(cfg, out);
      write_run_info(out, "simulate", cfg);
    } else if (estimate->parsed()) {
      cmd_estimate(cfg, data_dir, estimators, out);
    } else if (mc->parsed()) {
      std::signal(SIGINT, on_sigint);
      std::signal(SIGTERM, on_sigint);
      if (!cmd_mc(cfg, out, fresh, &g_cancel)) {
        std::cerr << "interrupted; completed replications are in " << out << "/mc_records.csv, rerun to resume\n";
        return kInterrupted;
      }
      write_run_info(out, "mc", cfg);
    } else if (fk->parsed()) {
      cmd_fk(cfg, out);
      write_run_info(out, "fk", cfg);
    }
    return 0;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const SolverError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const EstimatorError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
