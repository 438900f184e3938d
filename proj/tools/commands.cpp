#include "commands.hpp"

#include <chrono>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "json.hpp"
#include "spatnet/io.hpp"

namespace spatnet::cli {

namespace {

using json = nlohmann::json;

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, mode);
  if (!os) throw InputError("cannot write " + p.string());
  return os;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw InputError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Write to a sibling temp file, then rename, so readers never see half a file.
void write_atomic(const fs::path& p, const std::function<void(const fs::path&)>& writer) {
  const fs::path tmp = p.string() + ".tmp";
  writer(tmp);
  fs::rename(tmp, p);
}

EstimatorOptions estimator_options(const RunConfig& c) {
  EstimatorOptions o = c.estimator;
  o.effect_scale = c.dgp.effect_scale;
  o.border = c.dgp.border;
  o.border_band = c.dgp.border_band;
  return o;
}

McPlan mc_plan(const RunConfig& c) {
  McPlan p = c.mc;
  p.dgp = c.dgp;
  p.estimator = estimator_options(c);
  return p;
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

/// The sweep's identity: the config minus parallelism and the [fk] section,
/// neither of which changes the records.
std::string plan_fingerprint(const RunConfig& c) {
  RunConfig norm = c;
  norm.override_workers(1);
  const RunConfig defaults;
  norm.fk = defaults.fk;
  norm.fk_case = defaults.fk_case;
  norm.fk_source_scale = defaults.fk_source_scale;
  return dump_run_config(norm);
}

}  // namespace

void write_run_info(const fs::path& out_dir, const std::string& command, const RunConfig& c) {
  json info;
  info["command"] = command;
  info["finished_utc"] = now_iso();
  info["config"] = dump_run_config(c);
  open_out(out_dir / "run_info.json") << info.dump(2) << '\n';
}

void cmd_simulate(const RunConfig& c, const fs::path& out_dir) {
  const Dataset data = simulate_dataset(c.case_id, c.dgp, c.seed);
  write_dataset(out_dir, data);
  const TrueEffects t = true_effects(data, c.dgp);
  json truth;
  truth["config"] = to_string(c.case_id);
  truth["seed"] = c.seed;
  truth["direct"] = t.direct;
  truth["total_border"] = t.total_border;
  open_out(out_dir / "truth.json") << truth.dump(2) << '\n';
}

void cmd_estimate(const RunConfig& c, const fs::path& data_dir, const std::vector<std::string>& estimators,
                  const fs::path& out_path) {
  if (estimators.empty()) throw InputError("no estimators requested");
  const auto& valid = estimator_names();
  std::string list;
  for (const auto& n : valid) list += (list.empty() ? "" : ", ") + n;
  for (const auto& e : estimators)
    if (std::find(valid.begin(), valid.end(), e) == valid.end())
      throw InputError("unknown estimator '" + e + "' (valid: " + list + ")");
  if (std::set<std::string>(estimators.begin(), estimators.end()).size() != estimators.size())
    throw InputError("an estimator is listed twice");

  const Dataset data = read_dataset(data_dir);
  EstimatorOptions opts = estimator_options(c);
  opts.seed = derive_seed(SeedSpec{c.seed}, "estimate", 0);
  std::vector<EstimateReport> reports;
  for (const auto& e : estimators) reports.push_back(run_estimator(e, data, opts));
  open_out(out_path) << reports_to_json(reports) << '\n';
}

bool cmd_mc(const RunConfig& c, const fs::path& out_dir, bool fresh, const std::atomic<bool>* cancel) {
  const McPlan plan = mc_plan(c);
  const fs::path records_path = out_dir / "mc_records.csv";
  const fs::path plan_path = out_dir / "plan.toml";
  const std::string fingerprint = plan_fingerprint(c);

  std::vector<McRecord> completed;
  if (fresh) {
    for (const char* f : {"mc_records.csv", "mc_summary.csv", "event_study.csv", "plan.toml"}) fs::remove(out_dir / f);
  } else if (fs::exists(records_path)) {
    if (!fs::exists(plan_path) || read_file(plan_path) != fingerprint)
      throw InputError(out_dir.string() + " holds records from a different plan; rerun with --fresh or another --out");
    completed = read_records_csv(records_path);
  }
  fs::create_directories(out_dir);
  open_out(plan_path) << fingerprint;

  // rewrite the valid records so a truncated trailing line cannot linger
  write_atomic(records_path, [&](const fs::path& p) { write_records_csv(p, completed); });
  std::ofstream append = open_out(records_path, std::ios::app);
  McRunOptions run;
  run.completed = completed;
  run.cancel = cancel;
  run.on_replication = [&](std::span<const McRecord> recs) {
    for (const auto& r : recs) append << record_csv_line(r) << '\n';
    append.flush();
  };
  const std::vector<McRecord> records = run_mc(plan, run);
  append.close();

  if (cancel && cancel->load()) return false;
  write_atomic(records_path, [&](const fs::path& p) { write_records_csv(p, records); });
  const auto rows = summarize(records);
  write_summary_csv(out_dir / "mc_summary.csv", rows);

  if (c.event_study) {
    EventStudySpec a;
    a.replications = c.event_study_replications;
    a.seed = c.mc.base_seed;
    a.workers = c.mc.workers;
    EventStudySpec b = a;
    b.params = {2.0, 0.5, 0.3, 0.4};
    const auto pa = event_study_panel(a);
    if (cancel && cancel->load()) return false;
    const auto pb = event_study_panel(b);
    write_event_study_csv(out_dir / "event_study.csv", pa, pb);
  }
  return true;
}

void cmd_fk(const RunConfig& c, const fs::path& out_dir) {
  const Dataset data = simulate_dataset(c.fk_case, c.dgp, c.seed);
  EstimatorOptions opts = estimator_options(c);
  opts.seed = derive_seed(SeedSpec{c.seed}, "fk-gmm", 0);
  const EstimateReport fit = full_gmm(data, opts);
  open_out(out_dir / "gmm_report.json") << report_to_json(fit) << '\n';

  const ParamPosterior post = posterior_from_report(fit);
  PathOptions o;
  o.horizon = c.fk.horizon;
  o.dt = c.fk.dt;
  o.paths = c.fk.paths;
  o.antithetic = c.fk.antithetic;
  o.workers = c.fk.workers;
  o.domain = fk_domain();
  o.seed = derive_seed(SeedSpec{c.fk.seed}, "profile", 0);
  const auto profile =
      distance_profile(post, c.fk.draws, fk_border_source(c.fk_source_scale), fk_locate, c.fk.profile_distances, o);
  write_profile_csv(out_dir / "profile.csv", profile);
  write_uncertainty_csv(out_dir / "uncertainty.csv", uncertainty_table(fit, c.fk, c.fk_source_scale));
}

}  // namespace spatnet::cli
