#include <cmath>

#include "json.hpp"
#include "spatnet/estimators.hpp"

namespace spatnet {

using json = nlohmann::json;

void EstimateReport::finalize() {
  direct_se = std::sqrt(std::max(0.0, cov(0, 0)));
  total_border_se = std::sqrt(std::max(0.0, cov(1, 1)));
  direct_ci = {direct - 1.96 * direct_se, direct + 1.96 * direct_se};
  total_border_ci = {total_border - 1.96 * total_border_se, total_border + 1.96 * total_border_se};
}

namespace {

// NaN and infinities are not JSON numbers; they travel as null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double from_num(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

json to_json(const EstimateReport& r) {
  json j;
  j["estimator"] = r.estimator;
  j["ok"] = r.ok;
  if (!r.error.empty()) j["error"] = r.error;
  j["direct"] = {{"estimate", num(r.direct)}, {"se", num(r.direct_se)}, {"ci95", {num(r.direct_ci[0]), num(r.direct_ci[1])}}};
  j["total_border"] = {{"estimate", num(r.total_border)},
                       {"se", num(r.total_border_se)},
                       {"ci95", {num(r.total_border_ci[0]), num(r.total_border_ci[1])}}};
  j["cov"] = {{num(r.cov(0, 0)), num(r.cov(0, 1))}, {num(r.cov(1, 0)), num(r.cov(1, 1))}};
  if (r.theta) {
    j["theta"] = {{"nu_s", r.theta->nu_s}, {"nu_n", r.theta->nu_n}, {"kappa", r.theta->kappa}, {"lambda", r.theta->lambda}};
  }
  if (r.theta_cov) {
    json rows = json::array();
    for (int a = 0; a < 4; ++a) {
      json row = json::array();
      for (int b = 0; b < 4; ++b) row.push_back(num((*r.theta_cov)(a, b)));
      rows.push_back(row);
    }
    j["theta_cov"] = rows;
  }
  if (r.j_stat) j["hansen_j"] = {{"stat", num(*r.j_stat)}, {"dof", r.j_dof}, {"pvalue", num(r.j_pvalue)}};
  json diag = json::object();
  for (const auto& [k, v] : r.diagnostics) diag[k] = num(v);
  j["diagnostics"] = diag;
  j["notes"] = r.notes;
  return j;
}

}  // namespace

std::string report_to_json(const EstimateReport& r, int indent) { return to_json(r).dump(indent); }

std::string reports_to_json(const std::vector<EstimateReport>& rs, int indent) {
  json a = json::array();
  for (const auto& r : rs) a.push_back(to_json(r));
  return a.dump(indent);
}

EstimateReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    EstimateReport r;
    r.estimator = j.at("estimator").get<std::string>();
    r.ok = j.at("ok").get<bool>();
    r.error = j.value("error", "");
    r.direct = from_num(j.at("direct").at("estimate"));
    r.total_border = from_num(j.at("total_border").at("estimate"));
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) r.cov(a, b) = from_num(j.at("cov")[a][b]);
    if (j.contains("theta")) {
      const auto& t = j["theta"];
      r.theta = StructuralParams{t.at("nu_s"), t.at("nu_n"), t.at("kappa"), t.at("lambda")};
    }
    if (j.contains("theta_cov")) {
      Eigen::Matrix4d m;
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) m(a, b) = from_num(j["theta_cov"][a][b]);
      r.theta_cov = m;
    }
    if (j.contains("hansen_j")) {
      r.j_stat = from_num(j["hansen_j"].at("stat"));
      r.j_dof = j["hansen_j"].at("dof");
      r.j_pvalue = from_num(j["hansen_j"].at("pvalue"));
    }
    for (const auto& [k, v] : j.at("diagnostics").items()) r.diagnostics[k] = from_num(v);
    r.notes = j.at("notes").get<std::map<std::string, std::string>>();
    r.finalize();
    r.direct_se = from_num(j["direct"].at("se"));
    r.total_border_se = from_num(j["total_border"].at("se"));
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("bad report JSON: ") + e.what());
  }
}

}  // namespace spatnet
