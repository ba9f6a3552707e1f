#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "saem/builtins.hpp"
#include "saem/config.hpp"
#include "saem/engine.hpp"
#include "saem/selection.hpp"

namespace saem {

using ojson = nlohmann::ordered_json;

inline constexpr int kReportFormatVersion = 1;

namespace detail {

template <typename M>
ojson matrix_json(const M& m) {
  ojson rows = ojson::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ojson row = ojson::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> json_matrix(const ojson& j, Eigen::Index cols_if_empty = 0) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<Scalar>();
  return m;
}

inline ojson vector_json(const Eigen::VectorXd& v) {
  ojson a = ojson::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

inline Eigen::VectorXd json_vector(const ojson& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
  return v;
}

}  // namespace detail

inline ojson model_json(const ModelSpec& m) {
  ojson j;
  j["name"] = m.name;
  j["psi0"] = detail::vector_json(m.psi0);
  ojson tr = ojson::array();
  for (auto t : m.transforms) tr.push_back(to_string(t));
  j["transforms"] = tr;
  j["covariates"] = m.covariates;
  j["covariate_model"] = detail::matrix_json(m.covariate_model);
  j["covariance"] = detail::matrix_json(m.omega_pattern);
  j["omega_init"] = m.omega_init.size() ? detail::matrix_json(m.omega_init) : ojson(nullptr);
  if (m.is_gaussian()) {
    j["error"] = to_string(m.error);
    j["sigma0"] = {m.sigma0(0), m.sigma0(1)};
  }
  return j;
}

/// Rebuilds a registry model with the stored settings.
inline ModelSpec model_from_json(const ojson& j) {
  ModelSpec m = builtin_model(j.at("name").get<std::string>());
  m.psi0 = detail::json_vector(j.at("psi0"));
  m.transforms.clear();
  for (const auto& t : j.at("transforms")) m.transforms.push_back(transform_from_string(t.get<std::string>()));
  m.covariates = j.at("covariates").get<std::vector<std::string>>();
  m.covariate_model = detail::json_matrix<int>(j.at("covariate_model"), m.n_params());
  m.omega_pattern = detail::json_matrix<int>(j.at("covariance"));
  if (!j.at("omega_init").is_null()) m.omega_init = detail::json_matrix<double>(j.at("omega_init"));
  if (j.contains("error")) {
    m.error = error_from_string(j.at("error").get<std::string>());
    m.sigma0 = Eigen::Vector2d(j.at("sigma0")[0].get<double>(), j.at("sigma0")[1].get<double>());
  }
  m.validate();
  return m;
}

inline ojson schema_json(const Schema& s) {
  ojson j;
  j["group"] = s.group;
  j["time"] = s.time;
  j["predictors"] = s.predictors;
  j["response"] = s.response;
  j["covariates"] = s.covariates;
  j["censoring"] = s.censoring;
  return j;
}

inline Schema schema_from_json(const ojson& j) {
  Schema s;
  s.group = j.at("group").get<std::string>();
  s.time = j.at("time").get<std::string>();
  s.predictors = j.at("predictors").get<std::vector<std::string>>();
  s.response = j.at("response").get<std::string>();
  s.covariates = j.at("covariates").get<std::vector<std::string>>();
  s.censoring = j.at("censoring").get<std::string>();
  return s;
}

inline ojson options_json(const SaemOptions& o) {
  ojson j;
  j["k1"] = o.k1;
  j["k2"] = o.k2;
  j["chains"] = o.chains;
  j["burn_in"] = o.burn_in;
  j["kernel_iters"] = {o.kernel_iters[0], o.kernel_iters[1], o.kernel_iters[2]};
  j["tau"] = o.tau;
  j["anneal_iters"] = o.anneal_iters;
  j["seed"] = o.seed;
  j["target_accept"] = o.target_accept;
  j["newton_steps"] = o.newton_steps;
  return j;
}

inline SaemOptions options_from_json(const ojson& j) {
  SaemOptions o;
  o.k1 = j.at("k1").get<int>();
  o.k2 = j.at("k2").get<int>();
  o.chains = j.at("chains").get<int>();
  o.burn_in = j.at("burn_in").get<int>();
  for (int k = 0; k < 3; ++k) o.kernel_iters[static_cast<std::size_t>(k)] = j.at("kernel_iters")[static_cast<std::size_t>(k)].get<int>();
  o.tau = j.at("tau").get<double>();
  o.anneal_iters = j.at("anneal_iters").get<int>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.target_accept = j.at("target_accept").get<double>();
  o.newton_steps = j.at("newton_steps").get<int>();
  return o;
}

/// Where the data of a fit came from, so the fit can be rebuilt later.
struct DataSource {
  std::string path;
  Schema schema;
  OutcomeKind outcome = OutcomeKind::gaussian;
  std::vector<std::string> impute_median;
  std::string derive;  ///< "", "hurdle-binary" or "hurdle-positive"
};

/// The two datasets of a hurdle model: any-count indicator on all rows, and
/// the rows with a positive count.
inline Dataset hurdle_binary(const Dataset& counts) {
  std::vector<Eigen::VectorXd> ind;
  for (const auto& s : counts.subjects()) ind.push_back((s.y.array() > 0.0).cast<double>().matrix());
  return counts.with_responses(ind).with_outcome(OutcomeKind::binary);
}

inline Dataset hurdle_positive(const Dataset& counts) {
  return counts.filter_rows([](const Subject& s, Eigen::Index r) { return s.y(r) > 0.0; });
}

inline Dataset load_source(const DataSource& src) {
  LoadOptions lo;
  lo.impute_median = src.impute_median;
  if (src.derive.empty()) return load_dataset(src.path, src.schema, src.outcome, lo);
  const Dataset counts = load_dataset(src.path, src.schema, OutcomeKind::count, lo);
  if (src.derive == "hurdle-binary") return hurdle_binary(counts);
  if (src.derive == "hurdle-positive") return hurdle_positive(counts);
  throw ConfigError("unknown data derivation '" + src.derive + "'");
}

/// Structured fit report; no timestamps, so identical inputs give identical bytes.
inline ojson fit_report(const Fit& fit, const DataSource& src, const Evaluation* ev = nullptr) {
  ojson j;
  j["format_version"] = kReportFormatVersion;
  j["model"] = model_json(fit.model);
  ojson data;
  data["path"] = std::filesystem::absolute(src.path).lexically_normal().string();
  data["outcome"] = to_string(src.outcome);
  data["schema"] = schema_json(src.schema);
  data["impute_median"] = src.impute_median;
  data["derive"] = src.derive;
  data["n_subjects"] = fit.data.n_subjects();
  data["n_observations"] = fit.data.n_observations();
  j["data"] = data;
  j["options"] = options_json(fit.options);
  ojson est;
  est["fixed"] = detail::vector_json(fit.theta.fixed);
  est["omega"] = detail::matrix_json(fit.theta.omega);
  est["sigma"] = {fit.theta.sigma(0), fit.theta.sigma(1)};
  j["estimates"] = est;
  ojson rep = ojson::object();
  for (const auto& r : fit.report()) rep[r.name] = r.value;
  j["report"] = rep;
  j["iterations"] = fit.iterations;
  j["acceptance"] = {fit.acceptance[0], fit.acceptance[1], fit.acceptance[2]};
  if (ev) {
    ojson ll;
    ll["method"] = ev->ll.method;
    ll["value"] = ev->ll.total;
    ll["mc_se"] = ev->ll.mc_se;
    ll["settings"] = ev->ll.settings;
    j["likelihood"] = ll;
    ojson cr;
    cr["p_subject"] = ev->criteria.p_subject;
    cr["p_observation"] = ev->criteria.p_observation;
    cr["aic"] = ev->criteria.aic;
    cr["bic"] = ev->criteria.bic;
    cr["bicc"] = ev->criteria.bicc;
    j["criteria"] = cr;
    ojson sh = ojson::object();
    for (Eigen::Index p = 0; p < fit.model.n_params(); ++p)
      if (fit.model.has_iiv(p)) sh[fit.model.param_names[static_cast<std::size_t>(p)]] = ev->conditional.shrinkage(p);
    j["shrinkage"] = sh;
  }
  std::vector<std::string> warnings = fit.warnings;
  if (ev) {
    for (const auto& w : ev->conditional.warnings) warnings.push_back(w);
    for (const auto& w : ev->ll.warnings) warnings.push_back(w);
  }
  j["warnings"] = warnings;
  return j;
}

inline void write_fit_report(const std::string& path, const ojson& j) {
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

/// Fit rebuilt from a report: data reloaded, estimates restored. Traces and
/// chain states are not stored in the report.
struct LoadedFit {
  Fit fit;
  DataSource source;
  ojson report;
};

inline LoadedFit load_fit_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open fit report '" + path + "'");
  LoadedFit lf;
  try {
    lf.report = ojson::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("fit report '" + path + "' is not valid: " + e.what());
  }
  const auto& j = lf.report;
  if (j.value("format_version", 0) != kReportFormatVersion) throw ConfigError("unsupported fit report version");
  try {
    lf.source.path = j.at("data").at("path").get<std::string>();
    lf.source.outcome = outcome_from_string(j.at("data").at("outcome").get<std::string>());
    lf.source.schema = schema_from_json(j.at("data").at("schema"));
    lf.source.impute_median = j.at("data").at("impute_median").get<std::vector<std::string>>();
    lf.source.derive = j.at("data").value("derive", std::string());
    lf.fit.model = model_from_json(j.at("model"));
    lf.fit.options = options_from_json(j.at("options"));
    lf.fit.theta.fixed = detail::json_vector(j.at("estimates").at("fixed"));
    lf.fit.theta.omega = detail::json_matrix<double>(j.at("estimates").at("omega"));
    lf.fit.theta.sigma = Eigen::Vector2d(j.at("estimates").at("sigma")[0].get<double>(), j.at("estimates").at("sigma")[1].get<double>());
    lf.fit.iterations = j.at("iterations").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("fit report '" + path + "' is incomplete: " + e.what());
  }
  const Dataset full = load_source(lf.source);
  lf.fit.model.validate_against(full);
  lf.fit.data = full.drop_missing_covariates(lf.fit.model.used_covariates());
  lf.fit.initial.fixed = lf.fit.model.initial_fixed();
  lf.fit.initial.omega = lf.fit.model.initial_omega();
  lf.fit.initial.sigma = lf.fit.model.sigma0;
  return lf;
}

}  // namespace saem
