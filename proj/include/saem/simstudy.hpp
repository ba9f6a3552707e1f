#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saem/builtins.hpp"
#include "saem/engine.hpp"
#include "saem/parallel.hpp"

namespace saem {

/// Simulation study on the binary longitudinal template: logit P(y=1) =
/// theta1 + theta2_i * t with a treatment effect on the slope.
struct SimStudyScenario {
  std::string name;
  std::vector<double> times{0, 1, 2, 3, 5.5, 8, 11};
  int n_per_arm = 137;
  ModelSpec model;  ///< true model: parameters, covariate relation, IIV pattern
  Theta truth;
  int replicates = 200;
  SaemOptions options;
  std::string init = "true";  ///< true | pop | far
  std::uint64_t seed = 20240101;

  void validate() const {
    if (replicates < 1) throw ConfigError("at least one replicate is required");
    if (n_per_arm < 1) throw ConfigError("at least one subject per arm is required");
    for (std::size_t k = 1; k < times.size(); ++k)
      if (!(times[k] > times[k - 1])) throw ConfigError("design times must be strictly increasing");
    if (init != "true" && init != "pop" && init != "far") throw ConfigError("init must be true, pop or far");
  }
};

/// Scenario 1: random intercept only. Scenario 2: random intercept and slope.
inline SimStudyScenario simstudy_scenario(int which) {
  if (which != 1 && which != 2) throw ConfigError("scenario must be 1 or 2");
  SimStudyScenario sc;
  sc.name = "scenario" + std::to_string(which);
  ModelSpec m = builtin_model("binary-logistic");
  m.covariates = {"trt"};
  m.covariate_model = Eigen::MatrixXi::Zero(1, 2);
  m.covariate_model(0, 1) = 1;
  m.omega_pattern = pattern_diag({1, which == 2 ? 1 : 0});
  sc.model = m;
  std::vector<double> values{-1.71, -0.39, -0.15, which == 2 ? 1.0 : 4.02};
  if (which == 2) values.push_back(0.2);
  sc.truth = theta_from_report(m, values);
  sc.options.chains = 10;
  return sc;
}

/// Model with the starting values of the chosen initial-value setting.
inline ModelSpec simstudy_start_model(const SimStudyScenario& sc) {
  ModelSpec m = sc.model;
  const bool two = m.has_iiv(1);
  m.beta0 = Eigen::MatrixXd::Zero(1, 2);
  m.omega_init = Eigen::MatrixXd::Zero(2, 2);
  if (sc.init == "true") {
    m.psi0 = Eigen::Vector2d(sc.truth.fixed(0), sc.truth.fixed(1));
    m.beta0(0, 1) = sc.truth.fixed(2);
    m.omega_init = sc.truth.omega;
    if (!two) m.omega_init(1, 1) = 0.3;
  } else if (sc.init == "pop") {
    m.psi0 = Eigen::Vector2d(-0.5, -0.19);
    m.omega_init(0, 0) = 1.0;
    m.omega_init(1, 1) = 1.0;
  } else {
    m.psi0 = Eigen::Vector2d(0.0, 0.0);
    m.omega_init(0, 0) = 4.0;
    m.omega_init(1, 1) = 0.49;
  }
  return m;
}

/// One simulated trial; the same replicate index gives the same data for
/// every initial-value setting.
inline Dataset simstudy_dataset(const SimStudyScenario& sc, std::size_t rep) {
  Stream rng(make_stream(sc.seed, "simstudy-data", rep));
  Schema schema;
  schema.group = "id";
  schema.time = "time";
  schema.predictors = {"time", "y"};
  schema.response = "y";
  schema.covariates = {"trt"};
  const auto T = static_cast<Eigen::Index>(sc.times.size());
  const Eigen::LLT<Eigen::MatrixXd> llt(sc.truth.omega + 1e-14 * Eigen::MatrixXd::Identity(2, 2));
  const Eigen::MatrixXd L = llt.matrixL();
  std::vector<Subject> subjects;
  for (int arm = 0; arm < 2; ++arm)
    for (int k = 0; k < sc.n_per_arm; ++k) {
      Subject s;
      s.id = std::to_string(subjects.size() + 1);
      s.covariates = {static_cast<double>(arm)};
      const Eigen::Vector2d z(rng.gauss(), rng.gauss());
      const Eigen::Vector2d eta = L * z;
      const double th1 = sc.truth.fixed(0) + (sc.model.has_iiv(0) ? eta(0) : 0.0);
      const double th2 = sc.truth.fixed(1) + sc.truth.fixed(2) * arm + (sc.model.has_iiv(1) ? eta(1) : 0.0);
      s.x.resize(T, 2);
      s.y.resize(T);
      for (Eigen::Index r = 0; r < T; ++r) {
        const double t = sc.times[static_cast<std::size_t>(r)];
        s.x(r, 0) = t;
        s.y(r) = rng.unif() < inv_logit(th1 + th2 * t) ? 1.0 : 0.0;
        s.x(r, 1) = s.y(r);
      }
      subjects.push_back(std::move(s));
    }
  return Dataset::from_subjects(schema, OutcomeKind::binary, std::move(subjects));
}

struct SimStudyMetric {
  std::string name;
  double truth = 0.0;
  double rb = 0.0;      ///< mean relative error, %
  double rrmse = 0.0;   ///< root mean squared relative error, %
  double rb_lo = 0.0;   ///< 95% interval for the relative bias
  double rb_hi = 0.0;
  double sd = 0.0;      ///< empirical SD of the estimates
};

struct SimStudyResult {
  std::string scenario;
  std::string init;
  std::vector<std::string> names;
  std::vector<double> truth;
  std::vector<std::vector<double>> estimates;  ///< successful replicates only
  std::vector<std::size_t> replicate_index;
  int failures = 0;
  std::vector<std::string> warnings;
  std::vector<SimStudyMetric> metrics;
};

/// Relative bias and RRMSE per parameter from estimates and true values.
inline std::vector<SimStudyMetric> simstudy_metrics(const std::vector<std::string>& names, const std::vector<double>& truth,
                                                    const std::vector<std::vector<double>>& est) {
  std::vector<SimStudyMetric> out;
  const double S = static_cast<double>(est.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    SimStudyMetric m;
    m.name = names[k];
    m.truth = truth[k];
    std::vector<double> ree, raw;
    for (const auto& e : est) {
      ree.push_back((e[k] - truth[k]) / truth[k]);
      raw.push_back(e[k]);
    }
    double sum = 0.0, sq = 0.0;
    for (double r : ree) {
      sum += r;
      sq += r * r;
    }
    m.rb = S > 0 ? 100.0 * sum / S : std::numeric_limits<double>::quiet_NaN();
    m.rrmse = S > 0 ? 100.0 * std::sqrt(sq / S) : std::numeric_limits<double>::quiet_NaN();
    const double half = ree.size() >= 2 ? 1.96 * 100.0 * sd_of(ree) / std::sqrt(S) : 0.0;
    m.rb_lo = m.rb - half;
    m.rb_hi = m.rb + half;
    m.sd = raw.size() >= 2 ? sd_of(raw) : 0.0;
    out.push_back(m);
  }
  return out;
}

inline SimStudyResult run_simstudy(const SimStudyScenario& sc, int threads = 1) {
  sc.validate();
  SimStudyResult res;
  res.scenario = sc.name;
  res.init = sc.init;
  for (const auto& r : report_values(sc.model, sc.truth)) {
    res.names.push_back(r.name);
    res.truth.push_back(r.value);
  }
  const ModelSpec start = simstudy_start_model(sc);
  const auto S = static_cast<std::size_t>(sc.replicates);
  std::vector<std::optional<std::vector<double>>> est(S);
  std::vector<std::string> err(S);
  parallel_for(S, threads, [&](std::size_t s) {
    try {
      SaemOptions o = sc.options;
      o.seed = derive_seed(sc.seed, "simstudy-fit", s);
      o.threads = 1;
      const Fit f = run_saem(start, simstudy_dataset(sc, s), o);
      std::vector<double> v;
      for (const auto& r : f.report()) v.push_back(r.value);
      est[s] = v;
    } catch (const std::exception& e) {
      err[s] = e.what();
    }
  });
  for (std::size_t s = 0; s < S; ++s) {
    if (est[s]) {
      res.estimates.push_back(*est[s]);
      res.replicate_index.push_back(s);
    } else {
      ++res.failures;
      res.warnings.push_back("replicate " + std::to_string(s + 1) + " failed: " + err[s]);
    }
  }
  res.metrics = simstudy_metrics(res.names, res.truth, res.estimates);
  return res;
}

inline void write_simstudy_metrics_csv(std::ostream& os, const std::vector<SimStudyResult>& results) {
  os << "scenario,init,parameter,truth,rb_pct,rrmse_pct,rb_ci_low,rb_ci_high,n_ok,n_failed\n";
  os.precision(8);
  for (const auto& r : results)
    for (const auto& m : r.metrics)
      os << r.scenario << ',' << r.init << ',' << m.name << ',' << m.truth << ',' << m.rb << ',' << m.rrmse << ','
         << m.rb_lo << ',' << m.rb_hi << ',' << r.estimates.size() << ',' << r.failures << '\n';
}

/// Long format relative estimation errors, one row per replicate and parameter.
inline void write_simstudy_estimates_csv(std::ostream& os, const std::vector<SimStudyResult>& results) {
  os << "scenario,init,replicate,parameter,estimate,ree_pct\n";
  os.precision(10);
  for (const auto& r : results)
    for (std::size_t s = 0; s < r.estimates.size(); ++s)
      for (std::size_t k = 0; k < r.names.size(); ++k)
        os << r.scenario << ',' << r.init << ',' << r.replicate_index[s] + 1 << ',' << r.names[k] << ','
           << r.estimates[s][k] << ',' << 100.0 * (r.estimates[s][k] - r.truth[k]) / r.truth[k] << '\n';
}

}  // namespace saem
