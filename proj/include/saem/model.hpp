#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saem/dataset.hpp"
#include "saem/errors.hpp"
#include "saem/numeric.hpp"
#include "saem/rng.hpp"

namespace saem {

enum class Transform { identity, log, logit };

inline std::string to_string(Transform t) {
  switch (t) {
    case Transform::identity: return "identity";
    case Transform::log: return "log";
    case Transform::logit: return "logit";
  }
  return "?";
}

inline Transform transform_from_string(const std::string& s) {
  if (s == "identity" || s == "normal" || s == "0") return Transform::identity;
  if (s == "log" || s == "lognormal" || s == "1") return Transform::log;
  if (s == "logit" || s == "3") return Transform::logit;
  throw ConfigError("unknown transform '" + s + "'");
}

inline double to_natural(double phi, Transform t) {
  switch (t) {
    case Transform::identity: return phi;
    case Transform::log: return std::exp(phi);
    case Transform::logit: return inv_logit(phi);
  }
  return phi;
}

inline double to_gaussian(double psi, Transform t) {
  switch (t) {
    case Transform::identity: return psi;
    case Transform::log: return std::log(psi);
    case Transform::logit: return std::log(psi) - std::log1p(-psi);
  }
  return psi;
}

inline Eigen::VectorXd transform_to_natural(const Eigen::VectorXd& phi, const std::vector<Transform>& tr) {
  Eigen::VectorXd psi(phi.size());
  for (Eigen::Index j = 0; j < phi.size(); ++j) psi(j) = to_natural(phi(j), tr[static_cast<std::size_t>(j)]);
  return psi;
}

inline Eigen::VectorXd transform_to_gaussian(const Eigen::VectorXd& psi, const std::vector<Transform>& tr) {
  Eigen::VectorXd phi(psi.size());
  for (Eigen::Index j = 0; j < psi.size(); ++j) phi(j) = to_gaussian(psi(j), tr[static_cast<std::size_t>(j)]);
  return phi;
}

enum class ErrorKind { constant, proportional, combined, exponential };

inline std::string to_string(ErrorKind e) {
  switch (e) {
    case ErrorKind::constant: return "constant";
    case ErrorKind::proportional: return "proportional";
    case ErrorKind::combined: return "combined";
    case ErrorKind::exponential: return "exponential";
  }
  return "?";
}

inline ErrorKind error_from_string(const std::string& s) {
  if (s == "constant" || s == "additive") return ErrorKind::constant;
  if (s == "proportional") return ErrorKind::proportional;
  if (s == "combined") return ErrorKind::combined;
  if (s == "exponential") return ErrorKind::exponential;
  throw ConfigError("unknown error model '" + s + "'");
}

/// Residual SD. `sigma` is (a, b); the exponential model uses a on the log
/// scale of the observations.
inline double error_model_sd(double f, ErrorKind kind, const Eigen::Vector2d& sigma) {
  if (sigma(0) < 0.0 || sigma(1) < 0.0) throw ModelError("error model parameters must be non-negative");
  switch (kind) {
    case ErrorKind::constant: return sigma(0);
    case ErrorKind::proportional: return sigma(1) * std::abs(f);
    case ErrorKind::combined: return std::sqrt(sigma(0) * sigma(0) + sigma(1) * sigma(1) * f * f);
    case ErrorKind::exponential: return sigma(0);
  }
  return sigma(0);
}

/// Number of free residual-error parameters for a kind.
inline int error_param_count(ErrorKind kind) { return kind == ErrorKind::combined ? 2 : 1; }

/// Per-row Gaussian log-density of y given prediction f.
inline double gaussian_row_loglik(double y, double f, ErrorKind kind, const Eigen::Vector2d& sigma) {
  double r = y - f;
  if (kind == ErrorKind::exponential) {
    if (!(y > 0.0) || !(f > 0.0)) return kLogFloor;
    r = std::log(y) - std::log(f);
  }
  const double g = error_model_sd(f, kind, sigma);
  if (!(g > 0.0)) return kLogFloor;
  return floor_log(-0.5 * kLog2Pi - std::log(g) - 0.5 * r * r / (g * g));
}

/// Inputs the simulation kernels may need beyond the subject's own rows.
struct SimContext {
  double max_count = std::numeric_limits<double>::infinity();  ///< truncation bound for counts
  double max_followup = std::numeric_limits<double>::infinity();  ///< censoring time for event subjects
};

/// A simulated subject. For tte kernels `time` / `event` hold the simulated
/// follow-up; otherwise `y` holds one response per row.
struct Simulated {
  Eigen::VectorXd y;
  double time = std::numeric_limits<double>::quiet_NaN();
  bool event = false;
};

using StructuralFn = std::function<void(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Eigen::VectorXd& f)>;
using LoglikFn = std::function<void(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Eigen::VectorXd& ll)>;
using SimulateFn =
    std::function<Simulated(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Stream& rng, const SimContext& ctx)>;

/// One fixed effect: the intercept of parameter `param` (covariate = -1) or
/// the coefficient of covariate `covariate` on it.
struct FixedEffect {
  int param;
  int covariate;
};

/// Statistical model. Parameters live on the natural scale psi; phi is the
/// transformed (Gaussian) scale on which covariates and random effects act.
struct ModelSpec {
  std::string name;
  OutcomeKind outcome = OutcomeKind::gaussian;
  std::vector<std::string> param_names;
  Eigen::VectorXd psi0;
  std::vector<Transform> transforms;

  std::vector<std::string> covariates;  ///< columns of covariate_model
  Eigen::MatrixXi covariate_model;      ///< covariates x params, 0/1
  Eigen::MatrixXd beta0;                ///< covariates x params, initial coefficients (optional)

  Eigen::MatrixXi omega_pattern;  ///< params x params, 0/1
  Eigen::MatrixXd omega_init;     ///< params x params; empty means identity on the pattern

  ErrorKind error = ErrorKind::constant;
  Eigen::Vector2d sigma0{1.0, 0.0};

  StructuralFn structural;  ///< gaussian outcomes
  LoglikFn loglik;          ///< other outcomes: per-row log-likelihood
  SimulateFn simulate;      ///< optional

  int n_predictors = 0;  ///< predictor columns the kernel expects; 0 = any
  std::string hazard_family;  ///< tte builtins only

  Eigen::Index n_params() const { return static_cast<Eigen::Index>(param_names.size()); }
  bool has_iiv(Eigen::Index j) const { return omega_pattern(j, j) != 0; }
  bool is_gaussian() const { return outcome == OutcomeKind::gaussian; }

  std::vector<int> iiv_params() const {
    std::vector<int> out;
    for (Eigen::Index j = 0; j < n_params(); ++j)
      if (has_iiv(j)) out.push_back(static_cast<int>(j));
    return out;
  }

  /// Canonical layout: for each parameter its intercept, then its covariate
  /// coefficients in covariate order.
  std::vector<FixedEffect> fixed_layout() const {
    std::vector<FixedEffect> out;
    for (Eigen::Index j = 0; j < n_params(); ++j) {
      out.push_back({static_cast<int>(j), -1});
      for (Eigen::Index c = 0; c < covariate_model.rows(); ++c)
        if (covariate_model(c, j)) out.push_back({static_cast<int>(j), static_cast<int>(c)});
    }
    return out;
  }

  std::string fixed_name(const FixedEffect& fe) const {
    const auto& p = param_names[static_cast<std::size_t>(fe.param)];
    if (fe.covariate < 0) return p;
    return "beta_" + covariates[static_cast<std::size_t>(fe.covariate)] + "(" + p + ")";
  }

  /// Initial fixed effects on the Gaussian scale in canonical layout.
  Eigen::VectorXd initial_fixed() const {
    const auto layout = fixed_layout();
    Eigen::VectorXd out(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t k = 0; k < layout.size(); ++k) {
      const auto& fe = layout[k];
      if (fe.covariate < 0)
        out(static_cast<Eigen::Index>(k)) = to_gaussian(psi0(fe.param), transforms[static_cast<std::size_t>(fe.param)]);
      else
        out(static_cast<Eigen::Index>(k)) = beta0.size() ? beta0(fe.covariate, fe.param) : 0.0;
    }
    return out;
  }

  Eigen::MatrixXd initial_omega() const {
    const Eigen::Index p = n_params();
    Eigen::MatrixXd om = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index a = 0; a < p; ++a)
      for (Eigen::Index b = 0; b < p; ++b)
        if (omega_pattern(a, b)) om(a, b) = omega_init.size() ? omega_init(a, b) : (a == b ? 1.0 : 0.0);
    return om;
  }

  /// Checks the structural invariants; throws ModelError.
  void validate() const {
    const Eigen::Index p = n_params();
    if (p == 0) throw ModelError(name + ": model has no parameters");
    if (psi0.size() != p || static_cast<Eigen::Index>(transforms.size()) != p)
      throw ModelError(name + ": psi0 and transforms must have one entry per parameter");
    if (omega_pattern.rows() != p || omega_pattern.cols() != p)
      throw ModelError(name + ": covariance pattern must be " + std::to_string(p) + "x" + std::to_string(p));
    if (omega_init.size() && (omega_init.rows() != p || omega_init.cols() != p))
      throw ModelError(name + ": omega_init has the wrong size");
    bool any = false;
    for (Eigen::Index a = 0; a < p; ++a) {
      any = any || omega_pattern(a, a) != 0;
      for (Eigen::Index b = 0; b < p; ++b) {
        if (omega_pattern(a, b) != omega_pattern(b, a)) throw ModelError(name + ": covariance pattern is not symmetric");
        if (a != b && omega_pattern(a, b) && (!omega_pattern(a, a) || !omega_pattern(b, b)))
          throw ModelError(name + ": covariance between " + param_names[static_cast<std::size_t>(a)] + " and " +
                           param_names[static_cast<std::size_t>(b)] + " needs both variances");
      }
    }
    if (!any) throw ModelError(name + ": at least one parameter needs a random effect");
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto t = transforms[static_cast<std::size_t>(j)];
      const auto& nm = param_names[static_cast<std::size_t>(j)];
      if (t == Transform::log && !(psi0(j) > 0.0)) throw ModelError(name + ": " + nm + " has a log transform but psi0 <= 0");
      if (t == Transform::logit && !(psi0(j) > 0.0 && psi0(j) < 1.0))
        throw ModelError(name + ": " + nm + " has a logit transform but psi0 is outside (0,1)");
    }
    if (covariate_model.size() &&
        (covariate_model.cols() != p || covariate_model.rows() != static_cast<Eigen::Index>(covariates.size())))
      throw SchemaError(name + ": covariate model must be covariates x parameters");
    if (is_gaussian() && !structural) throw ModelError(name + ": gaussian models need a structural function");
    if (!is_gaussian() && !loglik) throw ModelError(name + ": non-gaussian models need a likelihood kernel");
    for (Eigen::Index j = 0; j < p; ++j)
      if (omega_init.size() && omega_pattern(j, j) && !(omega_init(j, j) > 0.0))
        throw ModelError(name + ": omega_init must be positive on estimated variances");
  }

  /// Checks compatibility with a dataset (outcome kind, predictors, covariates).
  void validate_against(const Dataset& ds) const {
    validate();
    if (ds.outcome() != outcome)
      throw ModelError(name + " expects " + to_string(outcome) + " data, got " + to_string(ds.outcome()));
    if (n_predictors > 0 && static_cast<int>(ds.n_predictors()) != n_predictors)
      throw ModelError(name + " expects " + std::to_string(n_predictors) + " predictor columns, got " +
                       std::to_string(ds.n_predictors()));
    for (const auto& c : covariates)
      if (ds.covariate_index(c) < 0) throw SchemaError(name + ": covariate '" + c + "' is not in the dataset");
  }

  /// Covariates that enter the model (have at least one relation).
  std::vector<std::string> used_covariates() const {
    std::vector<std::string> out;
    for (Eigen::Index c = 0; c < covariate_model.rows(); ++c)
      if (covariate_model.row(c).any()) out.push_back(covariates[static_cast<std::size_t>(c)]);
    return out;
  }
};

/// Subject design: phi_pop = X * fixed (params x n_fixed).
inline Eigen::MatrixXd subject_design(const ModelSpec& m, const Dataset& ds, const Subject& s) {
  const auto layout = m.fixed_layout();
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(m.n_params(), static_cast<Eigen::Index>(layout.size()));
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const auto& fe = layout[k];
    double v = 1.0;
    if (fe.covariate >= 0) {
      const int c = ds.covariate_index(m.covariates[static_cast<std::size_t>(fe.covariate)]);
      v = s.covariates[static_cast<std::size_t>(c)];
    }
    X(fe.param, static_cast<Eigen::Index>(k)) = v;
  }
  return X;
}

/// phi_pop = mu + sum over covariates of beta * c, per parameter.
inline Eigen::VectorXd linear_predictor_phi(const Eigen::VectorXd& mu, const Eigen::MatrixXd& beta,
                                            const Eigen::VectorXd& c, const Eigen::MatrixXi& design) {
  if (beta.rows() != c.size() || beta.cols() != mu.size() || design.rows() != beta.rows() ||
      design.cols() != beta.cols())
    throw DesignError("linear predictor: dimension mismatch");
  Eigen::VectorXd phi = mu;
  for (Eigen::Index cv = 0; cv < beta.rows(); ++cv)
    for (Eigen::Index j = 0; j < beta.cols(); ++j)
      if (design(cv, j)) phi(j) += beta(cv, j) * c(cv);
  return phi;
}

/// Per-row log-likelihood of a subject for any outcome kind.
inline void row_loglik(const ModelSpec& m, const Eigen::VectorXd& psi, const Subject& s, const Eigen::Vector2d& sigma,
                       Eigen::VectorXd& out) {
  if (m.is_gaussian()) {
    Eigen::VectorXd f;
    m.structural(psi, s.x, f);
    out.resize(s.n_rows());
    for (Eigen::Index r = 0; r < s.n_rows(); ++r) out(r) = gaussian_row_loglik(s.y(r), f(r), m.error, sigma);
    return;
  }
  m.loglik(psi, s.x, out);
  for (Eigen::Index r = 0; r < out.size(); ++r) out(r) = floor_log(out(r));
}

inline double subject_loglik(const ModelSpec& m, const Eigen::VectorXd& psi, const Subject& s,
                             const Eigen::Vector2d& sigma) {
  thread_local Eigen::VectorXd ll;
  row_loglik(m, psi, s, sigma, ll);
  return ll.sum();
}

}  // namespace saem
