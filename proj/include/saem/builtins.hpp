#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "saem/hazard.hpp"
#include "saem/model.hpp"

namespace saem {

namespace kernels {

inline void check_count(double y) {
  if (y < 0.0 || y != std::floor(y)) {
    std::ostringstream os;
    os << "count response must be a non-negative integer, got " << y;
    throw ModelError(os.str());
  }
}

inline double poisson_logpmf(double n, double lambda) {
  return n * std::log(lambda) - lambda - std::lgamma(n + 1.0);
}

/// Poisson draw truncated to the context bound.
inline double draw_count(double lambda, Stream& rng, const SimContext& ctx) {
  std::poisson_distribution<long long> d(lambda);
  const double v = static_cast<double>(d(rng.engine));
  return std::min(v, ctx.max_count);
}

/// Zero-truncated Poisson draw by rejection (inversion for small lambda).
inline double draw_truncated_count(double lambda, Stream& rng, const SimContext& ctx) {
  if (lambda < 1e-3) return 1.0;
  std::poisson_distribution<long long> d(lambda);
  long long v = 0;
  while (v == 0) v = d(rng.engine);
  return std::min(static_cast<double>(v), ctx.max_count);
}

// time, y
inline void binary_logistic(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Eigen::VectorXd& ll) {
  ll.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double eta = psi(0) + psi(1) * x(r, 0);
    ll(r) = x(r, 1) == 1.0 ? log_inv_logit(eta) : log_inv_logit(-eta);
  }
}

inline Simulated binary_logistic_sim(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Stream& rng,
                                     const SimContext&) {
  Simulated s;
  s.y.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) s.y(r) = rng.unif() < inv_logit(psi(0) + psi(1) * x(r, 0)) ? 1.0 : 0.0;
  return s;
}

/// Cumulative probabilities P(Y <= k), k = 1..4, for the 5-category
/// proportional-odds model.
inline std::array<double, 4> ordinal_cumulative(const Eigen::VectorXd& psi, double t) {
  std::array<double, 4> c{};
  double a = psi(0);
  for (int k = 0; k < 4; ++k) {
    if (k > 0) a += psi(k);
    c[static_cast<std::size_t>(k)] = inv_logit(a + psi(4) * t);
  }
  return c;
}

inline double ordinal_prob(const std::array<double, 4>& c, int y) {
  if (y == 1) return c[0];
  if (y == 5) return 1.0 - c[3];
  return c[static_cast<std::size_t>(y - 1)] - c[static_cast<std::size_t>(y - 2)];
}

// time, y
inline void ordinal_po5(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Eigen::VectorXd& ll) {
  ll.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double yv = x(r, 1);
    const int y = static_cast<int>(yv);
    if (yv != y || y < 1 || y > 5) throw ModelError("ordinal response must be in 1..5");
    ll(r) = floor_log(std::log(ordinal_prob(ordinal_cumulative(psi, x(r, 0)), y)));
  }
}

inline Simulated ordinal_po5_sim(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Stream& rng,
                                 const SimContext&) {
  Simulated s;
  s.y.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto c = ordinal_cumulative(psi, x(r, 0));
    const double u = rng.unif();
    int y = 5;
    for (int k = 0; k < 4; ++k)
      if (u < c[static_cast<std::size_t>(k)]) {
        y = k + 1;
        break;
      }
    s.y(r) = y;
  }
  return s;
}

// time, y
inline void poisson_lin(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Eigen::VectorXd& ll) {
  ll.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    check_count(x(r, 1));
    const double loglam = psi(0) + psi(1) * x(r, 0);
    ll(r) = x(r, 1) * loglam - std::exp(loglam) - std::lgamma(x(r, 1) + 1.0);
  }
}

inline Simulated poisson_lin_sim(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Stream& rng,
                                 const SimContext& ctx) {
  Simulated s;
  s.y.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) s.y(r) = draw_count(std::exp(psi(0) + psi(1) * x(r, 0)), rng, ctx);
  return s;
}

// time, y
inline void truncpoisson_lin(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Eigen::VectorXd& ll) {
  ll.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double n = x(r, 1);
    check_count(n);
    if (n < 1.0) throw ModelError("zero-truncated Poisson needs positive counts");
    const double loglam = psi(0) + psi(1) * x(r, 0);
    const double lam = std::exp(loglam);
    ll(r) = n * loglam - lam - std::log(-std::expm1(-lam)) - std::lgamma(n + 1.0);
  }
}

inline Simulated truncpoisson_lin_sim(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Stream& rng,
                                      const SimContext& ctx) {
  Simulated s;
  s.y.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    s.y(r) = draw_truncated_count(std::exp(psi(0) + psi(1) * x(r, 0)), rng, ctx);
  return s;
}

// time, y; psi = (alpha0, alpha1, p0)
inline void zip_lin(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Eigen::VectorXd& ll) {
  ll.resize(x.rows());
  const double p0 = psi(2);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double n = x(r, 1);
    check_count(n);
    const double loglam = psi(0) + psi(1) * x(r, 0);
    const double lam = std::exp(loglam);
    if (n == 0.0)
      ll(r) = std::log(p0 + (1.0 - p0) * std::exp(-lam));
    else
      ll(r) = std::log1p(-p0) - lam + n * loglam - std::lgamma(n + 1.0);
  }
}

inline Simulated zip_lin_sim(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Stream& rng,
                             const SimContext& ctx) {
  Simulated s;
  s.y.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double lam = std::exp(psi(0) + psi(1) * x(r, 0));
    const double u = rng.unif();
    const double c = draw_count(lam, rng, ctx);
    s.y(r) = u < psi(2) ? 0.0 : c;
  }
  return s;
}

inline Hazard tte_hazard(Family f, const Eigen::VectorXd& psi) {
  return Hazard(f, psi(0), psi.size() > 1 ? psi(1) : 1.0);
}

// time, status, cens
inline void tte(Family f, const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Eigen::VectorXd& ll) {
  ll.resize(x.rows());
  if (!(psi(0) > 0.0) || (psi.size() > 1 && !(psi(1) > 0.0))) {
    ll.setConstant(kLogFloor);
    return;
  }
  const Hazard h = tte_hazard(f, psi);
  double hprev = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double t = x(r, 0);
    if (t == 0.0) {
      ll(r) = 0.0;
      hprev = 0.0;
      continue;
    }
    const double H = h.cumulative(t);
    ll(r) = -H + hprev;
    if (x(r, 2) == 0.0) ll(r) += h.log_hazard(t);
    hprev = H;
  }
}

/// Simulated follow-up: inverse-CDF event time, censored at the subject's own
/// time when it was censored in the data, else at the maximum follow-up.
inline Simulated tte_sim(Family f, const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Stream& rng,
                         const SimContext& ctx) {
  const Hazard h = tte_hazard(f, psi);
  const auto last = x.rows() - 1;
  const double censor = x(last, 2) != 0.0 ? x(last, 0) : ctx.max_followup;
  const double t = h.inverse_survival(rng.unif_open());
  Simulated s;
  if (t <= censor) {
    s.time = t;
    s.event = true;
  } else {
    s.time = censor;
    s.event = false;
  }
  return s;
}

// time
inline void gaussian_linear(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Eigen::VectorXd& f) {
  f = psi(0) + psi(1) * x.col(0).array();
}

// dose, time; psi = (ka, V, CL)
inline void gaussian_1cpt(const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Eigen::VectorXd& f) {
  const double ka = psi(0), v = psi(1), cl = psi(2);
  const double k = cl / v;
  f.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double d = x(r, 0), t = x(r, 1);
    if (std::abs(ka - k) < 1e-10)
      f(r) = d * ka / v * t * std::exp(-k * t);
    else
      f(r) = d * ka / (v * (ka - k)) * (std::exp(-k * t) - std::exp(-ka * t));
  }
}

}  // namespace kernels

inline Eigen::MatrixXi pattern_diag(std::initializer_list<int> d) {
  const auto n = static_cast<Eigen::Index>(d.size());
  Eigen::MatrixXi m = Eigen::MatrixXi::Zero(n, n);
  Eigen::Index k = 0;
  for (int v : d) m(k, k) = v, ++k;
  return m;
}

inline Eigen::MatrixXd matrix_diag(std::initializer_list<double> d) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(d.size()));
  Eigen::Index k = 0;
  for (double x : d) v(k++) = x;
  return v.asDiagonal();
}

inline const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> names = {
      "binary-logistic", "ordinal-po5",   "poisson-lin",    "zip-lin",       "truncpoisson-lin", "tte-exponential",
      "tte-weibull",     "tte-gompertz",  "tte-gamma",      "tte-loglogistic", "gaussian-linear", "gaussian-1cpt"};
  return names;
}

inline bool is_builtin(const std::string& name) {
  const auto& n = builtin_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

/// Registry of the built-in models with their default settings.
inline ModelSpec builtin_model(const std::string& name) {
  ModelSpec m;
  m.name = name;
  auto vec = [](std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index k = 0;
    for (double x : v) out(k++) = x;
    return out;
  };
  using T = Transform;
  if (name == "binary-logistic") {
    m.outcome = OutcomeKind::binary;
    m.param_names = {"theta1", "theta2"};
    m.psi0 = vec({-0.5, -0.15});
    m.transforms = {T::identity, T::identity};
    m.omega_pattern = pattern_diag({1, 0});
    m.omega_init = matrix_diag({0.5, 0.3});
    m.loglik = kernels::binary_logistic;
    m.simulate = kernels::binary_logistic_sim;
    m.n_predictors = 2;
  } else if (name == "ordinal-po5") {
    m.outcome = OutcomeKind::categorical;
    m.param_names = {"alp1", "alp2", "alp3", "alp4", "beta"};
    m.psi0 = vec({0.0, 0.2, 0.6, 3.0, 0.2});
    m.transforms = {T::identity, T::log, T::log, T::log, T::log};
    m.omega_pattern = pattern_diag({1, 0, 0, 0, 1});
    m.omega_init = matrix_diag({100, 1, 1, 1, 1});
    m.loglik = kernels::ordinal_po5;
    m.simulate = kernels::ordinal_po5_sim;
    m.n_predictors = 2;
  } else if (name == "poisson-lin" || name == "truncpoisson-lin") {
    m.outcome = OutcomeKind::count;
    m.param_names = {"alpha0", "alpha1"};
    m.psi0 = vec({1.5, 0.01});
    m.transforms = {T::identity, T::identity};
    m.omega_pattern = Eigen::MatrixXi::Ones(2, 2);
    m.omega_init = matrix_diag({0.5, 0.3});
    if (name == "poisson-lin") {
      m.loglik = kernels::poisson_lin;
      m.simulate = kernels::poisson_lin_sim;
    } else {
      m.loglik = kernels::truncpoisson_lin;
      m.simulate = kernels::truncpoisson_lin_sim;
    }
    m.n_predictors = 2;
  } else if (name == "zip-lin") {
    m.outcome = OutcomeKind::count;
    m.param_names = {"alpha0", "alpha1", "p0"};
    m.psi0 = vec({1.5, 0.01, 0.2});
    m.transforms = {T::identity, T::identity, T::logit};
    m.omega_pattern = Eigen::MatrixXi::Zero(3, 3);
    m.omega_pattern.topLeftCorner(2, 2).setOnes();
    m.omega_init = matrix_diag({0.5, 0.3, 1.0});
    m.loglik = kernels::zip_lin;
    m.simulate = kernels::zip_lin_sim;
    m.n_predictors = 2;
  } else if (name.rfind("tte-", 0) == 0 && is_builtin(name)) {
    const Family f = family_from_string(name.substr(4));
    m.outcome = OutcomeKind::tte;
    m.hazard_family = to_string(f);
    if (f == Family::exponential) {
      m.param_names = {"Te"};
      m.psi0 = vec({300.0});
      m.transforms = {T::log};
      m.omega_pattern = pattern_diag({1});
      m.omega_init = matrix_diag({1.0});
    } else {
      m.param_names = {"Te", "gamma"};
      m.psi0 = vec({300.0, 1.5});
      m.transforms = {T::log, T::log};
      m.omega_pattern = pattern_diag({1, 0});
      m.omega_init = matrix_diag({1.0, 1.0});
    }
    m.loglik = [f](const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Eigen::VectorXd& ll) {
      kernels::tte(f, psi, x, ll);
    };
    m.simulate = [f](const Eigen::VectorXd& psi, const Eigen::MatrixXd& x, Stream& rng, const SimContext& ctx) {
      return kernels::tte_sim(f, psi, x, rng, ctx);
    };
    m.n_predictors = 3;
  } else if (name == "gaussian-linear") {
    m.outcome = OutcomeKind::gaussian;
    m.param_names = {"intercept", "slope"};
    m.psi0 = vec({10.0, 1.0});
    m.transforms = {T::identity, T::identity};
    m.omega_pattern = pattern_diag({1, 1});
    m.structural = kernels::gaussian_linear;
    m.error = ErrorKind::constant;
    m.sigma0 = Eigen::Vector2d(1.0, 0.0);
  } else if (name == "gaussian-1cpt") {
    m.outcome = OutcomeKind::gaussian;
    m.param_names = {"ka", "V", "CL"};
    m.psi0 = vec({1.0, 20.0, 1.5});
    m.transforms = {T::log, T::log, T::log};
    m.omega_pattern = pattern_diag({1, 1, 1});
    m.omega_init = matrix_diag({0.5, 0.5, 0.5});
    m.structural = kernels::gaussian_1cpt;
    m.error = ErrorKind::constant;
    m.sigma0 = Eigen::Vector2d(0.5, 0.0);
    m.n_predictors = 2;
  } else {
    throw ModelError("unknown model '" + name + "'");
  }
  m.covariate_model = Eigen::MatrixXi::Zero(0, m.n_params());
  return m;
}

}  // namespace saem
