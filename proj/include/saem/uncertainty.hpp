#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saem/conditional.hpp"
#include "saem/diagnostics.hpp"
#include "saem/engine.hpp"
#include "saem/likelihood.hpp"

namespace saem {

struct UncertaintyResult {
  std::string method;  ///< fim-lin, case-boot or cond-boot
  std::vector<std::string> names;
  std::vector<double> estimate;
  std::vector<double> se;
  std::vector<double> rse;  ///< percent
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  int replicates = 0;
  int failures = 0;
  std::vector<std::vector<double>> replicate_estimates;  ///< successful replicates only
  bool unreliable = false;
  bool degenerate = false;
  std::vector<std::string> flagged;
  std::vector<std::string> warnings;
};

namespace detail {

inline void fill_rse(UncertaintyResult& r) {
  r.rse.resize(r.se.size());
  for (std::size_t k = 0; k < r.se.size(); ++k)
    r.rse[k] = r.estimate[k] != 0.0 ? 100.0 * r.se[k] / std::abs(r.estimate[k]) : std::numeric_limits<double>::quiet_NaN();
}

inline std::vector<double> values_of(const std::vector<ReportValue>& v) {
  std::vector<double> out;
  for (const auto& r : v) out.push_back(r.value);
  return out;
}

}  // namespace detail

/// Expected Fisher information of the model linearised around the MAP
/// estimates, with block structure (fixed effects, variance parameters).
/// Standard errors are mapped to the reporting scale by the delta method.
inline UncertaintyResult fim_linearized(const Fit& fit, const ConditionalEstimates& ce) {
  const ModelSpec& m = fit.model;
  if (!m.is_gaussian())
    throw UnsupportedError("the linearised Fisher information is only available for gaussian outcomes; use a bootstrap");
  const Dataset& ds = fit.data;
  const Theta& th = fit.theta;
  Sampler smp(m, ds);
  smp.set_theta(th);
  const auto P = m.n_params();
  const auto nf = th.fixed.size();

  // variance parameters: omega entries on the pattern, then sigma
  struct VarParam {
    int kind;  // 0 omega, 1 sigma_a, 2 sigma_b
    Eigen::Index a, b;
  };
  std::vector<VarParam> vp;
  for (Eigen::Index j = 0; j < P; ++j)
    if (m.has_iiv(j)) vp.push_back({0, j, j});
  for (Eigen::Index a = 0; a < P; ++a)
    for (Eigen::Index b = a + 1; b < P; ++b)
      if (m.omega_pattern(a, b)) vp.push_back({0, a, b});
  if (m.error != ErrorKind::proportional) vp.push_back({1, 0, 0});
  if (m.error == ErrorKind::proportional || m.error == ErrorKind::combined) vp.push_back({2, 0, 0});
  const auto nv = static_cast<Eigen::Index>(vp.size());

  Eigen::MatrixXd If = Eigen::MatrixXd::Zero(nf, nf);
  Eigen::MatrixXd Iv = Eigen::MatrixXd::Zero(nv, nv);
  for (std::size_t i = 0; i < ds.n_subjects(); ++i) {
    const auto& s = ds.subject(i);
    const auto ls = linearize_subject(m, s, ce.map.row(static_cast<Eigen::Index>(i)).transpose(), th.sigma);
    Eigen::VectorXd mean;
    Eigen::MatrixXd V;
    linearized_moments(ls, smp.pop(i), th.omega, mean, V);
    const Eigen::MatrixXd Vinv = V.ldlt().solve(Eigen::MatrixXd::Identity(V.rows(), V.cols()));
    const Eigen::MatrixXd D = ls.J * smp.design(i);
    If += D.transpose() * Vinv * D;
    Eigen::VectorXd fnat;
    m.structural(transform_to_natural(ls.phi_hat, m.transforms), s.x, fnat);
    std::vector<Eigen::MatrixXd> dV(vp.size());
    for (std::size_t k = 0; k < vp.size(); ++k) {
      const auto& v = vp[k];
      if (v.kind == 0) {
        dV[k] = ls.J.col(v.a) * ls.J.col(v.b).transpose();
        if (v.a != v.b) dV[k] += ls.J.col(v.b) * ls.J.col(v.a).transpose();
      } else {
        Eigen::VectorXd diag(s.n_rows());
        for (Eigen::Index r = 0; r < s.n_rows(); ++r) {
          if (v.kind == 1) diag(r) = 2.0 * th.sigma(0);
          else diag(r) = 2.0 * th.sigma(1) * fnat(r) * fnat(r);
        }
        dV[k] = diag.asDiagonal();
      }
      dV[k] = Vinv * dV[k];
    }
    for (Eigen::Index a = 0; a < nv; ++a)
      for (Eigen::Index b = a; b < nv; ++b) {
        const double t = 0.5 * (dV[static_cast<std::size_t>(a)] * dV[static_cast<std::size_t>(b)]).trace();
        Iv(a, b) += t;
        if (a != b) Iv(b, a) += t;
      }
  }

  UncertaintyResult res;
  res.method = "fim-lin";
  auto invert = [&](const Eigen::MatrixXd& I, const std::vector<std::string>& names) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(I);
    cod.setThreshold(1e-12);
    if (cod.rank() < I.rows()) {
      const double mx = I.diagonal().cwiseAbs().maxCoeff();
      for (Eigen::Index k = 0; k < I.rows(); ++k)
        if (!(std::abs(I(k, k)) > 1e-10 * mx)) res.flagged.push_back(names[static_cast<std::size_t>(k)]);
      res.warnings.push_back("singular information matrix; pseudo-inverse used");
      if (res.flagged.empty()) res.flagged = names;
    }
    return Eigen::MatrixXd(cod.pseudoInverse());
  };
  const auto report = report_values(m, th);
  std::vector<std::string> all_names;
  for (const auto& r : report) all_names.push_back(r.name);
  std::vector<std::string> fnames(all_names.begin(), all_names.begin() + nf);
  std::vector<std::string> vnames(all_names.begin() + nf, all_names.end());
  const Eigen::MatrixXd Cf = invert(If, fnames);
  const Eigen::MatrixXd Cv = invert(Iv, vnames);

  const auto layout = m.fixed_layout();
  for (const auto& r : report) {
    res.names.push_back(r.name);
    res.estimate.push_back(r.value);
  }
  for (Eigen::Index k = 0; k < nf; ++k) {
    const auto& fe = layout[static_cast<std::size_t>(k)];
    double se = std::sqrt(std::max(0.0, Cf(k, k)));
    if (fe.covariate < 0) {
      const double psi = to_natural(th.fixed(k), m.transforms[static_cast<std::size_t>(fe.param)]);
      switch (m.transforms[static_cast<std::size_t>(fe.param)]) {
        case Transform::identity: break;
        case Transform::log: se *= psi; break;
        case Transform::logit: se *= psi * (1.0 - psi); break;
      }
    }
    res.se.push_back(se);
  }
  for (Eigen::Index k = 0; k < nv; ++k) {
    const auto& v = vp[static_cast<std::size_t>(k)];
    double se = std::sqrt(std::max(0.0, Cv(k, k)));
    if (v.kind == 0 && v.a == v.b) {
      se /= 2.0 * std::sqrt(std::max(th.omega(v.a, v.a), 1e-300));
    } else if (v.kind == 0) {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(nv);
      const double va = th.omega(v.a, v.a), vb = th.omega(v.b, v.b), c = th.omega(v.a, v.b);
      const double rho = c / std::sqrt(va * vb);
      g(k) = 1.0 / std::sqrt(va * vb);
      for (Eigen::Index q = 0; q < nv; ++q) {
        const auto& w = vp[static_cast<std::size_t>(q)];
        if (w.kind == 0 && w.a == w.b && w.a == v.a) g(q) = -rho / (2.0 * va);
        if (w.kind == 0 && w.a == w.b && w.a == v.b) g(q) = -rho / (2.0 * vb);
      }
      se = std::sqrt(std::max(0.0, g.dot(Cv * g)));
    }
    res.se.push_back(se);
  }
  for (std::size_t k = 0; k < res.se.size(); ++k) {
    res.ci_low.push_back(res.estimate[k] - 1.959963984540054 * res.se[k]);
    res.ci_high.push_back(res.estimate[k] + 1.959963984540054 * res.se[k]);
  }
  detail::fill_rse(res);
  return res;
}

struct BootstrapOptions {
  int replicates = 200;
  std::uint64_t seed = 123456;
  int threads = 1;
  bool start_from_estimates = false;  ///< refit from the fitted values instead of the initial values
};

namespace detail {

/// Aggregates replicate estimates into SEs and percentile intervals.
inline UncertaintyResult summarize_replicates(const Fit& fit, std::string method,
                                              const std::vector<std::optional<std::vector<double>>>& reps,
                                              const std::vector<std::string>& errors) {
  UncertaintyResult res;
  res.method = std::move(method);
  for (const auto& r : fit.report()) {
    res.names.push_back(r.name);
    res.estimate.push_back(r.value);
  }
  res.replicates = static_cast<int>(reps.size());
  for (std::size_t b = 0; b < reps.size(); ++b) {
    if (reps[b]) res.replicate_estimates.push_back(*reps[b]);
    else {
      ++res.failures;
      res.warnings.push_back("replicate " + std::to_string(b + 1) + " failed: " + errors[b]);
    }
  }
  if (res.failures * 5 > res.replicates) {
    res.unreliable = true;
    res.warnings.push_back("more than 20% of the replicates failed; results are unreliable");
  }
  const std::size_t P = res.names.size();
  for (std::size_t k = 0; k < P; ++k) {
    std::vector<double> v;
    for (const auto& r : res.replicate_estimates) v.push_back(r[k]);
    if (v.size() >= 2) {
      res.se.push_back(sd_of(v));
      res.ci_low.push_back(quantile(v, 0.025));
      res.ci_high.push_back(quantile(v, 0.975));
    } else {
      res.se.push_back(std::numeric_limits<double>::quiet_NaN());
      res.ci_low.push_back(std::numeric_limits<double>::quiet_NaN());
      res.ci_high.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  fill_rse(res);
  return res;
}

inline SaemOptions replicate_options(const Fit& fit, std::uint64_t seed, std::size_t b) {
  SaemOptions o = fit.options;
  o.seed = derive_seed(seed, "replicate", b);
  o.threads = 1;
  return o;
}

}  // namespace detail

/// Resamples subjects with replacement and refits each replicate.
inline UncertaintyResult case_bootstrap(const Fit& fit, const BootstrapOptions& opt) {
  if (opt.replicates < 2) throw ConfigError("at least two bootstrap replicates are required");
  const std::size_t N = fit.data.n_subjects();
  const auto B = static_cast<std::size_t>(opt.replicates);
  std::vector<std::optional<std::vector<double>>> reps(B);
  std::vector<std::string> errors(B);
  parallel_for(B, opt.threads, [&](std::size_t b) {
    Stream rng(make_stream(opt.seed, "case-bootstrap", b));
    std::vector<std::size_t> idx(N);
    for (auto& k : idx) k = std::min(N - 1, static_cast<std::size_t>(rng.unif() * static_cast<double>(N)));
    try {
      const Dataset data = fit.data.resample(idx);
      const Fit f = run_saem(fit.model, data, detail::replicate_options(fit, opt.seed, b),
                             opt.start_from_estimates ? &fit.theta : nullptr);
      reps[b] = detail::values_of(f.report());
    } catch (const std::exception& e) {
      errors[b] = e.what();
    }
  });
  auto res = detail::summarize_replicates(fit, "case-boot", reps, errors);
  if (N == 1) {
    res.degenerate = true;
    res.warnings.push_back("a single subject gives no resampling variability");
  }
  return res;
}

/// Random effects drawn from the pooled conditional samples, rescaled so
/// their covariance equals the estimated Omega; responses simulated on the
/// original design and refitted.
inline UncertaintyResult conditional_bootstrap(const Fit& fit, const ConditionalEstimates& ce,
                                               const BootstrapOptions& opt) {
  const ModelSpec& m = fit.model;
  if (m.outcome == OutcomeKind::tte)
    throw UnsupportedError(
        "conditional bootstrap is refused for single-event tte data: each subject carries one event, so the "
        "sampled random effects would be meaningless; use the case bootstrap");
  if (!m.simulate && !m.is_gaussian())
    throw ModelError(m.name + " has no simulation kernel; supply one to run the conditional bootstrap");
  if (opt.replicates < 2) throw ConfigError("at least two bootstrap replicates are required");
  const Dataset& ds = fit.data;
  const std::size_t N = ds.n_subjects();
  Sampler smp(m, ds);
  smp.set_theta(fit.theta);
  const auto d = smp.d();
  const auto& iiv = smp.iiv();

  std::vector<Eigen::VectorXd> pool;
  for (std::size_t i = 0; i < N; ++i) {
    const auto& S = ce.samples[i];
    for (Eigen::Index r = 0; r < S.rows(); ++r) {
      Eigen::VectorXd e(d);
      for (Eigen::Index a = 0; a < d; ++a) e(a) = S(r, iiv[a]) - smp.pop(i)(iiv[a]);
      pool.push_back(e);
    }
  }
  if (pool.size() < 2) throw ValidationError("conditional bootstrap needs conditional samples");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& e : pool) mean += e;
  mean /= static_cast<double>(pool.size());
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(d, d);
  for (const auto& e : pool) C += (e - mean) * (e - mean).transpose();
  C /= static_cast<double>(pool.size() - 1);
  Eigen::MatrixXd om(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) om(a, b) = fit.theta.omega(iiv[a], iiv[b]);
  Eigen::MatrixXd T;
  {
    Eigen::LLT<Eigen::MatrixXd> lc(C);
    if (lc.info() != Eigen::Success) throw ValidationError("pooled conditional samples have a singular covariance");
    const Eigen::MatrixXd Lc = lc.matrixL();
    const Eigen::MatrixXd Lo = psd_sqrt(om);
    // e' = Lo * Lc^{-1} (e - mean)
    T = Lo * Lc.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(d, d));
  }
  for (auto& e : pool) e = T * (e - mean);

  const SimContext ctx = make_sim_context(ds);
  const auto B = static_cast<std::size_t>(opt.replicates);
  std::vector<std::optional<std::vector<double>>> reps(B);
  std::vector<std::string> errors(B);
  parallel_for(B, opt.threads, [&](std::size_t b) {
    try {
      std::vector<Eigen::VectorXd> ys(N);
      for (std::size_t i = 0; i < N; ++i) {
        Stream rng(make_stream(opt.seed, "conditional-bootstrap", b, i));
        const auto k = std::min(pool.size() - 1, static_cast<std::size_t>(rng.unif() * static_cast<double>(pool.size())));
        Eigen::VectorXd phi = smp.pop(i);
        for (Eigen::Index a = 0; a < d; ++a) phi(iiv[a]) += pool[k](a);
        ys[i] = simulate_subject(m, transform_to_natural(phi, m.transforms), ds.subject(i), rng, ctx, fit.theta.sigma).y;
      }
      const Dataset data = ds.with_responses(ys);
      const Fit f = run_saem(m, data, detail::replicate_options(fit, opt.seed, b),
                             opt.start_from_estimates ? &fit.theta : nullptr);
      reps[b] = detail::values_of(f.report());
    } catch (const std::exception& e) {
      errors[b] = e.what();
    }
  });
  auto res = detail::summarize_replicates(fit, "cond-boot", reps, errors);
  for (Eigen::Index j = 0; j < m.n_params(); ++j)
    if (m.has_iiv(j) && fit.theta.omega(j, j) < 1e-8) res.flagged.push_back("omega_" + m.param_names[static_cast<std::size_t>(j)]);
  if (N == 1) res.degenerate = true;
  return res;
}

inline void write_uncertainty_summary_csv(std::ostream& os, const UncertaintyResult& r) {
  os << "parameter,estimate,se,rse_percent,ci_low,ci_high,method,B,failures\n";
  os.precision(10);
  for (std::size_t k = 0; k < r.names.size(); ++k)
    os << r.names[k] << ',' << r.estimate[k] << ',' << r.se[k] << ',' << r.rse[k] << ',' << r.ci_low[k] << ','
       << r.ci_high[k] << ',' << r.method << ',' << r.replicates << ',' << r.failures << '\n';
}

inline void write_replicates_csv(std::ostream& os, const UncertaintyResult& r) {
  os << "replicate";
  for (const auto& n : r.names) os << ',' << n;
  os << '\n';
  os.precision(12);
  for (std::size_t b = 0; b < r.replicate_estimates.size(); ++b) {
    os << b + 1;
    for (double v : r.replicate_estimates[b]) os << ',' << v;
    os << '\n';
  }
}

}  // namespace saem
