#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saem/dataset.hpp"
#include "saem/errors.hpp"
#include "saem/model.hpp"
#include "saem/numeric.hpp"
#include "saem/parallel.hpp"
#include "saem/rng.hpp"

namespace saem {

struct SaemOptions {
  int k1 = 300;
  int k2 = 100;
  int chains = 1;
  int burn_in = 5;
  std::array<int, 3> kernel_iters{2, 2, 2};
  double tau = 0.97;
  int anneal_iters = -1;  ///< -1: first half of the exploration phase
  std::uint64_t seed = 123456;
  double target_accept = 0.4;
  int newton_steps = 1;  ///< per-iteration Newton steps for parameters without IIV
  int threads = 1;

  int annealing() const { return anneal_iters < 0 ? k1 / 2 : anneal_iters; }

  void validate() const {
    if (k1 < 0 || k2 < 0) throw ConfigError("K1 and K2 must be non-negative");
    if (chains < 1) throw ConfigError("at least one chain is required");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("annealing factor must lie in (0,1]");
    if (burn_in < 0) throw ConfigError("burn-in must be non-negative");
    for (int k : kernel_iters)
      if (k < 0) throw ConfigError("kernel iteration counts must be non-negative");
  }
};

/// Population parameters: fixed effects on the Gaussian scale in the
/// model's canonical layout, the random-effect covariance, residual error.
struct Theta {
  Eigen::VectorXd fixed;
  Eigen::MatrixXd omega;
  Eigen::Vector2d sigma{0.0, 0.0};
};

inline double step_size(int k, int k1) { return k <= k1 ? 1.0 : 1.0 / static_cast<double>(k - k1 + 1); }

/// Named value on the reporting scale: intercepts on the natural scale,
/// covariate effects on the Gaussian scale, random effects as SD and
/// correlations, residual error parameters.
struct ReportValue {
  std::string name;
  double value;
};

inline std::vector<ReportValue> report_values(const ModelSpec& m, const Theta& th) {
  std::vector<ReportValue> out;
  const auto layout = m.fixed_layout();
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const auto& fe = layout[k];
    const double v = th.fixed(static_cast<Eigen::Index>(k));
    out.push_back({m.fixed_name(fe), fe.covariate < 0 ? to_natural(v, m.transforms[static_cast<std::size_t>(fe.param)]) : v});
  }
  for (Eigen::Index j = 0; j < m.n_params(); ++j)
    if (m.has_iiv(j)) out.push_back({"omega_" + m.param_names[static_cast<std::size_t>(j)], std::sqrt(std::max(0.0, th.omega(j, j)))});
  for (Eigen::Index a = 0; a < m.n_params(); ++a)
    for (Eigen::Index b = a + 1; b < m.n_params(); ++b)
      if (m.omega_pattern(a, b)) {
        const double d = std::sqrt(th.omega(a, a) * th.omega(b, b));
        out.push_back({"corr_" + m.param_names[static_cast<std::size_t>(a)] + "_" + m.param_names[static_cast<std::size_t>(b)],
                       d > 0 ? th.omega(a, b) / d : 0.0});
      }
  if (m.is_gaussian()) {
    if (m.error != ErrorKind::proportional) out.push_back({"sigma_a", th.sigma(0)});
    if (m.error == ErrorKind::proportional || m.error == ErrorKind::combined) out.push_back({"sigma_b", th.sigma(1)});
  }
  return out;
}

/// Inverse of `report_values` for a model and value list in the same order.
inline Theta theta_from_report(const ModelSpec& m, const std::vector<double>& v) {
  Theta th;
  const auto layout = m.fixed_layout();
  th.fixed.resize(static_cast<Eigen::Index>(layout.size()));
  std::size_t k = 0;
  for (std::size_t f = 0; f < layout.size(); ++f, ++k) {
    const auto& fe = layout[f];
    th.fixed(static_cast<Eigen::Index>(f)) =
        fe.covariate < 0 ? to_gaussian(v.at(k), m.transforms[static_cast<std::size_t>(fe.param)]) : v.at(k);
  }
  const auto p = m.n_params();
  th.omega = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index j = 0; j < p; ++j)
    if (m.has_iiv(j)) th.omega(j, j) = v.at(k) * v.at(k), ++k;
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = a + 1; b < p; ++b)
      if (m.omega_pattern(a, b)) th.omega(a, b) = th.omega(b, a) = v.at(k++) * std::sqrt(th.omega(a, a) * th.omega(b, b));
  th.sigma = m.sigma0;
  if (m.is_gaussian()) {
    if (m.error != ErrorKind::proportional) th.sigma(0) = v.at(k++);
    if (m.error == ErrorKind::proportional || m.error == ErrorKind::combined) th.sigma(1) = v.at(k++);
  }
  return th;
}

/// Per-subject acceptance counters for the three kernels.
struct KernelCounts {
  long k1_acc = 0, k1_prop = 0;
  std::vector<long> k2_acc, k2_prop, k3_acc, k3_prop;

  explicit KernelCounts(std::size_t d = 0) : k2_acc(d), k2_prop(d), k3_acc(d), k3_prop(d) {}
  void add(const KernelCounts& o) {
    k1_acc += o.k1_acc;
    k1_prop += o.k1_prop;
    for (std::size_t j = 0; j < k2_acc.size(); ++j) {
      k2_acc[j] += o.k2_acc[j];
      k2_prop[j] += o.k2_prop[j];
      k3_acc[j] += o.k3_acc[j];
      k3_prop[j] += o.k3_prop[j];
    }
  }
};

/// Metropolis-within-Gibbs sampler of the individual parameters at fixed
/// population parameters. Only coordinates with a random effect are sampled;
/// the others stay at their population value.
class Sampler {
 public:
  Sampler(const ModelSpec& model, const Dataset& data) : m_(model), ds_(data) {
    iiv_ = m_.iiv_params();
    for (Eigen::Index j = 0; j < m_.n_params(); ++j)
      if (!m_.has_iiv(j)) no_iiv_.push_back(static_cast<int>(j));
    design_.reserve(ds_.n_subjects());
    for (const auto& s : ds_.subjects()) design_.push_back(subject_design(m_, ds_, s));
    scale2_ = Eigen::VectorXd::Ones(d());
    scale3_ = Eigen::VectorXd::Ones(d());
  }

  const ModelSpec& model() const { return m_; }
  const Dataset& data() const { return ds_; }
  Eigen::Index d() const { return static_cast<Eigen::Index>(iiv_.size()); }
  const std::vector<int>& iiv() const { return iiv_; }
  const std::vector<int>& no_iiv() const { return no_iiv_; }
  const Eigen::MatrixXd& design(std::size_t i) const { return design_[i]; }
  const Eigen::VectorXd& pop(std::size_t i) const { return pop_[i]; }
  const Theta& theta() const { return theta_; }
  Eigen::VectorXd& scale2() { return scale2_; }
  Eigen::VectorXd& scale3() { return scale3_; }

  void set_theta(const Theta& th) {
    theta_ = th;
    pop_.resize(ds_.n_subjects());
    for (std::size_t i = 0; i < ds_.n_subjects(); ++i) pop_[i] = design_[i] * th.fixed;
    omega_iiv_.resize(d(), d());
    for (Eigen::Index a = 0; a < d(); ++a)
      for (Eigen::Index b = 0; b < d(); ++b) omega_iiv_(a, b) = th.omega(iiv_[a], iiv_[b]);
    Eigen::LLT<Eigen::MatrixXd> llt(omega_iiv_);
    if (llt.info() != Eigen::Success) {
      Eigen::MatrixXd fixed = omega_iiv_;
      repair_psd(fixed);
      llt.compute(fixed);
    }
    chol_ = llt.matrixL();
    omega_inv_ = llt.solve(Eigen::MatrixXd::Identity(d(), d()));
    log_det_ = 2.0 * chol_.diagonal().array().log().sum();
  }

  /// Sets the random-walk scales to half the prior SDs.
  void reset_scales() {
    for (Eigen::Index a = 0; a < d(); ++a) scale2_(a) = scale3_(a) = 0.5 * std::sqrt(std::max(omega_iiv_(a, a), 1e-12));
  }

  double loglik_y(std::size_t i, const Eigen::VectorXd& phi) const {
    return subject_loglik(m_, transform_to_natural(phi, m_.transforms), ds_.subject(i), theta_.sigma);
  }

  /// log N(phi_iiv; pop_iiv, Omega), up to the constant.
  double logprior(std::size_t i, const Eigen::VectorXd& phi) const {
    Eigen::VectorXd e(d());
    for (Eigen::Index a = 0; a < d(); ++a) e(a) = phi(iiv_[a]) - pop_[i](iiv_[a]);
    return -0.5 * e.dot(omega_inv_ * e);
  }

  /// Full log density including the Gaussian normalisation.
  double log_complete(std::size_t i, const Eigen::VectorXd& phi) const {
    return loglik_y(i, phi) + logprior(i, phi) - 0.5 * (static_cast<double>(d()) * kLog2Pi + log_det_);
  }

  Eigen::VectorXd initial_phi(std::size_t i) const { return pop_[i]; }

  /// Re-aligns the coordinates without random effects with the population value.
  void sync_fixed_coords(std::size_t i, Eigen::VectorXd& phi) const {
    for (int j : no_iiv_) phi(j) = pop_[i](j);
  }

  /// One sweep of the three kernels for subject i. `lly` caches loglik_y at
  /// the current state and is kept up to date.
  void sweep(std::size_t i, Eigen::VectorXd& phi, double& lly, Stream& rng, KernelCounts& c,
             const std::array<int, 3>& iters) const {
    const auto dd = d();
    if (dd == 0) return;
    Eigen::VectorXd prop = phi;
    // kernel 1: independent proposal from the prior; the ratio reduces to the likelihood
    for (int it = 0; it < iters[0]; ++it) {
      Eigen::VectorXd z(dd);
      for (Eigen::Index a = 0; a < dd; ++a) z(a) = rng.gauss();
      const Eigen::VectorXd e = chol_ * z;
      prop = phi;
      for (Eigen::Index a = 0; a < dd; ++a) prop(iiv_[a]) = pop_[i](iiv_[a]) + e(a);
      const double l = loglik_y(i, prop);
      ++c.k1_prop;
      if (std::log(rng.unif_open()) < l - lly) {
        phi = prop;
        lly = l;
        ++c.k1_acc;
      }
    }
    double lp = logprior(i, phi);
    // kernel 2: componentwise random walk
    for (int it = 0; it < iters[1]; ++it) {
      for (Eigen::Index a = 0; a < dd; ++a) {
        prop = phi;
        prop(iiv_[a]) += scale2_(a) * rng.gauss();
        const double l = loglik_y(i, prop);
        const double p = logprior(i, prop);
        ++c.k2_prop[static_cast<std::size_t>(a)];
        if (std::log(rng.unif_open()) < (l + p) - (lly + lp)) {
          phi = prop;
          lly = l;
          lp = p;
          ++c.k2_acc[static_cast<std::size_t>(a)];
        }
      }
    }
    // kernel 3: block random walk over a random subset
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(dd));
    for (int it = 0; it < iters[2]; ++it) {
      const Eigen::Index lo = std::min<Eigen::Index>(2, dd);
      const Eigen::Index size = lo + static_cast<Eigen::Index>(rng.unif() * static_cast<double>(dd - lo + 1));
      const Eigen::Index sz = std::min(size, dd);
      for (Eigen::Index a = 0; a < dd; ++a) idx[static_cast<std::size_t>(a)] = a;
      for (Eigen::Index a = 0; a < sz; ++a) {
        const auto r = a + static_cast<Eigen::Index>(rng.unif() * static_cast<double>(dd - a));
        std::swap(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(std::min(r, dd - 1))]);
      }
      prop = phi;
      for (Eigen::Index a = 0; a < sz; ++a) {
        const auto j = idx[static_cast<std::size_t>(a)];
        prop(iiv_[j]) += scale3_(j) * rng.gauss();
      }
      const double l = loglik_y(i, prop);
      const double p = logprior(i, prop);
      for (Eigen::Index a = 0; a < sz; ++a) ++c.k3_prop[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])];
      if (std::log(rng.unif_open()) < (l + p) - (lly + lp)) {
        phi = prop;
        lly = l;
        lp = p;
        for (Eigen::Index a = 0; a < sz; ++a) ++c.k3_acc[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])];
      }
    }
  }

  /// Multiplicative adaptation of the random-walk scales toward `target`.
  void adapt(const KernelCounts& c, double target) {
    auto upd = [&](double& s, long acc, long prop) {
      if (prop == 0) return;
      s *= static_cast<double>(acc) / static_cast<double>(prop) > target ? 1.1 : 0.9;
      s = std::clamp(s, 1e-3, 1e3);
    };
    for (Eigen::Index a = 0; a < d(); ++a) {
      upd(scale2_(a), c.k2_acc[static_cast<std::size_t>(a)], c.k2_prop[static_cast<std::size_t>(a)]);
      upd(scale3_(a), c.k3_acc[static_cast<std::size_t>(a)], c.k3_prop[static_cast<std::size_t>(a)]);
    }
  }

 private:
  const ModelSpec& m_;
  const Dataset& ds_;
  std::vector<int> iiv_, no_iiv_;
  std::vector<Eigen::MatrixXd> design_;
  std::vector<Eigen::VectorXd> pop_;
  Theta theta_;
  Eigen::MatrixXd omega_iiv_, omega_inv_, chol_;
  double log_det_ = 0.0;
  Eigen::VectorXd scale2_, scale3_;
};

struct Fit {
  ModelSpec model;
  Dataset data;
  SaemOptions options;
  Theta theta;
  Theta initial;
  std::vector<std::string> trace_names;
  std::vector<std::vector<double>> traces;  ///< one row per iteration 0..K1+K2: gamma then parameters
  std::vector<Eigen::MatrixXd> last_phi;    ///< per chain, subjects x parameters (Gaussian scale)
  std::array<double, 3> acceptance{0.0, 0.0, 0.0};
  int iterations = 0;
  std::vector<std::string> warnings;

  std::vector<ReportValue> report() const { return report_values(model, theta); }
};

namespace detail {

/// Trace row: natural-scale intercepts, covariate effects, variances, sigma.
inline std::vector<double> trace_row(const ModelSpec& m, const Theta& th, double gamma) {
  std::vector<double> row{gamma};
  const auto layout = m.fixed_layout();
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const auto& fe = layout[k];
    const double v = th.fixed(static_cast<Eigen::Index>(k));
    row.push_back(fe.covariate < 0 ? to_natural(v, m.transforms[static_cast<std::size_t>(fe.param)]) : v);
  }
  for (Eigen::Index j = 0; j < m.n_params(); ++j)
    if (m.has_iiv(j)) row.push_back(th.omega(j, j));
  if (m.is_gaussian()) {
    row.push_back(th.sigma(0));
    row.push_back(th.sigma(1));
  }
  return row;
}

inline std::vector<std::string> trace_names(const ModelSpec& m) {
  std::vector<std::string> names{"gamma"};
  for (const auto& fe : m.fixed_layout()) names.push_back(m.fixed_name(fe));
  for (Eigen::Index j = 0; j < m.n_params(); ++j)
    if (m.has_iiv(j)) names.push_back("omega2_" + m.param_names[static_cast<std::size_t>(j)]);
  if (m.is_gaussian()) {
    names.push_back("sigma_a");
    names.push_back("sigma_b");
  }
  return names;
}

/// Throws DesignError when the covariate columns of any parameter are collinear.
inline void check_design(const ModelSpec& m, const Dataset& ds) {
  const auto layout = m.fixed_layout();
  for (Eigen::Index j = 0; j < m.n_params(); ++j) {
    std::vector<std::size_t> cols;
    for (std::size_t k = 0; k < layout.size(); ++k)
      if (layout[k].param == j) cols.push_back(k);
    if (cols.size() < 2) continue;
    Eigen::MatrixXd A(static_cast<Eigen::Index>(ds.n_subjects()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < ds.n_subjects(); ++i) {
      const Eigen::MatrixXd X = subject_design(m, ds, ds.subject(i));
      for (std::size_t c = 0; c < cols.size(); ++c)
        A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = X(j, static_cast<Eigen::Index>(cols[c]));
    }
    if (!A.allFinite())
      throw DesignError("missing covariate values for parameter " + m.param_names[static_cast<std::size_t>(j)]);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    if (qr.rank() < A.cols()) {
      std::string names;
      for (std::size_t c = 1; c < cols.size(); ++c) {
        if (!names.empty()) names += ", ";
        names += m.covariates[static_cast<std::size_t>(layout[cols[c]].covariate)];
      }
      throw DesignError("collinear covariates on " + m.param_names[static_cast<std::size_t>(j)] + ": " + names);
    }
  }
}

}  // namespace detail

/// Runs SAEM from the model's initial values, or from `start` when given.
inline Fit run_saem(const ModelSpec& model, const Dataset& input, const SaemOptions& opts,
                    const Theta* start = nullptr) {
  opts.validate();
  model.validate_against(input);
  Fit fit;
  fit.model = model;
  fit.options = opts;
  // subjects lacking a covariate the model uses are left out of this fit
  fit.data = input.drop_missing_covariates(model.used_covariates());
  for (const auto& w : fit.data.warnings()) fit.warnings.push_back(w);
  if (fit.data.n_subjects() == 0) throw ValidationError("no subjects left to fit");
  const ModelSpec& m = fit.model;
  const Dataset& ds = fit.data;
  detail::check_design(m, ds);

  const std::size_t N = ds.n_subjects();
  const int L = opts.chains;
  const auto P = m.n_params();
  const double n_tot = static_cast<double>(ds.n_observations());

  Theta th;
  if (start) {
    th = *start;
  } else {
    th.fixed = m.initial_fixed();
    th.omega = m.initial_omega();
    th.sigma = m.sigma0;
  }
  fit.initial = th;

  Sampler smp(m, ds);
  smp.set_theta(th);
  smp.reset_scales();
  const auto& iiv = smp.iiv();
  const auto& no_iiv = smp.no_iiv();
  const auto d = smp.d();

  // initial likelihood check
  {
    std::size_t bad = 0;
    for (std::size_t i = 0; i < N; ++i) {
      Eigen::VectorXd ll;
      const Eigen::VectorXd psi = transform_to_natural(smp.pop(i), m.transforms);
      if (m.is_gaussian()) {
        row_loglik(m, psi, ds.subject(i), th.sigma, ll);
      } else {
        m.loglik(psi, ds.subject(i).x, ll);
      }
      if (!ll.allFinite() || (ll.array() <= kLogFloor).any()) ++bad;
    }
    if (2 * bad > N)
      throw InitializationError("likelihood is not finite at the initial values for " + std::to_string(bad) + " of " +
                                std::to_string(N) + " subjects");
  }

  std::vector<std::vector<Eigen::VectorXd>> phi(static_cast<std::size_t>(L), std::vector<Eigen::VectorXd>(N));
  std::vector<std::vector<double>> lly(static_cast<std::size_t>(L), std::vector<double>(N));
  for (int l = 0; l < L; ++l)
    for (std::size_t i = 0; i < N; ++i) {
      phi[l][i] = smp.initial_phi(i);
      lly[l][i] = smp.loglik_y(i, phi[l][i]);
    }
  std::vector<Stream> streams;
  streams.reserve(N);
  for (std::size_t i = 0; i < N; ++i) streams.emplace_back(make_stream(opts.seed, "saem", i));

  // stochastic-approximation statistics
  std::vector<Eigen::VectorXd> s1(N, Eigen::VectorXd::Zero(d));
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(d, d);
  double s_res = 0.0;
  bool first_stat = true;

  const auto layout = m.fixed_layout();
  std::vector<Eigen::Index> fixed_iiv, fixed_no;
  for (std::size_t k = 0; k < layout.size(); ++k) {
    if (m.has_iiv(layout[k].param)) fixed_iiv.push_back(static_cast<Eigen::Index>(k));
    else fixed_no.push_back(static_cast<Eigen::Index>(k));
  }

  fit.trace_names = detail::trace_names(m);
  fit.traces.push_back(detail::trace_row(m, th, 1.0));

  const int K = opts.k1 + opts.k2;
  std::vector<KernelCounts> counts(N, KernelCounts(static_cast<std::size_t>(d)));
  KernelCounts total(static_cast<std::size_t>(d));
  std::vector<double> buf(N);

  for (int k = 1; k <= K; ++k) {
    const double gamma = step_size(k, opts.k1);
    const bool exploring = k <= opts.k1;

    // simulation step
    parallel_for(N, opts.threads, [&](std::size_t i) {
      KernelCounts c(static_cast<std::size_t>(d));
      for (int l = 0; l < L; ++l) smp.sweep(i, phi[l][i], lly[l][i], streams[i], c, opts.kernel_iters);
      counts[i] = std::move(c);
    });
    KernelCounts iter_counts(static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < N; ++i) iter_counts.add(counts[i]);
    total.add(iter_counts);
    if (exploring) smp.adapt(iter_counts, opts.target_accept);

    if (k <= opts.burn_in) {
      fit.traces.push_back(detail::trace_row(m, th, gamma));
      continue;
    }

    // stochastic approximation of the sufficient statistics
    const double g = first_stat ? 1.0 : gamma;
    first_stat = false;
    Eigen::MatrixXd s2_new = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < N; ++i) {
      Eigen::VectorXd mean_i = Eigen::VectorXd::Zero(d);
      for (int l = 0; l < L; ++l) {
        Eigen::VectorXd v(d);
        for (Eigen::Index a = 0; a < d; ++a) v(a) = phi[l][i](iiv[a]);
        mean_i += v;
        s2_new += v * v.transpose();
      }
      mean_i /= L;
      s1[i] += g * (mean_i - s1[i]);
    }
    s2_new /= L;
    s2 += g * (s2_new - s2);

    if (m.is_gaussian() && m.error != ErrorKind::combined) {
      parallel_for(N, opts.threads, [&](std::size_t i) {
        const auto& s = ds.subject(i);
        double acc = 0.0;
        Eigen::VectorXd f;
        for (int l = 0; l < L; ++l) {
          m.structural(transform_to_natural(phi[l][i], m.transforms), s.x, f);
          for (Eigen::Index r = 0; r < s.n_rows(); ++r) {
            double res = s.y(r) - f(r);
            if (m.error == ErrorKind::proportional) res = f(r) != 0.0 ? res / f(r) : 0.0;
            if (m.error == ErrorKind::exponential)
              res = (s.y(r) > 0 && f(r) > 0) ? std::log(s.y(r)) - std::log(f(r)) : 0.0;
            acc += res * res;
          }
        }
        buf[i] = acc / L;
      });
      double tot = 0.0;
      for (double v : buf) tot += v;
      s_res += g * (tot - s_res);
    }

    // maximisation step
    Theta next = th;
    if (d > 0) {
      // fixed effects of parameters with IIV: generalised least squares with the previous Omega
      const auto nf = static_cast<Eigen::Index>(fixed_iiv.size());
      Eigen::MatrixXd W = Eigen::MatrixXd::Zero(d, d);
      {
        Eigen::MatrixXd om(d, d);
        for (Eigen::Index a = 0; a < d; ++a)
          for (Eigen::Index b = 0; b < d; ++b) om(a, b) = th.omega(iiv[a], iiv[b]);
        W = om.ldlt().solve(Eigen::MatrixXd::Identity(d, d));
      }
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(nf, nf);
      Eigen::VectorXd bvec = Eigen::VectorXd::Zero(nf);
      std::vector<Eigen::MatrixXd> Xs(N);
      for (std::size_t i = 0; i < N; ++i) {
        Eigen::MatrixXd X(d, nf);
        for (Eigen::Index a = 0; a < d; ++a)
          for (Eigen::Index c = 0; c < nf; ++c) X(a, c) = smp.design(i)(iiv[a], fixed_iiv[static_cast<std::size_t>(c)]);
        A += X.transpose() * W * X;
        bvec += X.transpose() * W * s1[i];
        Xs[i] = std::move(X);
      }
      const Eigen::VectorXd beta = A.ldlt().solve(bvec);
      for (Eigen::Index c = 0; c < nf; ++c) next.fixed(fixed_iiv[static_cast<std::size_t>(c)]) = beta(c);

      // covariance from the second moments around the new population means
      Eigen::MatrixXd om = s2;
      for (std::size_t i = 0; i < N; ++i) {
        const Eigen::VectorXd mi = Xs[i] * beta;
        om -= s1[i] * mi.transpose() + mi * s1[i].transpose();
        om += mi * mi.transpose();
      }
      om /= static_cast<double>(N);
      Eigen::MatrixXd full = Eigen::MatrixXd::Zero(P, P);
      for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = 0; b < d; ++b)
          if (m.omega_pattern(iiv[a], iiv[b])) full(iiv[a], iiv[b]) = om(a, b);
      if (k <= opts.annealing())
        for (int j : iiv) full(j, j) = std::max(full(j, j), opts.tau * th.omega(j, j));
      Eigen::MatrixXd sub(d, d);
      for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = 0; b < d; ++b) sub(a, b) = full(iiv[a], iiv[b]);
      if (repair_psd(sub)) {
        fit.warnings.push_back("iteration " + std::to_string(k) + ": covariance repaired to be positive semi-definite");
        for (Eigen::Index a = 0; a < d; ++a)
          for (Eigen::Index b = 0; b < d; ++b) full(iiv[a], iiv[b]) = sub(a, b);
      }
      next.omega = full;
    }

    if (!fixed_no.empty()) {
      // parameters without IIV: Newton steps on the complete-data likelihood, then smoothing
      const auto q = static_cast<Eigen::Index>(fixed_no.size());
      Eigen::VectorXd x0(q);
      for (Eigen::Index c = 0; c < q; ++c) x0(c) = th.fixed(fixed_no[static_cast<std::size_t>(c)]);
      auto objective = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd fx = th.fixed;
        for (Eigen::Index c = 0; c < q; ++c) fx(fixed_no[static_cast<std::size_t>(c)]) = x(c);
        parallel_for(N, opts.threads, [&](std::size_t i) {
          const Eigen::VectorXd popi = smp.design(i) * fx;
          double acc = 0.0;
          for (int l = 0; l < L; ++l) {
            Eigen::VectorXd p = phi[l][i];
            for (int j : no_iiv) p(j) = popi(j);
            acc += subject_loglik(m, transform_to_natural(p, m.transforms), ds.subject(i), th.sigma);
          }
          buf[i] = acc;
        });
        double tot = 0.0;
        for (double v : buf) tot += v;
        return tot;
      };
      const auto res = newton_maximize(objective, x0, opts.newton_steps);
      for (Eigen::Index c = 0; c < q; ++c)
        next.fixed(fixed_no[static_cast<std::size_t>(c)]) = x0(c) + gamma * (res.x(c) - x0(c));
    }

    if (m.is_gaussian()) {
      Eigen::Vector2d sig = th.sigma;
      if (m.error == ErrorKind::combined) {
        auto negll = [&](const Eigen::VectorXd& ls) {
          const Eigen::Vector2d s(std::exp(ls(0)), std::exp(ls(1)));
          parallel_for(N, opts.threads, [&](std::size_t i) {
            double acc = 0.0;
            for (int l = 0; l < L; ++l) acc += subject_loglik(m, transform_to_natural(phi[l][i], m.transforms), ds.subject(i), s);
            buf[i] = acc;
          });
          double tot = 0.0;
          for (double v : buf) tot += v;
          return -tot / L;
        };
        Eigen::VectorXd x0(2);
        x0 << std::log(std::max(th.sigma(0), 1e-8)), std::log(std::max(th.sigma(1), 1e-8));
        const auto res = nelder_mead(negll, x0, Eigen::VectorXd::Constant(2, 0.2), 1e-6, 200);
        const Eigen::Vector2d opt(std::exp(res.x(0)), std::exp(res.x(1)));
        sig = th.sigma + gamma * (opt - th.sigma);
        if (k <= opts.annealing())
          for (int c = 0; c < 2; ++c) sig(c) = std::max(sig(c), std::sqrt(opts.tau) * th.sigma(c));
      } else {
        double var = s_res / n_tot;
        const int c = m.error == ErrorKind::proportional ? 1 : 0;
        if (k <= opts.annealing()) var = std::max(var, opts.tau * th.sigma(c) * th.sigma(c));
        sig(c) = std::sqrt(var);
      }
      next.sigma = sig;
    }

    th = next;
    smp.set_theta(th);
    for (int l = 0; l < L; ++l)
      for (std::size_t i = 0; i < N; ++i) {
        if (!no_iiv.empty()) {
          smp.sync_fixed_coords(i, phi[l][i]);
          lly[l][i] = smp.loglik_y(i, phi[l][i]);
        } else if (m.is_gaussian()) {
          lly[l][i] = smp.loglik_y(i, phi[l][i]);
        }
      }
    fit.traces.push_back(detail::trace_row(m, th, gamma));
  }

  fit.theta = th;
  fit.iterations = K;
  fit.last_phi.assign(static_cast<std::size_t>(L), Eigen::MatrixXd(static_cast<Eigen::Index>(N), P));
  for (int l = 0; l < L; ++l)
    for (std::size_t i = 0; i < N; ++i) fit.last_phi[l].row(static_cast<Eigen::Index>(i)) = phi[l][i].transpose();
  auto rate = [](long a, long p) { return p > 0 ? static_cast<double>(a) / static_cast<double>(p) : 0.0; };
  long a2 = 0, p2 = 0, a3 = 0, p3 = 0;
  for (std::size_t j = 0; j < static_cast<std::size_t>(d); ++j) {
    a2 += total.k2_acc[j], p2 += total.k2_prop[j];
    a3 += total.k3_acc[j], p3 += total.k3_prop[j];
  }
  fit.acceptance = {rate(total.k1_acc, total.k1_prop), rate(a2, p2), rate(a3, p3)};
  return fit;
}

inline void write_traces_csv(std::ostream& os, const Fit& fit) {
  os << "iteration";
  for (const auto& n : fit.trace_names) os << ',' << n;
  os << '\n';
  os.precision(12);
  for (std::size_t k = 0; k < fit.traces.size(); ++k) {
    os << k;
    for (double v : fit.traces[k]) os << ',' << v;
    os << '\n';
  }
}

}  // namespace saem
