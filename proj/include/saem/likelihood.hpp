#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saem/conditional.hpp"
#include "saem/engine.hpp"

namespace saem {

struct LikelihoodEstimate {
  double total = 0.0;
  std::vector<double> per_subject;
  std::string method;  ///< "is", "gq" or "lin"
  double mc_se = 0.0;
  long settings = 0;   ///< samples (is) or nodes per dimension (gq)
  std::vector<std::string> warnings;
};

struct LikelihoodOptions {
  long samples = 10000;
  int nodes = 12;
  double df = 5.0;
  std::uint64_t seed = 123456;
  int threads = 1;
};

namespace detail {

inline double log_t_density(double z, double nu) {
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * M_PI) -
         0.5 * (nu + 1.0) * std::log1p(z * z / nu);
}

/// Conditional centre and scale on the IIV coordinates, with the SD floor.
inline void proposal_moments(const Sampler& smp, const ConditionalEstimates& ce, std::size_t i, Eigen::VectorXd& base,
                             Eigen::VectorXd& centre, Eigen::VectorXd& scale, bool& floored) {
  const auto ii = static_cast<Eigen::Index>(i);
  const auto d = smp.d();
  base = ce.mean.row(ii).transpose();
  smp.sync_fixed_coords(i, base);
  centre.resize(d);
  scale.resize(d);
  for (Eigen::Index a = 0; a < d; ++a) {
    const int j = smp.iiv()[static_cast<std::size_t>(a)];
    centre(a) = ce.mean(ii, j);
    scale(a) = ce.sd(ii, j);
    if (!(scale(a) > 1e-6)) {
      scale(a) = 1e-6;
      floored = true;
    }
  }
}

}  // namespace detail

/// Importance-sampling estimate of the marginal log-likelihood with a
/// product-t proposal centred on the conditional means.
inline LikelihoodEstimate ll_importance_sampling(const Fit& fit, const ConditionalEstimates& ce,
                                                 const LikelihoodOptions& opt = {}) {
  const std::size_t N = fit.data.n_subjects();
  Sampler smp(fit.model, fit.data);
  smp.set_theta(fit.theta);
  const auto d = smp.d();
  LikelihoodEstimate est;
  est.method = "is";
  est.settings = opt.samples;
  est.per_subject.assign(N, 0.0);
  std::vector<double> var(N, 0.0);
  std::vector<char> floored(N, 0);
  const double M = static_cast<double>(opt.samples);
  parallel_for(N, opt.threads, [&](std::size_t i) {
    Stream rng(make_stream(opt.seed, "is", i));
    std::chi_squared_distribution<double> chi(opt.df);
    Eigen::VectorXd base, centre, scale;
    bool fl = false;
    detail::proposal_moments(smp, ce, i, base, centre, scale, fl);
    floored[i] = fl;
    const double log_scale = scale.array().log().sum();
    std::vector<double> w(static_cast<std::size_t>(opt.samples));
    Eigen::VectorXd p = base;
    for (long s = 0; s < opt.samples; ++s) {
      double logq = -log_scale;
      for (Eigen::Index a = 0; a < d; ++a) {
        const double z = rng.gauss() / std::sqrt(chi(rng.engine) / opt.df);
        p(smp.iiv()[static_cast<std::size_t>(a)]) = centre(a) + scale(a) * z;
        logq += detail::log_t_density(z, opt.df);
      }
      w[static_cast<std::size_t>(s)] = smp.log_complete(i, p) - logq;
    }
    const double mx = *std::max_element(w.begin(), w.end());
    double sum = 0.0, sumsq = 0.0;
    for (double v : w) {
      const double e = std::exp(v - mx);
      sum += e;
      sumsq += e * e;
    }
    const double mean = sum / M;
    est.per_subject[i] = mx + std::log(mean);
    const double v = std::max(0.0, sumsq / M - mean * mean);
    // delta method on the log of the sample mean
    var[i] = v / (M * mean * mean);
  });
  for (std::size_t i = 0; i < N; ++i) {
    est.total += est.per_subject[i];
    est.mc_se += var[i];
    if (floored[i]) est.warnings.push_back("subject " + fit.data.subject(i).id + ": conditional SD floored at 1e-6");
  }
  est.mc_se = std::sqrt(est.mc_se);
  return est;
}

/// Adaptive Gauss-Hermite quadrature on the product grid around the
/// conditional means; limited to four random-effect dimensions.
inline LikelihoodEstimate ll_gauss_hermite(const Fit& fit, const ConditionalEstimates& ce, const LikelihoodOptions& opt = {}) {
  const std::size_t N = fit.data.n_subjects();
  Sampler smp(fit.model, fit.data);
  smp.set_theta(fit.theta);
  const auto d = smp.d();
  if (d > 4)
    throw UnsupportedError("Gauss-Hermite quadrature supports at most 4 random effects; use importance sampling");
  if (opt.nodes < 1) throw ConfigError("at least one quadrature node is required");
  const auto [x, wts] = gauss_hermite(opt.nodes);
  LikelihoodEstimate est;
  est.method = "gq";
  est.settings = opt.nodes;
  est.per_subject.assign(N, 0.0);
  long grid = 1;
  for (Eigen::Index a = 0; a < d; ++a) grid *= opt.nodes;
  std::vector<char> floored(N, 0);
  parallel_for(N, opt.threads, [&](std::size_t i) {
    Eigen::VectorXd base, centre, scale;
    bool fl = false;
    detail::proposal_moments(smp, ce, i, base, centre, scale, fl);
    floored[i] = fl;
    std::vector<double> terms(static_cast<std::size_t>(grid));
    Eigen::VectorXd p = base;
    for (long g = 0; g < grid; ++g) {
      long rem = g;
      double lw = 0.0;
      for (Eigen::Index a = 0; a < d; ++a) {
        const auto k = static_cast<Eigen::Index>(rem % opt.nodes);
        rem /= opt.nodes;
        p(smp.iiv()[static_cast<std::size_t>(a)]) = centre(a) + std::sqrt(2.0) * scale(a) * x(k);
        lw += std::log(wts(k)) + x(k) * x(k) + std::log(std::sqrt(2.0) * scale(a));
      }
      terms[static_cast<std::size_t>(g)] = lw + smp.log_complete(i, p);
    }
    est.per_subject[i] = log_sum_exp(terms);
  });
  for (std::size_t i = 0; i < N; ++i) {
    est.total += est.per_subject[i];
    if (floored[i]) est.warnings.push_back("subject " + fit.data.subject(i).id + ": conditional SD floored at 1e-6");
  }
  return est;
}

/// Linearised marginal model of one subject around phi_hat: mean, Jacobian
/// of the structural function (on the log scale for exponential error) and
/// the residual SDs.
struct LinearizedSubject {
  Eigen::VectorXd y;
  Eigen::VectorXd f;
  Eigen::MatrixXd J;  ///< rows x parameters (Gaussian scale)
  Eigen::VectorXd g;
  Eigen::VectorXd phi_hat;
};

inline LinearizedSubject linearize_subject(const ModelSpec& m, const Subject& s, const Eigen::VectorXd& phi_hat,
                                           const Eigen::Vector2d& sigma) {
  LinearizedSubject out;
  out.phi_hat = phi_hat;
  const bool logscale = m.error == ErrorKind::exponential;
  auto pred = [&](const Eigen::VectorXd& ph) {
    Eigen::VectorXd f;
    m.structural(transform_to_natural(ph, m.transforms), s.x, f);
    if (logscale) f = f.array().max(1e-300).log().matrix();
    return f;
  };
  out.f = pred(phi_hat);
  out.y = logscale ? Eigen::VectorXd(s.y.array().max(1e-300).log()) : s.y;
  const auto P = m.n_params();
  out.J.resize(s.n_rows(), P);
  for (Eigen::Index j = 0; j < P; ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(phi_hat(j)));
    Eigen::VectorXd a = phi_hat, b = phi_hat;
    a(j) += h;
    b(j) -= h;
    out.J.col(j) = (pred(a) - pred(b)) / (2 * h);
  }
  out.g.resize(s.n_rows());
  Eigen::VectorXd fnat;
  m.structural(transform_to_natural(phi_hat, m.transforms), s.x, fnat);
  for (Eigen::Index r = 0; r < s.n_rows(); ++r) out.g(r) = error_model_sd(fnat(r), m.error, sigma);
  return out;
}

/// Mean and covariance of y_i under the linearised model.
inline void linearized_moments(const LinearizedSubject& ls, const Eigen::VectorXd& pop, const Eigen::MatrixXd& omega,
                               Eigen::VectorXd& mean, Eigen::MatrixXd& V) {
  mean = ls.f + ls.J * (pop - ls.phi_hat);
  V = ls.J * omega * ls.J.transpose();
  V.diagonal() += ls.g.cwiseProduct(ls.g);
}

/// FOCE-type log-likelihood, linearising the structural model around the MAP
/// estimates. Gaussian outcomes only.
inline LikelihoodEstimate ll_linearized(const Fit& fit, const ConditionalEstimates& ce) {
  if (!fit.model.is_gaussian())
    throw UnsupportedError("linearisation is only available for gaussian outcomes");
  const std::size_t N = fit.data.n_subjects();
  Sampler smp(fit.model, fit.data);
  smp.set_theta(fit.theta);
  LikelihoodEstimate est;
  est.method = "lin";
  est.per_subject.assign(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    const auto& s = fit.data.subject(i);
    const auto ls = linearize_subject(fit.model, s, ce.map.row(static_cast<Eigen::Index>(i)).transpose(), fit.theta.sigma);
    Eigen::VectorXd mean;
    Eigen::MatrixXd V;
    linearized_moments(ls, smp.pop(i), fit.theta.omega, mean, V);
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    const Eigen::VectorXd r = ls.y - mean;
    const Eigen::VectorXd z = llt.matrixL().solve(r);
    const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    est.per_subject[i] = -0.5 * (static_cast<double>(r.size()) * kLog2Pi + logdet + z.squaredNorm());
    est.total += est.per_subject[i];
  }
  return est;
}

}  // namespace saem
