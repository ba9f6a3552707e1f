#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saem/engine.hpp"

namespace saem {

struct ConditionalOptions {
  double tol = 0.005;
  int max_batches = 1000;
  int batch = 50;
  int thin = 5;
  int max_samples = 500;
  int warmup = 50;  ///< sweeps with scale adaptation before monitoring starts
  std::uint64_t seed = 123456;
  int threads = 1;
};

/// Conditional distribution summaries on the Gaussian scale (subjects x
/// parameters). Parameters without IIV have SD 0 and NaN shrinkage.
struct ConditionalEstimates {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd sd;
  Eigen::MatrixXd map;
  Eigen::MatrixXd mean_natural;
  Eigen::MatrixXd map_natural;
  std::vector<Eigen::MatrixXd> samples;  ///< per subject, thinned draws (rows) of all parameters
  Eigen::VectorXd shrinkage;
  std::vector<int> batches;  ///< batches run per subject
  bool converged = true;
  std::vector<std::string> warnings;
};

/// Prolonged MCMC at the fitted population parameters. Each subject runs its
/// own stream until the batch-to-batch relative change of its running mean
/// and SD falls below `tol` for every coordinate.
inline ConditionalEstimates estimate_conditional(const Fit& fit, const ConditionalOptions& opt = {}) {
  const ModelSpec& m = fit.model;
  const Dataset& ds = fit.data;
  const std::size_t N = ds.n_subjects();
  const auto P = m.n_params();
  Sampler smp(m, ds);
  smp.set_theta(fit.theta);
  smp.reset_scales();
  const auto& iiv = smp.iiv();
  const auto d = smp.d();

  ConditionalEstimates ce;
  ce.mean = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N), P);
  ce.sd = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N), P);
  ce.map = ce.mean;
  ce.mean_natural = ce.mean;
  ce.map_natural = ce.mean;
  ce.samples.resize(N);
  ce.batches.assign(N, 0);

  std::vector<Eigen::VectorXd> phi(N);
  std::vector<double> lly(N);
  std::vector<Stream> streams;
  streams.reserve(N);
  for (std::size_t i = 0; i < N; ++i) {
    phi[i] = fit.last_phi.empty() ? smp.initial_phi(i) : Eigen::VectorXd(fit.last_phi[0].row(static_cast<Eigen::Index>(i)).transpose());
    smp.sync_fixed_coords(i, phi[i]);
    lly[i] = smp.loglik_y(i, phi[i]);
    streams.emplace_back(make_stream(opt.seed, "conditional", i));
  }
  const std::array<int, 3> iters{1, 1, 1};

  // shared warm-up with scale adaptation
  std::vector<KernelCounts> counts(N, KernelCounts(static_cast<std::size_t>(d)));
  for (int w = 0; w < opt.warmup; ++w) {
    parallel_for(N, opt.threads, [&](std::size_t i) {
      KernelCounts c(static_cast<std::size_t>(d));
      smp.sweep(i, phi[i], lly[i], streams[i], c, iters);
      counts[i] = std::move(c);
    });
    KernelCounts tot(static_cast<std::size_t>(d));
    for (const auto& c : counts) tot.add(c);
    smp.adapt(tot, 0.4);
  }

  std::vector<char> done(N, 0);
  parallel_for(N, opt.threads, [&](std::size_t i) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(P), sumsq = Eigen::VectorXd::Zero(P), sumnat = Eigen::VectorXd::Zero(P);
    double n = 0.0;
    Eigen::VectorXd prev_mean, prev_sd;
    std::deque<Eigen::VectorXd> kept;
    KernelCounts c(static_cast<std::size_t>(d));
    long sweep_no = 0;
    int b = 0;
    bool conv = d == 0;
    for (; b < opt.max_batches && !conv; ++b) {
      for (int s = 0; s < opt.batch; ++s) {
        smp.sweep(i, phi[i], lly[i], streams[i], c, iters);
        sum += phi[i];
        sumsq += phi[i].cwiseProduct(phi[i]);
        sumnat += transform_to_natural(phi[i], m.transforms);
        n += 1.0;
        if (++sweep_no % opt.thin == 0) {
          kept.push_back(phi[i]);
          if (static_cast<int>(kept.size()) > opt.max_samples) kept.pop_front();
        }
      }
      const Eigen::VectorXd mean = sum / n;
      const Eigen::VectorXd var = (sumsq / n - mean.cwiseProduct(mean)).cwiseMax(0.0) * (n / std::max(1.0, n - 1.0));
      const Eigen::VectorXd sd = var.cwiseSqrt();
      if (b > 0) {
        conv = true;
        for (int j : iiv) {
          const double scale = std::max(std::abs(mean(j)), sd(j));
          const double dm = scale > 0 ? std::abs(mean(j) - prev_mean(j)) / scale : 0.0;
          const double ds_ = sd(j) > 0 ? std::abs(sd(j) - prev_sd(j)) / sd(j) : 0.0;
          if (dm >= opt.tol || ds_ >= opt.tol) conv = false;
        }
      }
      prev_mean = mean;
      prev_sd = sd;
    }
    ce.batches[i] = b;
    done[i] = conv ? 1 : 0;
    const auto ii = static_cast<Eigen::Index>(i);
    if (n > 0) {
      ce.mean.row(ii) = (sum / n).transpose();
      ce.sd.row(ii) = prev_sd.transpose();
      ce.mean_natural.row(ii) = (sumnat / n).transpose();
    } else {
      ce.mean.row(ii) = phi[i].transpose();
      ce.mean_natural.row(ii) = transform_to_natural(phi[i], m.transforms).transpose();
    }
    for (Eigen::Index j = 0; j < P; ++j)
      if (!m.has_iiv(j)) ce.sd(ii, j) = 0.0;
    Eigen::MatrixXd S(static_cast<Eigen::Index>(kept.size()), P);
    for (std::size_t k = 0; k < kept.size(); ++k) S.row(static_cast<Eigen::Index>(k)) = kept[k].transpose();
    ce.samples[i] = std::move(S);

    // MAP by compass search started at the conditional mean
    Eigen::VectorXd start(d), step(d);
    const Eigen::VectorXd base = ce.mean.row(ii).transpose();
    for (Eigen::Index a = 0; a < d; ++a) {
      start(a) = base(iiv[a]);
      step(a) = std::max(ce.sd(ii, iiv[a]), 1e-3);
    }
    auto target = [&](const Eigen::VectorXd& e) {
      Eigen::VectorXd p = base;
      for (Eigen::Index a = 0; a < d; ++a) p(iiv[a]) = e(a);
      return smp.log_complete(i, p);
    };
    const auto res = coordinate_maximize(target, start, step, 1e-8);
    Eigen::VectorXd mp = base;
    for (Eigen::Index a = 0; a < d; ++a) mp(iiv[a]) = res.x(a);
    ce.map.row(ii) = mp.transpose();
    ce.map_natural.row(ii) = transform_to_natural(mp, m.transforms).transpose();
  });

  for (std::size_t i = 0; i < N; ++i)
    if (!done[i]) {
      ce.converged = false;
      ce.warnings.push_back("conditional estimates for subject " + ds.subject(i).id + " did not reach the tolerance");
    }

  ce.shrinkage = Eigen::VectorXd::Constant(P, std::numeric_limits<double>::quiet_NaN());
  for (int j : iiv) {
    std::vector<double> eta(N);
    for (std::size_t i = 0; i < N; ++i) eta[i] = ce.mean(static_cast<Eigen::Index>(i), j) - smp.pop(i)(j);
    const double v = N > 1 ? std::pow(sd_of(eta), 2) : 0.0;
    const double w = fit.theta.omega(j, j);
    ce.shrinkage(j) = w > 0 ? 1.0 - v / w : std::numeric_limits<double>::quiet_NaN();
  }
  return ce;
}

inline void write_conditional_csv(std::ostream& os, const Fit& fit, const ConditionalEstimates& ce) {
  os << "id,parameter,mean,sd,map,mean_natural,map_natural,shrinkage\n";
  os.precision(12);
  for (std::size_t i = 0; i < fit.data.n_subjects(); ++i)
    for (Eigen::Index j = 0; j < fit.model.n_params(); ++j) {
      const auto ii = static_cast<Eigen::Index>(i);
      os << fit.data.subject(i).id << ',' << fit.model.param_names[static_cast<std::size_t>(j)] << ',' << ce.mean(ii, j)
         << ',' << ce.sd(ii, j) << ',' << ce.map(ii, j) << ',' << ce.mean_natural(ii, j) << ',' << ce.map_natural(ii, j)
         << ',';
      if (std::isnan(ce.shrinkage(j))) os << "NA";
      else os << ce.shrinkage(j);
      os << '\n';
    }
}

}  // namespace saem
