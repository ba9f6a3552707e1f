#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "saem/engine.hpp"
#include "saem/summary.hpp"

namespace saem {

/// Replicate responses on the original design. For tte data each replicate
/// holds one follow-up time and event flag per subject instead.
struct SimulationTable {
  int nsim = 0;
  OutcomeKind outcome = OutcomeKind::gaussian;
  std::vector<std::vector<Eigen::VectorXd>> y;  ///< [replicate][subject]
  std::vector<std::vector<double>> time;        ///< [replicate][subject], tte
  std::vector<std::vector<char>> event;         ///< [replicate][subject], tte
};

/// Truncation and censoring bounds taken from the observed data.
inline SimContext make_sim_context(const Dataset& ds) {
  SimContext ctx;
  if (ds.outcome() == OutcomeKind::count) {
    double mx = 0.0;
    for (const auto& s : ds.subjects()) mx = std::max(mx, s.y.maxCoeff());
    ctx.max_count = mx + 1.0;
  }
  if (ds.outcome() == OutcomeKind::tte) {
    double mx = 0.0;
    for (const auto& s : ds.subjects()) mx = std::max(mx, s.x.col(ds.time_column()).maxCoeff());
    ctx.max_followup = mx;
  }
  return ctx;
}

/// One simulated subject. Gaussian models without a kernel use the
/// structural function plus the residual error model.
inline Simulated simulate_subject(const ModelSpec& m, const Eigen::VectorXd& psi, const Subject& s, Stream& rng,
                                  const SimContext& ctx, const Eigen::Vector2d& sigma) {
  if (m.simulate) return m.simulate(psi, s.x, rng, ctx);
  if (!m.is_gaussian())
    throw ModelError(m.name + " has no simulation kernel; supply one to simulate or bootstrap this model");
  Eigen::VectorXd f;
  m.structural(psi, s.x, f);
  Simulated out;
  out.y.resize(f.size());
  for (Eigen::Index r = 0; r < f.size(); ++r) {
    const double g = error_model_sd(f(r), m.error, sigma);
    out.y(r) = m.error == ErrorKind::exponential ? f(r) * std::exp(g * rng.gauss()) : f(r) + g * rng.gauss();
  }
  return out;
}

/// Draws of eta ~ N(0, Omega) mapped to phi for every subject.
class PriorDraw {
 public:
  PriorDraw(const ModelSpec& m, const Dataset& ds, const Theta& th) : smp_(m, ds) {
    smp_.set_theta(th);
    const auto d = smp_.d();
    Eigen::MatrixXd om(d, d);
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b < d; ++b) om(a, b) = th.omega(smp_.iiv()[a], smp_.iiv()[b]);
    root_ = psd_sqrt(om);
  }
  Eigen::VectorXd operator()(std::size_t i, Stream& rng) const {
    Eigen::VectorXd phi = smp_.pop(i);
    const auto d = smp_.d();
    Eigen::VectorXd z(d);
    for (Eigen::Index a = 0; a < d; ++a) z(a) = rng.gauss();
    const Eigen::VectorXd e = root_ * z;
    for (Eigen::Index a = 0; a < d; ++a) phi(smp_.iiv()[a]) += e(a);
    return phi;
  }
  const Sampler& sampler() const { return smp_; }

 private:
  Sampler smp_;
  Eigen::MatrixXd root_;
};

inline SimulationTable simulate_from_fit(const Fit& fit, int nsim, std::uint64_t seed, int threads = 1) {
  const ModelSpec& m = fit.model;
  const Dataset& ds = fit.data;
  if (!m.simulate && !m.is_gaussian())
    throw ModelError(m.name + " has no simulation kernel; supply one to simulate this model");
  const std::size_t N = ds.n_subjects();
  const PriorDraw draw(m, ds, fit.theta);
  const SimContext ctx = make_sim_context(ds);
  SimulationTable t;
  t.nsim = nsim;
  t.outcome = ds.outcome();
  const bool tte = ds.outcome() == OutcomeKind::tte;
  if (tte) {
    t.time.assign(static_cast<std::size_t>(nsim), std::vector<double>(N));
    t.event.assign(static_cast<std::size_t>(nsim), std::vector<char>(N));
  } else {
    t.y.assign(static_cast<std::size_t>(nsim), std::vector<Eigen::VectorXd>(N));
  }
  parallel_for(static_cast<std::size_t>(nsim), threads, [&](std::size_t rep) {
    for (std::size_t i = 0; i < N; ++i) {
      Stream rng(make_stream(seed, "simulate", rep, i));
      const Eigen::VectorXd phi = draw(i, rng);
      const Simulated s = simulate_subject(m, transform_to_natural(phi, m.transforms), ds.subject(i), rng, ctx,
                                           fit.theta.sigma);
      if (tte) {
        t.time[rep][i] = s.time;
        t.event[rep][i] = s.event ? 1 : 0;
      } else {
        t.y[rep][i] = s.y;
      }
    }
  });
  return t;
}

inline void write_simulations_csv(std::ostream& os, const SimulationTable& t, const Dataset& ds) {
  os.precision(12);
  if (t.outcome == OutcomeKind::tte) {
    os << "replicate,id,time,event\n";
    for (int r = 0; r < t.nsim; ++r)
      for (std::size_t i = 0; i < ds.n_subjects(); ++i)
        os << r + 1 << ',' << ds.subject(i).id << ',' << t.time[static_cast<std::size_t>(r)][i] << ','
           << static_cast<int>(t.event[static_cast<std::size_t>(r)][i]) << '\n';
    return;
  }
  os << "replicate,id," << ds.schema().time_column() << ",ysim\n";
  for (int r = 0; r < t.nsim; ++r)
    for (std::size_t i = 0; i < ds.n_subjects(); ++i) {
      const auto& s = ds.subject(i);
      for (Eigen::Index k = 0; k < s.n_rows(); ++k)
        os << r + 1 << ',' << s.id << ',' << s.x(k, ds.time_column()) << ',' << t.y[static_cast<std::size_t>(r)][i](k)
           << '\n';
    }
}

struct VpcBand {
  std::string stratum;
  std::string bin;
  std::string category;
  double obs = 0.0;
  double lo = 0.0;
  double med = 0.0;
  double hi = 0.0;
};

struct VpcOptions {
  std::string stratify_by;
  std::optional<std::vector<double>> breaks;
  std::string statistic = "proportion";  ///< or "median"
  double lower = 0.025;
  double upper = 0.975;
};

namespace detail {

using VpcKey = std::tuple<std::string, std::size_t, std::size_t>;  // stratum, bin, category

/// Per (stratum, bin, category) statistic for one set of responses.
inline std::map<VpcKey, double> discrete_statistic(const Dataset& ds, const std::vector<Eigen::VectorXd>& y,
                                                   const TimeBins& bins, const Categories& cats,
                                                   const std::vector<std::optional<std::string>>& strata,
                                                   bool median) {
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> values;
  for (std::size_t i = 0; i < ds.n_subjects(); ++i) {
    if (!strata[i]) continue;
    const auto& s = ds.subject(i);
    for (Eigen::Index r = 0; r < s.n_rows(); ++r) {
      const int b = bins.bin_of(s.x(r, ds.time_column()));
      if (b >= 0) values[{*strata[i], static_cast<std::size_t>(b)}].push_back(y[i](r));
    }
  }
  std::map<VpcKey, double> out;
  for (const auto& [key, v] : values) {
    if (median) {
      out[{key.first, key.second, 0}] = quantile(v, 0.5);
      continue;
    }
    std::vector<double> counts(cats.size(), 0.0);
    for (double yv : v) {
      const int c = cats.index_of(yv);
      if (c >= 0) counts[static_cast<std::size_t>(c)] += 1.0;
    }
    for (std::size_t c = 0; c < cats.size(); ++c)
      out[{key.first, key.second, c}] = counts[c] / static_cast<double>(v.size());
  }
  return out;
}

}  // namespace detail

/// Prediction bands for proportions (or the median response) per time bin
/// and category, or Kaplan-Meier bands for tte data. Observed and simulated
/// statistics go through the same code.
inline std::vector<VpcBand> compute_vpc(const SimulationTable& sims, const Dataset& ds, const VpcOptions& opt = {},
                                        std::vector<std::string>* warnings = nullptr) {
  if (sims.outcome != ds.outcome()) throw DesignError("simulations and data have different outcome kinds");
  const std::size_t nrep = static_cast<std::size_t>(sims.nsim);
  if (nrep == 0) throw DesignError("no simulated replicates");
  if (warnings && nrep < 100) warnings->push_back("fewer than 100 replicates; bands will be noisy");
  const auto strata = strata_for(ds, opt.stratify_by);
  const auto labels = stratum_labels(strata);
  std::vector<VpcBand> out;

  if (ds.outcome() == OutcomeKind::tte) {
    for (const auto& rep : sims.time)
      if (rep.size() != ds.n_subjects()) throw DesignError("simulation table does not match the dataset");
    std::vector<double> time;
    std::vector<int> event;
    tte_outcomes(ds, time, event);
    std::vector<double> grid{0.0};
    for (std::size_t i = 0; i < time.size(); ++i)
      if (event[i]) grid.push_back(time[i]);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    for (const auto& lab : labels) {
      auto km_for = [&](const std::vector<double>& t, const auto& e) {
        std::vector<double> tt;
        std::vector<int> ee;
        for (std::size_t i = 0; i < ds.n_subjects(); ++i)
          if (strata[i] == lab) {
            tt.push_back(t[i]);
            ee.push_back(e[i] ? 1 : 0);
          }
        return kaplan_meier(tt, ee);
      };
      const auto obs = km_for(time, event);
      std::vector<KaplanMeier> reps;
      reps.reserve(nrep);
      for (std::size_t r = 0; r < nrep; ++r) reps.push_back(km_for(sims.time[r], sims.event[r]));
      for (double g : grid) {
        std::vector<double> v(nrep);
        for (std::size_t r = 0; r < nrep; ++r) v[r] = reps[r].at(g);
        out.push_back({lab, format_number(g), "survival", obs.at(g), quantile(v, opt.lower), quantile(v, 0.5),
                       quantile(v, opt.upper)});
      }
    }
    return out;
  }

  for (const auto& rep : sims.y) {
    if (rep.size() != ds.n_subjects()) throw DesignError("simulation table does not match the dataset");
    for (std::size_t i = 0; i < rep.size(); ++i)
      if (rep[i].size() != ds.subject(i).n_rows()) throw DesignError("simulation table does not match the dataset");
  }
  const bool median = opt.statistic == "median";
  if (!median && opt.statistic != "proportion") throw ConfigError("statistic must be proportion or median");
  if (!median && ds.outcome() == OutcomeKind::gaussian)
    throw UnsupportedError("proportion bands need a discrete outcome; use the median statistic");
  const TimeBins bins = time_bins_for(ds);
  const Categories cats = median ? Categories::from_values({0.0}) : categories_for(ds, opt.breaks);
  std::vector<Eigen::VectorXd> observed(ds.n_subjects());
  for (std::size_t i = 0; i < ds.n_subjects(); ++i) observed[i] = ds.subject(i).y;
  const auto obs = detail::discrete_statistic(ds, observed, bins, cats, strata, median);
  std::vector<std::map<detail::VpcKey, double>> reps(nrep);
  for (std::size_t r = 0; r < nrep; ++r) reps[r] = detail::discrete_statistic(ds, sims.y[r], bins, cats, strata, median);
  for (const auto& [key, o] : obs) {
    std::vector<double> v(nrep);
    for (std::size_t r = 0; r < nrep; ++r) {
      const auto it = reps[r].find(key);
      v[r] = it == reps[r].end() ? 0.0 : it->second;
    }
    const auto& [stratum, b, c] = key;
    out.push_back({stratum, bins.label(b), median ? std::string("median") : cats.label(c), o, quantile(v, opt.lower),
                   quantile(v, 0.5), quantile(v, opt.upper)});
  }
  return out;
}

inline void write_vpc_csv(std::ostream& os, const std::vector<VpcBand>& bands) {
  os << "stratum,bin,category,obs,lo,med,hi\n";
  os.precision(12);
  for (const auto& b : bands)
    os << '"' << b.stratum << "\",\"" << b.bin << "\",\"" << b.category << "\"," << b.obs << ',' << b.lo << ','
       << b.med << ',' << b.hi << '\n';
}

}  // namespace saem
