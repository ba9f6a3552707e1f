#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saem.hpp"

namespace testutil {

using namespace saem;

inline Schema linear_schema() {
  Schema s;
  s.group = "id";
  s.time = "time";
  s.predictors = {"time"};
  s.response = "y";
  return s;
}

/// Balanced random-intercept data y_ij = a + b t_j + u_i + e_ij, t_j = 0..n-1.
/// An optional subject covariate shifts the intercept by `effect`.
inline Dataset lmm_data(int N, int n, double a, double b, double tau, double sigma, std::uint64_t seed,
                        double effect = 0.0, bool with_noise_cov = false) {
  Stream rng(make_stream(seed, "lmm-data", 0));
  Schema sch = linear_schema();
  if (effect != 0.0 || with_noise_cov) sch.covariates = {"grp", "noise"};
  std::vector<Subject> subjects;
  for (int i = 0; i < N; ++i) {
    Subject s;
    s.id = std::to_string(i + 1);
    const double g = i % 2;
    const double noise = rng.gauss();
    if (!sch.covariates.empty()) s.covariates = {g, noise};
    const double u = tau * rng.gauss() + effect * g;
    s.x.resize(n, 1);
    s.y.resize(n);
    for (int t = 0; t < n; ++t) {
      s.x(t, 0) = t;
      s.y(t) = a + b * t + u + sigma * rng.gauss();
    }
    subjects.push_back(std::move(s));
  }
  return Dataset::from_subjects(sch, OutcomeKind::gaussian, std::move(subjects));
}

/// Random intercept, fixed slope.
inline ModelSpec lmm_model() {
  ModelSpec m = builtin_model("gaussian-linear");
  m.omega_pattern = pattern_diag({1, 0});
  return m;
}

struct LmmMle {
  double a, b, tau2, sigma2;
};

/// Closed-form maximum likelihood for the balanced random-intercept model:
/// within-subject contrasts carry b and sigma^2, subject means carry the rest.
inline LmmMle lmm_mle(const Dataset& ds) {
  const auto N = static_cast<double>(ds.n_subjects());
  const auto n = ds.subject(0).n_rows();
  const Eigen::VectorXd t = ds.subject(0).x.col(0);
  const double tbar = t.mean();
  const double stt = (t.array() - tbar).square().sum();
  double sty = 0.0;
  std::vector<double> means;
  for (const auto& s : ds.subjects()) {
    const double yb = s.y.mean();
    means.push_back(yb);
    sty += ((t.array() - tbar) * (s.y.array() - yb)).sum();
  }
  const double b = sty / (N * stt);
  double ssw = 0.0;
  for (const auto& s : ds.subjects()) {
    const double yb = s.y.mean();
    ssw += ((s.y.array() - yb) - b * (t.array() - tbar)).square().sum();
  }
  const double sigma2 = ssw / (N * static_cast<double>(n - 1));
  double grand = 0.0;
  for (double m : means) grand += m;
  grand /= N;
  double v = 0.0;
  for (double m : means) v += (m - grand) * (m - grand);
  v /= N;
  return {grand - b * tbar, b, v - sigma2 / static_cast<double>(n), sigma2};
}

/// Exact marginal log-likelihood of one subject under the random-intercept model.
inline double lmm_subject_loglik(const Subject& s, double a, double b, double tau2, double sigma2) {
  const auto n = s.n_rows();
  Eigen::MatrixXd V = Eigen::MatrixXd::Constant(n, n, tau2);
  V.diagonal().array() += sigma2;
  const Eigen::VectorXd r = s.y - (Eigen::VectorXd::Constant(n, a) + b * s.x.col(0));
  Eigen::LLT<Eigen::MatrixXd> llt(V);
  const Eigen::MatrixXd L = llt.matrixL();
  return -0.5 * (static_cast<double>(n) * kLog2Pi + 2.0 * L.diagonal().array().log().sum() + r.dot(llt.solve(r)));
}

inline double lmm_loglik(const Dataset& ds, double a, double b, double tau2, double sigma2) {
  double ll = 0.0;
  for (const auto& s : ds.subjects()) ll += lmm_subject_loglik(s, a, b, tau2, sigma2);
  return ll;
}

/// Fit object holding given parameters, without running the algorithm.
inline Fit fit_at(const ModelSpec& m, const Dataset& ds, const Theta& th) {
  Fit f;
  f.model = m;
  f.data = ds;
  f.theta = th;
  f.initial = th;
  return f;
}

inline Theta lmm_theta(double a, double b, double tau2, double sigma) {
  Theta th;
  th.fixed = Eigen::Vector2d(a, b);
  th.omega = Eigen::MatrixXd::Zero(2, 2);
  th.omega(0, 0) = tau2;
  th.sigma = Eigen::Vector2d(sigma, 0.0);
  return th;
}

/// Logistic random-intercept data on the binary-logistic predictors.
inline Dataset binary_data(int N, const std::vector<double>& times, double th1, double th2, double omega,
                           std::uint64_t seed) {
  Stream rng(make_stream(seed, "binary-data", 0));
  Schema sch;
  sch.group = "id";
  sch.time = "time";
  sch.predictors = {"time", "y"};
  sch.response = "y";
  std::vector<Subject> subjects;
  const auto T = static_cast<Eigen::Index>(times.size());
  for (int i = 0; i < N; ++i) {
    Subject s;
    s.id = std::to_string(i + 1);
    const double e = omega * rng.gauss();
    s.x.resize(T, 2);
    s.y.resize(T);
    for (Eigen::Index r = 0; r < T; ++r) {
      s.x(r, 0) = times[static_cast<std::size_t>(r)];
      s.y(r) = rng.unif() < inv_logit(th1 + e + th2 * s.x(r, 0)) ? 1.0 : 0.0;
      s.x(r, 1) = s.y(r);
    }
    subjects.push_back(std::move(s));
  }
  return Dataset::from_subjects(sch, OutcomeKind::binary, std::move(subjects));
}

/// Single-event survival data with lognormal variability on Te and
/// administrative censoring at `cutoff`.
inline Dataset tte_data(Family f, int N, double te, double shape, double omega, double cutoff, std::uint64_t seed) {
  Stream rng(make_stream(seed, "tte-data", 0));
  Schema sch;
  sch.group = "id";
  sch.time = "time";
  sch.predictors = {"time", "status", "cens"};
  sch.response = "status";
  sch.censoring = "cens";
  std::vector<Subject> subjects;
  for (int i = 0; i < N; ++i) {
    Subject s;
    s.id = std::to_string(i + 1);
    const Hazard h(f, te * std::exp(omega * rng.gauss()), shape);
    double t = h.inverse_survival(rng.unif_open());
    const bool cens = !(t <= cutoff);
    if (cens) t = cutoff;
    s.x.resize(2, 3);
    s.x << 0, 0, 0, t, cens ? 0 : 1, cens ? 1 : 0;
    s.y = s.x.col(1);
    subjects.push_back(std::move(s));
  }
  return Dataset::from_subjects(sch, OutcomeKind::tte, std::move(subjects));
}

/// Scratch directory under the system temp dir, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("saem_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
  return p.string();
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
