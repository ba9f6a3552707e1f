#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace saem;
using namespace testutil;

TEST(Saem, MatchesClosedFormMleOfRandomInterceptModel) {
  const Dataset ds = lmm_data(200, 5, 10.0, 1.5, 1.0, 0.5, 11);
  const LmmMle mle = lmm_mle(ds);
  SaemOptions o;
  o.seed = 3;
  o.k2 = 300;
  o.chains = 5;
  const Fit f = run_saem(lmm_model(), ds, o);
  EXPECT_NEAR(f.theta.fixed(0), mle.a, 0.01 * std::abs(mle.a));
  EXPECT_NEAR(f.theta.fixed(1), mle.b, 0.01 * std::abs(mle.b));
  EXPECT_NEAR(f.theta.omega(0, 0), mle.tau2, 0.01 * mle.tau2);
  EXPECT_NEAR(f.theta.sigma(0) * f.theta.sigma(0), mle.sigma2, 0.01 * mle.sigma2);
}

TEST(Saem, ZeroIterationsEchoInitialValues) {
  const Dataset ds = lmm_data(20, 4, 10.0, 1.5, 1.0, 0.5, 1);
  SaemOptions o;
  o.k1 = 0;
  o.k2 = 0;
  const ModelSpec m = lmm_model();
  const Fit f = run_saem(m, ds, o);
  EXPECT_DOUBLE_EQ(f.theta.fixed(0), m.psi0(0));
  EXPECT_DOUBLE_EQ(f.theta.fixed(1), m.psi0(1));
  EXPECT_DOUBLE_EQ(f.theta.sigma(0), m.sigma0(0));
  EXPECT_EQ(f.iterations, 0);
}

TEST(Saem, SameSeedSameResult) {
  const Dataset ds = binary_data(60, {0, 1, 2, 4, 6}, -1.0, -0.3, 2.0, 4);
  SaemOptions o;
  o.k1 = 60;
  o.k2 = 30;
  o.chains = 2;
  o.seed = 99;
  const Fit a = run_saem(builtin_model("binary-logistic"), ds, o);
  const Fit b = run_saem(builtin_model("binary-logistic"), ds, o);
  EXPECT_EQ(a.theta.fixed, b.theta.fixed);
  EXPECT_EQ(a.theta.omega, b.theta.omega);
  EXPECT_EQ(a.traces, b.traces);
  // per-subject streams: worker count does not change the draws
  o.threads = 3;
  const Fit c = run_saem(builtin_model("binary-logistic"), ds, o);
  EXPECT_EQ(a.theta.fixed, c.theta.fixed);
  o.seed = 100;
  const Fit d = run_saem(builtin_model("binary-logistic"), ds, o);
  EXPECT_NE(a.theta.fixed, d.theta.fixed);
}

TEST(Saem, StepSizeSchedule) {
  EXPECT_DOUBLE_EQ(step_size(1, 10), 1.0);
  EXPECT_DOUBLE_EQ(step_size(10, 10), 1.0);
  EXPECT_DOUBLE_EQ(step_size(11, 10), 0.5);
  EXPECT_DOUBLE_EQ(step_size(13, 10), 0.25);
}

TEST(Saem, TracesHaveOneRowPerIteration) {
  const Dataset ds = lmm_data(30, 4, 10.0, 1.5, 1.0, 0.5, 2);
  SaemOptions o;
  o.k1 = 20;
  o.k2 = 10;
  const Fit f = run_saem(lmm_model(), ds, o);
  EXPECT_EQ(f.traces.size(), 31u);
  EXPECT_EQ(f.trace_names.size(), f.traces[0].size());
  std::ostringstream os;
  write_traces_csv(os, f);
  EXPECT_NE(os.str().find("intercept"), std::string::npos);
}

TEST(Saem, InitializationErrorWhenLikelihoodIsNotFinite) {
  // every response is 1 but the initial intercept makes P(y=1) underflow
  const Dataset ds = binary_data(10, {0, 1}, 50.0, 0.0, 0.0, 1);
  ModelSpec m = builtin_model("binary-logistic");
  m.psi0 = Eigen::Vector2d(-2000.0, 0.0);
  SaemOptions o;
  o.k1 = 5;
  o.k2 = 0;
  EXPECT_THROW(run_saem(m, ds, o), InitializationError);
}

TEST(Saem, CollinearCovariatesAreDesignError) {
  Dataset ds = lmm_data(20, 3, 1, 1, 1, 1, 5, 0.0, true);
  // grp and a copy of it
  std::vector<Subject> subs = ds.subjects();
  for (auto& s : subs) s.covariates[1] = 2.0 * s.covariates[0];
  ds = Dataset::from_subjects(ds.schema(), ds.outcome(), subs);
  ModelSpec m = lmm_model();
  m.covariates = {"grp", "noise"};
  m.covariate_model = Eigen::MatrixXi::Zero(2, 2);
  m.covariate_model(0, 0) = 1;
  m.covariate_model(1, 0) = 1;
  try {
    run_saem(m, ds, SaemOptions{});
    FAIL() << "expected a design error";
  } catch (const DesignError& e) {
    EXPECT_NE(std::string(e.what()).find("grp"), std::string::npos);
  }
}

TEST(Saem, RecoversCovariateEffect) {
  const Dataset ds = lmm_data(200, 5, 10.0, 1.5, 0.7, 0.5, 21, 2.0, true);
  ModelSpec m = lmm_model();
  m.covariates = {"grp"};
  m.covariate_model = Eigen::MatrixXi::Zero(1, 2);
  m.covariate_model(0, 0) = 1;
  SaemOptions o;
  o.seed = 5;
  const Fit f = run_saem(m, ds, o);
  const auto rep = f.report();
  double beta = 0.0;
  for (const auto& r : rep)
    if (r.name == "beta_grp(intercept)") beta = r.value;
  EXPECT_NEAR(beta, 2.0, 0.3);
}

TEST(Saem, ReportValuesRoundTrip) {
  ModelSpec m = builtin_model("gaussian-1cpt");
  m.error = ErrorKind::combined;
  m.omega_pattern = Eigen::MatrixXi::Ones(3, 3);
  Theta th;
  th.fixed = Eigen::Vector3d(std::log(1.2), std::log(25.0), std::log(2.0));
  th.omega = Eigen::Matrix3d{{0.3, 0.05, 0.01}, {0.05, 0.2, 0.02}, {0.01, 0.02, 0.1}};
  th.sigma = Eigen::Vector2d(0.4, 0.1);
  std::vector<double> v;
  for (const auto& r : report_values(m, th)) v.push_back(r.value);
  const Theta back = theta_from_report(m, v);
  EXPECT_TRUE(back.fixed.isApprox(th.fixed, 1e-12));
  EXPECT_TRUE(back.omega.isApprox(th.omega, 1e-12));
  EXPECT_TRUE(back.sigma.isApprox(th.sigma, 1e-12));
}

TEST(Saem, OneCompartmentModelConverges) {
  // proportional error, log-normal parameters
  Stream rng(make_stream(8, "pk", 0));
  Schema s;
  s.group = "id";
  s.time = "time";
  s.predictors = {"dose", "time"};
  s.response = "y";
  const std::vector<double> times{0.5, 1, 2, 4, 8, 12, 24};
  std::vector<Subject> subs;
  for (int i = 0; i < 60; ++i) {
    Subject sub;
    sub.id = std::to_string(i + 1);
    Eigen::VectorXd psi(3);
    psi << 1.5 * std::exp(0.3 * rng.gauss()), 20.0 * std::exp(0.2 * rng.gauss()), 2.0 * std::exp(0.3 * rng.gauss());
    sub.x.resize(7, 2);
    for (int k = 0; k < 7; ++k) sub.x.row(k) << 100.0, times[static_cast<std::size_t>(k)];
    Eigen::VectorXd f;
    kernels::gaussian_1cpt(psi, sub.x, f);
    sub.y = f.array() * (1.0 + 0.1 * Eigen::VectorXd::NullaryExpr(7, [&] { return rng.gauss(); }).array());
    subs.push_back(sub);
  }
  const Dataset ds = Dataset::from_subjects(s, OutcomeKind::gaussian, subs);
  ModelSpec m = builtin_model("gaussian-1cpt");
  m.error = ErrorKind::proportional;
  m.sigma0 = Eigen::Vector2d(0.0, 0.3);
  SaemOptions o;
  o.seed = 2;
  const Fit f = run_saem(m, ds, o);
  const auto rep = f.report();
  EXPECT_NEAR(rep[0].value, 1.5, 0.3);
  EXPECT_NEAR(rep[1].value, 20.0, 2.0);
  EXPECT_NEAR(rep[2].value, 2.0, 0.3);
  EXPECT_NEAR(f.theta.sigma(1), 0.1, 0.02);
}
