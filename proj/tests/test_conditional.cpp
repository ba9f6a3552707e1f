#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace saem;
using namespace testutil;

namespace {

// normal prior on the intercept times a normal likelihood with known slope
void conjugate(const Subject& s, double a, double b, double tau2, double sigma2, double& mean, double& sd) {
  const double n = static_cast<double>(s.n_rows());
  const double prec = 1.0 / tau2 + n / sigma2;
  const double sum = (s.y - b * s.x.col(0)).sum();
  mean = (a / tau2 + sum / sigma2) / prec;
  sd = 1.0 / std::sqrt(prec);
}

}  // namespace

TEST(Conditional, MatchesConjugateNormalPosterior) {
  const Dataset ds = lmm_data(50, 4, 10.0, 1.5, 1.0, 0.8, 23);
  const Fit f = fit_at(lmm_model(), ds, lmm_theta(10.0, 1.5, 1.0, 0.8));
  ConditionalOptions o;
  o.tol = 1e-4;
  o.seed = 6;
  const auto ce = estimate_conditional(f, o);
  // a single subject's MCMC SD carries a few percent of Monte Carlo error, so
  // the SD criterion is on the average relative error over subjects
  double sd_err = 0.0;
  for (std::size_t i = 0; i < ds.n_subjects(); ++i) {
    double mean = 0, sd = 0;
    conjugate(ds.subject(i), 10.0, 1.5, 1.0, 0.64, mean, sd);
    const auto ii = static_cast<Eigen::Index>(i);
    EXPECT_NEAR(ce.mean(ii, 0), mean, 0.02 * std::abs(mean)) << "subject " << i;
    EXPECT_NEAR(ce.sd(ii, 0), sd, 0.10 * sd) << "subject " << i;
    sd_err += std::abs(ce.sd(ii, 0) - sd) / sd;
    // Gaussian posterior: mode equals mean
    EXPECT_NEAR(ce.map(ii, 0), mean, 1e-4) << "subject " << i;
    // parameter without random effect stays at the population value
    EXPECT_DOUBLE_EQ(ce.mean(ii, 1), 1.5);
    EXPECT_DOUBLE_EQ(ce.sd(ii, 1), 0.0);
  }
  EXPECT_LT(sd_err / static_cast<double>(ds.n_subjects()), 0.02);
  EXPECT_TRUE(ce.converged);
}

TEST(Conditional, ShrinkageDefinition) {
  const Dataset ds = lmm_data(40, 3, 10.0, 1.5, 1.0, 2.0, 29);
  const Fit f = fit_at(lmm_model(), ds, lmm_theta(10.0, 1.5, 1.0, 2.0));
  ConditionalOptions o;
  o.seed = 3;
  const auto ce = estimate_conditional(f, o);
  std::vector<double> eta;
  for (Eigen::Index i = 0; i < ce.mean.rows(); ++i) eta.push_back(ce.mean(i, 0) - 10.0);
  const double expect = 1.0 - std::pow(sd_of(eta), 2) / 1.0;
  EXPECT_NEAR(ce.shrinkage(0), expect, 1e-12);
  EXPECT_TRUE(std::isnan(ce.shrinkage(1)));
  // sparse data and large residual error: substantial shrinkage
  EXPECT_GT(ce.shrinkage(0), 0.3);
}

TEST(Conditional, DeterministicAcrossThreadCounts) {
  const Dataset ds = binary_data(30, {0, 1, 2, 4}, -0.5, -0.3, 1.5, 2);
  Theta th;
  th.fixed = Eigen::Vector2d(-0.5, -0.3);
  th.omega = Eigen::MatrixXd::Zero(2, 2);
  th.omega(0, 0) = 2.25;
  const Fit f = fit_at(builtin_model("binary-logistic"), ds, th);
  ConditionalOptions o;
  o.seed = 1;
  const auto a = estimate_conditional(f, o);
  o.threads = 4;
  const auto b = estimate_conditional(f, o);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.sd, b.sd);
  std::ostringstream os;
  write_conditional_csv(os, f, a);
  EXPECT_NE(os.str().find("theta1"), std::string::npos);
}

TEST(Conditional, NonConvergenceIsReported) {
  const Dataset ds = lmm_data(5, 4, 10.0, 1.5, 1.0, 0.8, 23);
  const Fit f = fit_at(lmm_model(), ds, lmm_theta(10.0, 1.5, 1.0, 0.8));
  ConditionalOptions o;
  o.tol = 1e-9;
  o.max_batches = 3;
  const auto ce = estimate_conditional(f, o);
  EXPECT_FALSE(ce.converged);
  EXPECT_FALSE(ce.warnings.empty());
}
