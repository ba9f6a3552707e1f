#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace saem;
using namespace testutil;

namespace {

struct LmmCase {
  Dataset ds = lmm_data(40, 5, 10.0, 1.5, 1.0, 0.5, 17);
  ModelSpec m = lmm_model();
  Theta th = lmm_theta(9.8, 1.55, 0.8, 0.55);
  Fit fit = fit_at(m, ds, th);
  double exact = lmm_loglik(ds, 9.8, 1.55, 0.8, 0.55 * 0.55);
};

ConditionalEstimates conditional(const Fit& f) {
  ConditionalOptions o;
  o.seed = 4;
  return estimate_conditional(f, o);
}

}  // namespace

TEST(Likelihood, ImportanceSamplingMatchesAnalytic) {
  LmmCase c;
  const auto ce = conditional(c.fit);
  LikelihoodOptions lo;
  lo.seed = 8;
  const auto is = ll_importance_sampling(c.fit, ce, lo);
  ASSERT_GT(is.mc_se, 0.0);
  EXPECT_LT(std::abs(is.total - c.exact), 3.0 * is.mc_se + 1e-6) << "mc se " << is.mc_se;
  EXPECT_EQ(is.per_subject.size(), c.ds.n_subjects());
}

TEST(Likelihood, QuadratureMatchesAnalytic) {
  LmmCase c;
  const auto ce = conditional(c.fit);
  const auto gq = ll_gauss_hermite(c.fit, ce);
  EXPECT_NEAR(gq.total, c.exact, 1e-4);
}

TEST(Likelihood, LinearisationIsExactForLinearModel) {
  LmmCase c;
  const auto ce = conditional(c.fit);
  EXPECT_NEAR(ll_linearized(c.fit, ce).total, c.exact, 1e-6);
}

TEST(Likelihood, QuadratureMatchesTrapezoidForBinaryModel) {
  const Dataset ds = binary_data(10, {0, 1, 2, 3, 6}, -0.8, -0.3, 1.5, 3);
  const ModelSpec m = builtin_model("binary-logistic");
  Theta th;
  th.fixed = Eigen::Vector2d(-0.8, -0.3);
  th.omega = Eigen::MatrixXd::Zero(2, 2);
  th.omega(0, 0) = 2.25;
  const Fit f = fit_at(m, ds, th);
  const auto ce = conditional(f);
  LikelihoodOptions lo;
  lo.nodes = 20;
  const auto gq = ll_gauss_hermite(f, ce, lo);
  for (std::size_t i = 0; i < ds.n_subjects(); ++i) {
    // trapezoid over the random intercept on a wide grid
    const double w = 1.5;
    const int n = 4000;
    const double lo_e = -10 * w, hi_e = 10 * w, h = (hi_e - lo_e) / n;
    double s = 0.0;
    for (int k = 0; k <= n; ++k) {
      const double e = lo_e + k * h;
      const double dens = std::exp(-0.5 * e * e / 2.25) / std::sqrt(2 * M_PI * 2.25);
      const double lik = std::exp(subject_loglik(m, Eigen::Vector2d(-0.8 + e, -0.3), ds.subject(i), th.sigma));
      s += (k == 0 || k == n ? 0.5 : 1.0) * dens * lik;
    }
    EXPECT_NEAR(gq.per_subject[i], std::log(s * h), 1e-6) << "subject " << i;
  }
}

TEST(Likelihood, ImportanceSamplingAgreesWithQuadratureOnBinaryModel) {
  const Dataset ds = binary_data(50, {0, 1, 2, 3, 6}, -0.8, -0.3, 1.5, 5);
  const ModelSpec m = builtin_model("binary-logistic");
  Theta th;
  th.fixed = Eigen::Vector2d(-0.8, -0.3);
  th.omega = Eigen::MatrixXd::Zero(2, 2);
  th.omega(0, 0) = 2.25;
  const Fit f = fit_at(m, ds, th);
  const auto ce = conditional(f);
  const auto gq = ll_gauss_hermite(f, ce);
  const auto is = ll_importance_sampling(f, ce);
  EXPECT_LT(std::abs(is.total - gq.total), 3.0 * is.mc_se + 1e-3);
}

TEST(Likelihood, QuadratureLimitedToFourDimensions) {
  ModelSpec m = builtin_model("ordinal-po5");
  m.omega_pattern = pattern_diag({1, 1, 1, 1, 1});
  Schema s;
  s.group = "id";
  s.time = "time";
  s.predictors = {"time", "y"};
  s.response = "y";
  Subject sub;
  sub.id = "1";
  sub.x.resize(2, 2);
  sub.x << 0, 1, 1, 2;
  sub.y = sub.x.col(1);
  const Dataset ds = Dataset::from_subjects(s, OutcomeKind::categorical, {sub});
  Theta th;
  th.fixed = transform_to_gaussian(m.psi0, m.transforms);
  th.omega = Eigen::MatrixXd::Identity(5, 5) * 0.1;
  const Fit f = fit_at(m, ds, th);
  ConditionalEstimates ce;
  ce.mean = th.fixed.transpose();
  ce.sd = Eigen::MatrixXd::Constant(1, 5, 0.3);
  EXPECT_THROW(ll_gauss_hermite(f, ce), UnsupportedError);
}

TEST(Likelihood, LinearisationRefusesNonGaussian) {
  const Dataset ds = binary_data(5, {0, 1}, 0, 0, 1, 1);
  Theta th;
  th.fixed = Eigen::Vector2d(0, 0);
  th.omega = Eigen::MatrixXd::Zero(2, 2);
  th.omega(0, 0) = 1;
  const Fit f = fit_at(builtin_model("binary-logistic"), ds, th);
  EXPECT_THROW(ll_linearized(f, conditional(f)), UnsupportedError);
}
