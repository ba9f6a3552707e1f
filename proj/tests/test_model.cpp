#include <gtest/gtest.h>

#include <sstream>

#include "helpers.hpp"

using namespace saem;
using namespace testutil;

TEST(Transforms, RoundTrip) {
  std::mt19937_64 g(1);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int k = 0; k < 1000; ++k) {
    const double phi = n(g);
    for (auto t : {Transform::identity, Transform::log, Transform::logit})
      EXPECT_NEAR(to_gaussian(to_natural(phi, t), t), phi, 1e-9 * std::max(1.0, std::abs(phi)));
  }
  EXPECT_NEAR(to_natural(0.0, Transform::logit), 0.5, 1e-15);
  EXPECT_NEAR(to_natural(std::log(3.0), Transform::log), 3.0, 1e-15);
}

TEST(ErrorModel, StandardDeviations) {
  const Eigen::Vector2d s(0.5, 0.2);
  EXPECT_DOUBLE_EQ(error_model_sd(10.0, ErrorKind::constant, s), 0.5);
  EXPECT_DOUBLE_EQ(error_model_sd(10.0, ErrorKind::proportional, s), 2.0);
  EXPECT_NEAR(error_model_sd(10.0, ErrorKind::combined, s), std::sqrt(0.25 + 4.0), 1e-12);
  EXPECT_THROW(error_model_sd(1.0, ErrorKind::constant, Eigen::Vector2d(-1, 0)), ModelError);
  EXPECT_EQ(error_param_count(ErrorKind::combined), 2);
  EXPECT_EQ(error_param_count(ErrorKind::exponential), 1);
}

TEST(ErrorModel, GaussianRowLoglikIsNormalDensity) {
  const Eigen::Vector2d s(0.7, 0.0);
  const double y = 1.3, f = 0.9;
  const double expect = -0.5 * kLog2Pi - std::log(0.7) - 0.5 * std::pow((y - f) / 0.7, 2);
  EXPECT_NEAR(gaussian_row_loglik(y, f, ErrorKind::constant, s), expect, 1e-12);
}

class HazardFamilies : public ::testing::TestWithParam<Family> {};

TEST_P(HazardFamilies, CumulativeIsIntegralOfHazard) {
  const Hazard h(GetParam(), 10.0, 1.7);
  // composite Simpson on [1e-9, t]; the integrable singularity at 0 is avoided by the shape > 1
  for (double t : {0.5, 3.0, 10.0, 25.0}) {
    const int n = 20000;
    const double a = 0.0, w = (t - a) / n;
    double s = 0.0;
    for (int k = 0; k <= n; ++k) {
      const double x = std::max(a + k * w, 1e-12);
      const double c = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
      s += c * h.hazard(x);
    }
    s *= w / 3.0;
    EXPECT_NEAR(s, h.cumulative(t), 1e-6 * std::max(1.0, h.cumulative(t))) << to_string(GetParam()) << " t=" << t;
  }
}

TEST_P(HazardFamilies, InverseSurvivalRoundTrip) {
  const Hazard h(GetParam(), 10.0, 1.7);
  for (double p : {0.95, 0.7, 0.5, 0.3, 0.6}) {
    const double t = h.inverse_survival(p);
    if (std::isinf(t)) continue;
    EXPECT_NEAR(h.survival(t), p, 1e-8) << to_string(GetParam());
  }
}

INSTANTIATE_TEST_SUITE_P(All, HazardFamilies,
                         ::testing::Values(Family::exponential, Family::weibull, Family::gompertz, Family::gamma,
                                           Family::loglogistic),
                         [](const auto& info) { return to_string(info.param); });

TEST(Hazard, MedianConventions) {
  // Te is the median for Gompertz and log-logistic
  EXPECT_NEAR(Hazard(Family::gompertz, 400.0, 0.3).survival(400.0), 0.5, 1e-12);
  EXPECT_NEAR(Hazard(Family::loglogistic, 400.0, 1.6).survival(400.0), 0.5, 1e-12);
  EXPECT_NEAR(Hazard(Family::weibull, 400.0, 1.6).survival(400.0), std::exp(-1.0), 1e-12);
  EXPECT_NEAR(Hazard(Family::exponential, 400.0).survival(400.0), std::exp(-1.0), 1e-12);
  EXPECT_THROW(Hazard(Family::gamma, 10, 2).inverse_survival_closed(0.5), UnsupportedError);
  // gamma: bounded cumulative hazard, so some survival levels are never reached
  EXPECT_TRUE(std::isinf(Hazard(Family::gamma, 10, 2).inverse_survival(0.2)));
  EXPECT_THROW(Hazard(Family::weibull, -1, 1), ModelError);
}

namespace {

double total_prob(const ModelSpec& m, const Eigen::VectorXd& psi, double t, const std::vector<double>& ys) {
  double s = 0.0;
  for (double y : ys) {
    Eigen::MatrixXd x(1, 2);
    x << t, y;
    Eigen::VectorXd ll;
    m.loglik(psi, x, ll);
    s += std::exp(ll(0));
  }
  return s;
}

std::vector<double> range(int a, int b) {
  std::vector<double> v;
  for (int k = a; k <= b; ++k) v.push_back(k);
  return v;
}

}  // namespace

TEST(Builtins, DiscreteLikelihoodsNormalize) {
  for (double t : {0.0, 1.5, 7.0}) {
    EXPECT_NEAR(total_prob(builtin_model("binary-logistic"), Eigen::Vector2d(-0.3, 0.4), t, {0, 1}), 1.0, 1e-12);
    Eigen::VectorXd po(5);
    po << 0.5, 0.3, 0.8, 1.1, -0.2;
    EXPECT_NEAR(total_prob(builtin_model("ordinal-po5"), po, t, range(1, 5)), 1.0, 1e-12);
    EXPECT_NEAR(total_prob(builtin_model("poisson-lin"), Eigen::Vector2d(1.2, 0.1), t, range(0, 300)), 1.0, 1e-10);
    EXPECT_NEAR(total_prob(builtin_model("truncpoisson-lin"), Eigen::Vector2d(1.2, 0.1), t, range(1, 300)), 1.0, 1e-10);
    EXPECT_NEAR(total_prob(builtin_model("zip-lin"), Eigen::Vector3d(1.2, 0.1, 0.15), t, range(0, 300)), 1.0, 1e-10);
  }
}

TEST(Builtins, TruncatedPoissonRejectsZero) {
  Eigen::MatrixXd x(1, 2);
  x << 0, 0;
  Eigen::VectorXd ll;
  EXPECT_THROW(builtin_model("truncpoisson-lin").loglik(Eigen::Vector2d(1, 0), x, ll), ModelError);
}

TEST(Builtins, TteLikelihoodTerms) {
  const ModelSpec m = builtin_model("tte-weibull");
  const Hazard h(Family::weibull, 300.0, 1.4);
  Eigen::MatrixXd ev(2, 3), ce(2, 3);
  ev << 0, 0, 0, 200, 1, 0;
  ce << 0, 0, 0, 200, 0, 1;
  Eigen::VectorXd ll;
  m.loglik(Eigen::Vector2d(300.0, 1.4), ev, ll);
  EXPECT_NEAR(ll.sum(), h.log_hazard(200) - h.cumulative(200), 1e-12);
  m.loglik(Eigen::Vector2d(300.0, 1.4), ce, ll);
  EXPECT_NEAR(ll.sum(), -h.cumulative(200), 1e-12);
}

TEST(Builtins, RegistryModelsValidate) {
  for (const auto& name : builtin_names()) {
    const ModelSpec m = builtin_model(name);
    EXPECT_NO_THROW(m.validate()) << name;
    EXPECT_EQ(m.psi0.size(), m.n_params()) << name;
  }
  EXPECT_THROW(builtin_model("no-such-model"), ModelError);
}

TEST(Model, CovariateLayoutAndDesign) {
  ModelSpec m = lmm_model();
  m.covariates = {"grp", "noise"};
  m.covariate_model = Eigen::MatrixXi::Zero(2, 2);
  m.covariate_model(0, 0) = 1;
  m.covariate_model(1, 1) = 1;
  const auto layout = m.fixed_layout();
  ASSERT_EQ(layout.size(), 4u);
  EXPECT_EQ(m.fixed_name(layout[1]), "beta_grp(intercept)");
  const Dataset ds = lmm_data(4, 3, 0, 0, 1, 1, 1, 1.0);
  m.validate_against(ds);
  const auto d = subject_design(m, ds, ds.subject(1));
  EXPECT_EQ(d.rows(), 2);
  EXPECT_EQ(d.cols(), 4);
  EXPECT_DOUBLE_EQ(d(0, 1), ds.subject(1).covariates[0]);
}

TEST(Model, UnknownCovariateIsSchemaError) {
  ModelSpec m = lmm_model();
  m.covariates = {"weight"};
  m.covariate_model = Eigen::MatrixXi::Ones(1, 2);
  const Dataset ds = lmm_data(4, 3, 0, 0, 1, 1, 1);
  EXPECT_THROW(m.validate_against(ds), SchemaError);
}

TEST(Config, ParsesBlocksAndOptions) {
  std::istringstream in(
      "# comment\nmodel = tte-weibull\ncovariates = sex ecog23\npsi0 = 400 1.3\nk1 = 50\n"
      "covariate_model\n1 0\n0 0\nend\ncovariance\n1 0\n0 1\nend\n");
  const ModelConfig cfg = parse_config(in);
  EXPECT_EQ(cfg.options.at("k1"), "50");
  const ModelSpec m = build_model(cfg);
  EXPECT_EQ(m.covariates.size(), 2u);
  EXPECT_EQ(m.covariate_model(0, 0), 1);
  EXPECT_TRUE(m.has_iiv(1));
  EXPECT_DOUBLE_EQ(m.psi0(0), 400.0);
  std::istringstream bad("model = tte-weibull\ncovariance\n1 0\n");
  EXPECT_THROW(parse_config(bad), ConfigError);
  std::istringstream wrong("model = tte-weibull\npsi0 = 1 2 3\n");
  EXPECT_THROW(build_model(parse_config(wrong)), ConfigError);
}
