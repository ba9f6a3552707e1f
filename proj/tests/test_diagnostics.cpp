#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace saem;
using namespace testutil;

class TteKs : public ::testing::TestWithParam<Family> {};

TEST_P(TteKs, SimulatedTimesFollowClosedFormSurvival) {
  const Family f = GetParam();
  const ModelSpec m = builtin_model("tte-" + to_string(f));
  Eigen::VectorXd psi(m.n_params());
  psi(0) = 300.0;
  if (psi.size() > 1) psi(1) = 1.4;
  const Hazard h = kernels::tte_hazard(f, psi);
  Eigen::MatrixXd x(2, 3);
  x << 0, 0, 0, 1, 0, 0;
  SimContext ctx;
  ctx.max_followup = std::numeric_limits<double>::infinity();
  Stream rng(make_stream(77, "ks", static_cast<std::uint64_t>(f)));
  std::vector<double> t(100000);
  for (auto& v : t) v = m.simulate(psi, x, rng, ctx).time;
  const double d = ks_distance(t, [&](double s) { return 1.0 - h.survival(s); });
  EXPECT_LT(d, 0.01) << to_string(f);
}

INSTANTIATE_TEST_SUITE_P(All, TteKs,
                         ::testing::Values(Family::exponential, Family::weibull, Family::gompertz, Family::gamma,
                                           Family::loglogistic),
                         [](const auto& info) { return to_string(info.param); });

TEST(Simulate, ReproducibleAndThreadIndependent) {
  const Dataset ds = binary_data(20, {0, 1, 2}, -0.5, -0.2, 1.0, 1);
  Theta th;
  th.fixed = Eigen::Vector2d(-0.5, -0.2);
  th.omega = Eigen::MatrixXd::Zero(2, 2);
  th.omega(0, 0) = 1.0;
  const Fit f = fit_at(builtin_model("binary-logistic"), ds, th);
  const auto a = simulate_from_fit(f, 10, 5, 1);
  const auto b = simulate_from_fit(f, 10, 5, 4);
  ASSERT_EQ(a.y.size(), 10u);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t i = 0; i < ds.n_subjects(); ++i) EXPECT_EQ(a.y[r][i], b.y[r][i]);
  std::ostringstream os;
  write_simulations_csv(os, a, ds);
  const std::string csv = os.str();
  EXPECT_GT(std::count(csv.begin(), csv.end(), '\n'), 10 * 20 * 3);
}

TEST(Vpc, KaplanMeierBandFollowsMarginalSurvival) {
  const double te = 10.0, shape = 1.5, om = 0.3, cutoff = 20.0;
  const Dataset ds = tte_data(Family::weibull, 200, te, shape, om, cutoff, 12);
  Theta th;
  th.fixed = Eigen::Vector2d(std::log(te), std::log(shape));
  th.omega = Eigen::MatrixXd::Zero(2, 2);
  th.omega(0, 0) = om * om;
  const Fit f = fit_at(builtin_model("tte-weibull"), ds, th);
  const auto sims = simulate_from_fit(f, 500, 3);
  const auto bands = compute_vpc(sims, ds);
  const auto [x, w] = gauss_hermite(30);
  auto marginal = [&](double t) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k)
      s += w(k) / std::sqrt(M_PI) * Hazard(Family::weibull, te * std::exp(std::sqrt(2.0) * om * x(k)), shape).survival(t);
    return s;
  };
  int inside = 0;
  ASSERT_GT(bands.size(), 20u);
  for (const auto& b : bands) {
    EXPECT_EQ(b.category, "survival");
    const double t = std::stod(b.bin);
    EXPECT_NEAR(b.med, marginal(t), 0.01) << "t=" << t;
    inside += b.obs >= b.lo && b.obs <= b.hi;
  }
  EXPECT_GE(inside, static_cast<int>(0.9 * bands.size()));
}

TEST(Vpc, BinaryProportionBandsCoverMarginalProbability) {
  const std::vector<double> times{0, 1, 2, 4, 8};
  const double th1 = -0.5, th2 = -0.25, om = 1.2;
  const Dataset ds = binary_data(150, times, th1, th2, om, 21);
  Theta th;
  th.fixed = Eigen::Vector2d(th1, th2);
  th.omega = Eigen::MatrixXd::Zero(2, 2);
  th.omega(0, 0) = om * om;
  const Fit f = fit_at(builtin_model("binary-logistic"), ds, th);
  const auto sims = simulate_from_fit(f, 400, 9);
  std::vector<std::string> warnings;
  const auto bands = compute_vpc(sims, ds, {}, &warnings);
  const auto [x, w] = gauss_hermite(30);
  ASSERT_EQ(bands.size(), times.size() * 2);
  for (const auto& b : bands) {
    if (b.category != "1") continue;
    const double t = std::stod(b.bin);
    double p = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) p += w(k) / std::sqrt(M_PI) * inv_logit(th1 + std::sqrt(2.0) * om * x(k) + th2 * t);
    EXPECT_NEAR(b.med, p, 0.02) << "t=" << t;
    EXPECT_LE(b.lo, b.med);
    EXPECT_LE(b.med, b.hi);
  }
  std::ostringstream os;
  write_vpc_csv(os, bands);
  EXPECT_EQ(os.str().substr(0, 7), "stratum");
}

TEST(Vpc, MismatchedSimulationsAreDesignError) {
  const Dataset ds = binary_data(10, {0, 1}, 0, 0, 1, 1);
  SimulationTable t;
  t.nsim = 3;
  t.outcome = OutcomeKind::tte;
  EXPECT_THROW(compute_vpc(t, ds), DesignError);
}

TEST(Explore, StratifiedProportions) {
  Schema s;
  s.group = "id";
  s.time = "time";
  s.predictors = {"time", "y"};
  s.response = "y";
  s.covariates = {"trt"};
  std::vector<Subject> subs;
  for (int i = 0; i < 8; ++i) {
    Subject sub;
    sub.id = std::to_string(i);
    sub.covariates = {static_cast<double>(i % 2)};
    sub.x.resize(2, 2);
    sub.x << 0, (i % 2), 1, (i < 4 ? 1 : 0);
    sub.y = sub.x.col(1);
    subs.push_back(sub);
  }
  const Dataset ds = Dataset::from_subjects(s, OutcomeKind::binary, subs);
  const auto rows = summarize_discrete(ds, std::nullopt, "trt");
  for (const auto& r : rows)
    if (r.stratum == "trt=1" && r.bin == "0" && r.category == "1") EXPECT_DOUBLE_EQ(r.prop, 1.0);
}
