#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace saem;
using namespace testutil;

TEST(Criteria, CountsAndFormulas) {
  ModelSpec m = builtin_model("tte-weibull");
  const auto pc = count_parameters(m);
  // Te and omega_Te at subject level; gamma plus one residual term at observation level
  EXPECT_EQ(pc.subject_level, 2);
  EXPECT_EQ(pc.observation_level, 2);
  const auto r = criteria_from("x", -100.0, "is", pc, 50, 200);
  EXPECT_DOUBLE_EQ(r.aic, 208.0);
  EXPECT_NEAR(r.bic, 200.0 + 4 * std::log(50.0), 1e-12);
  EXPECT_NEAR(r.bicc, 200.0 + 2 * std::log(50.0) + 2 * std::log(200.0), 1e-12);
  ModelSpec g = builtin_model("gaussian-linear");
  g.error = ErrorKind::combined;
  const auto pg = count_parameters(g);
  EXPECT_EQ(pg.subject_level, 4);
  EXPECT_EQ(pg.observation_level, 2);
}

TEST(Moves, CanonicalOrder) {
  ModelSpec m = lmm_model();
  m.covariates = {"grp", "noise"};
  m.covariate_model = Eigen::MatrixXi::Zero(2, 2);
  m.covariate_model(1, 1) = 1;
  const auto moves = enumerate_moves(m, {0, 1}, Direction::both);
  std::vector<std::string> d;
  for (const auto& mv : moves) d.push_back(mv.describe(m));
  const std::vector<std::string> expect{"add grp on intercept", "add noise on intercept", "add IIV on slope",
                                        "add grp on slope",     "remove noise from slope"};
  EXPECT_EQ(d, expect);
  const auto fwd = enumerate_moves(m, {0, 1}, Direction::forward);
  for (const auto& mv : fwd) EXPECT_NE(mv.kind, Move::remove_covariate);
  // the last random effect cannot be removed
  for (const auto& mv : enumerate_moves(m, {0, 1}, Direction::backward)) EXPECT_NE(mv.kind, Move::remove_iiv);
}

TEST(Moves, ApplyTogglesRelations) {
  ModelSpec m = lmm_model();
  m.covariates = {"grp"};
  m.covariate_model = Eigen::MatrixXi::Zero(1, 2);
  const ModelSpec a = apply_move(m, {Move::add_covariate, 0, 0});
  EXPECT_EQ(a.covariate_model(0, 0), 1);
  const ModelSpec b = apply_move(a, {Move::add_iiv, 1, -1});
  EXPECT_TRUE(b.has_iiv(1));
  const ModelSpec c = apply_move(b, {Move::remove_iiv, 0, -1});
  EXPECT_FALSE(c.has_iiv(0));
  EXPECT_TRUE(c.has_iiv(1));
}

TEST(Stepwise, SelectsTheTrueCovariate) {
  const Dataset ds = lmm_data(120, 5, 10.0, 1.5, 0.6, 0.5, 51, 1.5, true);
  SaemOptions so;
  so.k1 = 100;
  so.k2 = 50;
  so.seed = 4;
  const Fit base = run_saem(lmm_model(), ds, so);
  StepwiseOptions opt;
  opt.likelihood.samples = 2000;
  opt.direction = Direction::forward;
  const auto res = stepwise_select(base, {"grp", "noise"}, opt);
  const auto gi = static_cast<Eigen::Index>(
      std::find(res.model.covariates.begin(), res.model.covariates.end(), "grp") - res.model.covariates.begin());
  const auto ni = static_cast<Eigen::Index>(
      std::find(res.model.covariates.begin(), res.model.covariates.end(), "noise") - res.model.covariates.begin());
  EXPECT_EQ(res.model.covariate_model(gi, 0), 1);
  EXPECT_EQ(res.model.covariate_model(ni, 0), 0);
  EXPECT_EQ(res.model.covariate_model(ni, 1), 0);
  EXPECT_FALSE(res.log.empty());
  std::ostringstream os;
  write_step_log_csv(os, res.log);
  EXPECT_NE(os.str().find("add grp on intercept"), std::string::npos);
}

TEST(Stepwise, UnknownCandidateIsSchemaError) {
  const Dataset ds = lmm_data(10, 3, 10.0, 1.5, 0.6, 0.5, 51);
  const Fit base = fit_at(lmm_model(), ds, lmm_theta(10, 1.5, 0.36, 0.5));
  EXPECT_THROW(stepwise_select(base, {"weight"}, StepwiseOptions{}), SchemaError);
}
