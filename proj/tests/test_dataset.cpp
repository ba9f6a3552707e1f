#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "helpers.hpp"

using namespace saem;
using namespace testutil;

namespace {

Schema lung_schema() {
  ModelConfig cfg;
  cfg.model = "tte-weibull";
  cfg.schema.covariates = {"sex", "ecog23", "ph_karno"};
  return resolved_schema(cfg);
}

Schema count_schema() {
  Schema s;
  s.group = "id";
  s.time = "time";
  s.predictors = {"time", "y"};
  s.response = "y";
  s.covariates = {"dose"};
  return s;
}

}  // namespace

TEST(Dataset, LoadsLung) {
  const Dataset ds = load_dataset(std::string(SAEM_DATA_DIR) + "/lung.csv", lung_schema(), OutcomeKind::tte);
  EXPECT_EQ(ds.n_subjects(), 225u);
  EXPECT_EQ(ds.n_observations(), 450u);
  EXPECT_EQ(ds.censor_column(), 2);
  for (const auto& s : ds.subjects()) {
    EXPECT_EQ(s.x(0, 0), 0.0);
    EXPECT_GT(s.x(1, 0), 0.0);
  }
}

TEST(Dataset, DropsRowsWithMissingResponse) {
  const auto dir = scratch_dir("ds_missing");
  const auto path = write_file(dir / "d.csv", "id,time,y,dose\n1,0,1,5\n1,1,NA,5\n1,2,0,5\n2,0,3,7\n2,1,.,7\n");
  const Dataset ds = load_dataset(path, count_schema(), OutcomeKind::count);
  EXPECT_EQ(ds.n_observations(), 3u);
  EXPECT_FALSE(ds.warnings().empty());
}

TEST(Dataset, RejectsNonNumericAndMissingColumns) {
  const auto dir = scratch_dir("ds_bad");
  const auto bad = write_file(dir / "bad.csv", "id,time,y,dose\n1,0,abc,5\n");
  EXPECT_THROW(load_dataset(bad, count_schema(), OutcomeKind::count), ValidationError);
  const auto nocol = write_file(dir / "nocol.csv", "id,time,y\n1,0,1\n");
  EXPECT_THROW(load_dataset(nocol, count_schema(), OutcomeKind::count), SchemaError);
  const auto varying = write_file(dir / "vary.csv", "id,time,y,dose\n1,0,1,5\n1,1,1,6\n");
  EXPECT_THROW(load_dataset(varying, count_schema(), OutcomeKind::count), ValidationError);
}

TEST(Dataset, BinaryResponsesMustBeZeroOne) {
  const auto dir = scratch_dir("ds_bin");
  const auto path = write_file(dir / "b.csv", "id,time,y,dose\n1,0,1,5\n1,1,2,5\n");
  EXPECT_THROW(load_dataset(path, count_schema(), OutcomeKind::binary), ValidationError);
}

TEST(Dataset, TteNeedsTimeZeroRow) {
  const auto dir = scratch_dir("ds_tte");
  const auto path = write_file(dir / "t.csv", "id,time,status,cens\n1,5,1,0\n");
  Schema s = lung_schema();
  s.covariates.clear();
  EXPECT_THROW(load_dataset(path, s, OutcomeKind::tte), ValidationError);
}

TEST(Dataset, DiscreteOutcomeNeedsResponseAmongPredictors) {
  Schema s = count_schema();
  s.predictors = {"time"};
  const auto dir = scratch_dir("ds_resp");
  const auto path = write_file(dir / "r.csv", "id,time,y,dose\n1,0,1,5\n");
  EXPECT_THROW(load_dataset(path, s, OutcomeKind::count), SchemaError);
}

TEST(Dataset, RowOrderDoesNotMatter) {
  std::string body;
  std::vector<std::string> rows;
  for (int i = 1; i <= 6; ++i)
    for (int t = 0; t < 4; ++t)
      rows.push_back(std::to_string(i) + "," + std::to_string(t) + "," + std::to_string((i * 7 + t * 3) % 5) + "," +
                     std::to_string(i));
  const auto dir = scratch_dir("ds_order");
  std::string a = "id,time,y,dose\n", b = a;
  for (const auto& r : rows) a += r + "\n";
  std::mt19937 g(3);
  // subjects keep their first-appearance order, so shuffle rows within subjects only
  for (int i = 0; i < 6; ++i) std::shuffle(rows.begin() + i * 4, rows.begin() + i * 4 + 4, g);
  for (const auto& r : rows) b += r + "\n";
  const Dataset da = load_dataset(write_file(dir / "a.csv", a), count_schema(), OutcomeKind::count);
  const Dataset db = load_dataset(write_file(dir / "b.csv", b), count_schema(), OutcomeKind::count);
  EXPECT_TRUE(da == db);
}

TEST(Dataset, MedianImputation) {
  const auto dir = scratch_dir("ds_impute");
  const auto path = write_file(dir / "m.csv", "id,time,y,dose\n1,0,1,1\n2,0,1,NA\n3,0,0,3\n4,0,0,10\n");
  const Dataset plain = load_dataset(path, count_schema(), OutcomeKind::count);
  EXPECT_TRUE(std::isnan(plain.subject(1).covariates[0]));
  EXPECT_EQ(plain.drop_missing_covariates({"dose"}).n_subjects(), 3u);
  LoadOptions lo;
  lo.impute_median = {"dose"};
  const Dataset imp = load_dataset(path, count_schema(), OutcomeKind::count, lo);
  EXPECT_DOUBLE_EQ(imp.subject(1).covariates[0], 3.0);
}

TEST(Dataset, ResampleRelabelsSubjects) {
  const Dataset ds = lmm_data(5, 3, 1, 1, 1, 1, 1);
  const Dataset r = ds.resample({4, 4, 0});
  ASSERT_EQ(r.n_subjects(), 3u);
  EXPECT_EQ(r.subject(0).id, "1");
  EXPECT_EQ(r.subject(1).id, "2");
  EXPECT_EQ(r.subject(0).y, ds.subject(4).y);
  EXPECT_EQ(r.subject(1).y, ds.subject(4).y);
}

TEST(Dataset, WithResponsesUpdatesResponseColumn) {
  const Dataset ds = binary_data(3, {0, 1, 2}, 0, 0, 1, 2);
  std::vector<Eigen::VectorXd> ys(3, Eigen::VectorXd::Ones(3));
  const Dataset d2 = ds.with_responses(ys);
  for (const auto& s : d2.subjects()) EXPECT_EQ(s.x.col(d2.response_predictor()), s.y);
}

TEST(Summary, KaplanMeierMatchesHandComputation) {
  // times 1,2,2,3,4 with events 1,1,0,1,0
  const auto km = kaplan_meier({1, 2, 2, 3, 4}, {1, 1, 0, 1, 0});
  ASSERT_EQ(km.times.size(), 3u);
  EXPECT_NEAR(km.surv[0], 4.0 / 5.0, 1e-12);
  EXPECT_NEAR(km.surv[1], 4.0 / 5.0 * 3.0 / 4.0, 1e-12);
  EXPECT_NEAR(km.surv[2], 4.0 / 5.0 * 3.0 / 4.0 * 1.0 / 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(km.at(0.5), 1.0);
  EXPECT_DOUBLE_EQ(km.at(2.5), km.surv[1]);
}

TEST(Summary, ProportionsSumToOnePerBin) {
  const Dataset ds = binary_data(80, {0, 1, 2, 3, 6, 9}, -0.5, -0.2, 1.0, 5);
  const auto rows = summarize_discrete(ds);
  std::map<std::string, double> total;
  for (const auto& r : rows) total[r.stratum + "/" + r.bin] += r.prop;
  EXPECT_EQ(total.size(), 6u);
  for (const auto& [k, v] : total) EXPECT_NEAR(v, 1.0, 1e-12) << k;
}

TEST(Summary, ManyDistinctTimesUseQuantileBins) {
  std::vector<double> times;
  for (int k = 0; k < 30; ++k) times.push_back(k * 0.37);
  const Dataset ds = binary_data(10, times, 0, 0, 1, 5);
  const auto bins = time_bins_for(ds);
  std::set<std::size_t> used;
  for (double t : times) used.insert(bins.bin_of(t));
  EXPECT_EQ(used.size(), 8u);
}

TEST(Summary, TteSummaryIsKaplanMeier) {
  const Dataset ds = tte_data(Family::weibull, 60, 10, 1.5, 0.0, 15, 9);
  const auto rows = summarize_discrete(ds);
  std::vector<double> t;
  std::vector<int> e;
  tte_outcomes(ds, t, e);
  const auto km = kaplan_meier(t, e);
  // bin labels are rounded times, so match rows to event times in order
  std::size_t k = 0;
  for (const auto& r : rows) {
    if (r.category != "event-free" || r.bin == "0") continue;
    ASSERT_LT(k, km.times.size());
    EXPECT_NEAR(std::stod(r.bin), km.times[k], 1e-4 * km.times[k]);
    EXPECT_NEAR(r.prop, km.surv[k], 1e-12);
    ++k;
  }
  EXPECT_EQ(k, km.times.size());
}
