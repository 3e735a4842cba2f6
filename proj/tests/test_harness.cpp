#include <gtest/gtest.h>

#include <ntklab/harness.hpp>

using namespace ntklab;

namespace {

ExperimentConfig small_config(ExperimentKind kind = ExperimentKind::kernel) {
  ExperimentConfig c;
  c.arch = Architecture{3, {6, 6, 6}};
  c.trials = 2000;
  c.kind = kind;
  return c;
}

}  // namespace

TEST(Config, Validation) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.trials = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_config(ExperimentKind::update);
  c.lambda = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_config();
  c.x = std::vector<double>{1, 2};
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_config();
  c.shards = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Config, DefaultInputNorm) {
  const auto c = small_config();
  EXPECT_NEAR(c.input().squaredNorm(), 3.0, 1e-14);
  auto d = c;
  d.xnorm2 = 7.0;
  EXPECT_NEAR(d.input().squaredNorm(), 7.0, 1e-14);
}

TEST(Kernel, SingleLayerIsDeterministic) {
  ExperimentConfig c;
  c.arch = Architecture{4, {}};
  c.trials = 100;
  c.xnorm2 = 2.0;
  const auto r = run_kernel_experiment(c, 1);
  EXPECT_NEAR(r.totals.K.variance(), 0.0, 1e-28);
  EXPECT_NEAR(r.totals.K.mean(), 2.0 / 4 + 1, 1e-14);
}

TEST(Kernel, MeanMatchesOracle) {
  auto c = small_config();
  c.trials = 20000;
  const auto r = run_kernel_experiment(c, 2);
  const double oracle = oracle_mean_kernel(c.arch, c.input());
  EXPECT_NEAR(r.totals.K.mean(), oracle, 5 * r.totals.K.se_mean());
  EXPECT_GE(r.ratio.point, 1.0 - 5 * r.ratio.se);
  EXPECT_LE(r.ratio.ci_lo, r.ratio.point);
  EXPECT_GE(r.ratio.ci_hi, r.ratio.point);
}

TEST(Kernel, ThreadCountDoesNotMatter) {
  const auto c = small_config();
  const auto a = run_kernel_experiment(c, 1), b = run_kernel_experiment(c, 4);
  EXPECT_EQ(a.totals.K.mean(), b.totals.K.mean());
  EXPECT_EQ(a.totals.K2.variance(), b.totals.K2.variance());
  EXPECT_EQ(a.ratio.ci_lo, b.ratio.ci_lo);
}

TEST(Kernel, FewerTrialsThanShards) {
  auto c = small_config();
  c.trials = 5;
  const auto r = run_kernel_experiment(c, 3);
  EXPECT_EQ(r.totals.K.count(), 5u);
  EXPECT_EQ(r.ratio.shards, 5);
}

TEST(Update, LinearModelHasNoCurvature) {
  ExperimentConfig c;
  c.kind = ExperimentKind::update;
  c.arch = Architecture{3, {}};
  c.trials = 200;
  const auto r = run_update_experiment(c, 1);
  EXPECT_NEAR(r.totals.q.mean(), 0.0, 1e-12);
  EXPECT_NEAR(r.totals.dK_lin.mean(), 0.0, 1e-12);
}

TEST(Update, BiasBlockVanishes) {
  const auto c = small_config(ExperimentKind::update);
  const auto r = run_update_experiment(c, 2);
  EXPECT_NEAR(r.totals.q_bb.mean(), 0.0, 5 * r.totals.q_bb.se_mean() + 1e-300);
  EXPECT_LE(r.totals.abs_q_bb.mean(), 1e-8 * r.totals.abs_q_ww.mean());
  EXPECT_LT(r.flip_rate(), 0.05);
}

TEST(Update, ThreadCountDoesNotMatter) {
  auto c = small_config(ExperimentKind::update);
  c.trials = 300;
  const auto a = run_update_experiment(c, 1), b = run_update_experiment(c, 3);
  EXPECT_EQ(a.totals.dK.mean(), b.totals.dK.mean());
  EXPECT_EQ(a.ratio.point, b.ratio.point);
  EXPECT_EQ(a.totals.flips, b.totals.flips);
}

TEST(Sweep, EmptyAndRowCount) {
  EXPECT_TRUE(run_sweep({}).empty());
  auto a = small_config(), b = small_config(ExperimentKind::update);
  a.trials = b.trials = 100;
  const auto rows = run_sweep({a, b}, 2);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].error.empty());
  EXPECT_FALSE(rows[0].mean_dK.has_value());
  EXPECT_TRUE(rows[1].mean_dK.has_value());
  EXPECT_TRUE(rows[0].oracle_mean.has_value());
  EXPECT_EQ(rows[0].widths, (std::vector<int>{6, 6, 6}));
}

TEST(Sweep, FailingRowIsRecorded) {
  auto bad = small_config();
  bad.trials = 0;
  auto good = small_config();
  good.trials = 50;
  good.oracle = false;
  const auto rows = run_sweep({bad, good}, 1);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_FALSE(rows[0].error.empty());
  EXPECT_TRUE(rows[1].error.empty());
  EXPECT_FALSE(rows[1].oracle_mean.has_value());
}

TEST(Sweep, RatioIncreasesWithDepth) {
  std::vector<ExperimentConfig> cs;
  for (int d : {2, 12}) {
    ExperimentConfig c;
    c.arch = equal_width(4, d, 6);
    c.trials = 20000;
    c.oracle = false;
    cs.push_back(c);
  }
  const auto rows = run_sweep(cs, 2);
  EXPECT_LT(rows[0].ratio_ci_hi, rows[1].ratio_ci_lo);
}
