#include <gtest/gtest.h>

#include <ntklab/network.hpp>

#include <random>

#include "oracles.hpp"

using namespace ntklab;

TEST(Architecture, DepthAndWidths) {
  const Architecture a{4, {16, 8}};
  EXPECT_EQ(a.depth(), 3);
  EXPECT_EQ(a.width(0), 4);
  EXPECT_EQ(a.width(2), 8);
  EXPECT_EQ(a.width(3), 1);
  EXPECT_EQ(a.widths(), (std::vector<int>{4, 16, 8, 1}));
  EXPECT_EQ(equal_width(4, 8, 16).hidden.size(), 7u);
}

TEST(Architecture, RejectsBadWidths) {
  EXPECT_THROW((Architecture{0, {2}}.validate()), ValidationError);
  EXPECT_THROW((Architecture{2, {2, 0}}.validate()), ValidationError);
  EXPECT_NO_THROW((Architecture{1, {}}.validate()));
}

TEST(Distribution, Moments) {
  EXPECT_DOUBLE_EQ(WeightDistribution{WeightKind::normal}.fourth_moment(), 3.0);
  EXPECT_DOUBLE_EQ(WeightDistribution{WeightKind::uniform}.fourth_moment(), 1.8);
  EXPECT_EQ(WeightDistribution::from_name("gaussian").kind, WeightKind::normal);
  EXPECT_EQ(WeightDistribution::from_name("uniform").kind, WeightKind::uniform);
  EXPECT_THROW(WeightDistribution::from_name("rademacher"), ValidationError);
}

TEST(Distribution, EmpiricalMomentsOfRawWeights) {
  for (auto kind : {WeightKind::normal, WeightKind::uniform}) {
    const Architecture a{64, {64}};
    double s2 = 0, s4 = 0;
    long long n = 0;
    for (std::uint64_t t = 0; t < 50; ++t) {
      const auto p = init_network(a, WeightDistribution{kind}, 9, t);
      const auto& W = p.W(1);
      s2 += W.array().square().sum();
      s4 += W.array().pow(4).sum();
      n += W.size();
    }
    // 204800 draws: se of the second moment ~ sqrt(2/n) ~ 0.003
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
    EXPECT_NEAR(s4 / n, WeightDistribution{kind}.fourth_moment(), 0.15);
  }
}

TEST(Network, EffectiveWeightVariance) {
  const Architecture a{10, {20}};
  double hid = 0, out = 0;
  long long nh = 0, no = 0;
  for (std::uint64_t t = 0; t < 2000; ++t) {
    const auto p = init_network(a, {}, 5, t);
    hid += (p.s(1) * p.W(1)).array().square().sum();
    out += (p.s(2) * p.W(2)).array().square().sum();
    nh += p.W(1).size();
    no += p.W(2).size();
  }
  EXPECT_NEAR(hid / nh, 2.0 / 10, 0.01);
  EXPECT_NEAR(out / no, 1.0 / 20, 0.003);
}

TEST(Network, InitIsDeterministic) {
  const Architecture a{3, {5, 5}};
  const auto p = init_network(a, {}, 11, 4), q = init_network(a, {}, 11, 4);
  EXPECT_TRUE(p.theta.weight == q.theta.weight);
  const auto r = init_network(a, {}, 11, 5);
  EXPECT_FALSE(p.theta.weight == r.theta.weight);
  for (const auto& b : p.theta.bias) EXPECT_EQ(b.squaredNorm(), 0.0);
}

TEST(Forward, ZeroInputGivesZeroOutput) {
  const auto p = init_network(Architecture{3, {4, 4}}, {}, 1);
  const auto t = forward(p, Eigen::VectorXd::Zero(3));
  EXPECT_EQ(t.output, 0.0);
  for (int i = 1; i <= 3; ++i) EXPECT_EQ(t.y(i).squaredNorm(), 0.0);
}

TEST(Forward, HandComputedLinearLayer) {
  auto p = zero_network(Architecture{4, {}});
  p.theta.weight[0].setOnes();
  EXPECT_DOUBLE_EQ(forward(p, Eigen::VectorXd::Ones(4)).output, 2.0);
}

TEST(Forward, PositiveHomogeneity) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = oracle::random_arch(rng, 5, 1, 8, 6);
    const auto p = init_network(a, {}, 17, static_cast<std::uint64_t>(trial));
    const auto x = oracle::random_input(rng, a.n0);
    const double c = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
    const auto t1 = forward(p, x), t2 = forward(p, c * x);
    EXPECT_LE(std::abs(t2.output - c * t1.output), 1e-12 * std::max(1.0, std::abs(c * t1.output)));
    EXPECT_EQ(t1.pattern(), t2.pattern());
  }
}

TEST(Forward, ShapeMismatchThrows) {
  const auto p = zero_network(Architecture{3, {2}});
  EXPECT_THROW(forward(p, Eigen::VectorXd::Zero(2)), ShapeError);
}

TEST(Forward, OnesInputHasRequestedNorm) {
  EXPECT_NEAR(ones_input(7, 3.5).squaredNorm(), 3.5, 1e-14);
}
