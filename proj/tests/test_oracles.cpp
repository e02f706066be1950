#include <bpfolio/bp_engine.hpp>
#include <bpfolio/oracles.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <string>

using namespace bpfolio;

namespace {

ReturnSet two_by_two(double a, double b, double c, double d) {
  Eigen::MatrixXd x(2, 2);
  x << a, b, c, d;
  return ReturnSet(x);
}

}  // namespace

TEST(ExactMeanVariance, HandInvertedExamples) {
  const Portfolio a = exact_mean_variance(two_by_two(1, 0, 0, 2));
  EXPECT_NEAR(a.positions[0], 1.6, 1e-14);
  EXPECT_NEAR(a.positions[1], 0.4, 1e-14);
  const Portfolio b = exact_mean_variance(two_by_two(1, 3, 2, 1));
  EXPECT_NEAR(b.positions[0], 0.0, 1e-14);
  EXPECT_NEAR(b.positions[1], 2.0, 1e-14);
  const Portfolio c = exact_mean_variance(two_by_two(1, 0, 0, 1));
  EXPECT_NEAR(c.positions[0], 1.0, 1e-15);
  EXPECT_NEAR(c.positions[1], 1.0, 1e-15);
}

TEST(ExactMeanVariance, StationarityAndBudget) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const ReturnSet r = generate_returns(40, 90, seed);
    const Portfolio w = exact_mean_variance(r);
    EXPECT_TRUE(w.satisfies_budget(1e-12));
    const Eigen::VectorXd cw = r.entries() * (r.entries().transpose() * w.positions);
    EXPECT_LT((cw.array() - cw.mean()).abs().maxCoeff() / std::abs(cw.mean()), 1e-8);
  }
}

TEST(ExactMeanVariance, RejectsTooFewPeriods) {
  EXPECT_THROW(exact_mean_variance(generate_returns(10, 5, 1)), Error);
}

TEST(ExactMeanVariance, SingularMatrixNamesTheConditionEstimate) {
  try {
    exact_mean_variance(two_by_two(1, 2, 2, 4));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("condition estimate"), std::string::npos) << e.what();
  }
}

TEST(ConvexOracle, MeanVarianceAgreesWithClosedForm) {
  const CostModel mv = CostModel::mean_variance();
  for (std::uint64_t seed : {4u, 5u}) {
    const ReturnSet r = generate_returns(30, 75, seed);
    const double exact = observables(exact_mean_variance(r), r, mv).eps_hat;
    const Portfolio w = convex_oracle(r, mv);
    EXPECT_NEAR(observables(w, r, mv).eps_hat / exact, 1.0, 1e-6);
    EXPECT_TRUE(w.satisfies_budget(1e-12));
  }
}

TEST(ConvexOracle, AbsoluteDeviationTwoAssetExample) {
  const ReturnSet r = two_by_two(1, 3, 2, 1);
  const CostModel ad = CostModel::absolute_deviation();
  const Portfolio w = convex_oracle(r, ad);
  EXPECT_NEAR(w.positions[0], -1.0, 1e-6);
  EXPECT_NEAR(w.positions[1], 3.0, 1e-6);
  EXPECT_NEAR(observables(w, r, ad).eps_hat, 5.0 / (std::sqrt(2.0) * 2.0), 1e-8);
}

TEST(ConvexOracle, FlatCostReturnsUniformPortfolio) {
  const ReturnSet r = generate_returns(6, 12, 9);
  const Portfolio w = convex_oracle(r, CostModel::generic(flat_cost()));
  EXPECT_LT((w.positions - Eigen::VectorXd::Ones(6)).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(ConvexOracle, NeverWorseThanMessagePassing) {
  const CostModel mv = CostModel::mean_variance();
  const ReturnSet r = generate_returns(30, 60, 14);
  BpConfig config;
  const auto bp = solve(r, mv, config);
  const double oracle = observables(convex_oracle(r, mv), r, mv).eps_hat;
  EXPECT_LE(oracle, bp.diagnostics.eps_hat + 1e-12);
}

TEST(ConvexOracle, AbsoluteDeviationIsOptimalAgainstPerturbations) {
  const CostModel ad = CostModel::absolute_deviation();
  const ReturnSet r = generate_returns(12, 30, 17);
  const Portfolio w = convex_oracle(r, ad);
  const double best = observables(w, r, ad).eps_hat;
  NormalStream normal(5);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd d(12);
    for (int k = 0; k < 12; ++k) d[k] = normal();
    d.array() -= d.mean();  // stay on the budget plane
    EXPECT_GE(observables(Eigen::VectorXd(w.positions + 1e-3 * d), r, ad).eps_hat, best - 1e-12);
  }
}

TEST(TwoAssetKinks, Examples) {
  const Portfolio a = ad_two_asset_kinks(two_by_two(1, 3, 2, 1));
  EXPECT_DOUBLE_EQ(a.positions[0], -1.0);
  EXPECT_DOUBLE_EQ(a.positions[1], 3.0);
  const Portfolio b = ad_two_asset_kinks(two_by_two(1, 0, 0, 2));
  EXPECT_DOUBLE_EQ(b.positions[0], 2.0);
  EXPECT_DOUBLE_EQ(b.positions[1], 0.0);
}

TEST(TwoAssetKinks, FlatSegmentTakesTheLeftmostKink) {
  // Periods (1, -1) for both assets shifted: objective |t - 1| + |t - 3| is
  // flat on [1, 3]; expressed through asset rows with kinks at 1 and 3.
  // sqrt 2 u = (x0 - x1) t + 2 x1 with x0 - x1 = 1 and 2 x1 = -1 / -3.
  Eigen::MatrixXd x(2, 2);
  x << 0.5, -0.5, -0.5, -1.5;
  const Portfolio w = ad_two_asset_kinks(ReturnSet(x));
  EXPECT_DOUBLE_EQ(w.positions[0], 1.0);
}

TEST(TwoAssetKinks, IdenticalAssetsGiveUniformPortfolio) {
  const Portfolio w = ad_two_asset_kinks(two_by_two(1, -2, 1, -2));
  EXPECT_DOUBLE_EQ(w.positions[0], 1.0);
  EXPECT_DOUBLE_EQ(w.positions[1], 1.0);
}

TEST(TwoAssetKinks, AgreesWithConvexOracleOnRandomInstances) {
  const CostModel ad = CostModel::absolute_deviation();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ReturnSet r = generate_returns(2, 9, seed);
    const double kink = observables(ad_two_asset_kinks(r), r, ad).eps_hat;
    const double smooth = observables(convex_oracle(r, ad), r, ad).eps_hat;
    EXPECT_NEAR(kink, smooth, 1e-7 * std::max(1.0, kink)) << "seed=" << seed;
  }
}

TEST(TwoAssetKinks, RejectsOtherSizes) {
  EXPECT_THROW(ad_two_asset_kinks(generate_returns(3, 4, 1)), std::invalid_argument);
}

TEST(CounterexampleInstance, MeanVarianceAndAbsoluteDeviationDiffer) {
  const ReturnSet r = two_by_two(1, 3, 2, 1);
  const Portfolio mv = exact_mean_variance(r);
  const Portfolio ad = ad_two_asset_kinks(r);
  EXPECT_GT((mv.positions - ad.positions).norm(), 1.0);
}
