#include <bpfolio/core.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

using namespace bpfolio;

namespace {

std::filesystem::path scratch_dir() {
  auto dir = std::filesystem::temp_directory_path() / "bpfolio_core_test";
  std::filesystem::create_directories(dir);
  return dir;
}

template <class F>
ParseError catch_parse_error(F&& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e;
  }
  ADD_FAILURE() << "expected ParseError";
  return ParseError("none", 0, 0);
}

}  // namespace

TEST(ReturnSet, ShapeAndAlpha) {
  const ReturnSet r(Eigen::MatrixXd::Ones(4, 10));
  EXPECT_EQ(r.n_assets(), 4);
  EXPECT_EQ(r.n_periods(), 10);
  EXPECT_DOUBLE_EQ(r.alpha(), 2.5);
}

TEST(ReturnSet, RejectsDegenerateShapesAndNonFinite) {
  EXPECT_THROW(ReturnSet(Eigen::MatrixXd::Ones(1, 5)), std::invalid_argument);
  EXPECT_THROW(ReturnSet(Eigen::MatrixXd::Ones(3, 0)), std::invalid_argument);
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 2);
  x(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(ReturnSet{x}, std::invalid_argument);
}

TEST(ReturnSet, CenteringRemovesAssetMeans) {
  const ReturnSet r = generate_returns(5, 40, 3).centered();
  EXPECT_LT(r.entries().rowwise().mean().cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Portfolio, DefaultBudgetIsN) {
  const Portfolio p(Eigen::VectorXd::Ones(7));
  EXPECT_DOUBLE_EQ(p.budget, 7.0);
  EXPECT_TRUE(p.satisfies_budget());
  Portfolio q(Eigen::Vector3d(1.0, 1.0, 1.0 + 1e-6));
  EXPECT_FALSE(q.satisfies_budget());
  EXPECT_NEAR(q.budget_residual(), 1e-6, 1e-15);
}

TEST(Portfolio, UnitBudgetRescaling) {
  const Portfolio p(Eigen::Vector2d(0.5, 1.5));
  const Portfolio u = p.rescaled_to_unit_budget();
  EXPECT_DOUBLE_EQ(u.positions.sum(), 1.0);
  EXPECT_DOUBLE_EQ(u.budget, 1.0);
  EXPECT_TRUE(u.satisfies_budget());
}

TEST(CostModel, ValuesAndTags) {
  const auto mv = CostModel::mean_variance();
  const auto ad = CostModel::absolute_deviation();
  const auto hub = CostModel::generic(huber_cost(1.0));
  EXPECT_DOUBLE_EQ(mv(-3.0), 4.5);
  EXPECT_DOUBLE_EQ(ad(-3.0), 3.0);
  EXPECT_DOUBLE_EQ(hub(0.5), 0.125);
  EXPECT_DOUBLE_EQ(hub(3.0), 2.5);
  EXPECT_EQ(mv.tag(), "mv");
  EXPECT_EQ(ad.tag(), "ad");
  EXPECT_EQ(hub.tag(), "generic:huber");
  EXPECT_EQ(hub.quadrature_order(), 64);
  EXPECT_THROW(CostModel::generic(huber_cost(1.0), 8), std::invalid_argument);
}

TEST(BetaSchedule, DoublingLadderEndsExactlyAtFinal) {
  const BetaSchedule s;
  const auto r = s.rungs();
  ASSERT_EQ(r.size(), 21u);
  EXPECT_DOUBLE_EQ(r.front(), 1.0);
  EXPECT_DOUBLE_EQ(r.back(), 1048576.0);
  const BetaSchedule odd{1.0, 3.0, 10.0, 5};
  EXPECT_EQ(odd.rungs(), (std::vector<double>{1.0, 3.0, 9.0, 10.0}));
}

TEST(BpConfig, DefaultsAndValidation) {
  const BpConfig mv = BpConfig::defaults_for(CostModel::mean_variance());
  EXPECT_DOUBLE_EQ(mv.damping, 0.5);
  EXPECT_DOUBLE_EQ(mv.tol, 1e-10);
  EXPECT_EQ(mv.max_sweeps, 5000);
  EXPECT_FALSE(mv.beta_schedule.has_value());
  EXPECT_DOUBLE_EQ(mv.divergence_threshold, 1e6);

  const BpConfig ad = BpConfig::defaults_for(CostModel::absolute_deviation());
  ASSERT_TRUE(ad.beta_schedule.has_value());
  EXPECT_DOUBLE_EQ(ad.final_beta(), 1048576.0);
  EXPECT_EQ(ad.beta_schedule->sweeps_per_rung, 200);

  BpConfig bad;
  bad.damping = 1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = BpConfig{};
  bad.tol = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = BpConfig{};
  bad.beta_schedule = BetaSchedule{4.0, 2.0, 2.0, 10};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = BpConfig{};
  bad.variance_damping = -0.1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(RsSolution, DivergentPhaseRecord) {
  const RsSolution s = RsSolution::divergent_phase(0.5, 2.0);
  EXPECT_TRUE(s.divergent);
  EXPECT_TRUE(std::isinf(s.q));
  EXPECT_TRUE(std::isinf(s.chi));
}

TEST(ExperimentRecord, JsonHasSchemaFieldsAndNullsForNonFinite) {
  ExperimentRecord r{7, 100, 200, "mv", {}};
  r.diagnostics.q_hat = 2.1;
  r.diagnostics.eps_hat = std::numeric_limits<double>::infinity();
  r.diagnostics.converged = true;
  r.diagnostics.sweeps_used = 88;
  const auto j = to_json(r);
  for (const char* key : {"seed", "n_assets", "n_periods", "model", "q_hat", "eps_hat", "converged", "sweeps"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["seed"], 7);
  EXPECT_EQ(j["model"], "mv");
  EXPECT_TRUE(j["eps_hat"].is_null());
  EXPECT_EQ(j["sweeps"], 88);
}

TEST(GenerateReturns, DeterministicPerSeed) {
  const ReturnSet a = generate_returns(6, 9, 42);
  const ReturnSet b = generate_returns(6, 9, 42);
  const ReturnSet c = generate_returns(6, 9, 43);
  EXPECT_EQ(a.entries(), b.entries());
  EXPECT_NE(a.entries(), c.entries());
}

TEST(GenerateReturns, PinnedLeadingValues) {
  // Guards the golden data: the engine, the bit extraction and the
  // Box-Muller order must not change.
  std::mt19937_64 engine(1);
  const double u1 = 1.0 - static_cast<double>(engine() >> 11) * 0x1.0p-53;
  const double u2 = static_cast<double>(engine() >> 11) * 0x1.0p-53;
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const ReturnSet r = generate_returns(2, 2, 1);
  EXPECT_DOUBLE_EQ(r.entries()(0, 0), radius * std::cos(2.0 * std::numbers::pi * u2));
  EXPECT_DOUBLE_EQ(r.entries()(0, 1), radius * std::sin(2.0 * std::numbers::pi * u2));
}

TEST(GenerateReturns, StandardNormalMoments) {
  const ReturnSet r = generate_returns(200, 500, 11);
  const auto& x = r.entries();
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  EXPECT_NEAR(mean, 0.0, 5e-3);
  EXPECT_NEAR(var, 1.0, 1e-2);
}

TEST(Csv, ParsesWhitespaceAndSigns) {
  const ReturnSet r = parse_returns(" 1, -2.5 ,+3\n4,5e-1,6\n", 2);
  EXPECT_EQ(r.n_periods(), 3);
  EXPECT_DOUBLE_EQ(r.entries()(0, 1), -2.5);
  EXPECT_DOUBLE_EQ(r.entries()(0, 2), 3.0);
  EXPECT_DOUBLE_EQ(r.entries()(1, 1), 0.5);
}

TEST(Csv, ReportsRaggedRowWithPosition) {
  const ParseError e = catch_parse_error([] { parse_returns("1,2,3\n4,5\n", 2); });
  EXPECT_EQ(e.row(), 2u);
  EXPECT_NE(std::string(e.what()).find("ragged row at row 2"), std::string::npos);
}

TEST(Csv, ReportsNonNumericCellWithPosition) {
  const ParseError e = catch_parse_error([] { parse_returns("1,2\n3,abc\n", 2); });
  EXPECT_EQ(e.row(), 2u);
  EXPECT_EQ(e.column(), 2u);
  EXPECT_NE(std::string(e.what()).find("'abc'"), std::string::npos);
}

TEST(Csv, RejectsEmptyInputAndWrongRowCount) {
  EXPECT_THROW(parse_returns("", 2), ParseError);
  EXPECT_THROW(parse_returns("1,2\n", 2), ParseError);
  EXPECT_THROW(parse_returns("1,2\n\n3,4\n", 2), ParseError);
  EXPECT_THROW(parse_returns("1,inf\n3,4\n", 2), ParseError);
}

TEST(Csv, RoundTripIsBitExact) {
  const ReturnSet r = generate_returns(5, 8, 99);
  const auto path = scratch_dir() / "roundtrip.csv";
  save_returns(path, r);
  const ReturnSet back = load_returns(path, 5);
  EXPECT_EQ(back.entries(), r.entries());
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
}

TEST(Csv, MissingFileIsAnError) {
  EXPECT_THROW(load_returns(scratch_dir() / "does_not_exist.csv", 2), Error);
}
