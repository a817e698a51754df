#include <gtest/gtest.h>

#include <algorithm>
#include <limits>

#include "support.hpp"

using namespace prevalshift;
using testing_support::code_of;
using testing_support::exact_strata;
using testing_support::brute_isotonic;
using testing_support::scored;

namespace {

Dataset sim_sample(int n, double p_x0, std::uint64_t seed) {
  SimConfig c;
  c.n = n;
  return generate(c, p_x0, RngSeed{seed});
}

double stratum_label_mean(const Dataset& d, CategoryId x) {
  double n = 0, pos = 0;
  for (const auto& r : d.rows())
    if (*r.features.categorical(0) == x) {
      n += 1;
      pos += *r.label;
    }
  return pos / n;
}

std::vector<Calibrator> all_calibrators(const Dataset& cal) {
  BoostConfig bc;
  bc.min_leaf = 20;
  bc.max_rounds = 20;
  return {identity_calibrator(), fit_global_multiplicative(cal), fit_isotonic(cal),
          fit_stratum_additive(cal, GroupSpec::by_features(cal.schema(), {"X"})),
          fit_boosted_multicalibrator(cal, bc, RngSeed{5})};
}

}  // namespace

TEST(Squash, Examples) {
  EXPECT_DOUBLE_EQ(squash(0.0, 0.05), 0.05);
  EXPECT_DOUBLE_EQ(squash(1.0, 0.05), 0.95);
  for (double eps : {0.0, 0.05, 0.2, 0.49}) EXPECT_DOUBLE_EQ(squash(0.5, eps), 0.5);
  EXPECT_EQ(code_of([] { squash(0.3, 0.5); }), ErrorCode::InvalidEpsilon);
  EXPECT_EQ(code_of([] { squash(0.3, -0.1); }), ErrorCode::InvalidEpsilon);
}

TEST(Squash, AffineAndStrictlyIncreasing) {
  Rng rng(RngSeed{1});
  for (int i = 0; i < 1000; ++i) {
    const double eps = 0.499 * rng.uniform();
    const double a = rng.uniform();
    const double b = rng.uniform();
    const double t = rng.uniform();
    EXPECT_NEAR(squash(t * a + (1 - t) * b, eps), t * squash(a, eps) + (1 - t) * squash(b, eps), 1e-14);
    if (a < b) {
      EXPECT_LT(squash(a, eps), squash(b, eps));
    }
  }
}

TEST(GlobalMultiplicative, SimulationMeans) {
  const auto cal = exact_strata(1, 0, 0.135, 1, 1, 0.935);  // Ybar 0.5, hbar 0.535
  const auto c = fit_global_multiplicative(cal);
  const double expected = 0.5 / ((0.135 + 0.935) / 2.0);
  EXPECT_NEAR(std::get<GlobalMultiplicative>(c.model).factor, expected, 1e-15);
  EXPECT_NEAR(std::get<GlobalMultiplicative>(c.model).factor, 0.93458, 1e-5);
  EXPECT_EQ(c.id, "global");
}

TEST(GlobalMultiplicative, DegenerateCases) {
  const auto calibrated = exact_strata(4, 1, 0.25, 4, 3, 0.75);
  EXPECT_NEAR(std::get<GlobalMultiplicative>(fit_global_multiplicative(calibrated).model).factor, 1.0, 1e-15);
  const auto no_positives = exact_strata(5, 0, 0.2, 5, 0, 0.6);
  const auto zero = fit_global_multiplicative(no_positives);
  EXPECT_EQ(std::get<GlobalMultiplicative>(zero.model).factor, 0.0);
  EXPECT_EQ(apply(zero, 0.9, FeatureVector({{0, 1}}, {})), 0.0);
  const auto zero_scores = exact_strata(2, 1, 0.0, 2, 1, 0.0);
  EXPECT_EQ(code_of([&] { fit_global_multiplicative(zero_scores); }), ErrorCode::ZeroMeanScore);
}

TEST(Apply, Examples) {
  const FeatureVector x1({{0, 1}}, {});
  EXPECT_EQ(apply(identity_calibrator(), 0.37, x1), 0.37);
  const Calibrator global{"global", GlobalMultiplicative{0.9346}, {}};
  EXPECT_NEAR(apply(global, 0.935, x1), 0.9346 * 0.935, 1e-15);
  EXPECT_NEAR(apply(global, 0.935, x1), 0.8738, 1e-4);
  StratumAdditive s{GroupSpec::by_features(testing_support::binary_schema(), {"X"}), {{"X=1", -0.085}}, 0.0};
  const Calibrator stratum{"stratum", s, {}};
  EXPECT_NEAR(apply(stratum, 0.935, x1), 0.85, 1e-12);
  EXPECT_EQ(code_of([&] { apply(stratum, 0.5, FeatureVector{}); }), ErrorCode::MissingCalibratorFeatures);
}

TEST(Isotonic, Examples) {
  {
    Dataset d(testing_support::binary_schema(),
              {scored(0, 0, 0.1), scored(0, 0, 0.2), scored(1, 1, 0.8), scored(1, 1, 0.9)});
    const auto c = fit_isotonic(d);
    const auto& step = std::get<IsotonicCalibration>(c.model).step;
    std::vector<double> levels = step.levels;
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    EXPECT_EQ(levels, (std::vector<double>{0.0, 1.0}));
    EXPECT_EQ(apply(c, 0.15, {}), 0.0);
    EXPECT_EQ(apply(c, 0.85, {}), 1.0);
  }
  {
    Dataset d(testing_support::binary_schema(), {scored(0, 1, 0.1), scored(1, 0, 0.9)});
    const auto c = fit_isotonic(d);
    for (double s : {0.0, 0.1, 0.5, 0.9, 1.0}) EXPECT_DOUBLE_EQ(apply(c, s, {}), 0.5);
  }
}

TEST(Isotonic, SimulationSampleHasStratumLevels) {
  const auto cal = sim_sample(10000, 0.5, 77);
  const auto c = fit_isotonic(cal);
  const auto& step = std::get<IsotonicCalibration>(c.model).step;
  ASSERT_EQ(step.levels.size(), 2U);
  EXPECT_DOUBLE_EQ(step.breakpoints[0], 0.135);
  EXPECT_NEAR(step.levels[0], stratum_label_mean(cal, 0), 1e-12);
  EXPECT_NEAR(step.levels[1], stratum_label_mean(cal, 1), 1e-12);
  EXPECT_NEAR(step.levels[0], 0.15, 0.02);
  EXPECT_NEAR(step.levels[1], 0.85, 0.02);
}

TEST(Isotonic, OutOfRangeScoresTakeEndLevels) {
  Dataset d(testing_support::binary_schema(), {scored(0, 0, 0.3), scored(0, 1, 0.6), scored(0, 1, 0.7)});
  const auto c = fit_isotonic(d);
  EXPECT_EQ(apply(c, 0.0, {}), 0.0);
  EXPECT_EQ(apply(c, 1.0, {}), 1.0);
}

TEST(Pav, MatchesBruteForceOnSmallInstances) {
  Rng rng(RngSeed{17});
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<double> s(n), y(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(i) / 10.0 + 0.01;
      y[i] = trial % 2 ? static_cast<double>(rng.below(2)) : rng.uniform();
      w[i] = 0.2 + 2.0 * rng.uniform();
    }
    // feed the points shuffled; pav sorts by score
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    std::vector<double> ps(n), py(n), pw(n);
    for (std::size_t i = 0; i < n; ++i) {
      ps[i] = s[perm[i]];
      py[i] = y[perm[i]];
      pw[i] = w[perm[i]];
    }
    const auto step = pav(ps, py, pw);
    ASSERT_TRUE(std::is_sorted(step.levels.begin(), step.levels.end()));
    ASSERT_TRUE(std::is_sorted(step.breakpoints.begin(), step.breakpoints.end()));
    const auto brute = brute_isotonic(y, w);
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_NEAR(step(s[i]), brute.fitted[i], 1e-12) << "trial " << trial;
      sse += w[i] * (y[i] - step(s[i])) * (y[i] - step(s[i]));
    }
    ASSERT_NEAR(sse, brute.sse, 1e-12);
  }
}

TEST(Pav, TiedScoresShareALevel) {
  const std::vector<double> s = {0.5, 0.5, 0.5, 0.2};
  const std::vector<double> y = {1, 0, 0, 1};
  const std::vector<double> w = {1, 1, 1, 1};
  const auto step = pav(s, y, w);
  // tie block mean 1/3 sits below the 0.2 point's 1, so everything pools to 0.5
  ASSERT_EQ(step.levels.size(), 1U);
  EXPECT_DOUBLE_EQ(step.levels[0], 0.5);
}

TEST(Isotonic, ApplicationIsMonotone) {
  const auto cal = testing_support::three_feature_data(3000, RngSeed{8});
  const auto c = fit_isotonic(cal);
  Rng rng(RngSeed{9});
  for (int i = 0; i < 2000; ++i) {
    double a = rng.uniform(), b = rng.uniform();
    if (a > b) std::swap(a, b);
    ASSERT_LE(apply(c, a, {}), apply(c, b, {}));
  }
}

TEST(StratumAdditive, SimulationOffsets) {
  // population proportions at n = 1000 per stratum
  const auto cal = exact_strata(1000, 150, 0.135, 1000, 850, 0.935);
  const auto c = fit_stratum_additive(cal, GroupSpec::by_features(cal.schema(), {"X"}));
  const auto& m = std::get<StratumAdditive>(c.model);
  EXPECT_NEAR(m.offsets.at("X=0"), 0.15 - 0.135, 1e-12);
  EXPECT_NEAR(m.offsets.at("X=1"), 0.85 - 0.935, 1e-12);
  EXPECT_NEAR(m.fallback_offset, 0.5 - 0.535, 1e-12);
}

TEST(StratumAdditive, GroupCalibratedScoresGiveZeroOffsets) {
  const auto cal = exact_strata(100, 20, 0.2, 100, 70, 0.7);
  const auto c = fit_stratum_additive(cal, GroupSpec::by_features(cal.schema(), {"X"}));
  for (const auto& [g, eps] : std::get<StratumAdditive>(c.model).offsets) EXPECT_NEAR(eps, 0.0, 1e-12) << g;
  EXPECT_NEAR(apply(c, 0.7, FeatureVector({{0, 1}}, {})), 0.7, 1e-12);
}

TEST(StratumAdditive, SingleGroupIsGlobalAdditive) {
  const auto cal = testing_support::three_feature_data(500, RngSeed{3});
  const auto c = fit_stratum_additive(cal, GroupSpec{});
  const auto& m = std::get<StratumAdditive>(c.model);
  ASSERT_EQ(m.offsets.size(), 1U);
  const auto labels = cal.labels();
  const double ybar = weighted_mean(std::vector<double>(labels.begin(), labels.end()), cal.weights());
  const double hbar = weighted_mean(cal.scores(), cal.weights());
  EXPECT_NEAR(m.offsets.begin()->second, ybar - hbar, 1e-12);
}

TEST(StratumAdditive, UnseenGroupFallsBackToGlobalOffset) {
  Schema schema{{FeatureDecl{"X", FeatureKind::Categorical, {"0", "1", "2"}}}};
  Dataset cal(schema, {scored(0, 1, 0.5), scored(0, 0, 0.5), scored(1, 1, 0.6)});
  const auto c = fit_stratum_additive(cal, GroupSpec::by_features(schema, {"X"}));
  const auto r = apply_detailed(c, 0.5, FeatureVector({{0, 2}}, {}));
  EXPECT_TRUE(r.used_fallback);
  EXPECT_NEAR(r.value, 0.5 + (2.0 / 3.0 - 1.6 / 3.0), 1e-12);
  EXPECT_FALSE(apply_detailed(c, 0.5, FeatureVector({{0, 1}}, {})).used_fallback);
}

TEST(StratumAdditive, NumericBins) {
  Schema schema{{FeatureDecl{"age", FeatureKind::Numeric, {}}}};
  std::vector<Row> rows;
  for (double age : {20.0, 30.0, 60.0, 70.0}) rows.push_back(Row{FeatureVector({}, {{0, age}}), age < 50 ? 1 : 0, 0.5, 1});
  Dataset cal(schema, rows);
  const auto c = fit_stratum_additive(cal, GroupSpec::by_features(schema, {"age"}, {{"age", {50.0}}}));
  EXPECT_DOUBLE_EQ(apply(c, 0.5, FeatureVector({}, {{0, 40.0}})), 1.0);
  EXPECT_DOUBLE_EQ(apply(c, 0.5, FeatureVector({}, {{0, 50.0}})), 0.0);
}

TEST(StratumAdditive, Errors) {
  const auto schema = testing_support::binary_schema();
  EXPECT_EQ(code_of([&] { fit_stratum_additive(Dataset(schema, {}), GroupSpec::by_features(schema, {"X"})); }),
            ErrorCode::EmptyGroup);
  Dataset unlabeled(schema, {scored(0, std::nullopt, 0.5)});
  EXPECT_EQ(code_of([&] { fit_stratum_additive(unlabeled, GroupSpec::by_features(schema, {"X"})); }),
            ErrorCode::MissingLabels);
  EXPECT_EQ(code_of([&] { GroupSpec::by_features(schema, {"nope"}); }), ErrorCode::FeatureNotFound);
}

TEST(MultiAccuracy, GlobalAndStratumOnTheirOwnData) {
  const auto cal = testing_support::three_feature_data(4000, RngSeed{12});
  const auto labels = cal.labels();
  const std::vector<double> y(labels.begin(), labels.end());
  const auto global = fit_global_multiplicative(cal);
  std::vector<double> out;
  for (const auto& r : cal.rows()) out.push_back(apply(global, *r.score, r.features));
  ASSERT_LT(*std::max_element(out.begin(), out.end()), 1.0);  // no clamping
  EXPECT_NEAR(weighted_mean(out, cal.weights()), weighted_mean(y, cal.weights()), 1e-9);

  const auto groups = GroupSpec::by_features(cal.schema(), {"A", "B"});
  const auto stratum = fit_stratum_additive(cal, groups);
  std::map<std::string, std::pair<double, double>> gap;  // sum calibrated, sum label
  for (const auto& r : cal.rows()) {
    const double v = apply(stratum, *r.score, r.features);
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
    gap[groups(r.features)].first += v;
    gap[groups(r.features)].second += *r.label;
  }
  EXPECT_EQ(gap.size(), 6U);
  for (const auto& [g, s] : gap) EXPECT_NEAR(s.first, s.second, 1e-9 * cal.size()) << g;
}

TEST(AllCalibrators, OutputStaysInUnitInterval) {
  const auto cal = sim_sample(2000, 0.5, 4);
  Rng rng(RngSeed{6});
  for (const auto& c : all_calibrators(cal)) {
    for (int i = 0; i < 2000; ++i) {
      const double s = i < 2 ? static_cast<double>(i) : rng.uniform();
      const FeatureVector x({{0, static_cast<CategoryId>(rng.below(2))}}, {});
      const double v = apply(c, s, x);
      ASSERT_GE(v, 0.0) << c.id;
      ASSERT_LE(v, 1.0) << c.id;
    }
  }
  // large offsets clamp
  StratumAdditive big{GroupSpec::by_features(cal.schema(), {"X"}), {{"X=0", 0.9}, {"X=1", -0.9}}, 0.0};
  EXPECT_EQ(apply(Calibrator{"stratum", big, {}}, 0.5, FeatureVector({{0, 0}}, {})), 1.0);
  EXPECT_EQ(apply(Calibrator{"stratum", big, {}}, 0.5, FeatureVector({{0, 1}}, {})), 0.0);
}

TEST(Boosted, RecoversStrataOnSimulationData) {
  const auto cal = sim_sample(10000, 0.5, 2026);
  const auto c = fit_boosted_multicalibrator(cal, BoostConfig{}, RngSeed{1});
  const auto& e = std::get<BoostedEnsemble>(c.model);
  EXPECT_GE(e.rounds.size(), 1U);
  EXPECT_LE(e.rounds.size(), 100U);
  for (const auto& r : e.rounds) EXPECT_GT(r.alpha, 0.0);
  EXPECT_NEAR(apply(c, 0.135, FeatureVector({{0, 0}}, {})), 0.15, 0.01);
  EXPECT_NEAR(apply(c, 0.935, FeatureVector({{0, 1}}, {})), 0.85, 0.01);
}

TEST(Boosted, CalibratedMeanIsUnbiasedAcrossShifts) {
  // Bias is an expectation over calibration draws: one n = 1e4 fit carries
  // about 3% relative sampling noise at the X=0 extreme, so average 20 fits.
  const int fits = 20;
  double level0 = 0.0, level1 = 0.0;
  for (int k = 0; k < fits; ++k) {
    const auto cal = sim_sample(10000, 0.5, 5000 + static_cast<std::uint64_t>(k));
    const auto c = fit_boosted_multicalibrator(cal, BoostConfig{}, RngSeed{static_cast<std::uint64_t>(k)});
    level0 += apply(c, 0.135, FeatureVector({{0, 0}}, {})) / fits;
    level1 += apply(c, 0.935, FeatureVector({{0, 1}}, {})) / fits;
  }
  for (double q : linspace(0.01, 0.99, 20)) {
    const double truth = q * 0.15 + (1 - q) * 0.85;
    EXPECT_LT(std::abs(q * level0 + (1 - q) * level1 - truth) / truth, 0.01) << q;
  }
}

TEST(Boosted, AlreadyCalibratedInputIsNearlyUnchanged) {
  for (std::uint64_t seed : {1, 2, 3}) {
    SimConfig config;
    config.n = 10000;
    config.score_x0 = config.p_y_given_x0;
    config.score_x1 = config.p_y_given_x1;
    const auto cal = generate(config, 0.5, RngSeed{100 + seed});
    const auto c = fit_boosted_multicalibrator(cal, BoostConfig{}, RngSeed{seed});
    double change = 0.0;
    for (const auto& r : cal.rows()) change += std::abs(apply(c, *r.score, r.features) - *r.score);
    EXPECT_LT(change / cal.size(), 0.01) << "seed " << seed;
  }
}

TEST(Boosted, ConstantFeatureActsLikeGlobalRecalibration) {
  Schema schema{{FeatureDecl{"C", FeatureKind::Categorical, {"only"}}}};
  Rng rng(RngSeed{44});
  std::vector<Row> rows;
  for (int i = 0; i < 10000; ++i) {
    const double s = 0.02 + 0.96 * rng.uniform();
    const double p = s * s;  // overconfident scores
    rows.push_back(Row{FeatureVector({{0, 0}}, {}), rng.uniform() < p ? 1 : 0, s, 1.0});
  }
  const Dataset cal(schema, rows);
  const auto boosted = fit_boosted_multicalibrator(cal, BoostConfig{}, RngSeed{2});
  const auto iso = fit_isotonic(cal);
  double diff = 0.0;
  for (const auto& r : cal.rows()) diff += std::abs(apply(boosted, *r.score, r.features) - apply(iso, *r.score, r.features));
  EXPECT_LT(diff / cal.size(), 0.02);
}

TEST(Boosted, UniversalAdaptabilityUnderReweighting) {
  const auto cal = testing_support::three_feature_data(20000, RngSeed{71});
  const auto eval = testing_support::three_feature_data(20000, RngSeed{72});
  const auto c = fit_boosted_multicalibrator(cal, BoostConfig{}, RngSeed{73});
  std::vector<double> calibrated;
  for (const auto& r : eval.rows()) calibrated.push_back(apply(c, *r.score, r.features));
  const auto labels = eval.labels();
  Rng rng(RngSeed{74});
  int within = 0;
  int raw_within = 0;
  for (int k = 0; k < 20; ++k) {
    const auto w = testing_support::random_tilt(eval, rng);
    const auto g = testing_support::weighted_gap(calibrated, labels, w);
    within += std::abs(g.gap) < 3.0 * g.standard_error;
    const auto raw = testing_support::weighted_gap(eval.scores(), labels, w);
    raw_within += std::abs(raw.gap) < 3.0 * raw.standard_error;
  }
  EXPECT_GE(within, 18);
  EXPECT_LT(raw_within, 10);  // the raw score really is group-biased
}

TEST(StratumAdditive, UniversalAdaptabilityAlongGroupFeatures) {
  const auto cal = testing_support::three_feature_data(20000, RngSeed{81});
  const auto eval = testing_support::three_feature_data(20000, RngSeed{82});
  // groups on all three features, Z binned in quarters
  const auto groups = GroupSpec::by_features(cal.schema(), {"A", "B", "Z"}, {{"Z", {0.25, 0.5, 0.75}}});
  const auto c = fit_stratum_additive(cal, groups);
  Rng rng(RngSeed{83});
  int within = 0;
  for (int k = 0; k < 20; ++k) {
    // tilt constant within each group cell, so the identity holds exactly in expectation
    std::map<std::string, double> cell_weight;
    std::vector<double> w;
    std::vector<double> calibrated;
    for (const auto& r : eval.rows()) {
      const auto key = groups(r.features);
      if (!cell_weight.count(key)) cell_weight[key] = std::exp(rng.normal());
      w.push_back(cell_weight[key]);
      calibrated.push_back(apply(c, *r.score, r.features));
    }
    const auto g = testing_support::weighted_gap(calibrated, eval.labels(), w);
    within += std::abs(g.gap) < 3.0 * g.standard_error;
  }
  EXPECT_GE(within, 18);
}

TEST(Boosted, ConfigValidationAndDataRequirements) {
  const auto cal = sim_sample(400, 0.5, 1);
  EXPECT_EQ(code_of([&] { fit_boosted_multicalibrator(cal, BoostConfig{}, RngSeed{1}); }),
            ErrorCode::InsufficientData);
  BoostConfig bad;
  bad.validation_fraction = 1.0;
  EXPECT_EQ(code_of([&] { fit_boosted_multicalibrator(cal, bad, RngSeed{1}); }), ErrorCode::InvalidConfig);
  bad = BoostConfig{};
  bad.squash_epsilon = 0.5;
  EXPECT_EQ(code_of([&] { fit_boosted_multicalibrator(cal, bad, RngSeed{1}); }), ErrorCode::InvalidEpsilon);
}

TEST(Boosted, DeterministicGivenSeed) {
  const auto cal = testing_support::three_feature_data(3000, RngSeed{5});
  BoostConfig bc;
  bc.min_leaf = 30;
  const auto a = fit_boosted_multicalibrator(cal, bc, RngSeed{9});
  const auto b = fit_boosted_multicalibrator(cal, bc, RngSeed{9});
  for (const auto& r : cal.rows()) ASSERT_EQ(apply(a, *r.score, r.features), apply(b, *r.score, r.features));
}
