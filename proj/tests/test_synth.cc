#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "prescribe/error.h"
#include "prescribe/features.h"
#include "prescribe/synth.h"
#include "test_support.h"

namespace prescribe::synth {
namespace {

using testing::spec_from;

std::string base_spec(std::size_t n, std::uint64_t seed, const std::string& effect,
                      const std::string& extra = "") {
  return "n_cases = " + std::to_string(n) + "\nseed = " + std::to_string(seed) +
         "\nstart = 2022-01-03T00:00:00Z\n"
         "feature.x1 = uniform 0 1\n"
         "feature.x2 = normal 0 1\n"
         "effect = " + effect + "\n"
         "baseline = 20 +5*x1 +2*x2\n"
         "propensity = -0.5 +1*x1\n"
         "noise_y = 1\n" + extra;
}

TEST(Expression, ParsesAllTermShapes) {
  const auto e = Expression::parse("3.5 -2*x1 +4*max0(x2-0.5) +4*min0(x2-0.5) +1.5*[channel=web] +x3");
  ASSERT_EQ(e.terms().size(), 6u);
  Sample s;
  s.numeric = {{"x1", 1.0}, {"x2", 0.75}, {"x3", 2.0}};
  s.categorical = {{"channel", "web"}};
  EXPECT_DOUBLE_EQ(e.evaluate(s), 3.5 - 2 + 4 * 0.25 + 0 + 1.5 + 2);
  s.numeric["x2"] = 0.25;
  s.categorical["channel"] = "phone";
  EXPECT_DOUBLE_EQ(e.evaluate(s), 3.5 - 2 + 0 + 4 * -0.25 + 0 + 2);
  EXPECT_THROW(Expression::parse("2*"), ConfigError);
}

TEST(Distribution, Parses) {
  const auto c = FeatureDistribution::parse("categorical a:0.25 b:0.75");
  EXPECT_EQ(c.kind, FeatureDistribution::Kind::kCategorical);
  EXPECT_EQ(c.levels.size(), 2u);
  const auto n = FeatureDistribution::parse("normal 1 2");
  EXPECT_EQ(n.kind, FeatureDistribution::Kind::kNormal);
  EXPECT_EQ(n.b, 2.0);
  EXPECT_THROW(FeatureDistribution::parse("zipf 3"), ConfigError);
}

TEST(Generate, ZeroEffectOracleTreatsNobody) {
  const auto data = generate(spec_from(base_spec(500, 1, "0")));
  EXPECT_EQ(oracle_best_percent(data.truth, {1, 1}), 0.0);
  EXPECT_EQ(oracle_policy_gain(data.truth, {1, 1}, 0), 0.0);
  EXPECT_LT(oracle_policy_gain(data.truth, {1, 1}, 50), 0.0);
}

TEST(Generate, MeanEffectMatchesExpectation) {
  const auto data = generate(spec_from(base_spec(20000, 2, "-5 -10*x1")));
  double sum = 0;
  for (const auto& g : data.truth) sum += g.theta;
  // sd of theta is 10/sqrt(12); the tolerance is ~5 standard errors.
  EXPECT_NEAR(sum / data.truth.size(), -10.0, 0.1);
}

TEST(Generate, HiddenConfounderBiasesNaiveContrast) {
  const auto spec = spec_from(base_spec(6000, 3, "-3", "hidden_t = 2\nhidden_y = 5\n"));
  const auto data = generate(spec);
  double y1 = 0, y0 = 0, n1 = 0, n0 = 0, theta = 0;
  for (const auto& g : data.truth) {
    (g.t ? y1 : y0) += g.y;
    (g.t ? n1 : n0) += 1;
    theta += g.theta;
  }
  const double dim = y1 / n1 - y0 / n0;
  EXPECT_GT(std::abs(dim - theta / data.truth.size()), 2 * spec.noise_y);
}

TEST(Generate, PotentialOutcomesConsistentWithLog) {
  const auto spec = spec_from(base_spec(400, 4, "-5 -10*x1"));
  const auto data = generate(spec);
  ASSERT_EQ(data.log.traces.size(), data.truth.size());
  for (std::size_t i = 0; i < data.truth.size(); ++i) {
    const auto& g = data.truth[i];
    const auto& t = data.log.traces[i];
    EXPECT_EQ(t.case_id, g.case_id);
    EXPECT_DOUBLE_EQ(g.y, g.t ? g.y1 : g.y0);
    EXPECT_NEAR(g.theta, g.y1 - g.y0, 1e-9);
    EXPECT_NEAR(t.duration_days(), g.y, 1e-7);
    const int occ = features::first_occurrence(t, spec.treatment_activity);
    EXPECT_EQ(occ > 0, g.t == 1);
    EXPECT_EQ(t.events.front().activity, spec.start_activity);
    EXPECT_EQ(t.events.back().activity, spec.end_activity);
    for (std::size_t e = 1; e < t.events.size(); ++e) EXPECT_LE(t.events[e - 1].timestamp, t.events[e].timestamp);
  }
}

TEST(Generate, TreatmentRateFollowsPropensity) {
  const auto data = generate(spec_from(base_spec(20000, 5, "-2")));
  std::vector<const GroundTruth*> sorted;
  for (const auto& g : data.truth) sorted.push_back(&g);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->propensity < b->propensity; });
  for (int s = 0; s < 5; ++s) {
    double p = 0, t = 0;
    const std::size_t lo = s * sorted.size() / 5, hi = (s + 1) * sorted.size() / 5;
    for (std::size_t i = lo; i < hi; ++i) p += sorted[i]->propensity, t += sorted[i]->t;
    EXPECT_NEAR(t / (hi - lo), p / (hi - lo), 0.03) << "stratum " << s;
  }
}

TEST(Generate, ByteIdenticalRegeneration) {
  const auto spec = spec_from(base_spec(300, 6, "-5 -10*x1"));
  const auto root = std::filesystem::temp_directory_path() / "prescribe_synth_regen";
  std::filesystem::remove_all(root);
  write_outputs(generate(spec), spec, root / "a");
  write_outputs(generate(spec), spec, root / "b");
  for (const char* f : {"log/log.csv", "log/log.cfg", "truth/truth.csv"})
    EXPECT_EQ(read_file(root / "a" / f), read_file(root / "b" / f)) << f;
  const auto truth = read_truth(root / "a" / "truth" / "truth.csv");
  const auto fresh = generate(spec).truth;
  ASSERT_EQ(truth.size(), fresh.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    EXPECT_EQ(truth[i].theta, fresh[i].theta);
    EXPECT_EQ(truth[i].y, fresh[i].y);
    EXPECT_EQ(truth[i].t, fresh[i].t);
  }
  // Another seed gives a different log.
  auto other = spec;
  other.seed = 7;
  write_outputs(generate(other), other, root / "c");
  EXPECT_NE(read_file(root / "a" / "log/log.csv"), read_file(root / "c" / "log/log.csv"));
  std::filesystem::remove_all(root);
}

void set_theta(GroundTruth& g, double theta) {
  g.theta = theta;
  g.y0 = 10;
  g.y1 = 10 + theta;
}

std::vector<GroundTruth> constant_truth(std::size_t n, double theta) {
  std::vector<GroundTruth> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].case_id = "c" + std::to_string(i);
    set_theta(out[i], theta);
  }
  return out;
}

TEST(OracleGain, HandEvaluated) {
  const auto truth = constant_truth(10, -5);
  EXPECT_DOUBLE_EQ(oracle_policy_gain(truth, {1, 1}, 100), 40.0);
  EXPECT_DOUBLE_EQ(oracle_policy_gain(truth, {1, 1}, 0), 0.0);
  EXPECT_DOUBLE_EQ(oracle_policy_gain(truth, {1, 1}, 50), 20.0);
  EXPECT_EQ(oracle_best_percent(truth, {1, 1}), 100.0);
  EXPECT_DOUBLE_EQ(realized_gain(truth, {1, 1}, {"c0", "c3"}), 8.0);
}

TEST(OracleGain, TreatsBestCasesFirst) {
  auto truth = constant_truth(4, 0);
  set_theta(truth[0], 2);
  set_theta(truth[1], -6);
  set_theta(truth[2], -1);
  set_theta(truth[3], -3);
  // Best quarter is c1 alone.
  EXPECT_DOUBLE_EQ(oracle_policy_gain(truth, {1, 2}, 25), 4.0);
  EXPECT_DOUBLE_EQ(oracle_policy_gain(truth, {1, 2}, 50), 4.0 + 1.0);
  EXPECT_EQ(oracle_best_percent(truth, {1, 2}), 50.0);
}

TEST(Spec, ValidationErrors) {
  EXPECT_THROW(spec_from("n_cases = 10\n"), ConfigError);  // no effect
  EXPECT_THROW(spec_from(base_spec(10, 1, "-5*zz")).validate(), ConfigError);
  EXPECT_THROW(spec_from(base_spec(10, 1, "-5", "fillers_min = 5\nfillers_max = 2\n")).validate(), ConfigError);
}

}  // namespace
}  // namespace prescribe::synth
