#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "prescribe/error.h"
#include "prescribe/policy.h"
#include "prescribe/rng.h"

namespace prescribe::policy {
namespace {

QiniInput four_cases() {
  QiniInput in;
  in.case_ids = {"A", "B", "C", "D"};
  in.theta = {-3, -2, 1, 2};
  in.t = {1, 0, 1, 0};
  in.y = {10, 20, 5, 7};
  return in;
}

const QiniPoint& at_percent(const QiniCurve& c, double n) {
  for (const auto& p : c.points)
    if (std::abs(p.n_percent - n) < 1e-9) return p;
  throw std::out_of_range("no grid point");
}

// Cases where smaller y under treatment lines up with smaller theta.
QiniInput informative(std::uint64_t seed, std::size_t n, bool use_truth) {
  Rng rng(seed);
  QiniInput in;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform();
    const double theta = -10 * x;
    const int t = rng.bernoulli(0.5);
    in.case_ids.push_back("c" + std::to_string(i));
    in.theta.push_back(use_truth ? theta : rng.normal());
    in.t.push_back(t);
    in.y.push_back(30 + 2 * rng.normal() + theta * t);
  }
  return in;
}

TEST(Qini, HandEvaluatedHalf) {
  const auto c = qini_curve(four_cases());
  const auto& p = at_percent(c, 50);
  EXPECT_EQ(p.selected, 2u);
  EXPECT_EQ(p.treated, 1u);
  EXPECT_EQ(p.control, 1u);
  EXPECT_DOUBLE_EQ(p.qini, 10.0);
  EXPECT_EQ(at_percent(c, 0).qini, 0.0);
  // All four: controls 27 scaled to two treated minus 15.
  EXPECT_DOUBLE_EQ(at_percent(c, 100).qini, 27.0 * 2 / 2 - 15);
  EXPECT_EQ(c.points.size(), 101u);
}

TEST(Qini, UndefinedPointsCarryForward) {
  auto in = four_cases();
  in.t = {1, 1, 0, 0};
  const auto c = qini_curve(in);
  // pi(25%) = {A}: no control yet.
  EXPECT_TRUE(at_percent(c, 25).carried);
  EXPECT_EQ(at_percent(c, 25).qini, at_percent(c, 24).qini);
  EXPECT_FALSE(at_percent(c, 75).carried);
}

TEST(Qini, ValidationErrors) {
  auto in = four_cases();
  in.t = {1, 1, 1, 1};
  EXPECT_THROW(qini_curve(in), NoVariation);
  in = four_cases();
  in.y.pop_back();
  EXPECT_ANY_THROW(qini_curve(in));
}

TEST(Qini, TiesBrokenByCaseId) {
  auto in = four_cases();
  in.theta = {0, 0, 0, 0};
  in.case_ids = {"d", "c", "b", "a"};
  EXPECT_EQ(ascending_order(in), (std::vector<std::size_t>{3, 2, 1, 0}));
}

TEST(QiniProperty, FullSelectionIgnoresOrdering) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto in = informative(seed, 80, true);
    const double full = at_percent(qini_curve(in), 100).qini;
    Rng rng(seed + 100);
    for (auto& th : in.theta) th = rng.normal();
    EXPECT_NEAR(at_percent(qini_curve(in), 100).qini, full, 1e-9 * std::max(1.0, std::abs(full)));
  }
}

TEST(QiniProperty, MonotoneTransformLeavesCurveUnchanged) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto in = informative(seed, 120, seed % 2 == 0);
    auto moved = in;
    for (auto& th : moved.theta) th = std::exp(th / 4) * 3 + 1;
    const auto a = qini_curve(in), b = qini_curve(moved);
    ASSERT_EQ(a.points.size(), b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i].qini, b.points[i].qini);
    EXPECT_EQ(a.coefficient, b.coefficient);
  }
}

TEST(QiniProperty, OutcomeScaleEquivariance) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto in = informative(seed, 100, true);
    auto scaled = in;
    for (auto& y : scaled.y) y *= 2.5;
    const auto a = qini_curve(in), b = qini_curve(scaled);
    for (std::size_t i = 0; i < a.points.size(); ++i)
      EXPECT_NEAR(b.points[i].qini, 2.5 * a.points[i].qini, 1e-9 * (1 + std::abs(a.points[i].qini)));
    EXPECT_NEAR(b.coefficient, 2.5 * a.coefficient, 1e-9 * (1 + std::abs(a.coefficient)));
  }
}

TEST(QiniProperty, CoefficientIsNormalizedTrapezoid) {
  const auto c = qini_curve(informative(3, 200, true));
  double area = 0;
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    const auto& a = c.points[i - 1];
    const auto& b = c.points[i];
    area += 0.5 * (b.n_percent - a.n_percent) * ((a.qini - a.baseline) + (b.qini - b.baseline));
  }
  EXPECT_NEAR(c.coefficient_raw, area, 1e-9 * std::abs(area));
  EXPECT_NEAR(c.coefficient, area / 100, 1e-9 * std::abs(area));
}

TEST(NetValue, HandEvaluatedGain) {
  const auto c = qini_curve(four_cases());
  const auto net = net_value_curve(c, {1, 2});
  EXPECT_DOUBLE_EQ(net[50].gain, 8.0);
  const auto free = net_value_curve(c, {3, 0});
  for (std::size_t i = 0; i < c.points.size(); ++i) EXPECT_DOUBLE_EQ(free[i].gain, 3 * c.points[i].qini);
  EXPECT_THROW(net_value_curve(c, {0, 1}), ConfigError);
}

TEST(NetValue, CostScalingKeepsArgmax) {
  const auto c = qini_curve(informative(4, 300, true));
  for (double vc : {0.3, 1.0, 3.0}) {
    const auto a = net_value_curve(c, {vc, 1});
    const auto b = net_value_curve(c, {vc * 7, 7});
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i].gain, 7 * a[i].gain, 1e-9 * (1 + std::abs(a[i].gain)));
    EXPECT_EQ(select_policy(c, a, {vc, 1}).top_fraction, select_policy(c, b, {vc * 7, 7}).top_fraction);
  }
}

std::vector<NetValuePoint> shaped(const QiniCurve& c, auto f) {
  std::vector<NetValuePoint> out;
  for (const auto& p : c.points) out.push_back({p.n_percent, f(p.n_percent)});
  return out;
}

TEST(Select, UnimodalPeak) {
  const auto c = qini_curve(informative(5, 100, true));
  const auto net = shaped(c, [](double n) { return -(n - 70) * (n - 70); });
  const auto p = select_policy(c, net, {1, 1});
  EXPECT_DOUBLE_EQ(p.top_fraction, 0.7);
  EXPECT_EQ(p.theta_threshold, c.sorted_theta[69]);
  EXPECT_EQ(p.selected_by, "auto");
  EXPECT_EQ(p.expected_gain, 0.0);
}

TEST(Select, MonotoneTreatsAll) {
  const auto c = qini_curve(informative(6, 100, true));
  const auto p = select_policy(c, shaped(c, [](double n) { return n; }), {1, 1});
  EXPECT_DOUBLE_EQ(p.top_fraction, 1.0);
  EXPECT_EQ(p.theta_threshold, c.sorted_theta.back());
}

TEST(Select, TiesGoToSmallestFraction) {
  const auto c = qini_curve(informative(6, 100, true));
  const auto p = select_policy(c, shaped(c, [](double n) { return std::min(n, 40.0); }), {1, 1});
  EXPECT_DOUBLE_EQ(p.top_fraction, 0.4);
  const auto none = select_policy(c, shaped(c, [](double n) { return -n; }), {1, 1});
  EXPECT_EQ(none.top_fraction, 0.0);
  EXPECT_FALSE(none.theta_threshold);
  EXPECT_FALSE(none.treats(-100));
}

TEST(Select, TargetGain) {
  const auto c = qini_curve(informative(7, 100, true));
  const auto net = shaped(c, [](double n) { return n < 50 ? n : 100 - n; });
  const auto p = select_policy(c, net, {1, 1}, 30.0);
  EXPECT_DOUBLE_EQ(p.top_fraction, 0.3);
  EXPECT_EQ(p.selected_by, "target");
  EXPECT_EQ(p.target_gain, 30.0);
  EXPECT_THROW(select_policy(c, net, {1, 1}, 1000.0), TargetUnreachable);
}

TEST(PolicyTreats, ThresholdAndPositiveGain) {
  Policy p;
  p.theta_threshold = -1.0;
  p.cost = {1, 2};
  EXPECT_TRUE(p.treats(-10));   // gain 8
  EXPECT_FALSE(p.treats(-1.5)); // gain -0.5
  EXPECT_FALSE(p.treats(1));
  p.cost = {1, 0};
  p.theta_threshold = 5.0;
  EXPECT_FALSE(p.treats(1));  // slows the case down
}

TEST(PolicyJson, RoundTrip) {
  Policy p;
  p.version = 3;
  p.kind = ThresholdKind::kTopFraction;
  p.top_fraction = 0.25;
  p.theta_threshold = -2.5;
  p.cost = {0.5, 1};
  p.selected_by = "target";
  p.target_gain = 12;
  p.curve_hash = "abc";
  p.expected_gain = 13.5;
  const auto back = policy_from_json(to_json(p));
  EXPECT_EQ(to_json(back), to_json(p));
  EXPECT_EQ(back.theta_threshold, p.theta_threshold);
  EXPECT_EQ(back.target_gain, p.target_gain);
}

TEST(PolicyResolve, TopFractionBoundary) {
  const auto c = qini_curve(informative(8, 50, true));
  Policy p;
  p.kind = ThresholdKind::kTopFraction;
  p.top_fraction = 0.2;
  const auto r = resolve_top_fraction(c, p);
  EXPECT_EQ(r.theta_threshold, c.sorted_theta[9]);
  p.top_fraction = 0;
  EXPECT_FALSE(resolve_top_fraction(c, p).theta_threshold);
}

// A model that ranks by noise on data without any effect: the coefficient
// sits inside the spread of randomly ordered coefficients.
TEST(QiniNull, NoiseRankingWithinPermutationSpread) {
  Rng rng(41);
  QiniInput in;
  for (int i = 0; i < 400; ++i) {
    in.case_ids.push_back("n" + std::to_string(i));
    in.theta.push_back(rng.normal());
    in.t.push_back(rng.bernoulli(0.5));
    in.y.push_back(20 + 3 * rng.normal());
  }
  const double observed = qini_curve(in).coefficient;
  std::vector<double> null;
  auto shuffled = in;
  for (int s = 0; s < 200; ++s) {
    for (auto& th : shuffled.theta) th = rng.uniform();
    null.push_back(qini_curve(shuffled).coefficient);
  }
  const double mean = std::accumulate(null.begin(), null.end(), 0.0) / null.size();
  double var = 0;
  for (double v : null) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (null.size() - 1));
  EXPECT_LT(std::abs(observed - mean), 3 * sd);
  const auto test = qini_permutation_test(in, 200, 5);
  EXPECT_GT(test.p_value, 0.01);
}

TEST(Evaluate, TruthBeatsShuffledOrdering) {
  const auto in = informative(9, 600, true);
  const auto rep = evaluate(in, {0.3, 0.5, 1.0}, 1.0, 300, 17);
  EXPECT_EQ(rep.net_curves.size(), 3u);
  ASSERT_TRUE(rep.permutation);
  EXPECT_LT(rep.permutation->p_value, 0.01);
  auto shuffled = in;
  Rng rng(2);
  rng.shuffle(shuffled.theta);
  EXPECT_GT(rep.curve.coefficient, qini_curve(shuffled).coefficient);
}

TEST(Evaluate, CurveJsonRoundTrip) {
  const auto in = informative(10, 150, true);
  const auto rep = evaluate(in, {0.5, 1.0}, 1.0, 0, 1);
  const auto j = curve_json(rep);
  const auto back = curve_from_json(j);
  ASSERT_EQ(back.points.size(), rep.curve.points.size());
  for (std::size_t i = 0; i < back.points.size(); ++i) {
    EXPECT_EQ(back.points[i].qini, rep.curve.points[i].qini);
    EXPECT_EQ(back.points[i].treated, rep.curve.points[i].treated);
  }
  EXPECT_EQ(back.sorted_theta, rep.curve.sorted_theta);
  const CostModel cost{1, 1};
  EXPECT_EQ(select_policy(back, net_value_curve(back, cost), cost).theta_threshold,
            select_policy(rep.curve, net_value_curve(rep.curve, cost), cost).theta_threshold);
  EXPECT_EQ(j.at("curve_hash").get<std::string>(), curve_hash(rep));
}

TEST(Evaluate, WriteAndReadEstimates) {
  const auto in = informative(11, 30, true);
  const auto rep = evaluate(in, {1.0});
  const auto dir = std::filesystem::temp_directory_path() / "prescribe_policy_report";
  std::filesystem::remove_all(dir);
  std::vector<double> lo(in.size(), -1), hi(in.size(), 1);
  write_report(rep, in, lo, hi, dir);
  const auto back = read_estimates(dir);
  EXPECT_EQ(back.case_ids, in.case_ids);
  EXPECT_EQ(back.theta, in.theta);
  EXPECT_EQ(back.y, in.y);
  EXPECT_EQ(back.t, in.t);
  EXPECT_TRUE(std::filesystem::exists(dir / "curves.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "curve.csv"));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace prescribe::policy
