#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace prescribe::policy {

struct QiniInput {
  std::vector<std::string> case_ids;
  std::vector<double> theta;  // estimated effect, days
  std::vector<int> t;
  std::vector<double> y;  // observed cycle time, days

  std::size_t size() const { return theta.size(); }
  void validate() const;
};

// Ascending by theta, ties by case_id.
std::vector<std::size_t> ascending_order(const QiniInput& input);

struct QiniPoint {
  double n_percent = 0;
  std::size_t selected = 0;  // |pi(n)|
  std::size_t treated = 0;   // N^{T=1}
  std::size_t control = 0;   // N^{T=0}
  double qini = 0;
  double baseline = 0;
  bool carried = false;  // undefined at this n; value carried from the previous point
};

struct QiniCurve {
  double grid_step = 1.0;
  std::vector<QiniPoint> points;
  std::vector<std::size_t> order;
  std::vector<double> sorted_theta;
  double coefficient_raw = 0;  // trapezoid area between curve and baseline
  double coefficient = 0;      // area divided by the 100-point span
  double fraction_on_or_above = 0;

  std::size_t cases() const { return order.size(); }
};

// Cases in pi(n) for grid index i of `steps` (n = 100 i / steps).
std::size_t prefix_count(std::size_t i, std::size_t steps, std::size_t n_cases);

QiniCurve qini_curve(const QiniInput& input, double grid_step = 1.0);

struct PermutationTest {
  double observed = 0;
  double p_value = 1;
  int shuffles = 0;
};

// Compares the normalized coefficient against random orderings.
PermutationTest qini_permutation_test(const QiniInput& input, int shuffles, std::uint64_t seed,
                                      double grid_step = 1.0);

struct CostModel {
  double v = 1.0;  // value of one day of reduction
  double c = 0.0;  // cost of treating one case

  void validate() const;
  double case_gain(double theta) const { return v * -theta - c; }
};

struct NetValuePoint {
  double n_percent = 0;
  double gain = 0;
};

std::vector<NetValuePoint> net_value_curve(const QiniCurve& curve, const CostModel& cost);

enum class ThresholdKind { kTopFraction, kEffectThreshold };
std::string to_string(ThresholdKind k);
ThresholdKind parse_threshold_kind(const std::string& text);

struct Policy {
  int version = 0;
  ThresholdKind kind = ThresholdKind::kEffectThreshold;
  double top_fraction = 0;              // in [0,1]
  std::optional<double> theta_threshold;  // none = treat nobody
  CostModel cost;
  std::string selected_by = "auto";  // auto | target | user
  std::optional<double> target_gain;
  std::string curve_hash;
  double expected_gain = 0;

  void validate() const;
  // Treat iff a threshold exists, theta <= threshold and the single-case
  // net gain is positive.
  bool treats(double theta) const;
};

nlohmann::json to_json(const Policy& p);
Policy policy_from_json(const nlohmann::json& j);

// Effect threshold for treating the first `count` cases of the curve order.
std::optional<double> boundary_theta(const QiniCurve& curve, std::size_t count);

// Fills theta_threshold for a top-fraction policy: the boundary effect of the
// first floor(top_fraction * N) cases of the curve order.
Policy resolve_top_fraction(const QiniCurve& curve, Policy p);

// Without a target: argmax gain, ties to the smallest n. With a target: the
// smallest n whose gain reaches it (TargetUnreachable otherwise).
Policy select_policy(const QiniCurve& curve, const std::vector<NetValuePoint>& net,
                     const CostModel& cost, std::optional<double> target_gain = std::nullopt);

struct EvaluationReport {
  QiniCurve curve;
  std::vector<double> vc_grid;
  std::vector<std::vector<NetValuePoint>> net_curves;  // one per v/c, with c = 1
  bool above_baseline = false;
  std::size_t cases = 0;
  std::size_t abstained = 0;
  std::optional<PermutationTest> permutation;
};

EvaluationReport evaluate(const QiniInput& input, const std::vector<double>& vc_grid,
                          double grid_step = 1.0, int permutation_shuffles = 0,
                          std::uint64_t seed = 0);

std::string curve_csv(const EvaluationReport& report);
nlohmann::json curve_json(const EvaluationReport& report);
std::string curve_hash(const EvaluationReport& report);
// Rebuilds the points and effect order written by curve_json (enough for
// net-value curves and policy selection).
QiniCurve curve_from_json(const nlohmann::json& j);

// Writes curve.csv, curves.json and estimates.csv into `dir`.
void write_report(const EvaluationReport& report, const QiniInput& input,
                  const std::vector<double>& ci_low, const std::vector<double>& ci_high,
                  const std::filesystem::path& dir);
// Reads estimates.csv back.
QiniInput read_estimates(const std::filesystem::path& dir);

}  // namespace prescribe::policy
