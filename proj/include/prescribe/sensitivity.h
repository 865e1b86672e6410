#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "prescribe/orf.h"

namespace prescribe::sensitivity {

// Per-row quantities on the evaluation split that the confounding model
// needs: propensity, treatment, and squared outcome residuals of
// Q(T, X) = Yhat(X) + theta(X) * (T - g(X)).
struct FrontierInputs {
  std::vector<double> propensity;
  std::vector<int> t;
  double outcome_mse = 0;

  static FrontierInputs from_model(const orf::OrfModel& model, const orf::TrainingData& eval,
                                   const std::vector<double>& theta);
};

// Hypothetical confounder with treatment influence alpha and outcome
// influence partial_r2 (logit-Beta treatment model): ATE bias it induces.
double induced_bias(const FrontierInputs& in, double alpha, double partial_r2);
// Closed-form partial R^2 needed for `bias` at `alpha` (may exceed 1).
double required_partial_r2(const FrontierInputs& in, double alpha, double bias);

struct FrontierPoint {
  double alpha = 0;
  double partial_r2 = 0;
};

// alpha_j = j / (grid + 1), j = 1..grid; partial R^2 by bisection to 1e-6.
// Points needing partial R^2 > 1 are omitted; FrontierUndefined if none
// remain.
std::vector<FrontierPoint> bias_frontier(const FrontierInputs& in, double target_bias, int grid = 100);

struct SensitivityPoint {
  std::string group;
  double alpha = 0;
  double partial_r2 = 0;
};

// Refits propensity (logistic on X) and outcome (lasso on [X, T]) with and
// without the group's columns on `train`, scores both on `eval`.
SensitivityPoint covariate_influence(const orf::TrainingData& train, const orf::TrainingData& eval,
                                     const std::vector<std::size_t>& group_columns,
                                     const std::string& name, double lambda);

enum class Verdict { kRobust, kSensitive };
std::string to_string(Verdict v);

// A point lies below the frontier when its partial R^2 is strictly less than
// the partial R^2 required at its alpha.
bool below_frontier(const FrontierInputs& in, double target_bias, const SensitivityPoint& p);
Verdict verdict(const FrontierInputs& in, double target_bias, const std::vector<SensitivityPoint>& points);

struct SensitivityReport {
  double target_bias = 0;
  std::vector<FrontierPoint> frontier;
  std::vector<SensitivityPoint> points;
  Verdict verdict = Verdict::kRobust;
};

nlohmann::json to_json(const SensitivityReport& r);
// frontier.csv, points.csv, sensitivity.json
void write_report(const SensitivityReport& r, const std::filesystem::path& dir);

}  // namespace prescribe::sensitivity
