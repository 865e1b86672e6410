#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prescribe/event_log.h"
#include "prescribe/policy.h"

namespace prescribe::synth {

// Drawn feature values by name; categorical values as strings.
struct Sample {
  std::map<std::string, double> numeric;
  std::map<std::string, std::string> categorical;
};

// Sum of terms separated by whitespace, each signed:
//   3.5          constant
//   -2*x1        linear
//   4*max0(x2-0.5), 4*min0(x2-0.5)   hinge at a knot
//   1.5*[channel=web]                indicator of a categorical level
// A bare factor has coefficient 1 (e.g. "+x1").
class Expression {
 public:
  enum class Shape { kConstant, kLinear, kPositivePart, kNegativePart, kIndicator };
  struct Term {
    double coef = 0;
    Shape shape = Shape::kConstant;
    std::string feature;
    double knot = 0;
    std::string level;
  };

  static Expression parse(std::string_view text);
  double evaluate(const Sample& s) const;
  const std::vector<Term>& terms() const { return terms_; }
  std::vector<std::string> referenced_features() const;

 private:
  std::vector<Term> terms_;
};

struct FeatureDistribution {
  enum class Kind { kUniform, kNormal, kBernoulli, kCategorical };
  Kind kind = Kind::kUniform;
  double a = 0, b = 1;  // uniform bounds | normal mean, sd | bernoulli p
  std::vector<std::pair<std::string, double>> levels;

  static FeatureDistribution parse(std::string_view text);
};

// Key-value spec (see README for the full format).
struct SyntheticSpec {
  std::size_t n_cases = 1000;
  std::uint64_t seed = 1;
  Instant start;
  double arrival_mean_hours = 1.0;
  double gap_mean_hours = 1.0;  // spacing of pre-completion events
  std::vector<std::string> activities = {"Review", "Check", "Update"};
  std::string start_activity = "Start";
  std::string end_activity = "End";
  std::string treatment_activity = "Treat";
  int fillers_min = 1;
  int fillers_max = 4;
  std::vector<std::string> resources = {"R1", "R2", "R3"};
  std::vector<std::pair<std::string, FeatureDistribution>> features;
  Expression effect;      // theta(x), days
  Expression baseline;    // f(X, W), days
  Expression propensity;  // logit of g(X, W)
  double noise_y = 1.0;
  double noise_t = 0.0;  // sd of logit perturbation
  double hidden_t = 0.0;  // hidden confounder loading on the logit
  double hidden_y = 0.0;  // hidden confounder loading on the outcome, days

  static SyntheticSpec parse(const KeyValueConfig& cfg);
  static SyntheticSpec load(const std::filesystem::path& path);
  void validate() const;
};

struct GroundTruth {
  std::string case_id;
  int t = 0;
  double propensity = 0;
  double theta = 0;  // Y1 - Y0, days
  double y0 = 0;
  double y1 = 0;
  double y = 0;  // observed
  double hidden = 0;
  Sample features;
};

struct SyntheticData {
  eventlog::EventLog log;
  std::vector<GroundTruth> truth;
};

SyntheticData generate(const SyntheticSpec& spec);

// Column mapping and featurization settings matching generated logs.
KeyValueConfig log_config(const SyntheticSpec& spec);

// Writes <out>/log/log.csv, <out>/log/log.cfg and <out>/truth/truth.csv.
void write_outputs(const SyntheticData& data, const SyntheticSpec& spec,
                   const std::filesystem::path& out);
std::vector<GroundTruth> read_truth(const std::filesystem::path& path);

// Gain from treating the true-best n% (ascending theta, ties by case_id).
double oracle_policy_gain(const std::vector<GroundTruth>& truth, const policy::CostModel& cost,
                          double n_percent);
// Grid point (step 1) with the highest oracle gain; ties to the smallest n.
double oracle_best_percent(const std::vector<GroundTruth>& truth, const policy::CostModel& cost);
// Realized gain of treating exactly the cases in `treated_ids`.
double realized_gain(const std::vector<GroundTruth>& truth, const policy::CostModel& cost,
                     const std::vector<std::string>& treated_ids);

}  // namespace prescribe::synth
