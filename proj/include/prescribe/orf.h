#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prescribe/linear_models.h"

namespace prescribe::orf {

struct OrfHyperparams {
  int n_trees = 200;
  int min_leaf_size = 20;
  int max_depth = 30;
  double subsample_ratio = 0.4;  // per-tree draw fraction
  double lambda_reg = 0.01;
  bool honest = true;
  int bootstrap_groups = 20;
  std::uint64_t rng_seed = 0;
  int max_thresholds = 64;
  double propensity_clip = 0.01;
  unsigned threads = 0;  // 0 = hardware concurrency; never affects results

  void validate() const;
  void validate_for(std::size_t n_rows) const;
};

struct TrainingData {
  Eigen::MatrixXd x;
  Eigen::VectorXd t;
  Eigen::VectorXd y;

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
};

using RowRef = Eigen::Ref<const Eigen::RowVectorXd>;

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  int left = -1;
  int right = -1;
  int leaf = -1;  // index into CausalTree::leaves
};

struct CausalTree {
  std::vector<TreeNode> nodes;
  // Estimation-half training rows per leaf, ascending.
  std::vector<std::vector<std::uint32_t>> leaves;
  std::vector<std::uint32_t> split_half;
  std::vector<std::uint32_t> estimate_half;

  int leaf_of(const RowRef& x) const;
  int depth() const;
};

// Inputs shared by every split search in a forest.
struct SplitContext {
  const Eigen::MatrixXd& x;
  const Eigen::VectorXd& t;      // observed treatment (0/1)
  const Eigen::VectorXd& t_res;  // T - clipped global propensity
  const Eigen::VectorXd& y_res;  // Y - global outcome prediction
  int min_leaf_size;
  int max_thresholds;
};

struct SplitRule {
  int feature = -1;
  double threshold = 0;
  double score = 0;
};

// Candidate thresholds for the given values: midpoints between adjacent
// distinct values at up to `max_bins` quantile-bin boundaries, ascending.
std::vector<double> candidate_thresholds(std::vector<double> values, int max_bins);

// Centered least-squares slope of y_res on t_res over `rows`; nullopt when
// t_res has no spread.
std::optional<double> node_slope(const SplitContext& ctx, std::span<const std::uint32_t> rows);

// Best (feature, threshold) by n_L*n_R/(n_L+n_R)*(slope_L - slope_R)^2 on
// the split rows. A candidate is admissible when every child, in both the
// split and the estimation rows, holds >= min_leaf_size rows with at least
// one treated and one control. Ties: lowest feature, then lowest threshold.
std::optional<SplitRule> best_split(const SplitContext& ctx,
                                    std::span<const std::uint32_t> split_rows,
                                    std::span<const std::uint32_t> estimate_rows);

CausalTree grow_tree(const SplitContext& ctx, std::vector<std::uint32_t> split_rows,
                     std::vector<std::uint32_t> estimate_rows, int max_depth);

struct GlobalNuisance {
  LinearModel propensity;
  LinearModel outcome;
  bool propensity_warning = false;
};

struct OrfModel {
  OrfHyperparams hyperparams;
  std::vector<CausalTree> trees;
  GlobalNuisance nuisance;
  TrainingData train;
  std::vector<std::string> feature_names;
  std::uint64_t dictionary_hash = 0;
  std::uint64_t training_fingerprint = 0;
  // Serialized feature dictionary the columns were encoded with; opaque here.
  std::string dictionary;

  std::size_t width() const { return static_cast<std::size_t>(train.x.cols()); }
};

std::uint64_t fingerprint(const TrainingData& data);

OrfModel fit_forest(const TrainingData& data, const OrfHyperparams& hp);

struct KernelWeights {
  std::vector<std::uint32_t> rows;  // ascending
  std::vector<double> weights;

  double sum() const;
  double effective_n() const;
};

// Forest kernel over trees [tree_begin, tree_end).
KernelWeights kernel_weights(const OrfModel& model, const RowRef& x, std::size_t tree_begin = 0,
                             std::size_t tree_end = std::numeric_limits<std::size_t>::max());

// sum w*dy*dt / sum w*dt^2; throws DegenerateKernel below 1e-10.
double residual_slope(std::span<const double> dt, std::span<const double> dy,
                      std::span<const double> w);

struct EffectEstimate {
  double theta = 0;
  double ci_low = 0;
  double ci_high = 0;
  double kernel_effective_n = 0;
};

struct EstimateOptions {
  // Refit nuisances with kernel weights (otherwise use the global fits).
  bool local_nuisance = true;
  // Added to every outcome-nuisance prediction; used to probe sensitivity
  // to nuisance error.
  double outcome_bias = 0.0;
};

EffectEstimate estimate_effect(const OrfModel& model, const RowRef& x,
                               const EstimateOptions& options = {});

// Row-wise estimates; nullopt where the kernel is degenerate.
std::vector<std::optional<EffectEstimate>> estimate_effects(const OrfModel& model,
                                                            const Eigen::MatrixXd& x,
                                                            const EstimateOptions& options = {});

struct PositivityReport {
  double fraction_outside = 0;
  double p01 = 0;
  double p99 = 0;
  double lower = 0.01;
  double upper = 0.99;
  bool flagged = false;
};

PositivityReport check_positivity(const LinearModel& propensity, const Eigen::MatrixXd& x,
                                  double lower = 0.01, double upper = 0.99,
                                  double max_fraction = 0.05);

// Difference of treated and control outcome means.
double difference_in_means(const Eigen::VectorXd& t, const Eigen::VectorXd& y);

}  // namespace prescribe::orf
