#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace prescribe::orf {

struct LinearModel {
  double intercept = 0.0;
  Eigen::VectorXd coef;

  double linear(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    return intercept + row.dot(coef);
  }
  Eigen::VectorXd linear_all(const Eigen::MatrixXd& x) const {
    return (x * coef).array() + intercept;
  }
};

double sigmoid(double z);

// Weighted logistic regression by Newton-Raphson on the mean weighted
// negative log-likelihood plus (ridge/2)*|coef|^2 (intercept unpenalized),
// in internally standardized coordinates.
struct LogisticOptions {
  double ridge = 1e-6;
  double tolerance = 1e-8;  // max coefficient change
  int max_iterations = 100;
  double fallback_ridge = 1e-2;
  // Called after every accepted Newton step with the current model in
  // original coordinates.
  std::function<void(int, const LinearModel&)> on_iteration;
};

struct LogisticFit {
  LinearModel model;
  int iterations = 0;
  bool converged = false;
  bool separation_warning = false;

  double probability(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    return sigmoid(model.linear(row));
  }
  Eigen::VectorXd probability_all(const Eigen::MatrixXd& x) const;
};

LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& labels,
                         const Eigen::VectorXd& weights, const LogisticOptions& options = {});

// Objective and analytic gradient in raw coordinates; params = (intercept,
// coef...). Exposed for derivative checks.
double logistic_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& labels,
                          const Eigen::VectorXd& weights, const Eigen::VectorXd& params,
                          double ridge);
Eigen::VectorXd logistic_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& labels,
                                  const Eigen::VectorXd& weights, const Eigen::VectorXd& params,
                                  double ridge);

// Weighted lasso by cyclic coordinate descent with soft-thresholding:
//   (1/2) sum_i w_i (y_i - b0 - x_i b)^2 / sum_i w_i + lambda |b|_1
// With `standardize`, the penalty applies to coefficients of weighted
// unit-variance columns and results are mapped back to raw scale.
struct LassoOptions {
  bool standardize = true;
  double tolerance = 1e-8;
  int max_sweeps = 1000;
  bool record_objective = false;
};

struct LassoFit {
  LinearModel model;
  int sweeps = 0;
  bool converged = false;
  // Coefficients in the penalized coordinates, with the column scales used.
  Eigen::VectorXd scaled_coef;
  Eigen::VectorXd scales;
  // Penalized objective before the first sweep and after each sweep, when
  // requested.
  std::vector<double> objective_trace;
};

LassoFit fit_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& targets,
                   const Eigen::VectorXd& weights, double lambda,
                   const LassoOptions& options = {});

double soft_threshold(double z, double gamma);

}  // namespace prescribe::orf
