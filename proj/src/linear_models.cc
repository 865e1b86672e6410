#include "prescribe/linear_models.h"

#include <cmath>

#include "prescribe/error.h"

namespace prescribe::orf {
namespace {

struct Standardized {
  Eigen::MatrixXd x;  // centered and scaled columns
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // 0 marks a constant column
};

Standardized standardize(const Eigen::MatrixXd& x, const Eigen::VectorXd& w_norm) {
  Standardized s;
  s.mean = x.transpose() * w_norm;
  s.x = x.rowwise() - s.mean.transpose();
  s.scale.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (s.x.col(j).array().square() * w_norm.array()).sum();
    const double sd = std::sqrt(var);
    if (sd > 1e-12 * (1.0 + std::abs(s.mean(j)))) {
      s.scale(j) = sd;
      s.x.col(j) /= sd;
    } else {
      s.scale(j) = 0.0;
      s.x.col(j).setZero();
    }
  }
  return s;
}

void check_weights(const Eigen::VectorXd& weights, Eigen::Index n) {
  if (weights.size() != n) throw std::invalid_argument("weights size mismatch");
  if ((weights.array() < 0).any()) throw std::invalid_argument("negative weight");
  if (weights.sum() <= 0) throw std::invalid_argument("weights sum to zero");
}

LinearModel to_raw(double intercept_std, const Eigen::VectorXd& coef_std, const Standardized& s) {
  LinearModel m;
  m.coef = Eigen::VectorXd::Zero(coef_std.size());
  m.intercept = intercept_std;
  for (Eigen::Index j = 0; j < coef_std.size(); ++j) {
    if (s.scale(j) == 0.0) continue;
    m.coef(j) = coef_std(j) / s.scale(j);
    m.intercept -= m.coef(j) * s.mean(j);
  }
  return m;
}

double mean_nll(const Eigen::VectorXd& eta, const Eigen::VectorXd& labels,
                const Eigen::VectorXd& w_norm) {
  double total = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (w_norm(i) == 0) continue;
    // log(1 + exp(eta)) - y * eta, computed stably
    const double e = eta(i);
    const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    total += w_norm(i) * (softplus - labels(i) * e);
  }
  return total;
}

struct NewtonResult {
  double intercept;
  Eigen::VectorXd coef;
  int iterations;
  bool converged;
};

NewtonResult newton(const Standardized& s, const Eigen::VectorXd& labels,
                    const Eigen::VectorXd& w_norm, double ridge, const LogisticOptions& options) {
  const Eigen::Index n = s.x.rows();
  const Eigen::Index p = s.x.cols();
  // Design with a leading intercept column.
  Eigen::MatrixXd design(n, p + 1);
  design.col(0).setOnes();
  design.rightCols(p) = s.x;
  Eigen::VectorXd params = Eigen::VectorXd::Zero(p + 1);
  const double ybar = labels.dot(w_norm);
  if (ybar > 0 && ybar < 1) params(0) = std::log(ybar / (1 - ybar));

  auto objective = [&](const Eigen::VectorXd& prm) {
    return mean_nll(design * prm, labels, w_norm) + 0.5 * ridge * prm.tail(p).squaredNorm();
  };

  double current = objective(params);
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Eigen::VectorXd eta = design * params;
    Eigen::VectorXd mu(n), hw(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = sigmoid(eta(i));
      hw(i) = w_norm(i) * mu(i) * (1 - mu(i));
    }
    Eigen::VectorXd grad = design.transpose() * (w_norm.array() * (mu - labels).array()).matrix();
    grad.tail(p) += ridge * params.tail(p);
    Eigen::MatrixXd hess = design.transpose() * hw.asDiagonal() * design;
    hess.diagonal().tail(p).array() += ridge;
    // Constant columns carry no information; pin them.
    for (Eigen::Index j = 0; j < p; ++j) {
      if (s.scale(j) == 0.0) {
        hess.row(j + 1).setZero();
        hess.col(j + 1).setZero();
        hess(j + 1, j + 1) = 1.0;
        grad(j + 1) = 0.0;
      }
    }
    hess.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    if (!step.allFinite()) return {params(0), params.tail(p), it, false};

    double scale = 1.0;
    Eigen::VectorXd candidate = params - step;
    double next = objective(candidate);
    int halvings = 0;
    while (!(next <= current + 1e-15 * std::abs(current)) && halvings < 30) {
      scale *= 0.5;
      candidate = params - scale * step;
      next = objective(candidate);
      ++halvings;
    }
    const double change = (candidate - params).cwiseAbs().maxCoeff();
    params = candidate;
    current = next;
    if (options.on_iteration) options.on_iteration(it, to_raw(params(0), params.tail(p), s));
    if (change < options.tolerance) return {params(0), params.tail(p), it, true};
    if (!params.allFinite() || params.cwiseAbs().maxCoeff() > 1e6)
      return {params(0), params.tail(p), it, false};
  }
  return {params(0), params.tail(p), options.max_iterations, false};
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Eigen::VectorXd LogisticFit::probability_all(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd eta = model.linear_all(x);
  return eta.unaryExpr([](double z) { return sigmoid(z); });
}

LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& labels,
                         const Eigen::VectorXd& weights, const LogisticOptions& options) {
  check_weights(weights, x.rows());
  const Eigen::VectorXd w_norm = weights / weights.sum();
  const Standardized s = standardize(x, w_norm);

  LogisticFit fit;
  NewtonResult r = newton(s, labels, w_norm, options.ridge, options);
  if (!r.converged) {
    LogisticOptions fallback = options;
    fallback.on_iteration = nullptr;
    r = newton(s, labels, w_norm, options.fallback_ridge, fallback);
    fit.separation_warning = true;
  }
  fit.model = to_raw(r.intercept, r.coef, s);
  fit.iterations = r.iterations;
  fit.converged = r.converged && !fit.separation_warning;
  return fit;
}

double logistic_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& labels,
                          const Eigen::VectorXd& weights, const Eigen::VectorXd& params,
                          double ridge) {
  const Eigen::VectorXd w_norm = weights / weights.sum();
  const Eigen::Index p = x.cols();
  const Eigen::VectorXd eta = (x * params.tail(p)).array() + params(0);
  return mean_nll(eta, labels, w_norm) + 0.5 * ridge * params.tail(p).squaredNorm();
}

Eigen::VectorXd logistic_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& labels,
                                  const Eigen::VectorXd& weights, const Eigen::VectorXd& params,
                                  double ridge) {
  const Eigen::VectorXd w_norm = weights / weights.sum();
  const Eigen::Index p = x.cols();
  const Eigen::VectorXd eta = (x * params.tail(p)).array() + params(0);
  Eigen::VectorXd resid(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) resid(i) = w_norm(i) * (sigmoid(eta(i)) - labels(i));
  Eigen::VectorXd grad(p + 1);
  grad(0) = resid.sum();
  grad.tail(p) = x.transpose() * resid + ridge * params.tail(p);
  return grad;
}

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

LassoFit fit_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& targets,
                   const Eigen::VectorXd& weights, double lambda, const LassoOptions& options) {
  if (lambda < 0) throw std::invalid_argument("lambda must be >= 0");
  check_weights(weights, x.rows());
  const Eigen::VectorXd w_norm = weights / weights.sum();
  const Eigen::Index p = x.cols();

  Standardized s;
  if (options.standardize) {
    s = standardize(x, w_norm);
  } else {
    s.mean = x.transpose() * w_norm;
    s.x = x.rowwise() - s.mean.transpose();
    s.scale = Eigen::VectorXd::Ones(p);
  }
  const double ybar = targets.dot(w_norm);
  Eigen::VectorXd resid = targets.array() - ybar;

  // Per-column weighted second moments.
  Eigen::VectorXd curvature(p);
  for (Eigen::Index j = 0; j < p; ++j)
    curvature(j) = (s.x.col(j).array().square() * w_norm.array()).sum();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  LassoFit fit;
  auto objective = [&] {
    return 0.5 * (resid.array().square() * w_norm.array()).sum() + lambda * beta.cwiseAbs().sum();
  };
  if (options.record_objective) fit.objective_trace.push_back(objective());
  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    double max_change = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (curvature(j) <= 1e-14) continue;
      const auto col = s.x.col(j);
      const double rho = (col.array() * w_norm.array() * resid.array()).sum() +
                         curvature(j) * beta(j);
      const double updated = soft_threshold(rho, lambda) / curvature(j);
      const double delta = updated - beta(j);
      if (delta != 0.0) {
        resid -= delta * col;
        beta(j) = updated;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    fit.sweeps = sweep;
    if (options.record_objective) fit.objective_trace.push_back(objective());
    if (max_change < options.tolerance) {
      fit.converged = true;
      break;
    }
  }
  if (!options.standardize) s.scale.setOnes();
  fit.model = to_raw(ybar, beta, s);
  fit.scaled_coef = beta;
  fit.scales = s.scale;
  return fit;
}

}  // namespace prescribe::orf
