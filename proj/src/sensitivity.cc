#include "prescribe/sensitivity.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/special_functions/trigamma.hpp>

#include "prescribe/error.h"
#include "prescribe/linear_models.h"
#include "prescribe/textio.h"

namespace prescribe::sensitivity {
namespace {

constexpr double kBisectionTolerance = 1e-6;

struct Moments {
  double inverse_sum = 0;  // mean(1/a + 1/b)
  double trigamma = 0;     // mean(psi'(a+T) + psi'(b+1-T))
};

Moments beta_moments(const FrontierInputs& in, double alpha) {
  Moments m;
  const double scale = 1.0 / alpha - 1.0;
  const auto n = static_cast<double>(in.propensity.size());
  for (std::size_t i = 0; i < in.propensity.size(); ++i) {
    const double g = in.propensity[i];
    const double a = g * scale;
    const double b = (1 - g) * scale;
    const int t = in.t[i];
    m.inverse_sum += 1 / a + 1 / b;
    m.trigamma += boost::math::trigamma(a + t) + boost::math::trigamma(b + 1 - t);
  }
  m.inverse_sum /= n;
  m.trigamma /= n;
  return m;
}

void check_alpha(double alpha) {
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("alpha must be in (0, 1)");
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& x, const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(cols[j]));
  return out;
}

Eigen::MatrixXd with_treatment(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) {
  Eigen::MatrixXd out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()) = t;
  return out;
}

struct NuisanceQuality {
  double propensity_spread = 0;  // mean g(1-g)
  double outcome_mse = 0;
};

NuisanceQuality nuisance_quality(const orf::TrainingData& train, const orf::TrainingData& eval,
                                 const std::vector<std::size_t>& cols, double lambda) {
  const Eigen::MatrixXd xtr = select_columns(train.x, cols);
  const Eigen::MatrixXd xev = select_columns(eval.x, cols);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(train.x.rows());
  const auto prop = orf::fit_logistic(xtr, train.t, ones);
  const auto outc = orf::fit_lasso(with_treatment(xtr, train.t), train.y, ones, lambda);
  const Eigen::VectorXd g = prop.probability_all(xev);
  const Eigen::VectorXd q = outc.model.linear_all(with_treatment(xev, eval.t));
  NuisanceQuality out;
  out.propensity_spread = (g.array() * (1 - g.array())).mean();
  out.outcome_mse = (eval.y - q).squaredNorm() / static_cast<double>(eval.y.size());
  return out;
}

}  // namespace

FrontierInputs FrontierInputs::from_model(const orf::OrfModel& model, const orf::TrainingData& eval,
                                          const std::vector<double>& theta) {
  if (theta.size() != eval.rows()) throw DimensionMismatch("one effect estimate per row expected");
  FrontierInputs in;
  const double clip = model.hyperparams.propensity_clip;
  double sse = 0;
  for (std::size_t i = 0; i < eval.rows(); ++i) {
    const auto row = eval.x.row(static_cast<Eigen::Index>(i));
    const double g = std::clamp(orf::sigmoid(model.nuisance.propensity.linear(row)), clip, 1 - clip);
    const double t = eval.t(static_cast<Eigen::Index>(i));
    const double q = model.nuisance.outcome.linear(row) + theta[i] * (t - g);
    const double r = eval.y(static_cast<Eigen::Index>(i)) - q;
    sse += r * r;
    in.propensity.push_back(g);
    in.t.push_back(t > 0.5 ? 1 : 0);
  }
  in.outcome_mse = sse / static_cast<double>(eval.rows());
  return in;
}

double induced_bias(const FrontierInputs& in, double alpha, double partial_r2) {
  check_alpha(alpha);
  if (partial_r2 <= 0) return 0;
  const Moments m = beta_moments(in, alpha);
  const double delta = std::sqrt(partial_r2 * in.outcome_mse / m.trigamma);
  return delta * m.inverse_sum;
}

double required_partial_r2(const FrontierInputs& in, double alpha, double bias) {
  check_alpha(alpha);
  const Moments m = beta_moments(in, alpha);
  return bias * bias * m.trigamma / (m.inverse_sum * m.inverse_sum * in.outcome_mse);
}

std::vector<FrontierPoint> bias_frontier(const FrontierInputs& in, double target_bias, int grid) {
  if (!(target_bias > 0)) throw ConfigError("target bias must be > 0");
  if (grid < 1) throw ConfigError("frontier grid must be >= 1");
  if (in.propensity.empty() || !(in.outcome_mse > 0)) throw ConfigError("frontier needs evaluation rows");
  std::vector<FrontierPoint> out;
  for (int j = 1; j <= grid; ++j) {
    const double alpha = static_cast<double>(j) / (grid + 1);
    if (induced_bias(in, alpha, 1.0) < target_bias) continue;
    double lo = 0, hi = 1;
    while (hi - lo > kBisectionTolerance) {
      const double mid = 0.5 * (lo + hi);
      (induced_bias(in, alpha, mid) < target_bias ? lo : hi) = mid;
    }
    out.push_back({alpha, 0.5 * (lo + hi)});
  }
  if (out.empty())
    throw FrontierUndefined("no confounder with partial R^2 <= 1 induces a bias of " +
                            format_double(target_bias) + " days");
  return out;
}

SensitivityPoint covariate_influence(const orf::TrainingData& train, const orf::TrainingData& eval,
                                     const std::vector<std::size_t>& group_columns,
                                     const std::string& name, double lambda) {
  const auto p = static_cast<std::size_t>(train.x.cols());
  if (group_columns.empty()) throw GroupUnknown("group '" + name + "' has no columns");
  std::vector<bool> in_group(p, false);
  for (auto c : group_columns) {
    if (c >= p) throw GroupUnknown("group '" + name + "' references column " + std::to_string(c));
    in_group[c] = true;
  }
  std::vector<std::size_t> all, rest;
  for (std::size_t j = 0; j < p; ++j) {
    all.push_back(j);
    if (!in_group[j]) rest.push_back(j);
  }
  const NuisanceQuality full = nuisance_quality(train, eval, all, lambda);
  const NuisanceQuality without = nuisance_quality(train, eval, rest, lambda);
  SensitivityPoint pt;
  pt.group = name;
  pt.alpha = without.propensity_spread > 0
                 ? std::max(0.0, (without.propensity_spread - full.propensity_spread) / without.propensity_spread)
                 : 0.0;
  pt.partial_r2 = without.outcome_mse > 0
                      ? std::max(0.0, (without.outcome_mse - full.outcome_mse) / without.outcome_mse)
                      : 0.0;
  return pt;
}

std::string to_string(Verdict v) { return v == Verdict::kRobust ? "robust" : "sensitive"; }

bool below_frontier(const FrontierInputs& in, double target_bias, const SensitivityPoint& p) {
  if (p.alpha <= 0) return true;
  if (p.alpha >= 1) return p.partial_r2 <= 0;
  return p.partial_r2 < required_partial_r2(in, p.alpha, target_bias);
}

Verdict verdict(const FrontierInputs& in, double target_bias, const std::vector<SensitivityPoint>& points) {
  for (const auto& p : points)
    if (!below_frontier(in, target_bias, p)) return Verdict::kSensitive;
  return Verdict::kRobust;
}

nlohmann::json to_json(const SensitivityReport& r) {
  nlohmann::json j;
  j["target_bias_days"] = r.target_bias;
  j["verdict"] = to_string(r.verdict);
  nlohmann::json fr = nlohmann::json::array();
  for (const auto& f : r.frontier) fr.push_back({{"alpha", f.alpha}, {"partial_r2", f.partial_r2}});
  j["frontier"] = fr;
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : r.points)
    pts.push_back({{"group", p.group}, {"alpha", p.alpha}, {"partial_r2", p.partial_r2}});
  j["points"] = pts;
  return j;
}

void write_report(const SensitivityReport& r, const std::filesystem::path& dir) {
  std::ostringstream fr;
  write_csv_row(fr, {"alpha", "partial_r2"});
  for (const auto& f : r.frontier) write_csv_row(fr, {format_double(f.alpha), format_double(f.partial_r2)});
  write_file(dir / "frontier.csv", fr.str());
  std::ostringstream pts;
  write_csv_row(pts, {"group", "alpha", "partial_r2"});
  for (const auto& p : r.points)
    write_csv_row(pts, {p.group, format_double(p.alpha), format_double(p.partial_r2)});
  write_file(dir / "points.csv", pts.str());
  write_file(dir / "sensitivity.json", to_json(r).dump(2) + "\n");
}

}  // namespace prescribe::sensitivity
