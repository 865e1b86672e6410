#include "prescribe/orf.h"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "prescribe/error.h"
#include "prescribe/parallel.h"
#include "prescribe/rng.h"
#include "prescribe/textio.h"

namespace prescribe::orf {
namespace {

constexpr int kMaxDrawAttempts = 20;
constexpr double kMinDenominator = 1e-10;
constexpr double kNormalQuantile975 = 1.959963984540054;

double clip(double p, double c) { return std::clamp(p, c, 1.0 - c); }

bool both_classes(const Eigen::VectorXd& t, std::span<const std::uint32_t> rows, int min_size) {
  if (rows.size() < static_cast<std::size_t>(min_size)) return false;
  bool treated = false, control = false;
  for (auto r : rows) (t(r) > 0.5 ? treated : control) = true;
  return treated && control;
}

}  // namespace

void OrfHyperparams::validate() const {
  if (n_trees < 1) throw ConfigError("n_trees must be >= 1");
  if (min_leaf_size < 2) throw ConfigError("min_leaf_size must be >= 2");
  if (max_depth < 0) throw ConfigError("max_depth must be >= 0");
  if (!(subsample_ratio > 0 && subsample_ratio <= 1)) throw ConfigError("subsample_ratio must be in (0,1]");
  if (!(lambda_reg >= 0)) throw ConfigError("lambda_reg must be >= 0");
  if (bootstrap_groups < 1) throw ConfigError("bootstrap_groups must be >= 1");
  if (max_thresholds < 2) throw ConfigError("max_thresholds must be >= 2");
  if (!(propensity_clip > 0 && propensity_clip < 0.5)) throw ConfigError("propensity_clip must be in (0,0.5)");
}

void OrfHyperparams::validate_for(std::size_t n_rows) const {
  validate();
  const auto draw = static_cast<std::size_t>(std::floor(subsample_ratio * static_cast<double>(n_rows)));
  if (draw < 2u * static_cast<std::size_t>(min_leaf_size))
    throw ConfigError("subsample_ratio * n (" + std::to_string(draw) + ") < 2 * min_leaf_size");
}

std::uint64_t fingerprint(const TrainingData& data) {
  std::uint64_t h = fnv1a64("orf-training");
  auto mix = [&](const double* p, std::size_t count) {
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(p), count * sizeof(double)), h);
  };
  const Eigen::Index dims[2] = {data.x.rows(), data.x.cols()};
  h = fnv1a64(std::string_view(reinterpret_cast<const char*>(dims), sizeof(dims)), h);
  mix(data.x.data(), static_cast<std::size_t>(data.x.size()));
  mix(data.t.data(), static_cast<std::size_t>(data.t.size()));
  mix(data.y.data(), static_cast<std::size_t>(data.y.size()));
  return h;
}

OrfModel fit_forest(const TrainingData& data, const OrfHyperparams& hp) {
  const std::size_t n = data.rows();
  if (data.t.size() != data.x.rows() || data.y.size() != data.x.rows())
    throw DimensionMismatch("training arrays disagree on row count");
  if (data.x.cols() == 0) throw NoFeatures("training matrix has no columns");
  const Eigen::Index treated = (data.t.array() > 0.5).count();
  if (treated == 0 || treated == static_cast<Eigen::Index>(n))
    throw InsufficientOverlap("training split has only " +
                              std::string(treated == 0 ? "control" : "treated") + " rows");
  hp.validate_for(n);

  OrfModel model;
  model.hyperparams = hp;
  model.train = data;
  model.training_fingerprint = fingerprint(data);

  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  const LogisticFit prop = fit_logistic(data.x, data.t, ones);
  const LassoFit out = fit_lasso(data.x, data.y, ones, hp.lambda_reg);
  model.nuisance.propensity = prop.model;
  model.nuisance.outcome = out.model;
  model.nuisance.propensity_warning = prop.separation_warning;

  Eigen::VectorXd t_res(static_cast<Eigen::Index>(n)), y_res(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = data.x.row(static_cast<Eigen::Index>(i));
    t_res(i) = data.t(i) - clip(sigmoid(prop.model.linear(row)), hp.propensity_clip);
    y_res(i) = data.y(i) - out.model.linear(row);
  }
  const SplitContext ctx{data.x, data.t, t_res, y_res, hp.min_leaf_size, hp.max_thresholds};

  const auto draw = static_cast<std::size_t>(std::floor(hp.subsample_ratio * static_cast<double>(n)));
  model.trees.resize(static_cast<std::size_t>(hp.n_trees));
  parallel_for(model.trees.size(), hp.threads, [&](std::size_t b) {
    std::vector<std::uint32_t> idx(n);
    for (std::size_t attempt = 0; attempt < kMaxDrawAttempts; ++attempt) {
      Rng rng(derive_seed(derive_seed(hp.rng_seed, b), attempt));
      for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
      for (std::size_t i = 0; i < draw; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
      std::vector<std::uint32_t> split_rows, est_rows;
      if (hp.honest) {
        split_rows.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(draw / 2));
        est_rows.assign(idx.begin() + static_cast<std::ptrdiff_t>(draw / 2),
                        idx.begin() + static_cast<std::ptrdiff_t>(draw));
      } else {
        split_rows.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(draw));
        est_rows = split_rows;
      }
      if (!both_classes(data.t, est_rows, hp.min_leaf_size) ||
          !both_classes(data.t, split_rows, 1))
        continue;
      model.trees[b] = grow_tree(ctx, std::move(split_rows), std::move(est_rows), hp.max_depth);
      return;
    }
    throw InsufficientOverlap("tree " + std::to_string(b) +
                              ": no subsample with both treatment classes in its estimation half");
  });
  return model;
}

double KernelWeights::sum() const {
  double s = 0;
  for (double w : weights) s += w;
  return s;
}

double KernelWeights::effective_n() const {
  double sq = 0;
  for (double w : weights) sq += w * w;
  return sq > 0 ? 1.0 / sq : 0.0;
}

KernelWeights kernel_weights(const OrfModel& model, const RowRef& x, std::size_t tree_begin,
                             std::size_t tree_end) {
  tree_end = std::min(tree_end, model.trees.size());
  if (x.size() != static_cast<Eigen::Index>(model.width()))
    throw DimensionMismatch("feature vector has " + std::to_string(x.size()) + " columns, model expects " +
                            std::to_string(model.width()));
  KernelWeights kw;
  if (tree_begin >= tree_end) return kw;
  const double per_tree = 1.0 / static_cast<double>(tree_end - tree_begin);
  std::vector<double> dense(model.train.rows(), 0.0);
  std::vector<std::uint32_t> touched;
  for (std::size_t b = tree_begin; b < tree_end; ++b) {
    const CausalTree& tree = model.trees[b];
    const auto& leaf = tree.leaves[static_cast<std::size_t>(tree.leaf_of(x))];
    const double w = per_tree / static_cast<double>(leaf.size());
    for (auto r : leaf) {
      if (dense[r] == 0.0) touched.push_back(r);
      dense[r] += w;
    }
  }
  std::sort(touched.begin(), touched.end());
  kw.rows = touched;
  kw.weights.reserve(touched.size());
  for (auto r : touched) kw.weights.push_back(dense[r]);
  return kw;
}

double residual_slope(std::span<const double> dt, std::span<const double> dy,
                      std::span<const double> w) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < dt.size(); ++i) {
    num += w[i] * dy[i] * dt[i];
    den += w[i] * dt[i] * dt[i];
  }
  if (!(den >= kMinDenominator))
    throw DegenerateKernel("no local treatment variation (denominator " + format_double(den) + ")");
  return num / den;
}

EffectEstimate estimate_effect(const OrfModel& model, const RowRef& x,
                               const EstimateOptions& options) {
  const KernelWeights kw = kernel_weights(model, x);
  const std::size_t s = kw.rows.size();
  const auto& train = model.train;
  bool treated = false, control = false;
  for (auto r : kw.rows) (train.t(r) > 0.5 ? treated : control) = true;
  if (!treated || !control)
    throw DegenerateKernel(std::string("kernel support has no ") + (treated ? "control" : "treated") +
                           " rows");

  const auto p = static_cast<Eigen::Index>(model.width());
  Eigen::MatrixXd zs(static_cast<Eigen::Index>(s), p);
  Eigen::VectorXd ts(static_cast<Eigen::Index>(s)), ys(static_cast<Eigen::Index>(s)),
      ws(static_cast<Eigen::Index>(s));
  for (std::size_t i = 0; i < s; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    zs.row(ii) = train.x.row(kw.rows[i]);
    ts(ii) = train.t(kw.rows[i]);
    ys(ii) = train.y(kw.rows[i]);
    ws(ii) = kw.weights[i];
  }

  LinearModel prop = model.nuisance.propensity;
  LinearModel outc = model.nuisance.outcome;
  if (options.local_nuisance) {
    prop = fit_logistic(zs, ts, ws).model;
    outc = fit_lasso(zs, ys, ws, model.hyperparams.lambda_reg).model;
  }
  std::vector<double> dt(s), dy(s);
  for (std::size_t i = 0; i < s; ++i) {
    const auto row = zs.row(static_cast<Eigen::Index>(i));
    dt[i] = ts(static_cast<Eigen::Index>(i)) -
            clip(sigmoid(prop.linear(row)), model.hyperparams.propensity_clip);
    dy[i] = ys(static_cast<Eigen::Index>(i)) - (outc.linear(row) + options.outcome_bias);
  }

  EffectEstimate est;
  est.theta = residual_slope(dt, dy, kw.weights);
  est.kernel_effective_n = kw.effective_n();

  // Bags of contiguous trees; each bag re-weights the same local residuals.
  const std::size_t n_trees = model.trees.size();
  const std::size_t groups = std::min<std::size_t>(model.hyperparams.bootstrap_groups, n_trees);
  std::vector<double> bag_theta;
  std::vector<double> bag_w(s);
  for (std::size_t g = 0; g < groups; ++g) {
    const KernelWeights bag = kernel_weights(model, x, g * n_trees / groups, (g + 1) * n_trees / groups);
    std::fill(bag_w.begin(), bag_w.end(), 0.0);
    std::size_t j = 0;
    for (std::size_t i = 0; i < bag.rows.size(); ++i) {
      while (kw.rows[j] != bag.rows[i]) ++j;
      bag_w[j] = bag.weights[i];
    }
    try {
      bag_theta.push_back(residual_slope(dt, dy, bag_w));
    } catch (const DegenerateKernel&) {
    }
  }
  double se = 0;
  if (bag_theta.size() >= 2) {
    double mean = 0;
    for (double v : bag_theta) mean += v;
    mean /= static_cast<double>(bag_theta.size());
    double ss = 0;
    for (double v : bag_theta) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(bag_theta.size() - 1));
    se = sd / std::sqrt(static_cast<double>(bag_theta.size()));
  }
  est.ci_low = est.theta - kNormalQuantile975 * se;
  est.ci_high = est.theta + kNormalQuantile975 * se;
  return est;
}

std::vector<std::optional<EffectEstimate>> estimate_effects(const OrfModel& model,
                                                            const Eigen::MatrixXd& x,
                                                            const EstimateOptions& options) {
  std::vector<std::optional<EffectEstimate>> out(static_cast<std::size_t>(x.rows()));
  parallel_for(out.size(), model.hyperparams.threads, [&](std::size_t i) {
    try {
      out[i] = estimate_effect(model, x.row(static_cast<Eigen::Index>(i)), options);
    } catch (const DegenerateKernel&) {
      out[i].reset();
    }
  });
  return out;
}

PositivityReport check_positivity(const LinearModel& propensity, const Eigen::MatrixXd& x,
                                  double lower, double upper, double max_fraction) {
  PositivityReport rep;
  rep.lower = lower;
  rep.upper = upper;
  const auto n = static_cast<std::size_t>(x.rows());
  if (n == 0) return rep;
  std::vector<double> g(n);
  std::size_t outside = 0;
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = sigmoid(propensity.linear(x.row(static_cast<Eigen::Index>(i))));
    if (g[i] < lower || g[i] > upper) ++outside;
  }
  std::sort(g.begin(), g.end());
  auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    return g[std::clamp<std::size_t>(k, 1, n) - 1];
  };
  rep.p01 = rank(0.01);
  rep.p99 = rank(0.99);
  rep.fraction_outside = static_cast<double>(outside) / static_cast<double>(n);
  rep.flagged = rep.fraction_outside > max_fraction;
  return rep;
}

double difference_in_means(const Eigen::VectorXd& t, const Eigen::VectorXd& y) {
  double s1 = 0, s0 = 0;
  double n1 = 0, n0 = 0;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (t(i) > 0.5) {
      s1 += y(i);
      n1 += 1;
    } else {
      s0 += y(i);
      n0 += 1;
    }
  }
  if (n1 == 0 || n0 == 0) throw NoVariation("difference in means needs both treatment classes");
  return s1 / n1 - s0 / n0;
}

}  // namespace prescribe::orf
