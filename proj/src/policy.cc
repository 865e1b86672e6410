#include "prescribe/policy.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "prescribe/error.h"
#include "prescribe/rng.h"
#include "prescribe/textio.h"

namespace prescribe::policy {
namespace {

std::size_t steps_for(double grid_step) {
  if (!(grid_step > 0 && grid_step <= 100)) throw ConfigError("grid step must be in (0, 100]");
  const double k = 100.0 / grid_step;
  const auto steps = static_cast<std::size_t>(std::llround(k));
  if (std::abs(k - static_cast<double>(steps)) > 1e-9) throw ConfigError("grid step must divide 100");
  return steps;
}

QiniCurve curve_for_order(const QiniInput& in, std::vector<std::size_t> order, double grid_step) {
  const std::size_t steps = steps_for(grid_step);
  const std::size_t n = order.size();
  QiniCurve curve;
  curve.grid_step = grid_step;
  curve.points.reserve(steps + 1);

  double r1 = 0, r0 = 0;
  std::size_t n1 = 0, n0 = 0, taken = 0;
  double last = 0;
  for (std::size_t i = 0; i <= steps; ++i) {
    const std::size_t count = prefix_count(i, steps, n);
    for (; taken < count; ++taken) {
      const std::size_t c = order[taken];
      if (in.t[c] == 1) {
        r1 += in.y[c];
        ++n1;
      } else {
        r0 += in.y[c];
        ++n0;
      }
    }
    QiniPoint p;
    p.n_percent = 100.0 * static_cast<double>(i) / static_cast<double>(steps);
    p.selected = count;
    p.treated = n1;
    p.control = n0;
    if (count == 0) {
      p.qini = 0;
    } else if (n1 == 0 || n0 == 0) {
      p.qini = last;
      p.carried = true;
    } else {
      p.qini = r0 * (static_cast<double>(n1) / static_cast<double>(n0)) - r1;
    }
    last = p.qini;
    curve.points.push_back(p);
  }

  const double end = curve.points.back().qini;
  double area = 0;
  std::size_t above = 0;
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    auto& p = curve.points[i];
    p.baseline = end * p.n_percent / 100.0;
    if (p.qini >= p.baseline - 1e-9 * (1.0 + std::abs(p.baseline))) ++above;
    if (i > 0) {
      const auto& q = curve.points[i - 1];
      area += 0.5 * (p.n_percent - q.n_percent) * ((p.qini - p.baseline) + (q.qini - q.baseline));
    }
  }
  curve.coefficient_raw = area;
  curve.coefficient = area / 100.0;
  curve.fraction_on_or_above = static_cast<double>(above) / static_cast<double>(curve.points.size());
  curve.sorted_theta.reserve(n);
  for (auto c : order) curve.sorted_theta.push_back(in.theta[c]);
  curve.order = std::move(order);
  return curve;
}

}  // namespace

void QiniInput::validate() const {
  const std::size_t n = theta.size();
  if (case_ids.size() != n || t.size() != n || y.size() != n)
    throw DimensionMismatch("Qini input columns differ in length");
  std::size_t treated = 0;
  for (int v : t) {
    if (v != 0 && v != 1) throw ConfigError("treatment indicator must be 0 or 1");
    treated += static_cast<std::size_t>(v);
  }
  if (treated == 0 || treated == n)
    throw NoVariation(n == 0 ? "empty test set"
                             : std::string("test set is all-") + (treated == 0 ? "control" : "treated"));
}

std::vector<std::size_t> ascending_order(const QiniInput& input) {
  std::vector<std::size_t> order(input.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (input.theta[a] != input.theta[b]) return input.theta[a] < input.theta[b];
    return input.case_ids[a] < input.case_ids[b];
  });
  return order;
}

std::size_t prefix_count(std::size_t i, std::size_t steps, std::size_t n_cases) {
  return static_cast<std::size_t>((static_cast<unsigned __int128>(i) * n_cases) / steps);
}

QiniCurve qini_curve(const QiniInput& input, double grid_step) {
  input.validate();
  return curve_for_order(input, ascending_order(input), grid_step);
}

PermutationTest qini_permutation_test(const QiniInput& input, int shuffles, std::uint64_t seed,
                                      double grid_step) {
  PermutationTest out;
  out.observed = qini_curve(input, grid_step).coefficient;
  out.shuffles = shuffles;
  Rng rng(derive_seed(seed, 0x51a1));
  std::vector<std::size_t> order(input.size());
  int at_least = 0;
  for (int s = 0; s < shuffles; ++s) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    if (curve_for_order(input, order, grid_step).coefficient >= out.observed) ++at_least;
  }
  out.p_value = static_cast<double>(1 + at_least) / static_cast<double>(1 + shuffles);
  return out;
}

void CostModel::validate() const {
  if (!(v > 0)) throw ConfigError("v must be > 0");
  if (!(c >= 0)) throw ConfigError("c must be >= 0");
}

std::vector<NetValuePoint> net_value_curve(const QiniCurve& curve, const CostModel& cost) {
  cost.validate();
  std::vector<NetValuePoint> out;
  out.reserve(curve.points.size());
  for (const auto& p : curve.points)
    out.push_back({p.n_percent, cost.v * p.qini - cost.c * static_cast<double>(p.treated)});
  return out;
}

std::string to_string(ThresholdKind k) {
  return k == ThresholdKind::kTopFraction ? "top_fraction" : "effect_threshold";
}

ThresholdKind parse_threshold_kind(const std::string& text) {
  if (text == "top_fraction") return ThresholdKind::kTopFraction;
  if (text == "effect_threshold") return ThresholdKind::kEffectThreshold;
  throw ConfigError("unknown threshold kind '" + text + "'");
}

void Policy::validate() const {
  cost.validate();
  if (!(top_fraction >= 0 && top_fraction <= 1)) throw ConfigError("top_fraction must be in [0,1]");
  if (theta_threshold && !std::isfinite(*theta_threshold)) throw ConfigError("threshold must be finite");
  if (selected_by != "auto" && selected_by != "target" && selected_by != "user")
    throw ConfigError("selected_by must be auto, target or user");
}

bool Policy::treats(double theta) const {
  return theta_threshold && theta <= *theta_threshold && cost.case_gain(theta) > 0;
}

nlohmann::json to_json(const Policy& p) {
  nlohmann::json j;
  j["version"] = p.version;
  j["kind"] = to_string(p.kind);
  j["top_fraction"] = p.top_fraction;
  j["theta_threshold"] = p.theta_threshold ? nlohmann::json(*p.theta_threshold) : nlohmann::json(nullptr);
  j["cost"] = {{"v", p.cost.v}, {"c", p.cost.c}};
  j["provenance"] = {{"selected_by", p.selected_by},
                     {"curve_hash", p.curve_hash},
                     {"target_gain", p.target_gain ? nlohmann::json(*p.target_gain) : nlohmann::json(nullptr)}};
  j["expected_gain"] = p.expected_gain;
  return j;
}

Policy policy_from_json(const nlohmann::json& j) {
  Policy p;
  try {
    p.version = j.value("version", 0);
    p.kind = parse_threshold_kind(j.value("kind", std::string("effect_threshold")));
    p.top_fraction = j.value("top_fraction", 0.0);
    if (j.contains("theta_threshold") && !j["theta_threshold"].is_null())
      p.theta_threshold = j["theta_threshold"].get<double>();
    const auto& cost = j.at("cost");
    p.cost.v = cost.at("v").get<double>();
    p.cost.c = cost.at("c").get<double>();
    if (j.contains("provenance")) {
      const auto& prov = j["provenance"];
      p.selected_by = prov.value("selected_by", std::string("user"));
      p.curve_hash = prov.value("curve_hash", std::string());
      if (prov.contains("target_gain") && !prov["target_gain"].is_null())
        p.target_gain = prov["target_gain"].get<double>();
    } else {
      p.selected_by = "user";
    }
    p.expected_gain = j.value("expected_gain", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("policy JSON: ") + e.what());
  }
  p.validate();
  return p;
}

std::optional<double> boundary_theta(const QiniCurve& curve, std::size_t count) {
  if (count == 0) return std::nullopt;
  return curve.sorted_theta.at(count - 1);
}

Policy resolve_top_fraction(const QiniCurve& curve, Policy p) {
  if (p.kind != ThresholdKind::kTopFraction) return p;
  p.validate();
  const auto n = static_cast<double>(curve.sorted_theta.size());
  const auto count = static_cast<std::size_t>(std::floor(p.top_fraction * n + 1e-9));
  p.theta_threshold = boundary_theta(curve, count);
  return p;
}

Policy select_policy(const QiniCurve& curve, const std::vector<NetValuePoint>& net,
                     const CostModel& cost, std::optional<double> target_gain) {
  if (net.empty() || net.size() != curve.points.size())
    throw ConfigError("net value curve does not match the Qini grid");
  std::size_t chosen = 0;
  if (target_gain) {
    bool found = false;
    for (std::size_t i = 0; i < net.size(); ++i) {
      if (net[i].gain >= *target_gain) {
        chosen = i;
        found = true;
        break;
      }
    }
    if (!found) {
      double best = net[0].gain;
      for (const auto& p : net) best = std::max(best, p.gain);
      throw TargetUnreachable("no grid point reaches gain " + format_double(*target_gain) +
                              " (maximum " + format_double(best) + ")");
    }
  } else {
    for (std::size_t i = 1; i < net.size(); ++i)
      if (net[i].gain > net[chosen].gain) chosen = i;
  }
  Policy p;
  p.kind = ThresholdKind::kEffectThreshold;
  p.top_fraction = net[chosen].n_percent / 100.0;
  p.theta_threshold = boundary_theta(curve, curve.points[chosen].selected);
  p.cost = cost;
  p.selected_by = target_gain ? "target" : "auto";
  p.target_gain = target_gain;
  p.expected_gain = net[chosen].gain;
  p.validate();
  return p;
}

EvaluationReport evaluate(const QiniInput& input, const std::vector<double>& vc_grid,
                          double grid_step, int permutation_shuffles, std::uint64_t seed) {
  EvaluationReport rep;
  rep.curve = qini_curve(input, grid_step);
  rep.vc_grid = vc_grid;
  rep.cases = input.size();
  for (double vc : vc_grid) rep.net_curves.push_back(net_value_curve(rep.curve, CostModel{vc, 1.0}));
  rep.above_baseline = rep.curve.coefficient > 0;
  if (permutation_shuffles > 0)
    rep.permutation = qini_permutation_test(input, permutation_shuffles, seed, grid_step);
  return rep;
}

std::string curve_csv(const EvaluationReport& report) {
  std::ostringstream out;
  std::vector<std::string> header = {"n_percent", "qini", "baseline", "selected", "treated",
                                     "control", "carried"};
  for (double vc : report.vc_grid) header.push_back("gain@vc=" + format_double(vc));
  write_csv_row(out, header);
  for (std::size_t i = 0; i < report.curve.points.size(); ++i) {
    const auto& p = report.curve.points[i];
    std::vector<std::string> row = {format_double(p.n_percent), format_double(p.qini),
                                    format_double(p.baseline),  std::to_string(p.selected),
                                    std::to_string(p.treated),  std::to_string(p.control),
                                    p.carried ? "1" : "0"};
    for (const auto& net : report.net_curves) row.push_back(format_double(net[i].gain));
    write_csv_row(out, row);
  }
  return out.str();
}

std::string curve_hash(const EvaluationReport& report) { return hex64(fnv1a64(curve_csv(report))); }

nlohmann::json curve_json(const EvaluationReport& report) {
  nlohmann::json j;
  const auto& c = report.curve;
  j["grid_step_percent"] = c.grid_step;
  j["cases"] = report.cases;
  j["abstained"] = report.abstained;
  j["qini_coefficient"] = c.coefficient;
  j["qini_coefficient_raw"] = c.coefficient_raw;
  j["fraction_on_or_above_baseline"] = c.fraction_on_or_above;
  j["verdict"] = report.above_baseline ? "above_baseline" : "below_baseline";
  j["curve_hash"] = curve_hash(report);
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : c.points)
    pts.push_back({{"n_percent", p.n_percent},
                   {"qini", p.qini},
                   {"baseline", p.baseline},
                   {"selected", p.selected},
                   {"treated", p.treated},
                   {"control", p.control},
                   {"carried", p.carried}});
  j["points"] = pts;
  nlohmann::json nets = nlohmann::json::array();
  for (std::size_t k = 0; k < report.vc_grid.size(); ++k) {
    nlohmann::json gains = nlohmann::json::array();
    for (const auto& p : report.net_curves[k]) gains.push_back(p.gain);
    nets.push_back({{"v_over_c", report.vc_grid[k]}, {"v", report.vc_grid[k]}, {"c", 1.0}, {"gain", gains}});
  }
  j["net_value"] = nets;
  j["sorted_theta"] = c.sorted_theta;
  if (report.permutation)
    j["permutation_test"] = {{"shuffles", report.permutation->shuffles},
                             {"p_value", report.permutation->p_value}};
  return j;
}

QiniCurve curve_from_json(const nlohmann::json& j) {
  QiniCurve c;
  try {
    c.grid_step = j.at("grid_step_percent").get<double>();
    c.coefficient = j.at("qini_coefficient").get<double>();
    c.coefficient_raw = j.at("qini_coefficient_raw").get<double>();
    c.fraction_on_or_above = j.at("fraction_on_or_above_baseline").get<double>();
    for (const auto& p : j.at("points")) {
      QiniPoint q;
      q.n_percent = p.at("n_percent").get<double>();
      q.qini = p.at("qini").get<double>();
      q.baseline = p.at("baseline").get<double>();
      q.selected = p.at("selected").get<std::size_t>();
      q.treated = p.at("treated").get<std::size_t>();
      q.control = p.at("control").get<std::size_t>();
      q.carried = p.at("carried").get<bool>();
      c.points.push_back(q);
    }
    c.sorted_theta = j.at("sorted_theta").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("curves JSON: ") + e.what());
  }
  return c;
}

void write_report(const EvaluationReport& report, const QiniInput& input,
                  const std::vector<double>& ci_low, const std::vector<double>& ci_high,
                  const std::filesystem::path& dir) {
  write_file(dir / "curve.csv", curve_csv(report));
  write_file(dir / "curves.json", curve_json(report).dump(2) + "\n");
  std::ostringstream est;
  write_csv_row(est, {"case_id", "theta", "ci_low", "ci_high", "T", "Y"});
  for (std::size_t i = 0; i < input.size(); ++i)
    write_csv_row(est, {input.case_ids[i], format_double(input.theta[i]), format_double(ci_low[i]),
                        format_double(ci_high[i]), std::to_string(input.t[i]),
                        format_double(input.y[i])});
  write_file(dir / "estimates.csv", est.str());
}

QiniInput read_estimates(const std::filesystem::path& dir) {
  std::ifstream in(dir / "estimates.csv");
  if (!in) throw IoError("cannot open " + (dir / "estimates.csv").string());
  CsvReader reader(in);
  std::vector<std::string> f;
  if (!reader.next(f) || f.size() < 6 || f[0] != "case_id") throw IoError("estimates.csv: bad header");
  QiniInput q;
  while (reader.next(f)) {
    if (f.size() < 6) throw IoError("estimates.csv: short row at line " + std::to_string(reader.line()));
    auto theta = parse_double(f[1]);
    auto t = parse_int(f[4]);
    auto y = parse_double(f[5]);
    if (!theta || !t || !y) throw IoError("estimates.csv: bad number at line " + std::to_string(reader.line()));
    q.case_ids.push_back(f[0]);
    q.theta.push_back(*theta);
    q.t.push_back(static_cast<int>(*t));
    q.y.push_back(*y);
  }
  return q;
}

}  // namespace prescribe::policy
