#include "prescribe/synth.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "prescribe/error.h"
#include "prescribe/rng.h"

namespace prescribe::synth {
namespace {

constexpr int kMaxOutcomeRedraws = 1000;
constexpr std::int64_t kMinTailMs = 60'000;  // completion at least a minute after the last step

double parse_number(std::string_view text, std::string_view context) {
  auto v = parse_double(trim(text));
  if (!v) throw ConfigError(std::string(context) + ": bad number '" + std::string(text) + "'");
  return *v;
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::int64_t to_ms(double days) { return std::llround(days * kMillisPerDay); }

std::int64_t hours_to_ms(double hours) { return std::llround(hours * 3'600'000.0); }

std::string pad_id(std::size_t i, std::size_t n) {
  const std::size_t width = std::to_string(n).size();
  std::string digits = std::to_string(i + 1);
  return "c" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

std::vector<std::size_t> true_order(const std::vector<GroundTruth>& truth) {
  std::vector<std::size_t> order(truth.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (truth[a].theta != truth[b].theta) return truth[a].theta < truth[b].theta;
    return truth[a].case_id < truth[b].case_id;
  });
  return order;
}

}  // namespace

Expression Expression::parse(std::string_view text) {
  Expression e;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) {
    Term term;
    double sign = 1;
    std::string_view rest = tok;
    if (rest.front() == '+' || rest.front() == '-') {
      sign = rest.front() == '-' ? -1 : 1;
      rest.remove_prefix(1);
    }
    if (rest.empty()) throw ConfigError("expression: dangling sign in '" + std::string(text) + "'");
    std::string_view factor;
    if (auto star = rest.find('*'); star != std::string_view::npos) {
      term.coef = sign * parse_number(rest.substr(0, star), "expression coefficient");
      factor = rest.substr(star + 1);
    } else if (parse_double(rest)) {
      term.coef = sign * *parse_double(rest);
      term.shape = Shape::kConstant;
      e.terms_.push_back(term);
      continue;
    } else {
      term.coef = sign;
      factor = rest;
    }
    if (factor.empty()) throw ConfigError("expression: empty factor in '" + tok + "'");
    if (factor.starts_with("max0(") || factor.starts_with("min0(")) {
      term.shape = factor.starts_with("max0(") ? Shape::kPositivePart : Shape::kNegativePart;
      if (factor.back() != ')') throw ConfigError("expression: unclosed hinge in '" + tok + "'");
      std::string_view inner = factor.substr(5, factor.size() - 6);
      const auto op = inner.find_first_of("+-", 1);
      if (op == std::string_view::npos) {
        term.feature = std::string(inner);
      } else {
        term.feature = std::string(inner.substr(0, op));
        // x-0.5 places the knot at +0.5
        term.knot = -parse_number(inner.substr(op), "hinge knot");
      }
    } else if (factor.front() == '[') {
      const auto eq = factor.find('=');
      if (factor.back() != ']' || eq == std::string_view::npos)
        throw ConfigError("expression: bad indicator '" + tok + "'");
      term.shape = Shape::kIndicator;
      term.feature = std::string(factor.substr(1, eq - 1));
      term.level = std::string(factor.substr(eq + 1, factor.size() - eq - 2));
    } else {
      term.shape = Shape::kLinear;
      term.feature = std::string(factor);
    }
    if (term.feature.empty()) throw ConfigError("expression: missing feature in '" + tok + "'");
    e.terms_.push_back(term);
  }
  return e;
}

double Expression::evaluate(const Sample& s) const {
  double total = 0;
  for (const auto& t : terms_) {
    if (t.shape == Shape::kConstant) {
      total += t.coef;
      continue;
    }
    if (t.shape == Shape::kIndicator) {
      auto it = s.categorical.find(t.feature);
      if (it == s.categorical.end()) throw ConfigError("expression: unknown categorical '" + t.feature + "'");
      total += it->second == t.level ? t.coef : 0.0;
      continue;
    }
    auto it = s.numeric.find(t.feature);
    if (it == s.numeric.end()) throw ConfigError("expression: unknown numeric feature '" + t.feature + "'");
    const double v = it->second - t.knot;
    switch (t.shape) {
      case Shape::kLinear: total += t.coef * it->second; break;
      case Shape::kPositivePart: total += t.coef * std::max(0.0, v); break;
      case Shape::kNegativePart: total += t.coef * std::min(0.0, v); break;
      default: break;
    }
  }
  return total;
}

std::vector<std::string> Expression::referenced_features() const {
  std::vector<std::string> out;
  for (const auto& t : terms_)
    if (!t.feature.empty() && std::find(out.begin(), out.end(), t.feature) == out.end())
      out.push_back(t.feature);
  return out;
}

FeatureDistribution FeatureDistribution::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string kind;
  in >> kind;
  FeatureDistribution d;
  std::string a, b;
  if (kind == "uniform" || kind == "normal") {
    d.kind = kind == "uniform" ? Kind::kUniform : Kind::kNormal;
    if (!(in >> a >> b)) throw ConfigError("feature: " + kind + " needs two parameters");
    d.a = parse_number(a, kind);
    d.b = parse_number(b, kind);
    if (d.kind == Kind::kUniform && !(d.b > d.a)) throw ConfigError("feature: uniform needs lo < hi");
    if (d.kind == Kind::kNormal && !(d.b >= 0)) throw ConfigError("feature: normal sd must be >= 0");
  } else if (kind == "bernoulli") {
    d.kind = Kind::kBernoulli;
    if (!(in >> a)) throw ConfigError("feature: bernoulli needs p");
    d.a = parse_number(a, kind);
    if (!(d.a >= 0 && d.a <= 1)) throw ConfigError("feature: bernoulli p must be in [0,1]");
  } else if (kind == "categorical") {
    d.kind = Kind::kCategorical;
    std::string level;
    double total = 0;
    while (in >> level) {
      const auto colon = level.rfind(':');
      if (colon == std::string::npos) throw ConfigError("feature: categorical level needs name:weight");
      const double w = parse_number(level.substr(colon + 1), "categorical weight");
      if (!(w > 0)) throw ConfigError("feature: categorical weights must be > 0");
      d.levels.emplace_back(level.substr(0, colon), w);
      total += w;
    }
    if (d.levels.empty()) throw ConfigError("feature: categorical needs levels");
    for (auto& [name, w] : d.levels) w /= total;
  } else {
    throw ConfigError("feature: unknown distribution '" + kind + "'");
  }
  return d;
}

SyntheticSpec SyntheticSpec::parse(const KeyValueConfig& cfg) {
  SyntheticSpec s;
  auto list = [&](const std::string& key, std::vector<std::string>& into) {
    if (!cfg.has(key)) return;
    into.clear();
    for (const auto& item : cfg.get_list(key))
      if (auto t = trim(item); !t.empty()) into.emplace_back(t);
  };
  s.n_cases = static_cast<std::size_t>(cfg.get_int("n_cases", 1000));
  {
    const std::string seed = cfg.get_or("seed", "1");
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(seed.data(), seed.data() + seed.size(), v);
    if (ec != std::errc() || p != seed.data() + seed.size()) throw ConfigError("seed must be an unsigned integer");
    s.seed = v;
  }
  {
    const auto start = parse_timestamp(cfg.get_or("start", "2020-01-01T00:00:00Z"));
    if (!start) throw ConfigError("start must be an ISO 8601 timestamp");
    s.start = *start;
  }
  s.arrival_mean_hours = cfg.get_double("arrival_mean_hours", s.arrival_mean_hours);
  s.gap_mean_hours = cfg.get_double("gap_mean_hours", s.gap_mean_hours);
  list("activities", s.activities);
  list("resources", s.resources);
  s.start_activity = cfg.get_or("start_activity", s.start_activity);
  s.end_activity = cfg.get_or("end_activity", s.end_activity);
  s.treatment_activity = cfg.get_or("treatment_activity", s.treatment_activity);
  s.fillers_min = static_cast<int>(cfg.get_int("fillers_min", s.fillers_min));
  s.fillers_max = static_cast<int>(cfg.get_int("fillers_max", s.fillers_max));
  for (const auto& [key, value] : cfg.values())
    if (key.starts_with("feature."))
      s.features.emplace_back(key.substr(8), FeatureDistribution::parse(value));
  s.effect = Expression::parse(cfg.get("effect"));
  s.baseline = Expression::parse(cfg.get("baseline"));
  s.propensity = Expression::parse(cfg.get_or("propensity", "0"));
  s.noise_y = cfg.get_double("noise_y", s.noise_y);
  s.noise_t = cfg.get_double("noise_t", s.noise_t);
  s.hidden_t = cfg.get_double("hidden_t", s.hidden_t);
  s.hidden_y = cfg.get_double("hidden_y", s.hidden_y);
  s.validate();
  return s;
}

SyntheticSpec SyntheticSpec::load(const std::filesystem::path& path) {
  return parse(KeyValueConfig::load(path));
}

void SyntheticSpec::validate() const {
  if (n_cases == 0) throw ConfigError("n_cases must be > 0");
  if (!(arrival_mean_hours > 0) || !(gap_mean_hours > 0)) throw ConfigError("time scales must be > 0");
  if (fillers_min < 0 || fillers_max < fillers_min) throw ConfigError("need 0 <= fillers_min <= fillers_max");
  if (activities.empty() && fillers_max > 0) throw ConfigError("filler activities required");
  if (resources.empty()) throw ConfigError("resources must be nonempty");
  if (!(noise_y >= 0) || !(noise_t >= 0)) throw ConfigError("noise scales must be >= 0");
  const std::vector<std::string> reserved = {"case_id", "activity", "timestamp", "resource"};
  for (const auto& [name, dist] : features) {
    if (name.empty() || std::find(reserved.begin(), reserved.end(), name) != reserved.end())
      throw ConfigError("feature name '" + name + "' is reserved");
  }
  for (const Expression* e : {&effect, &baseline, &propensity}) {
    for (const auto& t : e->terms()) {
      if (t.feature.empty()) continue;
      auto it = std::find_if(features.begin(), features.end(),
                             [&](const auto& f) { return f.first == t.feature; });
      if (it == features.end()) throw ConfigError("expression references unknown feature '" + t.feature + "'");
      const bool categorical = it->second.kind == FeatureDistribution::Kind::kCategorical;
      if (categorical != (t.shape == Expression::Shape::kIndicator))
        throw ConfigError("feature '" + t.feature + "' used with the wrong term type");
    }
  }
  for (const std::string* a : {&start_activity, &end_activity})
    if (*a == treatment_activity) throw ConfigError("treatment activity must differ from start/end");
  if (std::find(activities.begin(), activities.end(), treatment_activity) != activities.end())
    throw ConfigError("treatment activity must not be a filler activity");
}

SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  using eventlog::AttributeKind;
  using eventlog::AttributeLevel;
  SyntheticData out;
  for (const auto& [name, dist] : spec.features)
    out.log.schema.attributes.push_back(
        {name,
         dist.kind == FeatureDistribution::Kind::kCategorical ? AttributeKind::kCategorical
                                                              : AttributeKind::kNumeric,
         AttributeLevel::kCase});
  out.log.schema.attributes.push_back({"resource", AttributeKind::kCategorical, AttributeLevel::kEvent});

  Rng arrivals(derive_seed(spec.seed, 0xa7));
  Instant start = spec.start;
  for (std::size_t i = 0; i < spec.n_cases; ++i) {
    if (i > 0) start += std::chrono::milliseconds(hours_to_ms(arrivals.exponential(spec.arrival_mean_hours)));
    Rng rng(derive_seed(spec.seed, i + 1));
    GroundTruth gt;
    gt.case_id = pad_id(i, spec.n_cases);
    eventlog::Trace trace;
    trace.case_id = gt.case_id;
    for (const auto& [name, dist] : spec.features) {
      switch (dist.kind) {
        case FeatureDistribution::Kind::kUniform: gt.features.numeric[name] = rng.uniform(dist.a, dist.b); break;
        case FeatureDistribution::Kind::kNormal: gt.features.numeric[name] = rng.normal(dist.a, dist.b); break;
        case FeatureDistribution::Kind::kBernoulli:
          gt.features.numeric[name] = rng.bernoulli(dist.a) ? 1.0 : 0.0;
          break;
        case FeatureDistribution::Kind::kCategorical: {
          const double u = rng.uniform();
          double acc = 0;
          std::string pick = dist.levels.back().first;
          for (const auto& [level, p] : dist.levels) {
            acc += p;
            if (u < acc) {
              pick = level;
              break;
            }
          }
          gt.features.categorical[name] = pick;
          break;
        }
      }
      if (auto it = gt.features.numeric.find(name); it != gt.features.numeric.end())
        trace.case_attributes[name] = it->second;
      else
        trace.case_attributes[name] = gt.features.categorical[name];
    }
    gt.hidden = rng.normal();
    const double logit = spec.propensity.evaluate(gt.features) + spec.noise_t * rng.normal() +
                         spec.hidden_t * gt.hidden;
    gt.propensity = std::clamp(logistic(logit), 0.02, 0.98);
    gt.t = rng.bernoulli(gt.propensity) ? 1 : 0;

    const int fillers = spec.fillers_min + static_cast<int>(rng.index(
                                               static_cast<std::size_t>(spec.fillers_max - spec.fillers_min + 1)));
    const int k = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(fillers + 1)));

    std::vector<std::string> labels{spec.start_activity};
    for (int f = 0; f < fillers; ++f) labels.push_back(spec.activities[rng.index(spec.activities.size())]);
    if (gt.t == 1) labels.insert(labels.begin() + k, spec.treatment_activity);

    // Steps before completion are spaced independently of the outcome.
    Instant t = start;
    for (std::size_t e = 0; e < labels.size(); ++e) {
      if (e > 0) t += std::chrono::milliseconds(1000 + hours_to_ms(rng.exponential(spec.gap_mean_hours)));
      eventlog::Event ev;
      ev.case_id = gt.case_id;
      ev.activity = labels[e];
      ev.timestamp = t;
      ev.set_attribute("resource", spec.resources[rng.index(spec.resources.size())]);
      trace.events.push_back(std::move(ev));
    }
    const std::int64_t pre_ms = (t - start).count();

    const double theta = spec.effect.evaluate(gt.features);
    const double base = spec.baseline.evaluate(gt.features) + spec.hidden_y * gt.hidden;
    const std::int64_t theta_ms = to_ms(theta);
    std::int64_t y0_ms = 0, y1_ms = 0;
    int attempt = 0;
    for (;; ++attempt) {
      if (attempt == kMaxOutcomeRedraws)
        throw ConfigError("case " + gt.case_id + ": could not draw a positive cycle time; raise the baseline");
      y0_ms = to_ms(base + spec.noise_y * rng.normal());
      y1_ms = y0_ms + theta_ms;
      if (std::min(y0_ms, y1_ms) >= pre_ms + kMinTailMs) break;
    }
    const std::int64_t y_ms = gt.t == 1 ? y1_ms : y0_ms;
    eventlog::Event end;
    end.case_id = gt.case_id;
    end.activity = spec.end_activity;
    end.timestamp = start + std::chrono::milliseconds(y_ms);
    end.set_attribute("resource", spec.resources[rng.index(spec.resources.size())]);
    trace.events.push_back(std::move(end));

    gt.theta = static_cast<double>(theta_ms) / kMillisPerDay;
    gt.y0 = static_cast<double>(y0_ms) / kMillisPerDay;
    gt.y1 = static_cast<double>(y1_ms) / kMillisPerDay;
    gt.y = trace.duration_days();
    out.log.traces.push_back(std::move(trace));
    out.truth.push_back(std::move(gt));
  }
  return out;
}

KeyValueConfig log_config(const SyntheticSpec& spec) {
  KeyValueConfig cfg;
  std::vector<std::string> names;
  for (const auto& [name, dist] : spec.features) names.push_back(name);
  cfg.set("case_id", "case_id");
  cfg.set("activity", "activity");
  cfg.set("timestamp", "timestamp");
  cfg.set("case_attributes", join(names, ","));
  cfg.set("event_attributes", "resource");
  cfg.set("completion_activities", spec.end_activity);
  cfg.set("treatment_activity", spec.treatment_activity);
  cfg.set("polarity", "presence");
  return cfg;
}

void write_outputs(const SyntheticData& data, const SyntheticSpec& spec,
                   const std::filesystem::path& out) {
  std::ostringstream log;
  eventlog::write_csv(log, data.log, eventlog::ColumnMapping{});
  write_file(out / "log" / "log.csv", log.str());

  std::ostringstream cfg;
  const auto config = log_config(spec);
  for (const auto& [key, value] : config.values()) cfg << key << " = " << value << '\n';
  write_file(out / "log" / "log.cfg", cfg.str());

  std::ostringstream truth;
  std::vector<std::string> header = {"case_id", "T", "propensity", "theta", "y0", "y1", "y", "hidden"};
  for (const auto& [name, dist] : spec.features) header.push_back(name);
  write_csv_row(truth, header);
  for (const auto& g : data.truth) {
    std::vector<std::string> row = {g.case_id,           std::to_string(g.t), format_double(g.propensity),
                                    format_double(g.theta), format_double(g.y0), format_double(g.y1),
                                    format_double(g.y),  format_double(g.hidden)};
    for (const auto& [name, dist] : spec.features) {
      auto it = g.features.numeric.find(name);
      row.push_back(it != g.features.numeric.end() ? format_double(it->second)
                                                   : g.features.categorical.at(name));
    }
    write_csv_row(truth, row);
  }
  write_file(out / "truth" / "truth.csv", truth.str());
}

std::vector<GroundTruth> read_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvReader reader(in);
  std::vector<std::string> header, f;
  if (!reader.next(header) || header.size() < 8 || header[0] != "case_id")
    throw IoError(path.string() + ": bad ground-truth header");
  std::vector<GroundTruth> out;
  while (reader.next(f)) {
    if (f.size() != header.size()) throw IoError(path.string() + ": ragged row at line " + std::to_string(reader.line()));
    GroundTruth g;
    g.case_id = f[0];
    g.t = static_cast<int>(parse_int(f[1]).value_or(0));
    auto num = [&](std::size_t i) {
      auto v = parse_double(f[i]);
      if (!v) throw IoError(path.string() + ": bad number at line " + std::to_string(reader.line()));
      return *v;
    };
    g.propensity = num(2);
    g.theta = num(3);
    g.y0 = num(4);
    g.y1 = num(5);
    g.y = num(6);
    g.hidden = num(7);
    for (std::size_t i = 8; i < header.size(); ++i) {
      if (auto v = parse_double(f[i]))
        g.features.numeric[header[i]] = *v;
      else
        g.features.categorical[header[i]] = f[i];
    }
    out.push_back(std::move(g));
  }
  return out;
}

double oracle_policy_gain(const std::vector<GroundTruth>& truth, const policy::CostModel& cost,
                          double n_percent) {
  cost.validate();
  if (!(n_percent >= 0 && n_percent <= 100)) throw ConfigError("n must be in [0, 100]");
  const auto order = true_order(truth);
  const auto count = static_cast<std::size_t>(
      std::floor(n_percent * static_cast<double>(truth.size()) / 100.0 + 1e-9));
  double benefit = 0;
  for (std::size_t i = 0; i < count; ++i) benefit += truth[order[i]].y0 - truth[order[i]].y1;
  return cost.v * benefit - cost.c * static_cast<double>(count);
}

double oracle_best_percent(const std::vector<GroundTruth>& truth, const policy::CostModel& cost) {
  double best_n = 0;
  double best = oracle_policy_gain(truth, cost, 0);
  for (int n = 1; n <= 100; ++n) {
    const double g = oracle_policy_gain(truth, cost, n);
    if (g > best) {
      best = g;
      best_n = n;
    }
  }
  return best_n;
}

double realized_gain(const std::vector<GroundTruth>& truth, const policy::CostModel& cost,
                     const std::vector<std::string>& treated_ids) {
  std::map<std::string, const GroundTruth*> by_id;
  for (const auto& g : truth) by_id[g.case_id] = &g;
  double gain = 0;
  for (const auto& id : treated_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw UnknownCase("no ground truth for case '" + id + "'");
    gain += cost.v * (it->second->y0 - it->second->y1) - cost.c;
  }
  return gain;
}

}  // namespace prescribe::synth
