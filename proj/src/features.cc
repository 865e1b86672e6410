#include "prescribe/features.h"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "prescribe/error.h"

namespace prescribe::features {
namespace {

using eventlog::AttributeKind;
using eventlog::AttributeLevel;

const char* const kTemporalNames[] = {"month", "weekday", "hour", "elapsed_case_days",
                                      "elapsed_prev_days"};

std::string lag_suffix(int lag) { return lag == 0 ? "" : "@-" + std::to_string(lag); }

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[++i];
      out.push_back(n == 't' ? '\t' : n == 'n' ? '\n' : n);
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    parts.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

bool contains(const std::vector<std::string>& v, std::string_view s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

std::string to_string(Polarity p) { return p == Polarity::kPresence ? "presence" : "absence"; }

Polarity parse_polarity(std::string_view text) {
  if (text == "presence") return Polarity::kPresence;
  if (text == "absence") return Polarity::kAbsence;
  throw ConfigError("polarity must be presence or absence, got " + std::string(text));
}

std::string to_string(NumericAggregation a) {
  switch (a) {
    case NumericAggregation::kMin: return "min";
    case NumericAggregation::kMax: return "max";
    case NumericAggregation::kMean: return "mean";
    case NumericAggregation::kSum: return "sum";
  }
  return "";
}

std::string to_string(EncodingKind kind) {
  switch (kind) {
    case EncodingKind::kCount: return "count";
    case EncodingKind::kAggregate: return "aggregate";
    case EncodingKind::kLastState: return "last";
    case EncodingKind::kLastStateOneHot: return "last_onehot";
    case EncodingKind::kCase: return "case";
    case EncodingKind::kCaseOneHot: return "case_onehot";
    case EncodingKind::kEngineered: return "engineered";
  }
  return "";
}

EncodingKind parse_encoding_kind(std::string_view text) {
  for (auto k : {EncodingKind::kCount, EncodingKind::kAggregate, EncodingKind::kLastState,
                 EncodingKind::kLastStateOneHot, EncodingKind::kCase, EncodingKind::kCaseOneHot,
                 EncodingKind::kEngineered}) {
    if (to_string(k) == text) return k;
  }
  throw ModelFormatError("unknown encoding kind " + std::string(text));
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "validation") return Split::kValidation;
  if (text == "test") return Split::kTest;
  throw ConfigError("unknown split " + std::string(text));
}

void EncoderConfig::validate() const {
  if (treatment_activity.empty()) throw ConfigError("treatment activity is required");
  if (last_state_window < 1) throw ConfigError("last-state window must be >= 1");
}

EncoderConfig EncoderConfig::resolved(const eventlog::Schema& schema) const {
  validate();
  EncoderConfig out = *this;
  if (out.aggregation_attributes.empty()) {
    out.aggregation_attributes.emplace_back(kActivityAttribute);
    for (const char* name : {"resource", "org:resource", "Resource"}) {
      const auto* spec = schema.find(name);
      if (spec && spec->level == AttributeLevel::kEvent) {
        out.aggregation_attributes.emplace_back(name);
        break;
      }
    }
  }
  if (!out.last_state_attributes) {
    std::vector<std::string> rest;
    for (const auto* spec : schema.at_level(AttributeLevel::kEvent))
      if (!contains(out.aggregation_attributes, spec->name)) rest.push_back(spec->name);
    out.last_state_attributes = rest;
  }
  for (const auto& a : out.aggregation_attributes) {
    if (a == kActivityAttribute) continue;
    const auto* spec = schema.find(a);
    if (!spec || spec->level != AttributeLevel::kEvent)
      throw ConfigError("aggregation attribute '" + a + "' is not an event attribute");
  }
  for (const auto& a : *out.last_state_attributes) {
    if (a == kActivityAttribute) continue;
    const auto* spec = schema.find(a);
    if (!spec || spec->level != AttributeLevel::kEvent)
      throw ConfigError("last-state attribute '" + a + "' is not an event attribute");
  }
  return out;
}

PrefixHistogram PrefixHistogram::from_lengths(const std::vector<int>& lengths) {
  std::map<int, double> counts;
  for (int k : lengths) counts[k] += 1.0;
  return from_probabilities(std::move(counts));
}

PrefixHistogram PrefixHistogram::from_probabilities(std::map<int, double> probabilities) {
  PrefixHistogram h;
  double total = 0;
  for (const auto& [k, p] : probabilities) {
    if (p < 0) throw ConfigError("negative histogram mass");
    total += p;
  }
  if (total <= 0) return h;
  double acc = 0;
  for (const auto& [k, p] : probabilities) {
    if (p == 0) continue;
    acc += p / total;
    h.values_.push_back(k);
    h.probs_.push_back(p / total);
    h.cdf_.push_back(acc);
  }
  h.cdf_.back() = 1.0;
  return h;
}

int PrefixHistogram::mode() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs_.size(); ++i)
    if (probs_[i] > probs_[best]) best = i;
  return values_.at(best);
}

int PrefixHistogram::draw(Rng& rng) const {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()),
                                         values_.size() - 1);
  return values_[idx];
}

int first_occurrence(const Trace& trace, const std::string& activity) {
  for (std::size_t i = 0; i < trace.events.size(); ++i)
    if (trace.events[i].activity == activity) return static_cast<int>(i);
  return -1;
}

Prefix label_and_cut(const Trace& trace, const EncoderConfig& cfg, std::uint64_t rng_seed,
                     const PrefixHistogram& treated_k_histogram) {
  const int n = static_cast<int>(trace.events.size());
  if (n < 2) throw TraceTooShort("case " + trace.case_id + " has fewer than 2 events");
  const int occurrence = first_occurrence(trace, cfg.treatment_activity);
  if (occurrence == 0)
    throw NoDecisionPoint("case " + trace.case_id + " starts with the treatment activity");

  int k;
  if (occurrence > 0) {
    k = occurrence;
  } else {
    if (treated_k_histogram.empty())
      throw ConfigError("empty prefix-length histogram for untreated case " + trace.case_id);
    Rng rng(derive_seed(rng_seed, fnv1a64(trace.case_id)));
    k = -1;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const int draw = treated_k_histogram.draw(rng);
      if (draw >= 1 && draw <= n - 1) {
        k = draw;
        break;
      }
    }
    if (k < 0) k = std::max(1, std::min(treated_k_histogram.mode(), n - 1));
  }
  const bool occurred = occurrence > 0;

  Prefix p;
  p.case_id = trace.case_id;
  p.events.assign(trace.events.begin(), trace.events.begin() + k);
  p.case_attributes = trace.case_attributes;
  p.k = k;
  p.treated = cfg.polarity == Polarity::kPresence ? occurred : !occurred;
  p.outcome_days = trace.duration_days();
  p.case_start = trace.start();
  return p;
}

ActiveCaseIndex::ActiveCaseIndex(const eventlog::EventLog& log) {
  starts_.reserve(log.traces.size());
  ends_.reserve(log.traces.size());
  for (const auto& t : log.traces) {
    starts_.push_back(t.start());
    ends_.push_back(t.end());
  }
  std::sort(starts_.begin(), starts_.end());
  std::sort(ends_.begin(), ends_.end());
}

void ActiveCaseIndex::add_start(Instant start) {
  starts_.insert(std::upper_bound(starts_.begin(), starts_.end(), start), start);
}

void ActiveCaseIndex::add_end(Instant end) {
  ends_.insert(std::upper_bound(ends_.begin(), ends_.end(), end), end);
}

std::size_t ActiveCaseIndex::active_at(Instant t) const {
  const auto started = std::upper_bound(starts_.begin(), starts_.end(), t) - starts_.begin();
  const auto ended = std::lower_bound(ends_.begin(), ends_.end(), t) - ends_.begin();
  return static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, started - ended));
}

EngineeredFeatures engineer_features(std::span<const Event> events, Instant case_start,
                                     Instant log_origin, const ActiveCaseIndex& context) {
  EngineeredFeatures out;
  out.per_event.reserve(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto cal = calendar_fields(events[i].timestamp);
    out.per_event.push_back(
        {cal.month, cal.weekday, cal.hour, days_between(case_start, events[i].timestamp),
         i == 0 ? 0.0 : days_between(events[i - 1].timestamp, events[i].timestamp)});
  }
  if (!events.empty())
    out.active_cases = static_cast<double>(context.active_at(events.back().timestamp));
  out.start_offset_days = days_between(log_origin, case_start);
  return out;
}

std::vector<std::size_t> FeatureDictionary::w_columns() const {
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < features.size(); ++i)
    if (features[i].in_w) cols.push_back(i);
  return cols;
}

std::vector<std::string> FeatureDictionary::names() const {
  std::vector<std::string> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(f.name);
  return out;
}

std::map<std::string, std::vector<std::size_t>> FeatureDictionary::source_groups() const {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < features.size(); ++i) groups[features[i].source].push_back(i);
  return groups;
}

std::string FeatureDictionary::serialize() const {
  std::ostringstream out;
  out << "# prescribe feature dictionary v1\n";
  out << "treatment\t" << escape(treatment_activity) << '\n';
  out << "polarity\t" << to_string(polarity) << '\n';
  out << "window\t" << last_state_window << '\n';
  out << "origin\t" << origin.time_since_epoch().count() << '\n';
  for (const auto& [k, v] : numeric_fill)
    out << "fill_numeric\t" << escape(k) << '\t' << format_double(v) << '\n';
  for (const auto& [k, v] : categorical_fill)
    out << "fill_categorical\t" << escape(k) << '\t' << escape(v) << '\n';
  for (const auto& f : features) {
    out << "feature\t" << escape(f.name) << '\t' << escape(f.source) << '\t' << to_string(f.kind)
        << '\t' << escape(f.value) << '\t' << f.lag << '\t' << (f.in_w ? "w" : "-") << '\n';
  }
  return out.str();
}

FeatureDictionary FeatureDictionary::parse(std::string_view text) {
  FeatureDictionary d;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto parts = split_tabs(line);
    const auto& tag = parts[0];
    auto need = [&](std::size_t n) {
      if (parts.size() != n) throw ModelFormatError("malformed dictionary line: " + std::string(line));
    };
    if (tag == "treatment") {
      need(2);
      d.treatment_activity = unescape(parts[1]);
    } else if (tag == "polarity") {
      need(2);
      d.polarity = parse_polarity(parts[1]);
    } else if (tag == "window") {
      need(2);
      d.last_state_window = static_cast<int>(parse_int(parts[1]).value_or(1));
    } else if (tag == "origin") {
      need(2);
      d.origin = Instant{Millis{parse_int(parts[1]).value_or(0)}};
    } else if (tag == "fill_numeric") {
      need(3);
      d.numeric_fill[unescape(parts[1])] = parse_double(parts[2]).value_or(0.0);
    } else if (tag == "fill_categorical") {
      need(3);
      d.categorical_fill[unescape(parts[1])] = unescape(parts[2]);
    } else if (tag == "feature") {
      need(7);
      FeatureSpec f;
      f.name = unescape(parts[1]);
      f.source = unescape(parts[2]);
      f.kind = parse_encoding_kind(parts[3]);
      f.value = unescape(parts[4]);
      f.lag = static_cast<int>(parse_int(parts[5]).value_or(0));
      f.in_w = parts[6] == "w";
      if (f.kind == EncodingKind::kCount || f.kind == EncodingKind::kLastStateOneHot ||
          f.kind == EncodingKind::kCaseOneHot) {
        auto& u = d.universes[f.source];
        if (!contains(u, f.value)) u.push_back(f.value);
      }
      d.features.push_back(std::move(f));
    } else {
      throw ModelFormatError("unknown dictionary line: " + std::string(line));
    }
  }
  return d;
}

FeatureDictionary fit_encoder(const std::vector<Prefix>& training_prefixes,
                              const EncoderConfig& raw_cfg, const eventlog::Schema& schema,
                              Instant log_origin) {
  if (training_prefixes.empty()) throw NoFeatures("no training prefixes");
  const EncoderConfig cfg = raw_cfg.resolved(schema);
  const auto& last_attrs = *cfg.last_state_attributes;

  FeatureDictionary d;
  d.treatment_activity = cfg.treatment_activity;
  d.polarity = cfg.polarity;
  d.last_state_window = cfg.last_state_window;
  d.origin = log_origin;

  auto is_numeric = [&](const std::string& attr) {
    if (attr == kActivityAttribute) return false;
    const auto* spec = schema.find(attr);
    return spec && spec->kind == AttributeKind::kNumeric;
  };

  // Universes and fill values from training prefixes only.
  std::map<std::string, std::set<std::string>> event_values;
  std::map<std::string, std::vector<double>> event_numbers;
  std::map<std::string, std::map<std::string, std::size_t>> event_counts;
  std::map<std::string, std::set<std::string>> case_values;
  for (const auto& p : training_prefixes) {
    for (const auto& e : p.events) {
      event_values[std::string(kActivityAttribute)].insert(e.activity);
      for (const auto& [name, v] : e.attributes) {
        if (eventlog::is_missing(v)) continue;
        if (const auto* num = std::get_if<double>(&v)) event_numbers[name].push_back(*num);
        const std::string s = eventlog::value_to_string(v);
        event_values[name].insert(s);
        ++event_counts[name][s];
      }
    }
    for (const auto& [name, v] : p.case_attributes)
      if (!eventlog::is_missing(v)) case_values[name].insert(eventlog::value_to_string(v));
  }
  for (auto& [name, nums] : event_numbers) d.numeric_fill[name] = eventlog::lower_median(nums);
  for (const auto& [name, counts] : event_counts) {
    if (is_numeric(name)) continue;
    std::string best;
    std::size_t best_n = 0;
    for (const auto& [v, n] : counts)
      if (n > best_n) best = v, best_n = n;
    d.categorical_fill[name] = best;
  }

  auto add = [&](FeatureSpec f) {
    f.in_w = !contains(cfg.w_exclusions, f.name) && !contains(cfg.w_exclusions, f.source);
    d.features.push_back(std::move(f));
  };

  for (const auto& attr : cfg.aggregation_attributes) {
    const std::string stem = attr == kActivityAttribute ? "act" : attr;
    for (const auto& v : event_values[attr]) {
      add({stem + "_count[" + v + "]", attr, EncodingKind::kCount, v, 0, true});
      d.universes[attr].push_back(v);
    }
  }
  for (const auto* spec : schema.at_level(AttributeLevel::kEvent)) {
    if (spec->kind != AttributeKind::kNumeric || contains(cfg.aggregation_attributes, spec->name))
      continue;
    for (auto agg : cfg.numeric_aggregations)
      add({spec->name + "_" + to_string(agg), spec->name, EncodingKind::kAggregate,
           to_string(agg), 0, true});
  }
  for (int lag = 0; lag < cfg.last_state_window; ++lag) {
    const std::string head = lag == 0 ? "last[" : "last@-" + std::to_string(lag) + "[";
    for (const auto& attr : last_attrs) {
      if (is_numeric(attr)) {
        add({head + attr + "]", attr, EncodingKind::kLastState, "", lag, true});
      } else {
        auto& universe = d.universes[attr];
        for (const auto& v : event_values[attr]) {
          add({head + attr + "]=" + v, attr, EncodingKind::kLastStateOneHot, v, lag, true});
          if (!contains(universe, v)) universe.push_back(v);
        }
      }
    }
  }
  for (const auto* spec : schema.at_level(AttributeLevel::kCase)) {
    if (spec->kind == AttributeKind::kNumeric) {
      add({"case[" + spec->name + "]", spec->name, EncodingKind::kCase, "", 0, true});
    } else {
      for (const auto& v : case_values[spec->name]) {
        add({"case[" + spec->name + "]=" + v, spec->name, EncodingKind::kCaseOneHot, v, 0, true});
        d.universes[spec->name].push_back(v);
      }
    }
  }
  for (int lag = 0; lag < cfg.last_state_window; ++lag)
    for (const char* name : kTemporalNames)
      add({std::string(name) + lag_suffix(lag), name, EncodingKind::kEngineered, "", lag, true});
  add({"active_cases", "active_cases", EncodingKind::kEngineered, "", 0, true});
  add({"start_offset_days", "start_offset_days", EncodingKind::kEngineered, "", 0, true});

  std::set<std::string> seen;
  for (const auto& f : d.features)
    if (!seen.insert(f.name).second) throw ConfigError("duplicate feature name " + f.name);
  if (d.features.empty()) throw NoFeatures("feature dictionary is empty");
  return d;
}

RowEncoder::RowEncoder(const FeatureDictionary& dict) : width_(dict.features.size()) {
  auto categorical_slot = [](std::vector<CategoricalSlot>& slots, const std::string& attr,
                             int lag) -> CategoricalSlot& {
    for (auto& s : slots)
      if (s.attribute == attr && s.lag == lag) return s;
    slots.push_back({attr, lag, {}, {}});
    return slots.back();
  };
  auto numeric_fill = [&](const std::string& attr) {
    auto it = dict.numeric_fill.find(attr);
    return it == dict.numeric_fill.end() ? 0.0 : it->second;
  };
  for (std::size_t col = 0; col < dict.features.size(); ++col) {
    const auto& f = dict.features[col];
    switch (f.kind) {
      case EncodingKind::kCount:
        categorical_slot(counts_, f.source, 0).columns[f.value] = col;
        break;
      case EncodingKind::kLastStateOneHot:
        categorical_slot(last_onehot_, f.source, f.lag).columns[f.value] = col;
        break;
      case EncodingKind::kCaseOneHot:
        categorical_slot(case_onehot_, f.source, 0).columns[f.value] = col;
        break;
      case EncodingKind::kLastState:
        last_numeric_.push_back({f.source, f.lag, numeric_fill(f.source), col});
        break;
      case EncodingKind::kCase:
        case_numeric_.push_back({f.source, 0, 0.0, col});
        break;
      case EncodingKind::kAggregate: {
        auto it = std::find_if(aggregates_.begin(), aggregates_.end(),
                               [&](const AggregateSlot& s) { return s.attribute == f.source; });
        if (it == aggregates_.end()) {
          aggregates_.push_back({f.source, numeric_fill(f.source)});
          it = aggregates_.end() - 1;
        }
        const auto c = static_cast<std::ptrdiff_t>(col);
        if (f.value == "min") it->min = c;
        if (f.value == "max") it->max = c;
        if (f.value == "mean") it->mean = c;
        if (f.value == "sum") it->sum = c;
        break;
      }
      case EncodingKind::kEngineered:
        engineered_.push_back({f.source, f.lag, col});
        break;
    }
  }
  for (auto* group : {&counts_, &last_onehot_}) {
    for (auto& s : *group) {
      auto it = dict.categorical_fill.find(s.attribute);
      if (it != dict.categorical_fill.end()) s.fill = it->second;
    }
  }
  dict_origin_ = dict.origin;
}

std::string RowEncoder::categorical_value(const Event& e, const CategoricalSlot& slot) const {
  if (slot.attribute == kActivityAttribute) return e.activity;
  const Value* v = e.attribute(slot.attribute);
  if (!v || eventlog::is_missing(*v)) return slot.fill;
  return eventlog::value_to_string(*v);
}

std::vector<double> RowEncoder::encode(std::span<const Event> events,
                                       const std::map<std::string, Value>& case_attributes,
                                       Instant case_start, const ActiveCaseIndex& context,
                                       std::size_t* unseen) const {
  std::vector<double> row(width_, 0.0);
  auto miss = [&] {
    if (unseen) ++*unseen;
  };
  const auto n = static_cast<int>(events.size());

  for (const auto& e : events) {
    for (const auto& slot : counts_) {
      auto it = slot.columns.find(categorical_value(e, slot));
      if (it == slot.columns.end()) {
        miss();
      } else {
        row[it->second] += 1.0;
      }
    }
  }
  for (const auto& slot : aggregates_) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    double sum = 0;
    for (const auto& e : events) {
      const Value* v = e.attribute(slot.attribute);
      const double* d = v ? std::get_if<double>(v) : nullptr;
      const double x = d ? *d : slot.fill;
      lo = std::min(lo, x);
      hi = std::max(hi, x);
      sum += x;
    }
    if (n == 0) lo = hi = 0;
    if (slot.min != kNone) row[slot.min] = lo;
    if (slot.max != kNone) row[slot.max] = hi;
    if (slot.mean != kNone) row[slot.mean] = n ? sum / n : 0.0;
    if (slot.sum != kNone) row[slot.sum] = sum;
  }
  for (const auto& slot : last_onehot_) {
    const int idx = n - 1 - slot.lag;
    if (idx < 0) continue;
    auto it = slot.columns.find(categorical_value(events[idx], slot));
    if (it == slot.columns.end()) {
      miss();
    } else {
      row[it->second] = 1.0;
    }
  }
  for (const auto& slot : last_numeric_) {
    const int idx = n - 1 - slot.lag;
    if (idx < 0) continue;
    const Value* v = events[idx].attribute(slot.attribute);
    const double* d = v ? std::get_if<double>(v) : nullptr;
    row[slot.column] = d ? *d : slot.fill;
  }
  for (const auto& slot : case_onehot_) {
    auto v = case_attributes.find(slot.attribute);
    if (v == case_attributes.end() || eventlog::is_missing(v->second)) continue;
    auto it = slot.columns.find(eventlog::value_to_string(v->second));
    if (it == slot.columns.end()) {
      miss();
    } else {
      row[it->second] = 1.0;
    }
  }
  for (const auto& slot : case_numeric_) {
    auto v = case_attributes.find(slot.attribute);
    if (v == case_attributes.end()) continue;
    if (const auto* d = std::get_if<double>(&v->second)) row[slot.column] = *d;
  }
  if (!engineered_.empty()) {
    const auto eng = engineer_features(events, case_start, dict_origin_, context);
    for (const auto& slot : engineered_) {
      double value = 0;
      if (slot.name == "active_cases") {
        value = eng.active_cases;
      } else if (slot.name == "start_offset_days") {
        value = eng.start_offset_days;
      } else {
        const int idx = n - 1 - slot.lag;
        if (idx < 0) continue;
        const auto& t = eng.per_event[idx];
        if (slot.name == "month") value = t.month;
        else if (slot.name == "weekday") value = t.weekday;
        else if (slot.name == "hour") value = t.hour;
        else if (slot.name == "elapsed_case_days") value = t.elapsed_case_days;
        else if (slot.name == "elapsed_prev_days") value = t.elapsed_prev_days;
      }
      row[slot.column] = value;
    }
  }
  return row;
}

std::vector<Split> temporal_split(std::size_t n) {
  std::vector<Split> out(n, Split::kTest);
  const std::size_t train_end = n * 60 / 100;
  const std::size_t val_end = n * 80 / 100;
  for (std::size_t i = 0; i < n; ++i)
    out[i] = i < train_end ? Split::kTrain : i < val_end ? Split::kValidation : Split::kTest;
  return out;
}

Eigen::MatrixXd EncodedDataset::w() const {
  const auto cols = w_columns();
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(cols[j]));
  return out;
}

std::vector<std::size_t> EncodedDataset::rows_in(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

EncodedDataset EncodedDataset::subset(const std::vector<std::size_t>& rows) const {
  EncodedDataset out;
  out.dictionary = dictionary;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.y.resize(n);
  out.t.resize(n);
  out.x.resize(n, x.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto src = rows[static_cast<std::size_t>(r)];
    out.case_ids.push_back(case_ids[src]);
    out.case_starts.push_back(case_starts[src]);
    out.k.push_back(k[src]);
    out.split.push_back(split[src]);
    out.y(r) = y(static_cast<Eigen::Index>(src));
    out.t(r) = t(static_cast<Eigen::Index>(src));
    out.x.row(r) = x.row(static_cast<Eigen::Index>(src));
  }
  return out;
}

void EncodedDataset::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_file(dir / "dictionary.txt", dictionary.serialize());
  std::ofstream out(dir / "data.csv", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "data.csv").string());
  std::vector<std::string> row{"case_id", "split", "k", "case_start_ms", "T", "Y"};
  for (const auto& f : dictionary.features) row.push_back(f.name);
  write_csv_row(out, row);
  for (std::size_t i = 0; i < rows(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    row.assign({case_ids[i], to_string(split[i]), std::to_string(k[i]),
                std::to_string(case_starts[i].time_since_epoch().count()), format_double(t(r)),
                format_double(y(r))});
    for (Eigen::Index c = 0; c < x.cols(); ++c) row.push_back(format_double(x(r, c)));
    write_csv_row(out, row);
  }
}

EncodedDataset EncodedDataset::load(const std::filesystem::path& dir) {
  EncodedDataset d;
  d.dictionary = FeatureDictionary::parse(read_file(dir / "dictionary.txt"));
  std::ifstream in(dir / "data.csv", std::ios::binary);
  if (!in) throw IoError("cannot open " + (dir / "data.csv").string());
  CsvReader reader(in);
  std::vector<std::string> fields;
  if (!reader.next(fields)) throw EmptyFile("data.csv has no header");
  const std::size_t width = d.dictionary.width();
  if (fields.size() != 6 + width)
    throw DimensionMismatch("data.csv width does not match dictionary");
  for (std::size_t j = 0; j < width; ++j)
    if (fields[6 + j] != d.dictionary.features[j].name)
      throw DimensionMismatch("column " + fields[6 + j] + " does not match dictionary");
  std::vector<double> ys, ts, xs;
  while (reader.next(fields)) {
    if (fields.size() != 6 + width) throw DimensionMismatch("ragged row in data.csv");
    d.case_ids.push_back(fields[0]);
    d.split.push_back(parse_split(fields[1]));
    d.k.push_back(static_cast<int>(parse_int(fields[2]).value_or(0)));
    d.case_starts.push_back(Instant{Millis{parse_int(fields[3]).value_or(0)}});
    ts.push_back(parse_double(fields[4]).value_or(0));
    ys.push_back(parse_double(fields[5]).value_or(0));
    for (std::size_t j = 0; j < width; ++j) {
      auto v = parse_double(fields[6 + j]);
      if (!v) throw DimensionMismatch("non-numeric cell in data.csv");
      xs.push_back(*v);
    }
  }
  const auto n = static_cast<Eigen::Index>(d.case_ids.size());
  d.y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
  d.t = Eigen::Map<Eigen::VectorXd>(ts.data(), n);
  d.x = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      xs.data(), n, static_cast<Eigen::Index>(width));
  return d;
}

EncodedDataset encode(const std::vector<Prefix>& prefixes, const FeatureDictionary& dictionary,
                      const ActiveCaseIndex& context) {
  std::vector<std::size_t> order(prefixes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (prefixes[a].case_start != prefixes[b].case_start)
      return prefixes[a].case_start < prefixes[b].case_start;
    return prefixes[a].case_id < prefixes[b].case_id;
  });

  const RowEncoder encoder(dictionary);
  EncodedDataset d;
  d.dictionary = dictionary;
  const auto n = static_cast<Eigen::Index>(prefixes.size());
  d.y.resize(n);
  d.t.resize(n);
  d.x.resize(n, static_cast<Eigen::Index>(dictionary.width()));
  d.split = temporal_split(prefixes.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    const Prefix& p = prefixes[order[static_cast<std::size_t>(r)]];
    const auto row = encoder.encode(p.events, p.case_attributes, p.case_start, context,
                                    &d.unseen_values);
    if (row.size() != dictionary.width())
      throw DimensionMismatch("encoded width " + std::to_string(row.size()));
    d.case_ids.push_back(p.case_id);
    d.case_starts.push_back(p.case_start);
    d.k.push_back(p.k);
    d.y(r) = p.outcome_days;
    d.t(r) = p.treated ? 1.0 : 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) d.x(r, static_cast<Eigen::Index>(c)) = row[c];
  }
  return d;
}

}  // namespace prescribe::features
