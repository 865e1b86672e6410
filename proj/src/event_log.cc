#include "prescribe/event_log.h"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "prescribe/error.h"

namespace prescribe::eventlog {
namespace {

bool is_missing_token(std::string_view raw) {
  raw = trim(raw);
  return raw.empty() || raw == "NA" || raw == "NaN" || raw == "nan" || raw == "null" ||
         raw == "NULL" || raw == "None";
}

struct RawRow {
  std::size_t line;
  std::string case_id;
  std::string activity;
  Instant timestamp;
  std::vector<std::string> attrs;  // aligned with attribute columns
};

std::string trace_signature(const Trace& t, bool include_case_id) {
  std::string sig;
  if (include_case_id) sig += t.case_id + '\x1f';
  for (const auto& [k, v] : t.case_attributes) sig += k + '=' + value_to_string(v) + '\x1f';
  for (const auto& e : t.events) {
    sig += '\x1e' + e.activity + '\x1f' + std::to_string(e.timestamp.time_since_epoch().count());
    for (const auto& [k, v] : e.attributes) sig += '\x1f' + k + '=' + value_to_string(v);
  }
  return sig;
}

}  // namespace

std::string value_to_string(const Value& v) {
  if (const auto* d = std::get_if<double>(&v)) return format_double(*d);
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  return {};
}

const AttributeSpec* Schema::find(std::string_view name) const {
  for (const auto& a : attributes)
    if (a.name == name) return &a;
  return nullptr;
}

std::vector<const AttributeSpec*> Schema::at_level(AttributeLevel level) const {
  std::vector<const AttributeSpec*> out;
  for (const auto& a : attributes)
    if (a.level == level) out.push_back(&a);
  return out;
}

const Value* Event::attribute(std::string_view name) const {
  for (const auto& [k, v] : attributes)
    if (k == name) return &v;
  return nullptr;
}

void Event::set_attribute(const std::string& name, Value value) {
  for (auto& [k, v] : attributes) {
    if (k == name) {
      v = std::move(value);
      return;
    }
  }
  attributes.emplace_back(name, std::move(value));
}

std::size_t EventLog::event_count() const {
  std::size_t n = 0;
  for (const auto& t : traces) n += t.events.size();
  return n;
}

std::set<std::string> EventLog::activity_labels() const {
  std::set<std::string> labels;
  for (const auto& t : traces)
    for (const auto& e : t.events) labels.insert(e.activity);
  return labels;
}

ColumnMapping ColumnMapping::from_config(const KeyValueConfig& cfg) {
  ColumnMapping m;
  m.case_id = cfg.get_or("case_id", m.case_id);
  m.activity = cfg.get_or("activity", m.activity);
  m.timestamp = cfg.get_or("timestamp", m.timestamp);
  m.timestamp_format = cfg.get_or("timestamp_format", m.timestamp_format);
  const std::string delim = cfg.get_or("delimiter", ",");
  if (delim == "\\t" || delim == "tab") {
    m.delimiter = '\t';
  } else if (delim.size() == 1) {
    m.delimiter = delim[0];
  } else {
    throw ConfigError("delimiter must be a single character");
  }
  if (cfg.get_or("case_attributes", "") == "auto") {
    m.auto_case_attributes = true;
  } else {
    m.case_attributes = cfg.get_list("case_attributes");
  }
  if (cfg.has("event_attributes")) m.event_attributes = cfg.get_list("event_attributes");
  return m;
}

ParseResult parse_csv(const std::filesystem::path& path, const ColumnMapping& mapping) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_csv(in, mapping);
}

ParseResult parse_csv(std::istream& in, const ColumnMapping& mapping) {
  CsvReader reader(in, mapping.delimiter);
  std::vector<std::string> header;
  if (!reader.next(header) || (header.size() == 1 && trim(header[0]).empty()))
    throw EmptyFile("no header row");
  for (auto& h : header) h = std::string(trim(h));

  auto column_of = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw MissingColumn(name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t case_col = column_of(mapping.case_id);
  const std::size_t act_col = column_of(mapping.activity);
  const std::size_t ts_col = column_of(mapping.timestamp);

  std::vector<std::string> attr_names;
  std::vector<std::size_t> attr_cols;
  if (mapping.event_attributes) {
    for (const auto& n : *mapping.event_attributes) {
      attr_names.push_back(n);
      attr_cols.push_back(column_of(n));
    }
    for (const auto& n : mapping.case_attributes) {
      if (std::find(attr_names.begin(), attr_names.end(), n) != attr_names.end()) continue;
      attr_names.push_back(n);
      attr_cols.push_back(column_of(n));
    }
  } else {
    for (const auto& n : mapping.case_attributes) column_of(n);
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == case_col || c == act_col || c == ts_col || header[c].empty()) continue;
      attr_names.push_back(header[c]);
      attr_cols.push_back(c);
    }
  }

  ParseResult result;
  std::vector<RawRow> rows;
  std::vector<std::string> fields;
  while (reader.next(fields)) {
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;  // blank line
    const std::size_t line = reader.line();
    if (fields.size() != header.size()) {
      result.defects.push_back({line, fields.size() > case_col ? fields[case_col] : "",
                                "MalformedRow",
                                "expected " + std::to_string(header.size()) + " fields, got " +
                                    std::to_string(fields.size())});
      continue;
    }
    std::string case_id(trim(fields[case_col]));
    std::string activity(trim(fields[act_col]));
    if (case_id.empty() || activity.empty()) {
      result.defects.push_back({line, case_id, "MissingField", "empty case id or activity"});
      continue;
    }
    auto ts = parse_timestamp(fields[ts_col], mapping.timestamp_format);
    if (!ts) {
      result.defects.push_back({line, case_id, "TimestampFormatError",
                                "unparseable timestamp '" + fields[ts_col] + "'"});
      continue;
    }
    RawRow row{line, std::move(case_id), std::move(activity), *ts, {}};
    row.attrs.reserve(attr_cols.size());
    for (std::size_t c : attr_cols) row.attrs.push_back(fields[c]);
    rows.push_back(std::move(row));
  }
  if (rows.empty() && result.defects.empty()) throw EmptyFile("no data rows");

  // Kind inference: numeric when >= 99% of non-missing values parse.
  std::vector<AttributeKind> kinds(attr_names.size(), AttributeKind::kCategorical);
  for (std::size_t a = 0; a < attr_names.size(); ++a) {
    std::size_t present = 0, numeric = 0;
    for (const auto& r : rows) {
      if (is_missing_token(r.attrs[a])) continue;
      ++present;
      if (parse_double(r.attrs[a])) ++numeric;
    }
    if (present > 0 && static_cast<double>(numeric) >= 0.99 * static_cast<double>(present))
      kinds[a] = AttributeKind::kNumeric;
  }

  // Group rows by case id in order of first appearance.
  std::unordered_map<std::string, std::size_t> case_index;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::string> case_ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto [it, inserted] = case_index.try_emplace(rows[i].case_id, groups.size());
    if (inserted) {
      groups.emplace_back();
      case_ids.push_back(rows[i].case_id);
    }
    groups[it->second].push_back(i);
  }

  // Case-level attributes must be constant within each case.
  std::vector<AttributeLevel> levels(attr_names.size(), AttributeLevel::kEvent);
  for (std::size_t a = 0; a < attr_names.size(); ++a) {
    const bool declared = std::find(mapping.case_attributes.begin(), mapping.case_attributes.end(),
                                    attr_names[a]) != mapping.case_attributes.end();
    if (!declared && !mapping.auto_case_attributes) continue;
    bool constant = true;
    for (const auto& g : groups) {
      const std::string* first = nullptr;
      for (std::size_t i : g) {
        const auto& raw = rows[i].attrs[a];
        if (is_missing_token(raw)) continue;
        if (!first) {
          first = &raw;
        } else if (trim(*first) != trim(raw)) {
          constant = false;
          break;
        }
      }
      if (!constant) break;
    }
    if (constant) {
      levels[a] = AttributeLevel::kCase;
    } else if (declared) {
      result.warnings.push_back("attribute '" + attr_names[a] +
                                "' varies within a case; treated as event-level");
    }
  }

  auto to_value = [&](std::size_t a, const std::string& raw) -> Value {
    if (is_missing_token(raw)) return std::monostate{};
    if (kinds[a] == AttributeKind::kNumeric) {
      if (auto d = parse_double(raw)) return *d;
      return std::monostate{};
    }
    return std::string(trim(raw));
  };

  EventLog& log = result.log;
  for (std::size_t a = 0; a < attr_names.size(); ++a)
    log.schema.attributes.push_back({attr_names[a], kinds[a], levels[a]});

  log.traces.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& idx = groups[g];
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
      return rows[x].timestamp < rows[y].timestamp;
    });
    Trace trace;
    trace.case_id = case_ids[g];
    for (std::size_t a = 0; a < attr_names.size(); ++a) {
      if (levels[a] != AttributeLevel::kCase) continue;
      Value v;
      for (std::size_t i : idx) {
        v = to_value(a, rows[i].attrs[a]);
        if (!is_missing(v)) break;
      }
      trace.case_attributes[attr_names[a]] = std::move(v);
    }
    for (std::size_t i : idx) {
      Event e;
      e.activity = rows[i].activity;
      e.case_id = rows[i].case_id;
      e.timestamp = rows[i].timestamp;
      for (std::size_t a = 0; a < attr_names.size(); ++a) {
        if (levels[a] != AttributeLevel::kEvent) continue;
        e.attributes.emplace_back(attr_names[a], to_value(a, rows[i].attrs[a]));
      }
      trace.events.push_back(std::move(e));
    }
    log.traces.push_back(std::move(trace));
  }
  return result;
}

void write_csv(std::ostream& out, const EventLog& log, const ColumnMapping& mapping) {
  const auto case_attrs = log.schema.at_level(AttributeLevel::kCase);
  const auto event_attrs = log.schema.at_level(AttributeLevel::kEvent);
  std::vector<std::string> row{mapping.case_id, mapping.activity, mapping.timestamp};
  for (const auto* a : case_attrs) row.push_back(a->name);
  for (const auto* a : event_attrs) row.push_back(a->name);
  write_csv_row(out, row, mapping.delimiter);
  for (const auto& t : log.traces) {
    for (const auto& e : t.events) {
      row.assign({t.case_id, e.activity, format_timestamp(e.timestamp)});
      for (const auto* a : case_attrs) {
        auto it = t.case_attributes.find(a->name);
        row.push_back(it == t.case_attributes.end() ? "" : value_to_string(it->second));
      }
      for (const auto* a : event_attrs) {
        const Value* v = e.attribute(a->name);
        row.push_back(v ? value_to_string(*v) : "");
      }
      write_csv_row(out, row, mapping.delimiter);
    }
  }
}

CleaningRules CleaningRules::from_config(const KeyValueConfig& cfg) {
  CleaningRules rules;
  const std::string mode = cfg.get_or("dedup", "case_id");
  if (mode == "case_id") {
    rules.dedup = DedupMode::kCaseId;
  } else if (mode == "sequence") {
    rules.dedup = DedupMode::kSequence;
  } else {
    throw ConfigError("dedup must be case_id or sequence, got " + mode);
  }
  for (const auto& a : cfg.get_list("completion_activities")) rules.completion_activities.insert(a);
  rules.impute = cfg.get_or("impute", "true") != "false";
  return rules;
}

std::size_t CleaningReport::total_actions() const {
  return removed_duplicate_cases + removed_duplicate_events + removed_incomplete_cases +
         removed_bad_timestamp_cases + removed_invalid_cases + imputed_numeric +
         imputed_categorical;
}

double lower_median(std::vector<double> values) {
  const std::size_t mid = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  return values[mid];
}

namespace {

// Mode with ties resolved to the lexicographically smallest value.
std::string mode_of(const std::map<std::string, std::size_t>& counts) {
  std::string best;
  std::size_t best_count = 0;
  for (const auto& [value, count] : counts) {
    if (count > best_count) {
      best = value;
      best_count = count;
    }
  }
  return best;
}

void impute(EventLog& log, CleaningReport& report) {
  for (const auto& spec : log.schema.attributes) {
    const bool numeric = spec.kind == AttributeKind::kNumeric;
    std::vector<double> nums;
    std::map<std::string, std::size_t> cats;
    bool any_missing = false;
    auto observe = [&](const Value& v) {
      if (is_missing(v)) {
        any_missing = true;
      } else if (numeric) {
        if (const auto* d = std::get_if<double>(&v)) nums.push_back(*d);
      } else if (const auto* s = std::get_if<std::string>(&v)) {
        ++cats[*s];
      }
    };
    for (const auto& t : log.traces) {
      if (spec.level == AttributeLevel::kCase) {
        auto it = t.case_attributes.find(spec.name);
        observe(it == t.case_attributes.end() ? Value{} : it->second);
      } else {
        for (const auto& e : t.events) {
          const Value* v = e.attribute(spec.name);
          observe(v ? *v : Value{});
        }
      }
    }
    if (!any_missing) continue;
    Value fill;
    if (numeric) {
      fill = nums.empty() ? 0.0 : lower_median(nums);
    } else {
      fill = cats.empty() ? std::string("<missing>") : mode_of(cats);
    }
    std::size_t& counter = numeric ? report.imputed_numeric : report.imputed_categorical;
    for (auto& t : log.traces) {
      if (spec.level == AttributeLevel::kCase) {
        Value& v = t.case_attributes[spec.name];
        if (is_missing(v)) {
          v = fill;
          ++counter;
        }
      } else {
        for (auto& e : t.events) {
          const Value* v = e.attribute(spec.name);
          if (!v || is_missing(*v)) {
            e.set_attribute(spec.name, fill);
            ++counter;
          }
        }
      }
    }
  }
}

}  // namespace

std::pair<EventLog, CleaningReport> clean(const EventLog& log, const CleaningRules& rules) {
  CleaningReport report;
  report.input_cases = log.traces.size();
  EventLog out;
  out.schema = log.schema;

  std::unordered_set<std::string> seen;
  for (const auto& original : log.traces) {
    const std::string key = rules.dedup == DedupMode::kCaseId ? original.case_id
                                                               : trace_signature(original, false);
    if (!seen.insert(key).second) {
      ++report.removed_duplicate_cases;
      continue;
    }
    if (original.events.empty() || original.case_id.empty()) {
      ++report.removed_invalid_cases;
      continue;
    }
    bool valid = true;
    for (const auto& e : original.events)
      if (e.case_id != original.case_id || e.activity.empty()) valid = false;
    if (!valid) {
      ++report.removed_invalid_cases;
      continue;
    }
    if (rules.flagged_cases.count(original.case_id)) {
      ++report.removed_bad_timestamp_cases;
      continue;
    }
    bool monotone = true;
    for (std::size_t i = 1; i < original.events.size(); ++i)
      if (original.events[i].timestamp < original.events[i - 1].timestamp) monotone = false;
    if (!monotone || original.end() < original.start()) {
      ++report.removed_bad_timestamp_cases;
      continue;
    }
    if (!rules.completion_activities.empty() &&
        !rules.completion_activities.count(original.events.back().activity)) {
      ++report.removed_incomplete_cases;
      continue;
    }
    Trace trace = original;
    // Exact duplicate events within a case.
    std::vector<Event> kept;
    kept.reserve(trace.events.size());
    for (auto& e : trace.events) {
      if (!kept.empty() && std::find(kept.begin(), kept.end(), e) != kept.end()) {
        ++report.removed_duplicate_events;
        continue;
      }
      kept.push_back(std::move(e));
    }
    trace.events = std::move(kept);
    out.traces.push_back(std::move(trace));
  }
  if (out.traces.empty()) throw AllTracesRemoved("cleaning removed every trace");
  if (rules.impute) impute(out, report);
  return {std::move(out), report};
}

void write_defect_report(std::ostream& out, const CleaningReport& report,
                         const std::vector<Defect>& defects,
                         const std::vector<std::string>& warnings) {
  out << "input_cases: " << report.input_cases << '\n'
      << "removed_duplicate_cases: " << report.removed_duplicate_cases << '\n'
      << "removed_duplicate_events: " << report.removed_duplicate_events << '\n'
      << "removed_incomplete_cases: " << report.removed_incomplete_cases << '\n'
      << "removed_bad_timestamp_cases: " << report.removed_bad_timestamp_cases << '\n'
      << "removed_invalid_cases: " << report.removed_invalid_cases << '\n'
      << "imputed_numeric: " << report.imputed_numeric << '\n'
      << "imputed_categorical: " << report.imputed_categorical << '\n'
      << "defects: " << defects.size() << '\n';
  for (const auto& d : defects)
    out << "defect\tline=" << d.line << "\tcase=" << d.case_id << '\t' << d.kind << '\t'
        << d.detail << '\n';
  for (const auto& w : warnings) out << "warning\t" << w << '\n';
}

LogStatistics log_statistics(const EventLog& log) {
  LogStatistics s;
  s.trace_count = log.traces.size();
  s.event_count = log.event_count();
  s.label_count = log.activity_labels().size();
  if (s.trace_count == 0) return s;
  double gap_sum = 0, duration_sum = 0;
  std::size_t gaps = 0;
  for (const auto& t : log.traces) {
    duration_sum += t.duration_days();
    for (std::size_t i = 1; i < t.events.size(); ++i) {
      gap_sum += days_between(t.events[i - 1].timestamp, t.events[i].timestamp);
      ++gaps;
    }
  }
  s.mean_trace_length = static_cast<double>(s.event_count) / static_cast<double>(s.trace_count);
  s.mean_gap_days = gaps ? gap_sum / static_cast<double>(gaps) : 0.0;
  s.mean_duration_days = duration_sum / static_cast<double>(s.trace_count);
  return s;
}

}  // namespace prescribe::eventlog
