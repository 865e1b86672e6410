#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "prescribe/textio.h"
#include "prescribe/timeutil.h"

namespace prescribe::eventlog {

// number | category | missing
using Value = std::variant<std::monostate, double, std::string>;

inline bool is_missing(const Value& v) { return std::holds_alternative<std::monostate>(v); }
std::string value_to_string(const Value& v);

enum class AttributeKind { kNumeric, kCategorical };
enum class AttributeLevel { kCase, kEvent };

struct AttributeSpec {
  std::string name;
  AttributeKind kind = AttributeKind::kCategorical;
  AttributeLevel level = AttributeLevel::kEvent;
};

struct Schema {
  std::vector<AttributeSpec> attributes;

  const AttributeSpec* find(std::string_view name) const;
  std::vector<const AttributeSpec*> at_level(AttributeLevel level) const;
};

struct Event {
  std::string activity;
  std::string case_id;
  Instant timestamp;
  std::vector<std::pair<std::string, Value>> attributes;

  const Value* attribute(std::string_view name) const;
  void set_attribute(const std::string& name, Value value);
  bool operator==(const Event&) const = default;
};

struct Trace {
  std::string case_id;
  std::vector<Event> events;
  std::map<std::string, Value> case_attributes;

  Instant start() const { return events.front().timestamp; }
  Instant end() const { return events.back().timestamp; }
  double duration_days() const { return days_between(start(), end()); }
  bool operator==(const Trace&) const = default;
};

struct EventLog {
  std::vector<Trace> traces;
  Schema schema;

  std::size_t event_count() const;
  std::set<std::string> activity_labels() const;
};

// Column roles for CSV ingestion. Loaded from a key-value file:
//   case_id, activity, timestamp      column names (required)
//   timestamp_format                  "iso8601" or a std::get_time pattern
//   delimiter                         single character, default ","
//   case_attributes                   comma list, or "auto"
//   event_attributes                  comma list; default: every other column
//   completion_activities, dedup      read by CleaningRules::from_config
struct ColumnMapping {
  std::string case_id = "case_id";
  std::string activity = "activity";
  std::string timestamp = "timestamp";
  std::string timestamp_format = "iso8601";
  char delimiter = ',';
  std::vector<std::string> case_attributes;
  bool auto_case_attributes = false;
  std::optional<std::vector<std::string>> event_attributes;

  static ColumnMapping from_config(const KeyValueConfig& cfg);
};

struct Defect {
  std::size_t line = 0;  // physical line in the input file
  std::string case_id;
  std::string kind;      // TimestampFormatError, MissingField, ...
  std::string detail;
};

struct ParseResult {
  EventLog log;
  std::vector<Defect> defects;
  std::vector<std::string> warnings;
};

ParseResult parse_csv(std::istream& in, const ColumnMapping& mapping);
ParseResult parse_csv(const std::filesystem::path& path, const ColumnMapping& mapping);

// Writes one row per event in trace order; case attributes repeated per row.
void write_csv(std::ostream& out, const EventLog& log, const ColumnMapping& mapping);

enum class DedupMode { kCaseId, kSequence };

struct CleaningRules {
  DedupMode dedup = DedupMode::kCaseId;
  std::set<std::string> completion_activities;  // empty: no completeness filter
  std::set<std::string> flagged_cases;          // cases with timestamp defects at parse
  bool impute = true;

  static CleaningRules from_config(const KeyValueConfig& cfg);
};

struct CleaningReport {
  std::size_t input_cases = 0;
  std::size_t removed_duplicate_cases = 0;
  std::size_t removed_duplicate_events = 0;
  std::size_t removed_incomplete_cases = 0;
  std::size_t removed_bad_timestamp_cases = 0;
  std::size_t removed_invalid_cases = 0;
  std::size_t imputed_numeric = 0;
  std::size_t imputed_categorical = 0;

  std::size_t total_actions() const;
};

std::pair<EventLog, CleaningReport> clean(const EventLog& log, const CleaningRules& rules);

// Line-oriented `key: value` side-car, followed by one line per defect.
void write_defect_report(std::ostream& out, const CleaningReport& report,
                         const std::vector<Defect>& defects,
                         const std::vector<std::string>& warnings);

struct LogStatistics {
  std::size_t trace_count = 0;
  std::size_t event_count = 0;
  std::size_t label_count = 0;
  double mean_trace_length = 0;
  double mean_gap_days = 0;       // over all consecutive event pairs
  double mean_duration_days = 0;
};

LogStatistics log_statistics(const EventLog& log);

// Lower median of a non-empty sample.
double lower_median(std::vector<double> values);

}  // namespace prescribe::eventlog
