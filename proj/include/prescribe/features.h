#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "prescribe/event_log.h"
#include "prescribe/rng.h"

namespace prescribe::features {

using eventlog::Event;
using eventlog::Trace;
using eventlog::Value;

enum class Polarity { kPresence, kAbsence };
enum class NumericAggregation { kMin, kMax, kMean, kSum };

std::string to_string(Polarity p);
Polarity parse_polarity(std::string_view text);
std::string to_string(NumericAggregation a);

// Pseudo-attribute naming the event label in aggregation/last-state sets.
inline constexpr std::string_view kActivityAttribute = "activity";

struct EncoderConfig {
  std::string treatment_activity;
  Polarity polarity = Polarity::kPresence;
  // Categorical event attributes encoded by occurrence counts. Empty means
  // {"activity"} plus "resource" when the log has one.
  std::vector<std::string> aggregation_attributes;
  // Event attributes encoded from the last `last_state_window` events. Unset
  // means every event attribute not in the aggregation set.
  std::optional<std::vector<std::string>> last_state_attributes;
  int last_state_window = 1;
  std::vector<NumericAggregation> numeric_aggregations = {
      NumericAggregation::kMin, NumericAggregation::kMax, NumericAggregation::kMean,
      NumericAggregation::kSum};
  // Feature names (or attribute names) removed from W only.
  std::vector<std::string> w_exclusions;

  void validate() const;
  // Resolves defaults against a schema.
  EncoderConfig resolved(const eventlog::Schema& schema) const;
};

struct Prefix {
  std::string case_id;
  std::vector<Event> events;
  std::map<std::string, Value> case_attributes;
  int k = 0;
  bool treated = false;
  double outcome_days = 0;  // full-case cycle time
  Instant case_start;
};

// Empirical distribution of decision-point prefix lengths.
class PrefixHistogram {
 public:
  PrefixHistogram() = default;
  static PrefixHistogram from_lengths(const std::vector<int>& lengths);
  static PrefixHistogram from_probabilities(std::map<int, double> probabilities);

  bool empty() const { return values_.empty(); }
  int mode() const;
  int draw(Rng& rng) const;
  const std::vector<int>& values() const { return values_; }
  const std::vector<double>& cdf() const { return cdf_; }

 private:
  std::vector<int> values_;
  std::vector<double> cdf_;
  std::vector<double> probs_;
};

// 0-based index of the first treatment occurrence, or -1.
int first_occurrence(const Trace& trace, const std::string& activity);

Prefix label_and_cut(const Trace& trace, const EncoderConfig& cfg, std::uint64_t rng_seed,
                     const PrefixHistogram& treated_k_histogram);

// Number of cases with start <= t <= end. Open cases carry end = +infinity.
class ActiveCaseIndex {
 public:
  ActiveCaseIndex() = default;
  explicit ActiveCaseIndex(const eventlog::EventLog& log);

  void add_start(Instant start);
  void add_end(Instant end);
  std::size_t active_at(Instant t) const;

 private:
  std::vector<Instant> starts_;
  std::vector<Instant> ends_;
};

struct EventTemporal {
  int month;
  int weekday;
  int hour;
  double elapsed_case_days;
  double elapsed_prev_days;
};

struct EngineeredFeatures {
  std::vector<EventTemporal> per_event;
  double active_cases = 0;
  double start_offset_days = 0;
};

EngineeredFeatures engineer_features(std::span<const Event> events, Instant case_start,
                                     Instant log_origin, const ActiveCaseIndex& context);

enum class EncodingKind {
  kCount,            // occurrences of `value` of `source` in the prefix
  kAggregate,        // numeric aggregation `value` over the prefix
  kLastState,        // numeric value at lag
  kLastStateOneHot,  // categorical indicator at lag
  kCase,             // numeric case attribute
  kCaseOneHot,       // categorical case attribute indicator
  kEngineered,       // engineered feature named by `source` (at lag if temporal)
};

std::string to_string(EncodingKind kind);
EncodingKind parse_encoding_kind(std::string_view text);

struct FeatureSpec {
  std::string name;
  std::string source;  // attribute the column is derived from
  EncodingKind kind;
  std::string value;   // category value or aggregation name
  int lag = 0;         // 0 = last event
  bool in_w = true;
};

struct FeatureDictionary {
  std::vector<FeatureSpec> features;
  std::map<std::string, std::vector<std::string>> universes;
  std::string treatment_activity;
  Polarity polarity = Polarity::kPresence;
  int last_state_window = 1;
  Instant origin;  // earliest case start at fit time
  std::map<std::string, double> numeric_fill;
  std::map<std::string, std::string> categorical_fill;

  std::size_t width() const { return features.size(); }
  std::vector<std::size_t> w_columns() const;
  std::vector<std::string> names() const;
  // Column groups keyed by source attribute; one-hot fragments stay together.
  std::map<std::string, std::vector<std::size_t>> source_groups() const;

  std::string serialize() const;
  static FeatureDictionary parse(std::string_view text);
  std::uint64_t hash() const { return fnv1a64(serialize()); }
};

FeatureDictionary fit_encoder(const std::vector<Prefix>& training_prefixes,
                              const EncoderConfig& cfg, const eventlog::Schema& schema,
                              Instant log_origin);

// Compiled column lookup shared by the batch and online paths.
class RowEncoder {
 public:
  explicit RowEncoder(const FeatureDictionary& dictionary);

  // `unseen` is incremented once per categorical value outside its universe.
  std::vector<double> encode(std::span<const Event> events,
                             const std::map<std::string, Value>& case_attributes,
                             Instant case_start, const ActiveCaseIndex& context,
                             std::size_t* unseen = nullptr) const;
  std::size_t width() const { return width_; }

 private:
  static constexpr std::ptrdiff_t kNone = -1;
  struct CategoricalSlot {
    std::string attribute;
    int lag = 0;
    std::string fill;
    std::unordered_map<std::string, std::size_t> columns;
  };
  struct NumericSlot {
    std::string attribute;
    int lag = 0;
    double fill = 0;
    std::size_t column = 0;
  };
  struct AggregateSlot {
    std::string attribute;
    double fill = 0;
    std::ptrdiff_t min = kNone, max = kNone, mean = kNone, sum = kNone;
  };
  struct EngineeredSlot {
    std::string name;
    int lag = 0;
    std::size_t column = 0;
  };

  std::string categorical_value(const Event& e, const CategoricalSlot& slot) const;

  std::size_t width_;
  Instant dict_origin_;
  std::vector<CategoricalSlot> counts_;
  std::vector<AggregateSlot> aggregates_;
  std::vector<CategoricalSlot> last_onehot_;
  std::vector<NumericSlot> last_numeric_;
  std::vector<CategoricalSlot> case_onehot_;
  std::vector<NumericSlot> case_numeric_;
  std::vector<EngineeredSlot> engineered_;
};

enum class Split { kTrain, kValidation, kTest };
std::string to_string(Split s);
Split parse_split(std::string_view text);

// Temporal 60/20/20 assignment over n items already sorted by start time.
std::vector<Split> temporal_split(std::size_t n);

struct EncodedDataset {
  std::vector<std::string> case_ids;
  std::vector<Instant> case_starts;
  std::vector<int> k;
  std::vector<Split> split;
  Eigen::VectorXd y;
  Eigen::VectorXd t;
  Eigen::MatrixXd x;
  FeatureDictionary dictionary;
  std::size_t unseen_values = 0;

  std::size_t rows() const { return case_ids.size(); }
  std::vector<std::size_t> w_columns() const { return dictionary.w_columns(); }
  Eigen::MatrixXd w() const;
  std::vector<std::size_t> rows_in(Split s) const;
  EncodedDataset subset(const std::vector<std::size_t>& rows) const;
  EncodedDataset subset(Split s) const { return subset(rows_in(s)); }

  void save(const std::filesystem::path& dir) const;
  static EncodedDataset load(const std::filesystem::path& dir);
};

EncodedDataset encode(const std::vector<Prefix>& prefixes, const FeatureDictionary& dictionary,
                      const ActiveCaseIndex& context);

}  // namespace prescribe::features
