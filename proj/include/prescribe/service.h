#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "prescribe/event_log.h"
#include "prescribe/features.h"
#include "prescribe/orf.h"
#include "prescribe/policy.h"

namespace prescribe::service {

enum class CaseStatus { kAwaiting, kRecommendedTreat, kRecommendedSkip, kAbstained, kClosed };
std::string to_string(CaseStatus s);
CaseStatus parse_case_status(std::string_view text);

enum class Decision { kTreat, kSkip, kAbstain };
std::string to_string(Decision d);

struct Recommendation {
  std::uint64_t sequence = 0;  // global, strictly increasing
  std::string case_id;
  int k = 0;  // prefix length scored
  double theta = 0;
  double ci_low = 0;
  double ci_high = 0;
  double net_gain = 0;  // v * (-theta) - c
  double kernel_effective_n = 0;
  Decision decision = Decision::kSkip;
  int policy_version = 0;
  Instant event_time;
  std::string reason;  // set when abstaining
  std::vector<double> features;  // encoded prefix; kept for parity checks
};

nlohmann::json to_json(const Recommendation& r);

struct CaseState {
  std::string case_id;
  std::vector<eventlog::Event> events;
  std::map<std::string, eventlog::Value> case_attributes;
  CaseStatus status = CaseStatus::kAwaiting;
  std::optional<Recommendation> last;
  bool treatment_seen = false;
  bool treat_recommended = false;
};

nlohmann::json to_json(const CaseState& s, bool with_events = false);

// Default: at least `min_prefix_length` events, treatment not yet observed,
// no treat recommendation yet, case open.
struct Applicability {
  int min_prefix_length = 1;
  std::function<bool(const CaseState&)> extra;  // optional additional predicate

  bool operator()(const CaseState& s) const;
};

struct EngineOptions {
  Applicability applicability;
  // Append-only journal of inputs; replayed on construction when present.
  std::optional<std::filesystem::path> journal;
  // Recommendations as JSON lines.
  std::optional<std::filesystem::path> audit_log;
  // When set, only these cases are scored; others only update context.
  std::optional<std::set<std::string>> score_only;
};

// Online scoring state. Thread-safe: operations on one case are serialized,
// distinct cases proceed concurrently except for short shared updates; model
// scoring runs outside the shared lock.
class Engine {
 public:
  Engine(std::shared_ptr<const orf::OrfModel> model, EngineOptions options = {});
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  // Commits a new policy version (version field is assigned); returns it.
  policy::Policy commit_policy(policy::Policy p);
  std::optional<policy::Policy> current_policy() const;
  std::vector<policy::Policy> policy_history() const;

  CaseState ingest(const std::string& case_id, eventlog::Event event,
                   const std::map<std::string, eventlog::Value>& case_attributes = {});
  // `end` defaults to the last event time.
  CaseState close(const std::string& case_id, std::optional<Instant> end = std::nullopt);

  // Latest recommendation; scores now if the case is applicable but unscored.
  Recommendation recommend(const std::string& case_id);

  CaseState case_state(const std::string& case_id) const;
  std::vector<CaseState> cases(std::optional<CaseStatus> status = std::nullopt) const;
  std::vector<Recommendation> audit(std::uint64_t after_sequence = 0) const;
  // Blocks until a recommendation newer than `after_sequence` exists or the
  // timeout passes; returns the new ones.
  std::vector<Recommendation> wait_for(std::uint64_t after_sequence, std::chrono::milliseconds timeout) const;
  std::uint64_t last_sequence() const;
  bool has_model() const { return model_ != nullptr; }
  const features::FeatureDictionary& dictionary() const { return dictionary_; }

  void shutdown();

 private:
  struct CaseEntry {
    std::mutex mutex;
    CaseState state;
  };
  struct PendingScore {
    std::vector<double> row;
    int k = 0;
    Instant event_time;
    std::shared_ptr<const policy::Policy> policy;
  };

  std::shared_ptr<CaseEntry> entry(const std::string& case_id, bool create);
  std::optional<PendingScore> prepare_locked(const CaseState& s) const;
  Recommendation score(const std::string& case_id, const PendingScore& p) const;
  void apply_locked(CaseState& s, Recommendation r);
  void journal_write(const nlohmann::json& op);
  void recover(const std::filesystem::path& journal);

  CaseState ingest_impl(const std::string& case_id, eventlog::Event event,
                        const std::map<std::string, eventlog::Value>& case_attributes, bool log);
  CaseState close_impl(const std::string& case_id, std::optional<Instant> end, bool log);
  policy::Policy commit_impl(policy::Policy p, bool log);

  std::shared_ptr<const orf::OrfModel> model_;
  features::FeatureDictionary dictionary_;
  std::unique_ptr<features::RowEncoder> encoder_;
  EngineOptions options_;

  mutable std::mutex mutex_;  // guards everything below
  mutable std::condition_variable changed_;
  std::map<std::string, std::shared_ptr<CaseEntry>> cases_;
  features::ActiveCaseIndex context_;
  std::vector<std::shared_ptr<const policy::Policy>> policies_;
  std::vector<Recommendation> audit_;
  std::uint64_t sequence_ = 0;
  std::ofstream journal_out_;
  std::ofstream audit_out_;
  bool recovering_ = false;
  bool stopped_ = false;
};

// JSON <-> event conversion shared by the HTTP layer and the journal.
Instant required_timestamp(const std::string& text);  // ISO 8601; ConfigError otherwise
eventlog::Event event_from_json(const std::string& case_id, const nlohmann::json& j);
nlohmann::json event_to_json(const eventlog::Event& e);
std::map<std::string, eventlog::Value> attributes_from_json(const nlohmann::json& j);
nlohmann::json attributes_to_json(const std::map<std::string, eventlog::Value>& attrs);

struct ReplayOptions {
  double speed = std::numeric_limits<double>::infinity();  // log time / wall time
  bool close_cases = true;
};

struct ReplaySummary {
  std::size_t events = 0;
  std::size_t cases = 0;
  std::size_t recommendations = 0;
  std::vector<std::string> treated_cases;  // cases with a treat recommendation
};

// Feeds every event of `log` in timestamp order (case starts first among
// equal timestamps) and closes each case after its last event.
ReplaySummary replay(Engine& engine, const eventlog::EventLog& log, const ReplayOptions& options = {},
                     const std::function<void(const Recommendation&)>& on_recommendation = {});

}  // namespace prescribe::service
