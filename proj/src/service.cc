#include "prescribe/service.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include "prescribe/error.h"

namespace prescribe::service {

std::string to_string(CaseStatus s) {
  switch (s) {
    case CaseStatus::kAwaiting: return "awaiting-applicability";
    case CaseStatus::kRecommendedTreat: return "recommended-treat";
    case CaseStatus::kRecommendedSkip: return "recommended-skip";
    case CaseStatus::kAbstained: return "abstained";
    case CaseStatus::kClosed: return "closed";
  }
  return "awaiting-applicability";
}

CaseStatus parse_case_status(std::string_view text) {
  for (auto s : {CaseStatus::kAwaiting, CaseStatus::kRecommendedTreat, CaseStatus::kRecommendedSkip,
                 CaseStatus::kAbstained, CaseStatus::kClosed})
    if (to_string(s) == text) return s;
  throw ConfigError("unknown case status '" + std::string(text) + "'");
}

std::string to_string(Decision d) {
  switch (d) {
    case Decision::kTreat: return "treat";
    case Decision::kSkip: return "skip";
    case Decision::kAbstain: return "abstain";
  }
  return "skip";
}

nlohmann::json to_json(const Recommendation& r) {
  nlohmann::json j = {{"sequence", r.sequence},
                      {"case_id", r.case_id},
                      {"k", r.k},
                      {"decision", to_string(r.decision)},
                      {"policy_version", r.policy_version},
                      {"event_time", format_timestamp(r.event_time)}};
  if (r.decision == Decision::kAbstain) {
    j["theta"] = nullptr;
    j["ci"] = nullptr;
    j["net_gain"] = nullptr;
    j["reason"] = r.reason;
  } else {
    j["theta"] = r.theta;
    j["ci"] = {r.ci_low, r.ci_high};
    j["ci_level"] = "95% normal approximation over tree bags";
    j["net_gain"] = r.net_gain;
    j["kernel_effective_n"] = r.kernel_effective_n;
  }
  return j;
}

nlohmann::json to_json(const CaseState& s, bool with_events) {
  nlohmann::json j = {{"case_id", s.case_id},
                      {"status", to_string(s.status)},
                      {"k", s.events.size()},
                      {"treatment_seen", s.treatment_seen},
                      {"recommendation", s.last ? to_json(*s.last) : nlohmann::json(nullptr)}};
  if (!s.events.empty()) j["last_event_time"] = format_timestamp(s.events.back().timestamp);
  if (with_events) {
    nlohmann::json evs = nlohmann::json::array();
    for (const auto& e : s.events) evs.push_back(event_to_json(e));
    j["events"] = evs;
    j["case_attributes"] = attributes_to_json(s.case_attributes);
  }
  return j;
}

namespace {

eventlog::Value value_from_json(const nlohmann::json& v) {
  if (v.is_null()) return std::monostate{};
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
  throw ConfigError("attribute values must be numbers, strings or null");
}

nlohmann::json value_to_json(const eventlog::Value& v) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  return nullptr;
}

}  // namespace

Instant required_timestamp(const std::string& text) {
  const auto t = parse_timestamp(text);
  if (!t) throw ConfigError("unparseable timestamp '" + text + "'");
  return *t;
}

eventlog::Event event_from_json(const std::string& case_id, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("event must be a JSON object");
  eventlog::Event e;
  e.case_id = case_id;
  if (!j.contains("activity") || !j["activity"].is_string()) throw ConfigError("event.activity is required");
  if (!j.contains("timestamp") || !j["timestamp"].is_string()) throw ConfigError("event.timestamp is required");
  e.activity = j["activity"].get<std::string>();
  e.timestamp = required_timestamp(j["timestamp"].get<std::string>());
  if (j.contains("attributes")) {
    if (!j["attributes"].is_object()) throw ConfigError("event.attributes must be an object");
    for (const auto& [k, v] : j["attributes"].items()) e.set_attribute(k, value_from_json(v));
  }
  return e;
}

nlohmann::json event_to_json(const eventlog::Event& e) {
  nlohmann::json attrs = nlohmann::json::object();
  for (const auto& [k, v] : e.attributes) attrs[k] = value_to_json(v);
  return {{"activity", e.activity}, {"timestamp", format_timestamp(e.timestamp)}, {"attributes", attrs}};
}

std::map<std::string, eventlog::Value> attributes_from_json(const nlohmann::json& j) {
  std::map<std::string, eventlog::Value> out;
  if (j.is_null()) return out;
  if (!j.is_object()) throw ConfigError("case_attributes must be an object");
  for (const auto& [k, v] : j.items()) out[k] = value_from_json(v);
  return out;
}

nlohmann::json attributes_to_json(const std::map<std::string, eventlog::Value>& attrs) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : attrs) j[k] = value_to_json(v);
  return j;
}

bool Applicability::operator()(const CaseState& s) const {
  if (s.status == CaseStatus::kClosed || s.treatment_seen || s.treat_recommended) return false;
  if (static_cast<int>(s.events.size()) < min_prefix_length) return false;
  return !extra || extra(s);
}

Engine::Engine(std::shared_ptr<const orf::OrfModel> model, EngineOptions options)
    : model_(std::move(model)), options_(std::move(options)) {
  if (model_) {
    dictionary_ = features::FeatureDictionary::parse(model_->dictionary);
    if (dictionary_.hash() != model_->dictionary_hash)
      throw ModelFormatError("embedded dictionary does not match the model's dictionary hash");
    encoder_ = std::make_unique<features::RowEncoder>(dictionary_);
  }
  if (options_.journal && std::filesystem::exists(*options_.journal)) recover(*options_.journal);
  if (options_.journal) {
    if (options_.journal->has_parent_path()) std::filesystem::create_directories(options_.journal->parent_path());
    journal_out_.open(*options_.journal, std::ios::app);
    if (!journal_out_) throw IoError("cannot open journal " + options_.journal->string());
  }
  if (options_.audit_log) {
    if (options_.audit_log->has_parent_path()) std::filesystem::create_directories(options_.audit_log->parent_path());
    audit_out_.open(*options_.audit_log, std::ios::app);
    if (!audit_out_) throw IoError("cannot open audit log " + options_.audit_log->string());
  }
}

Engine::~Engine() { shutdown(); }

void Engine::shutdown() {
  std::lock_guard lock(mutex_);
  stopped_ = true;
  changed_.notify_all();
}

void Engine::recover(const std::filesystem::path& journal) {
  std::ifstream in(journal);
  if (!in) throw IoError("cannot read journal " + journal.string());
  recovering_ = true;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto op = nlohmann::json::parse(line);
      const std::string kind = op.at("op").get<std::string>();
      if (kind == "event") {
        const auto id = op.at("case_id").get<std::string>();
        ingest_impl(id, event_from_json(id, op.at("event")), attributes_from_json(op.value("case_attributes", nlohmann::json())), false);
      } else if (kind == "close") {
        std::optional<Instant> end;
        if (op.contains("end") && !op["end"].is_null()) end = required_timestamp(op["end"].get<std::string>());
        close_impl(op.at("case_id").get<std::string>(), end, false);
      } else if (kind == "policy") {
        commit_impl(policy::policy_from_json(op.at("policy")), false);
      } else if (kind == "recommend") {
        recommend(op.at("case_id").get<std::string>());
      } else {
        throw ConfigError("unknown op '" + kind + "'");
      }
    } catch (const std::exception& e) {
      recovering_ = false;
      throw IoError("journal " + journal.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  recovering_ = false;
}

void Engine::journal_write(const nlohmann::json& op) {
  if (recovering_ || !journal_out_.is_open()) return;
  journal_out_ << op.dump() << '\n';
  journal_out_.flush();
}

policy::Policy Engine::commit_policy(policy::Policy p) { return commit_impl(std::move(p), true); }

policy::Policy Engine::commit_impl(policy::Policy p, bool log) {
  p.validate();
  std::lock_guard lock(mutex_);
  p.version = static_cast<int>(policies_.size()) + 1;
  if (log) journal_write({{"op", "policy"}, {"policy", policy::to_json(p)}});
  policies_.push_back(std::make_shared<const policy::Policy>(p));
  changed_.notify_all();
  return p;
}

std::optional<policy::Policy> Engine::current_policy() const {
  std::lock_guard lock(mutex_);
  if (policies_.empty()) return std::nullopt;
  return *policies_.back();
}

std::vector<policy::Policy> Engine::policy_history() const {
  std::lock_guard lock(mutex_);
  std::vector<policy::Policy> out;
  for (const auto& p : policies_) out.push_back(*p);
  return out;
}

std::shared_ptr<Engine::CaseEntry> Engine::entry(const std::string& case_id, bool create) {
  std::lock_guard lock(mutex_);
  auto it = cases_.find(case_id);
  if (it != cases_.end()) return it->second;
  if (!create) throw UnknownCase("no case '" + case_id + "'");
  auto e = std::make_shared<CaseEntry>();
  e->state.case_id = case_id;
  cases_.emplace(case_id, e);
  return e;
}

std::optional<Engine::PendingScore> Engine::prepare_locked(const CaseState& s) const {
  if (policies_.empty() || !options_.applicability(s)) return std::nullopt;
  if (options_.score_only && !options_.score_only->count(s.case_id)) return std::nullopt;
  PendingScore p;
  p.row = encoder_->encode(s.events, s.case_attributes, s.events.front().timestamp, context_);
  p.k = static_cast<int>(s.events.size());
  p.event_time = s.events.back().timestamp;
  p.policy = policies_.back();
  return p;
}

Recommendation Engine::score(const std::string& case_id, const PendingScore& p) const {
  Recommendation r;
  r.case_id = case_id;
  r.k = p.k;
  r.event_time = p.event_time;
  r.policy_version = p.policy->version;
  r.features = p.row;
  const Eigen::Map<const Eigen::RowVectorXd> x(p.row.data(), static_cast<Eigen::Index>(p.row.size()));
  try {
    const auto est = orf::estimate_effect(*model_, x);
    r.theta = est.theta;
    r.ci_low = est.ci_low;
    r.ci_high = est.ci_high;
    r.kernel_effective_n = est.kernel_effective_n;
    r.net_gain = p.policy->cost.case_gain(est.theta);
    r.decision = p.policy->treats(est.theta) ? Decision::kTreat : Decision::kSkip;
  } catch (const DegenerateKernel& e) {
    r.decision = Decision::kAbstain;
    r.reason = e.what();
  }
  return r;
}

void Engine::apply_locked(CaseState& s, Recommendation r) {
  r.sequence = ++sequence_;
  switch (r.decision) {
    case Decision::kTreat:
      s.status = CaseStatus::kRecommendedTreat;
      s.treat_recommended = true;
      break;
    case Decision::kSkip: s.status = CaseStatus::kRecommendedSkip; break;
    case Decision::kAbstain: s.status = CaseStatus::kAbstained; break;
  }
  if (audit_out_.is_open() && !recovering_) {
    audit_out_ << to_json(r).dump() << '\n';
    audit_out_.flush();
  }
  s.last = r;
  audit_.push_back(std::move(r));
  changed_.notify_all();
}

CaseState Engine::ingest(const std::string& case_id, eventlog::Event event,
                         const std::map<std::string, eventlog::Value>& case_attributes) {
  return ingest_impl(case_id, std::move(event), case_attributes, true);
}

CaseState Engine::ingest_impl(const std::string& case_id, eventlog::Event event,
                              const std::map<std::string, eventlog::Value>& case_attributes, bool log) {
  if (!model_) throw UnknownModel("no model loaded");
  if (case_id.empty()) throw ConfigError("case id must be nonempty");
  event.case_id = case_id;
  auto e = entry(case_id, true);
  std::lock_guard case_lock(e->mutex);
  std::optional<PendingScore> pending;
  {
    std::lock_guard lock(mutex_);
    CaseState& s = e->state;
    if (s.status == CaseStatus::kClosed) throw OutOfOrderEvent("case '" + case_id + "' is closed");
    if (!s.events.empty() && event.timestamp < s.events.back().timestamp)
      throw OutOfOrderEvent("event at " + format_timestamp(event.timestamp) + " precedes " +
                            format_timestamp(s.events.back().timestamp) + " in case '" + case_id + "'");
    if (log)
      journal_write({{"op", "event"},
                     {"case_id", case_id},
                     {"event", event_to_json(event)},
                     {"case_attributes", attributes_to_json(case_attributes)}});
    if (s.events.empty()) context_.add_start(event.timestamp);
    for (const auto& [k, v] : case_attributes) s.case_attributes[k] = v;
    if (event.activity == dictionary_.treatment_activity) s.treatment_seen = true;
    s.events.push_back(std::move(event));
    pending = prepare_locked(s);
  }
  if (pending) {
    Recommendation r = score(case_id, *pending);
    std::lock_guard lock(mutex_);
    apply_locked(e->state, std::move(r));
  }
  return e->state;
}

CaseState Engine::close(const std::string& case_id, std::optional<Instant> end) {
  return close_impl(case_id, end, true);
}

CaseState Engine::close_impl(const std::string& case_id, std::optional<Instant> end, bool log) {
  auto e = entry(case_id, false);
  std::lock_guard case_lock(e->mutex);
  std::lock_guard lock(mutex_);
  CaseState& s = e->state;
  if (s.status == CaseStatus::kClosed) return s;
  const Instant at = end ? *end : s.events.back().timestamp;
  if (at < s.events.back().timestamp) throw OutOfOrderEvent("close precedes the last event of '" + case_id + "'");
  if (log)
    journal_write({{"op", "close"}, {"case_id", case_id}, {"end", end ? nlohmann::json(format_timestamp(*end)) : nlohmann::json(nullptr)}});
  context_.add_end(at);
  s.status = CaseStatus::kClosed;
  changed_.notify_all();
  return s;
}

Recommendation Engine::recommend(const std::string& case_id) {
  auto e = entry(case_id, false);
  std::lock_guard case_lock(e->mutex);
  std::optional<PendingScore> pending;
  {
    std::lock_guard lock(mutex_);
    if (policies_.empty()) throw PolicyMissing("no policy committed");
    const CaseState& s = e->state;
    if (s.last) return *s.last;
    if (!options_.applicability(s)) throw NotApplicable("case '" + case_id + "' is not applicable for treatment");
    pending = prepare_locked(s);
    if (!pending) throw NotApplicable("case '" + case_id + "' is excluded from scoring");
    journal_write({{"op", "recommend"}, {"case_id", case_id}});
  }
  Recommendation r = score(case_id, *pending);
  std::lock_guard lock(mutex_);
  apply_locked(e->state, r);
  return *e->state.last;
}

CaseState Engine::case_state(const std::string& case_id) const {
  std::lock_guard lock(mutex_);
  auto it = cases_.find(case_id);
  if (it == cases_.end()) throw UnknownCase("no case '" + case_id + "'");
  return it->second->state;
}

std::vector<CaseState> Engine::cases(std::optional<CaseStatus> status) const {
  std::lock_guard lock(mutex_);
  std::vector<CaseState> out;
  for (const auto& [id, e] : cases_)
    if (!status || e->state.status == *status) out.push_back(e->state);
  return out;
}

std::vector<Recommendation> Engine::audit(std::uint64_t after_sequence) const {
  std::lock_guard lock(mutex_);
  if (after_sequence >= audit_.size()) return {};
  return {audit_.begin() + static_cast<std::ptrdiff_t>(after_sequence), audit_.end()};
}

std::vector<Recommendation> Engine::wait_for(std::uint64_t after_sequence,
                                             std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  changed_.wait_for(lock, timeout, [&] { return sequence_ > after_sequence || stopped_; });
  if (after_sequence >= audit_.size()) return {};
  return {audit_.begin() + static_cast<std::ptrdiff_t>(after_sequence), audit_.end()};
}

std::uint64_t Engine::last_sequence() const {
  std::lock_guard lock(mutex_);
  return sequence_;
}

ReplaySummary replay(Engine& engine, const eventlog::EventLog& log, const ReplayOptions& options,
                     const std::function<void(const Recommendation&)>& on_recommendation) {
  struct Item {
    Instant ts;
    int not_first;
    std::size_t trace;
    std::size_t event;
  };
  std::vector<Item> items;
  for (std::size_t t = 0; t < log.traces.size(); ++t)
    for (std::size_t e = 0; e < log.traces[t].events.size(); ++e)
      items.push_back({log.traces[t].events[e].timestamp, e == 0 ? 0 : 1, t, e});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    return std::tie(a.ts, a.not_first, a.trace, a.event) < std::tie(b.ts, b.not_first, b.trace, b.event);
  });

  ReplaySummary summary;
  summary.cases = log.traces.size();
  std::set<std::string> treated;
  std::uint64_t seen = engine.last_sequence();
  std::optional<Instant> previous;
  const bool paced = std::isfinite(options.speed) && options.speed > 0;
  for (const auto& it : items) {
    if (paced && previous) {
      const double wait_ms = static_cast<double>((it.ts - *previous).count()) / options.speed;
      if (wait_ms > 0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(wait_ms));
    }
    previous = it.ts;
    const auto& trace = log.traces[it.trace];
    engine.ingest(trace.case_id, trace.events[it.event], trace.case_attributes);
    ++summary.events;
    if (options.close_cases && it.event + 1 == trace.events.size()) engine.close(trace.case_id);
    for (const auto& r : engine.audit(seen)) {
      ++summary.recommendations;
      if (r.decision == Decision::kTreat && treated.insert(r.case_id).second)
        summary.treated_cases.push_back(r.case_id);
      if (on_recommendation) on_recommendation(r);
      seen = r.sequence;
    }
  }
  return summary;
}

}  // namespace prescribe::service
