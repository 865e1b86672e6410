#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include "prescribe/error.h"
#include "prescribe/features.h"
#include "prescribe/pipeline.h"
#include "test_support.h"

namespace prescribe::features {
namespace {

using eventlog::AttributeKind;
using eventlog::AttributeLevel;
using eventlog::EventLog;
using eventlog::Schema;

Instant at(const char* text) { return *parse_timestamp(text); }
Instant hours(double h) { return at("2023-01-02T00:00:00Z") + Millis(static_cast<long>(h * 3'600'000)); }

Trace trace_of(const std::string& id, std::vector<std::string> acts, double start_h = 0, double gap_h = 1) {
  Trace t{id, {}, {}};
  for (std::size_t i = 0; i < acts.size(); ++i)
    t.events.push_back({acts[i], id, hours(start_h + gap_h * static_cast<double>(i)), {}});
  return t;
}

EncoderConfig treat_cfg() {
  EncoderConfig c;
  c.treatment_activity = "T";
  return c;
}

std::size_t column(const FeatureDictionary& d, const std::string& name) {
  const auto names = d.names();
  const auto it = std::find(names.begin(), names.end(), name);
  EXPECT_NE(it, names.end()) << name;
  return static_cast<std::size_t>(it - names.begin());
}

TEST(LabelAndCut, TreatedPrefixStopsBeforeTreatment) {
  const auto p = label_and_cut(trace_of("a", {"A", "B", "T"}), treat_cfg(), 1, {});
  EXPECT_EQ(p.k, 2);
  EXPECT_TRUE(p.treated);
  EXPECT_EQ(p.events.size(), 2u);
  EXPECT_DOUBLE_EQ(p.outcome_days, 2.0 / 24);
}

TEST(LabelAndCut, UntreatedUsesHistogram) {
  const auto h = PrefixHistogram::from_probabilities({{2, 1.0}});
  const auto p = label_and_cut(trace_of("a", {"A", "B", "C", "D", "E"}), treat_cfg(), 1, h);
  EXPECT_EQ(p.k, 2);
  EXPECT_FALSE(p.treated);
}

TEST(LabelAndCut, AbsencePolarityFlipsLabel) {
  auto cfg = treat_cfg();
  cfg.polarity = Polarity::kAbsence;
  const auto h = PrefixHistogram::from_probabilities({{1, 1.0}});
  EXPECT_FALSE(label_and_cut(trace_of("a", {"A", "T"}), cfg, 1, h).treated);
  EXPECT_TRUE(label_and_cut(trace_of("b", {"A", "B"}), cfg, 1, h).treated);
}

TEST(LabelAndCut, Errors) {
  const auto h = PrefixHistogram::from_probabilities({{1, 1.0}});
  EXPECT_THROW(label_and_cut(trace_of("a", {"A"}), treat_cfg(), 1, h), TraceTooShort);
  EXPECT_THROW(label_and_cut(trace_of("a", {"T", "A"}), treat_cfg(), 1, h), NoDecisionPoint);
}

TEST(LabelAndCut, UntreatedLengthStaysInsideTrace) {
  const auto h = PrefixHistogram::from_lengths({1, 3, 3, 7, 12});
  for (int n = 2; n < 10; ++n) {
    std::vector<std::string> acts(static_cast<std::size_t>(n), "A");
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto p = label_and_cut(trace_of("c" + std::to_string(seed), acts), treat_cfg(), seed, h);
      EXPECT_GE(p.k, 1);
      EXPECT_LE(p.k, n - 1);
    }
  }
}

TEST(Engineered, FirstEventOfLog) {
  EventLog log;
  log.traces.push_back(trace_of("a", {"A", "B"}, 0));
  log.traces.push_back(trace_of("b", {"A", "B"}, 10));
  const ActiveCaseIndex idx(log);
  const auto& t = log.traces[0];
  const auto f = engineer_features(std::span(t.events).first(1), t.start(), t.start(), idx);
  EXPECT_EQ(f.active_cases, 1.0);
  EXPECT_EQ(f.start_offset_days, 0.0);
}

TEST(Engineered, ElapsedSincePrevious) {
  const auto t = trace_of("a", {"A", "B"}, 0, 36);
  const auto f = engineer_features(t.events, t.start(), t.start(), ActiveCaseIndex{});
  EXPECT_DOUBLE_EQ(f.per_event[1].elapsed_prev_days, 1.5);
  EXPECT_DOUBLE_EQ(f.per_event[1].elapsed_case_days, 1.5);
  EXPECT_DOUBLE_EQ(f.per_event[0].elapsed_prev_days, 0.0);
}

// Active-case counts agree with a brute-force interval count.
TEST(Engineered, ActiveCasesMatchBruteForce) {
  Rng rng(11);
  EventLog log;
  for (int c = 0; c < 40; ++c) {
    const double start = rng.uniform(0, 100);
    const double len = rng.uniform(0, 30);
    log.traces.push_back(trace_of("c" + std::to_string(c), {"A", "B"}, start, len));
  }
  const ActiveCaseIndex idx(log);
  for (int q = 0; q < 200; ++q) {
    const Instant t = q % 10 == 0 ? log.traces[static_cast<std::size_t>(q / 10)].start() : hours(rng.uniform(-5, 140));
    std::size_t brute = 0;
    for (const auto& tr : log.traces) brute += tr.start() <= t && t <= tr.end();
    EXPECT_EQ(idx.active_at(t), brute);
  }
  // Three cases overlapping one instant.
  EventLog three;
  for (int c = 0; c < 3; ++c) three.traces.push_back(trace_of("o" + std::to_string(c), {"A", "B"}, c, 10));
  EXPECT_EQ(ActiveCaseIndex(three).active_at(hours(5)), 3u);
}

TEST(Engineered, OpenCasesCountUntilClosed) {
  ActiveCaseIndex idx;
  idx.add_start(hours(0));
  idx.add_start(hours(1));
  EXPECT_EQ(idx.active_at(hours(50)), 2u);
  idx.add_end(hours(2));
  EXPECT_EQ(idx.active_at(hours(50)), 1u);
  EXPECT_EQ(idx.active_at(hours(2)), 2u);
}

struct Fixture {
  Schema schema;
  std::vector<Prefix> prefixes;
};

Fixture fixture() {
  Fixture f;
  f.schema.attributes = {{"resource", AttributeKind::kCategorical, AttributeLevel::kEvent},
                         {"amount", AttributeKind::kNumeric, AttributeLevel::kEvent},
                         {"channel", AttributeKind::kCategorical, AttributeLevel::kCase}};
  const char* resources[] = {"a", "b", "c"};
  for (int c = 0; c < 3; ++c) {
    Prefix p;
    p.case_id = "p" + std::to_string(c);
    p.case_start = hours(c);
    p.case_attributes["channel"] = std::string(c == 0 ? "web" : "phone");
    for (int i = 0; i < 2; ++i) {
      Event e{i == 0 ? "A" : "B", p.case_id, hours(c + i), {}};
      e.set_attribute("resource", std::string(resources[(c + i) % 3]));
      e.set_attribute("amount", static_cast<double>(c * 10 + i));
      p.events.push_back(e);
    }
    p.k = 2;
    f.prefixes.push_back(p);
  }
  return f;
}

TEST(FitEncoder, ColumnsPerEncoding) {
  const auto f = fixture();
  auto cfg = treat_cfg();
  const auto d = fit_encoder(f.prefixes, cfg, f.schema, hours(0));
  const auto names = d.names();
  auto has = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
  EXPECT_TRUE(has("act_count[A]"));
  EXPECT_TRUE(has("act_count[B]"));
  EXPECT_EQ(std::count_if(names.begin(), names.end(), [](const auto& n) { return n.starts_with("act_count["); }), 2);
  for (const char* agg : {"amount_min", "amount_max", "amount_mean", "amount_sum"}) EXPECT_TRUE(has(agg)) << agg;
  EXPECT_TRUE(has("resource_count[a]"));
  EXPECT_TRUE(has("case[channel]=web"));
  EXPECT_TRUE(has("elapsed_prev_days"));
  EXPECT_TRUE(has("active_cases"));
}

TEST(FitEncoder, EmptyTrainingThrows) {
  EXPECT_THROW(fit_encoder({}, treat_cfg(), {}, hours(0)), NoFeatures);
}

TEST(RowEncoder, CountsOneHotAndAggregates) {
  const auto f = fixture();
  auto cfg = treat_cfg();
  cfg.last_state_attributes = std::vector<std::string>{"resource"};
  const auto d = fit_encoder(f.prefixes, cfg, f.schema, hours(0));
  const RowEncoder enc(d);

  Prefix p = f.prefixes[0];
  p.events.push_back(p.events[0]);
  p.events.back().timestamp = hours(3);
  // Events: A(a), B(b), A(a)
  std::size_t unseen = 0;
  const auto row = enc.encode(p.events, p.case_attributes, p.case_start, ActiveCaseIndex{}, &unseen);
  EXPECT_EQ(row[column(d, "act_count[A]")], 2.0);
  EXPECT_EQ(row[column(d, "act_count[B]")], 1.0);
  EXPECT_EQ(row[column(d, "last[resource]=a")], 1.0);
  EXPECT_EQ(row[column(d, "last[resource]=b")], 0.0);
  EXPECT_EQ(row[column(d, "last[resource]=c")], 0.0);
  EXPECT_EQ(row[column(d, "amount_sum")], 1.0);
  EXPECT_EQ(row[column(d, "amount_max")], 1.0);
  EXPECT_DOUBLE_EQ(row[column(d, "amount_mean")], 1.0 / 3);
  EXPECT_EQ(row[column(d, "case[channel]=web")], 1.0);
  EXPECT_EQ(row[column(d, "case[channel]=phone")], 0.0);
  EXPECT_EQ(unseen, 0u);
}

TEST(RowEncoder, UnseenValueIsZeroBlock) {
  const auto f = fixture();
  auto cfg = treat_cfg();
  cfg.last_state_attributes = std::vector<std::string>{"resource"};
  const auto d = fit_encoder(f.prefixes, cfg, f.schema, hours(0));
  const RowEncoder enc(d);
  Prefix p = f.prefixes[0];
  p.events.back().set_attribute("resource", std::string("zz"));
  p.case_attributes["channel"] = std::string("mail");
  std::size_t unseen = 0;
  const auto row = enc.encode(p.events, p.case_attributes, p.case_start, ActiveCaseIndex{}, &unseen);
  for (const char* v : {"a", "b", "c"}) EXPECT_EQ(row[column(d, std::string("last[resource]=") + v)], 0.0);
  EXPECT_EQ(row[column(d, "case[channel]=web")], 0.0);
  EXPECT_EQ(row[column(d, "case[channel]=phone")], 0.0);
  EXPECT_GE(unseen, 2u);
}

TEST(FeatureDictionary, SerializeRoundTrip) {
  const auto f = fixture();
  auto cfg = treat_cfg();
  cfg.last_state_window = 2;
  cfg.w_exclusions = {"amount"};
  const auto d = fit_encoder(f.prefixes, cfg, f.schema, hours(0));
  const auto back = FeatureDictionary::parse(d.serialize());
  EXPECT_EQ(back.serialize(), d.serialize());
  EXPECT_EQ(back.hash(), d.hash());
  EXPECT_EQ(back.w_columns(), d.w_columns());
  EXPECT_LT(d.w_columns().size(), d.width());
  const auto groups = d.source_groups();
  EXPECT_TRUE(groups.count("resource"));
}

TEST(TemporalSplit, SixtyTwentyTwenty) {
  const auto s = temporal_split(10);
  EXPECT_EQ(std::count(s.begin(), s.end(), Split::kTrain), 6);
  EXPECT_EQ(std::count(s.begin(), s.end(), Split::kValidation), 2);
  EXPECT_EQ(std::count(s.begin(), s.end(), Split::kTest), 2);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
}

pipeline::Featurized featurize_small(std::uint64_t seed, std::size_t n = 200) {
  const auto spec = testing::spec_from(testing::small_spec(n, 5));
  const auto data = synth::generate(spec);
  return pipeline::featurize(data.log, pipeline::encoder_config(synth::log_config(spec)), seed);
}

TEST(Featurize, SplitFollowsStartOrder) {
  const auto f = featurize_small(1);
  const auto& d = f.data;
  for (std::size_t i = 1; i < d.rows(); ++i) {
    EXPECT_LE(d.case_starts[i - 1], d.case_starts[i]);
    EXPECT_LE(static_cast<int>(d.split[i - 1]), static_cast<int>(d.split[i]));
  }
  EXPECT_EQ(d.rows_in(Split::kTrain).size(), d.rows() * 60 / 100);
}

TEST(Featurize, Deterministic) {
  const auto dir = std::filesystem::temp_directory_path() / "prescribe_features_det";
  std::filesystem::remove_all(dir);
  featurize_small(9).data.save(dir / "a");
  featurize_small(9).data.save(dir / "b");
  for (const auto& entry : std::filesystem::directory_iterator(dir / "a")) {
    const auto name = entry.path().filename();
    EXPECT_EQ(read_file(entry.path()), read_file(dir / "b" / name)) << name;
  }
  const auto loaded = EncodedDataset::load(dir / "a");
  const auto fresh = featurize_small(9).data;
  EXPECT_EQ(loaded.x, fresh.x);
  EXPECT_EQ(loaded.y, fresh.y);
  EXPECT_EQ(loaded.case_ids, fresh.case_ids);
  std::filesystem::remove_all(dir);
}

// Rewriting every event after the decision point, including the outcome,
// leaves the encoded row unchanged.
TEST(Featurize, NoLeakagePastPrefix) {
  const auto spec = testing::spec_from(testing::small_spec(120, 6));
  const auto data = synth::generate(spec);
  const auto cfg = pipeline::encoder_config(synth::log_config(spec));
  const auto base = pipeline::featurize(data.log, cfg, 3);

  std::map<std::string, int> k_of;
  for (std::size_t r = 0; r < base.data.rows(); ++r) k_of[base.data.case_ids[r]] = base.data.k[r];
  auto log = data.log;
  for (auto& t : log.traces) {
    const auto k = static_cast<std::size_t>(k_of.at(t.case_id));
    for (std::size_t i = k; i < t.events.size(); ++i) {
      if (t.events[i].activity != cfg.treatment_activity) t.events[i].activity = "Other";
      t.events[i].timestamp += Millis(86'400'000);
    }
  }
  const auto changed = pipeline::featurize(log, cfg, 3);
  ASSERT_EQ(changed.data.rows(), base.data.rows());
  EXPECT_EQ(changed.data.k, base.data.k);
  EXPECT_EQ(changed.data.t, base.data.t);
  EXPECT_NE(changed.data.y, base.data.y);
  EXPECT_EQ(changed.data.dictionary.serialize(), base.data.dictionary.serialize());
  // Active-case context depends on other cases' end times; every other
  // column comes from the prefix alone.
  const auto names = base.data.dictionary.names();
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == "active_cases") continue;
    EXPECT_EQ(base.data.x.col(static_cast<Eigen::Index>(j)), changed.data.x.col(static_cast<Eigen::Index>(j))) << names[j];
  }
}

}  // namespace
}  // namespace prescribe::features
