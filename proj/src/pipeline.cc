#include "prescribe/pipeline.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "prescribe/error.h"

namespace prescribe::pipeline {

using features::Split;

CleanedLog load_and_clean(const std::filesystem::path& csv, const KeyValueConfig& cfg) {
  const auto mapping = eventlog::ColumnMapping::from_config(cfg);
  auto parsed = eventlog::parse_csv(csv, mapping);
  auto rules = eventlog::CleaningRules::from_config(cfg);
  for (const auto& d : parsed.defects)
    if (d.kind == "TimestampFormatError" && !d.case_id.empty()) rules.flagged_cases.insert(d.case_id);
  auto [log, report] = eventlog::clean(parsed.log, rules);
  return {std::move(log), report, std::move(parsed.defects), std::move(parsed.warnings)};
}

features::EncoderConfig encoder_config(const KeyValueConfig& cfg) {
  features::EncoderConfig ec;
  auto list = [&](const std::string& key) {
    std::vector<std::string> out;
    for (const auto& item : cfg.get_list(key))
      if (auto t = trim(item); !t.empty()) out.emplace_back(t);
    return out;
  };
  ec.treatment_activity = cfg.get("treatment_activity");
  ec.polarity = features::parse_polarity(cfg.get_or("polarity", "presence"));
  ec.aggregation_attributes = list("aggregation_attributes");
  if (cfg.has("last_state_attributes")) ec.last_state_attributes = list("last_state_attributes");
  ec.last_state_window = static_cast<int>(cfg.get_int("last_state_window", 1));
  ec.w_exclusions = list("w_exclude");
  ec.validate();
  return ec;
}

features::ActiveCaseIndex context_for(const eventlog::EventLog& log) {
  return features::ActiveCaseIndex(log);
}

Featurized featurize(const eventlog::EventLog& log, const features::EncoderConfig& cfg,
                     std::uint64_t seed) {
  cfg.validate();
  Featurized out;
  std::vector<const eventlog::Trace*> eligible;
  for (const auto& t : log.traces) {
    if (t.events.size() < 2) {
      ++out.too_short;
      continue;
    }
    if (features::first_occurrence(t, cfg.treatment_activity) == 0) {
      ++out.no_decision_point;
      continue;
    }
    eligible.push_back(&t);
  }
  if (eligible.empty()) throw AllTracesRemoved("no trace has a decision point");
  std::sort(eligible.begin(), eligible.end(), [](const auto* a, const auto* b) {
    if (a->start() != b->start()) return a->start() < b->start();
    return a->case_id < b->case_id;
  });
  const auto split = features::temporal_split(eligible.size());

  std::vector<int> lengths;
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    if (split[i] != Split::kTrain) continue;
    const int occ = features::first_occurrence(*eligible[i], cfg.treatment_activity);
    if (occ > 0) lengths.push_back(occ);
  }
  if (lengths.empty())
    throw InsufficientOverlap("no training case contains '" + cfg.treatment_activity + "'");
  out.histogram = features::PrefixHistogram::from_lengths(lengths);

  std::vector<features::Prefix> prefixes, train_prefixes;
  prefixes.reserve(eligible.size());
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    prefixes.push_back(features::label_and_cut(*eligible[i], cfg, seed, out.histogram));
    if (split[i] == Split::kTrain) train_prefixes.push_back(prefixes.back());
  }
  const Instant origin = eligible.front()->start();
  const auto dictionary = features::fit_encoder(train_prefixes, cfg, log.schema, origin);
  out.data = features::encode(prefixes, dictionary, context_for(log));
  return out;
}

orf::TrainingData training_data(const features::EncodedDataset& data, Split split) {
  const auto sub = data.subset(split);
  return {sub.x, sub.t, sub.y};
}

orf::OrfModel train(const features::EncodedDataset& data, const orf::OrfHyperparams& hp) {
  orf::OrfModel model = orf::fit_forest(training_data(data, Split::kTrain), hp);
  model.dictionary = data.dictionary.serialize();
  model.dictionary_hash = data.dictionary.hash();
  model.feature_names = data.dictionary.names();
  return model;
}

Scored score(const orf::OrfModel& model, const features::EncodedDataset& data, Split split) {
  if (data.dictionary.hash() != model.dictionary_hash)
    throw ModelFormatError("data and model were encoded with different dictionaries");
  const auto rows = data.rows_in(split);
  const auto sub = data.subset(rows);
  const auto est = orf::estimate_effects(model, sub.x);
  Scored out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!est[i]) {
      out.abstained.push_back(sub.case_ids[i]);
      continue;
    }
    out.input.case_ids.push_back(sub.case_ids[i]);
    out.input.theta.push_back(est[i]->theta);
    out.input.t.push_back(sub.t(static_cast<Eigen::Index>(i)) > 0.5 ? 1 : 0);
    out.input.y.push_back(sub.y(static_cast<Eigen::Index>(i)));
    out.ci_low.push_back(est[i]->ci_low);
    out.ci_high.push_back(est[i]->ci_high);
  }
  return out;
}

sensitivity::SensitivityReport run_sensitivity(const orf::OrfModel& model,
                                               const features::EncodedDataset& data,
                                               const SensitivityOptions& options) {
  const auto rows = data.rows_in(Split::kValidation);
  const auto sub = data.subset(rows);
  const auto est = orf::estimate_effects(model, sub.x);
  std::vector<std::size_t> kept;
  std::vector<double> theta;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (!est[i]) continue;
    kept.push_back(i);
    theta.push_back(est[i]->theta);
  }
  if (kept.empty()) throw DegenerateKernel("every validation row abstained");
  const auto eval_ds = sub.subset(kept);
  const orf::TrainingData eval{eval_ds.x, eval_ds.t, eval_ds.y};

  sensitivity::SensitivityReport rep;
  const double mean_theta = std::accumulate(theta.begin(), theta.end(), 0.0) / static_cast<double>(theta.size());
  rep.target_bias = options.target_bias ? *options.target_bias : std::abs(mean_theta);
  const auto inputs = sensitivity::FrontierInputs::from_model(model, eval, theta);
  rep.frontier = sensitivity::bias_frontier(inputs, rep.target_bias, options.grid);

  auto groups = options.groups;
  if (groups.empty())
    for (auto& [name, cols] : data.dictionary.source_groups()) groups.emplace_back(name, cols);
  for (const auto& [name, cols] : groups)
    rep.points.push_back(
        sensitivity::covariate_influence(model.train, eval, cols, name, model.hyperparams.lambda_reg));
  rep.verdict = sensitivity::verdict(inputs, rep.target_bias, rep.points);
  return rep;
}

}  // namespace prescribe::pipeline
