#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "prescribe/event_log.h"
#include "prescribe/features.h"
#include "prescribe/orf.h"
#include "prescribe/policy.h"
#include "prescribe/sensitivity.h"

namespace prescribe::pipeline {

struct CleanedLog {
  eventlog::EventLog log;
  eventlog::CleaningReport report;
  std::vector<eventlog::Defect> defects;
  std::vector<std::string> warnings;
};

// Parses the CSV with the column mapping in `cfg` and applies the cleaning
// rules from the same config. Cases with timestamp defects are dropped.
CleanedLog load_and_clean(const std::filesystem::path& csv, const KeyValueConfig& cfg);

// Keys: treatment_activity, polarity, aggregation_attributes,
// last_state_attributes, last_state_window, w_exclude.
features::EncoderConfig encoder_config(const KeyValueConfig& cfg);

struct Featurized {
  features::EncodedDataset data;
  features::PrefixHistogram histogram;
  std::size_t too_short = 0;
  std::size_t no_decision_point = 0;
};

// Eligible traces (>= 2 events, treatment not first) are ordered by
// (start, case_id) and split 60/20/20; the untreated prefix-length histogram
// comes from the training split; the encoder is fitted on training prefixes.
Featurized featurize(const eventlog::EventLog& log, const features::EncoderConfig& cfg,
                     std::uint64_t seed);

// Active-case context used by batch encoding; the service must rebuild the
// same counts incrementally.
features::ActiveCaseIndex context_for(const eventlog::EventLog& log);

orf::TrainingData training_data(const features::EncodedDataset& data, features::Split split);

orf::OrfModel train(const features::EncodedDataset& data, const orf::OrfHyperparams& hp);

struct Scored {
  policy::QiniInput input;  // non-abstained rows only
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  std::vector<std::string> abstained;
};

Scored score(const orf::OrfModel& model, const features::EncodedDataset& data, features::Split split);

struct SensitivityOptions {
  std::optional<double> target_bias;  // default: |mean estimated effect|
  int grid = 100;
  // Group name -> columns; default one group per source attribute.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
};

sensitivity::SensitivityReport run_sensitivity(const orf::OrfModel& model,
                                               const features::EncodedDataset& data,
                                               const SensitivityOptions& options);

}  // namespace prescribe::pipeline
