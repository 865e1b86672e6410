// Command-line front end: offline pipeline stages plus the online service.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "prescribe/error.h"
#include "prescribe/http_api.h"
#include "prescribe/model_io.h"
#include "prescribe/pipeline.h"
#include "prescribe/policy.h"
#include "prescribe/sensitivity.h"
#include "prescribe/service.h"
#include "prescribe/synth.h"
#include "prescribe/textio.h"

namespace fs = std::filesystem;
using namespace prescribe;

namespace {

// Mapping config: explicit path, else <csv stem>.cfg next to the log, else defaults.
KeyValueConfig mapping_for(const fs::path& csv, const std::string& explicit_path) {
  if (!explicit_path.empty()) return KeyValueConfig::load(explicit_path);
  auto sibling = csv;
  sibling.replace_extension(".cfg");
  if (fs::exists(sibling)) return KeyValueConfig::load(sibling);
  return {};
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split(text, ',')) {
    auto v = parse_double(trim(item));
    if (!v) throw ConfigError("not a number: '" + item + "'");
    out.push_back(*v);
  }
  return out;
}

policy::Policy read_policy(const fs::path& path, const std::string& curves) {
  auto p = policy::policy_from_json(nlohmann::json::parse(read_file(path)));
  if (p.kind == policy::ThresholdKind::kTopFraction) {
    if (curves.empty()) throw ConfigError("top_fraction policy needs --curves");
    p = policy::resolve_top_fraction(policy::curve_from_json(nlohmann::json::parse(read_file(curves))), p);
  }
  return p;
}

http::ApiServer* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prescriptive process monitoring with orthogonal random forests"};
  app.require_subcommand(1);

  // clean
  std::string clean_in, clean_map, clean_out, clean_report;
  auto* clean = app.add_subcommand("clean", "parse and clean an event log CSV");
  clean->add_option("--in", clean_in, "input CSV")->required();
  clean->add_option("--map", clean_map, "column mapping / cleaning config")->required();
  clean->add_option("--out", clean_out, "cleaned CSV")->required();
  clean->add_option("--report", clean_report, "defect report")->required();

  // featurize
  std::string feat_in, feat_map, feat_treatment, feat_polarity, feat_out;
  std::uint64_t feat_seed = 0;
  auto* featurize = app.add_subcommand("featurize", "cut prefixes, fit the encoder, write the dataset");
  featurize->add_option("--in", feat_in, "cleaned CSV")->required();
  featurize->add_option("--map", feat_map, "config (default: <in>.cfg if present)");
  featurize->add_option("--treatment", feat_treatment, "treatment activity (overrides config)");
  featurize->add_option("--polarity", feat_polarity, "presence|absence (overrides config)");
  featurize->add_option("--seed", feat_seed, "prefix sampling seed");
  featurize->add_option("--out", feat_out, "dataset directory")->required();

  // train
  std::string train_data, train_out;
  orf::OrfHyperparams hp;
  auto* train = app.add_subcommand("train", "fit the orthogonal random forest");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--trees", hp.n_trees)->capture_default_str();
  train->add_option("--min-leaf", hp.min_leaf_size)->capture_default_str();
  train->add_option("--max-depth", hp.max_depth)->capture_default_str();
  train->add_option("--subsample", hp.subsample_ratio)->capture_default_str();
  train->add_option("--lambda", hp.lambda_reg)->capture_default_str();
  train->add_option("--groups", hp.bootstrap_groups, "tree bags for intervals")->capture_default_str();
  train->add_option("--seed", hp.rng_seed)->capture_default_str();
  train->add_option("--threads", hp.threads, "0 = all cores; results do not depend on it");
  train->add_option("--out", train_out, "model file")->required();

  // evaluate
  std::string eval_model, eval_data, eval_vc = "0.3,0.5,1.0", eval_out, eval_split = "test";
  double eval_step = 1.0;
  int eval_shuffles = 1000;
  std::uint64_t eval_seed = 0;
  auto* evaluate = app.add_subcommand("evaluate", "Qini and net-value curves on a split");
  evaluate->add_option("--model", eval_model)->required();
  evaluate->add_option("--data", eval_data)->required();
  evaluate->add_option("--vc", eval_vc, "comma-separated v/c ratios")->capture_default_str();
  evaluate->add_option("--split", eval_split, "train|validation|test")->capture_default_str();
  evaluate->add_option("--step", eval_step, "grid step in percent")->capture_default_str();
  evaluate->add_option("--shuffles", eval_shuffles, "permutation test shuffles (0 = off)")->capture_default_str();
  evaluate->add_option("--seed", eval_seed)->capture_default_str();
  evaluate->add_option("--out", eval_out, "report directory")->required();

  // policy
  std::string pol_report, pol_out;
  bool pol_auto = false;
  std::optional<double> pol_target;
  double pol_v = 1.0, pol_c = 1.0;
  auto* pol = app.add_subcommand("policy", "select a treatment policy from evaluated curves");
  pol->add_option("--report", pol_report, "directory with curves.json")->required();
  auto* auto_flag = pol->add_flag("--auto", pol_auto, "maximize net gain");
  auto* target_opt = pol->add_option("--target-gain", pol_target, "smallest fraction reaching this gain");
  auto_flag->excludes(target_opt);
  pol->add_option("--v", pol_v, "value of one day saved")->capture_default_str();
  pol->add_option("--c", pol_c, "cost of one treatment")->capture_default_str();
  pol->add_option("--out", pol_out, "policy file (default: <report>/policy.json)");

  // sensitivity
  std::string sens_model, sens_data, sens_bias = "auto", sens_out;
  int sens_grid = 100;
  auto* sens = app.add_subcommand("sensitivity", "bias frontier and covariate influence for hidden confounding");
  sens->add_option("--model", sens_model)->required();
  sens->add_option("--data", sens_data)->required();
  sens->add_option("--bias", sens_bias, "target bias in days, or auto")->capture_default_str();
  sens->add_option("--grid", sens_grid)->capture_default_str();
  sens->add_option("--out", sens_out, "report directory")->required();

  // synth
  std::string synth_spec, synth_out;
  std::optional<std::uint64_t> synth_seed;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic log with ground truth");
  synth_cmd->add_option("--spec", synth_spec)->required();
  synth_cmd->add_option("--seed", synth_seed, "overrides the spec seed");
  synth_cmd->add_option("--out", synth_out)->required();

  // stats
  std::string stats_in, stats_map;
  auto* stats = app.add_subcommand("stats", "log statistics");
  stats->add_option("--in", stats_in)->required();
  stats->add_option("--map", stats_map);

  // serve
  std::string serve_model, serve_policy, serve_curves, serve_host = "127.0.0.1", serve_journal, serve_audit;
  int serve_port = 8080, serve_min_prefix = 1;
  auto* serve = app.add_subcommand("serve", "online recommendation service");
  serve->add_option("--model", serve_model)->required();
  serve->add_option("--policy", serve_policy, "policy JSON to commit at start");
  serve->add_option("--curves", serve_curves, "curves.json for GET /curves and top-fraction policies");
  serve->add_option("--host", serve_host)->capture_default_str();
  serve->add_option("--port", serve_port)->capture_default_str();
  serve->add_option("--journal", serve_journal, "append-only input journal; replayed at start");
  serve->add_option("--audit", serve_audit, "recommendation audit log (JSON lines)");
  serve->add_option("--min-prefix", serve_min_prefix)->capture_default_str();

  // replay
  std::string rep_model, rep_policy, rep_curves, rep_log, rep_map, rep_data, rep_truth, rep_out;
  double rep_speed = std::numeric_limits<double>::infinity();
  auto* rep = app.add_subcommand("replay", "feed a log through the online engine");
  rep->add_option("--model", rep_model)->required();
  rep->add_option("--policy", rep_policy)->required();
  rep->add_option("--curves", rep_curves, "needed for top-fraction policies");
  rep->add_option("--log", rep_log)->required();
  rep->add_option("--map", rep_map, "config (default: <log>.cfg if present)");
  rep->add_option("--speed", rep_speed, "log time per wall time (default: no sleeps)");
  rep->add_option("--data", rep_data, "dataset directory; restricts scoring to its test split");
  rep->add_option("--truth", rep_truth, "ground truth CSV for realized vs oracle gain");
  rep->add_option("--out", rep_out, "recommendations as JSON lines");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*clean) {
      const auto cfg = KeyValueConfig::load(clean_map);
      auto cleaned = pipeline::load_and_clean(clean_in, cfg);
      std::ostringstream csv;
      eventlog::write_csv(csv, cleaned.log, eventlog::ColumnMapping::from_config(cfg));
      write_file(clean_out, csv.str());
      std::ostringstream report;
      eventlog::write_defect_report(report, cleaned.report, cleaned.defects, cleaned.warnings);
      write_file(clean_report, report.str());
      std::cout << "cases: " << cleaned.log.traces.size() << " (input " << cleaned.report.input_cases
                << "), actions: " << cleaned.report.total_actions() << "\n";
    } else if (*featurize) {
      auto cfg = mapping_for(feat_in, feat_map);
      if (!feat_treatment.empty()) cfg.set("treatment_activity", feat_treatment);
      if (!feat_polarity.empty()) cfg.set("polarity", feat_polarity);
      const auto cleaned = pipeline::load_and_clean(feat_in, cfg);
      const auto f = pipeline::featurize(cleaned.log, pipeline::encoder_config(cfg), feat_seed);
      f.data.save(feat_out);
      std::cout << "rows: " << f.data.rows() << ", columns: " << f.data.dictionary.width()
                << ", too short: " << f.too_short << ", treatment first: " << f.no_decision_point
                << ", unseen values: " << f.data.unseen_values << "\n";
    } else if (*train) {
      const auto data = features::EncodedDataset::load(train_data);
      const auto model = pipeline::train(data, hp);
      orf::save_model(model, train_out);
      const auto pos = orf::check_positivity(model.nuisance.propensity, model.train.x);
      std::cout << "trees: " << model.trees.size() << ", rows: " << model.train.rows()
                << ", propensity p1/p99: " << format_double(pos.p01) << "/" << format_double(pos.p99)
                << (pos.flagged ? " (positivity flagged)" : "")
                << (model.nuisance.propensity_warning ? ", separation warning" : "") << "\n";
    } else if (*evaluate) {
      const auto data = features::EncodedDataset::load(eval_data);
      const auto model = orf::load_model(eval_model, data.dictionary.hash());
      const auto scored = pipeline::score(model, data, features::parse_split(eval_split));
      auto report = policy::evaluate(scored.input, parse_list(eval_vc), eval_step, eval_shuffles, eval_seed);
      report.abstained = scored.abstained.size();
      fs::create_directories(eval_out);
      policy::write_report(report, scored.input, scored.ci_low, scored.ci_high, eval_out);
      std::cout << "cases: " << report.cases << ", abstained: " << report.abstained
                << ", qini coefficient: " << format_double(report.curve.coefficient)
                << (report.above_baseline ? " (above baseline)" : " (not above baseline)");
      if (report.permutation) std::cout << ", p = " << format_double(report.permutation->p_value);
      std::cout << "\n";
    } else if (*pol) {
      if (!pol_auto && !pol_target) throw ConfigError("give --auto or --target-gain");
      const auto j = nlohmann::json::parse(read_file(fs::path(pol_report) / "curves.json"));
      const auto curve = policy::curve_from_json(j);
      const policy::CostModel cost{pol_v, pol_c};
      auto p = policy::select_policy(curve, policy::net_value_curve(curve, cost), cost, pol_target);
      p.curve_hash = j.at("curve_hash").get<std::string>();
      const fs::path out = pol_out.empty() ? fs::path(pol_report) / "policy.json" : fs::path(pol_out);
      write_file(out, policy::to_json(p).dump(2) + "\n");
      std::cout << "treat top " << format_double(100 * p.top_fraction) << "%, threshold "
                << (p.theta_threshold ? format_double(*p.theta_threshold) : "none") << " days, expected gain "
                << format_double(p.expected_gain) << "\n";
    } else if (*sens) {
      const auto data = features::EncodedDataset::load(sens_data);
      const auto model = orf::load_model(sens_model, data.dictionary.hash());
      pipeline::SensitivityOptions opts;
      opts.grid = sens_grid;
      if (sens_bias != "auto") {
        auto b = parse_double(sens_bias);
        if (!b) throw ConfigError("--bias must be a number of days or auto");
        opts.target_bias = *b;
      }
      const auto rep_s = pipeline::run_sensitivity(model, data, opts);
      fs::create_directories(sens_out);
      sensitivity::write_report(rep_s, sens_out);
      std::cout << "target bias: " << format_double(rep_s.target_bias)
                << " days, verdict: " << sensitivity::to_string(rep_s.verdict) << "\n";
      for (const auto& p : rep_s.points)
        std::cout << "  " << p.group << ": alpha " << format_double(p.alpha) << ", partial R2 "
                  << format_double(p.partial_r2) << "\n";
    } else if (*synth_cmd) {
      auto spec = synth::SyntheticSpec::load(synth_spec);
      if (synth_seed) spec.seed = *synth_seed;
      const auto data = synth::generate(spec);
      synth::write_outputs(data, spec, synth_out);
      std::cout << "cases: " << data.log.traces.size() << ", events: " << data.log.event_count() << "\n";
    } else if (*stats) {
      const auto cfg = mapping_for(stats_in, stats_map);
      const auto cleaned = pipeline::load_and_clean(stats_in, cfg);
      const auto s = eventlog::log_statistics(cleaned.log);
      std::cout << "traces: " << s.trace_count << "\nevents: " << s.event_count << "\nlabels: " << s.label_count
                << "\nmean trace length: " << format_double(s.mean_trace_length)
                << "\nmean gap days: " << format_double(s.mean_gap_days)
                << "\nmean duration days: " << format_double(s.mean_duration_days) << "\n";
    } else if (*serve) {
      auto model = std::make_shared<const orf::OrfModel>(orf::load_model(serve_model));
      service::EngineOptions eo;
      eo.applicability.min_prefix_length = serve_min_prefix;
      if (!serve_journal.empty()) eo.journal = serve_journal;
      if (!serve_audit.empty()) eo.audit_log = serve_audit;
      service::Engine engine(model, eo);
      if (!serve_policy.empty()) {
        auto p = read_policy(serve_policy, serve_curves);
        const auto current = engine.current_policy();
        auto same = [](policy::Policy a, policy::Policy b) {
          a.version = b.version = 0;
          return policy::to_json(a) == policy::to_json(b);
        };
        if (!current || !same(*current, p)) engine.commit_policy(p);
      }
      http::ApiOptions ao;
      if (!serve_curves.empty()) ao.curves = serve_curves;
      http::ApiServer server(engine, ao);
      const int port = server.bind(serve_host, serve_port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << serve_host << ":" << port << std::endl;
      server.run();
      engine.shutdown();
    } else if (*rep) {
      auto model = std::make_shared<const orf::OrfModel>(orf::load_model(rep_model));
      const auto cfg = mapping_for(rep_log, rep_map);
      const auto cleaned = pipeline::load_and_clean(rep_log, cfg);
      service::EngineOptions eo;
      std::set<std::string> test_ids;
      if (!rep_data.empty()) {
        const auto data = features::EncodedDataset::load(rep_data);
        for (auto r : data.rows_in(features::Split::kTest)) test_ids.insert(data.case_ids[r]);
        eo.score_only = test_ids;
      }
      service::Engine engine(model, eo);
      const auto committed = engine.commit_policy(read_policy(rep_policy, rep_curves));
      std::ofstream out;
      if (!rep_out.empty()) out.open(rep_out);
      service::ReplayOptions ro;
      ro.speed = rep_speed;
      const auto summary = service::replay(engine, cleaned.log, ro, [&](const service::Recommendation& r) {
        if (out.is_open()) out << service::to_json(r).dump() << "\n";
      });
      std::cout << "events: " << summary.events << ", cases: " << summary.cases
                << ", recommendations: " << summary.recommendations
                << ", treat recommendations: " << summary.treated_cases.size() << "\n";
      if (!rep_truth.empty()) {
        auto truth = synth::read_truth(rep_truth);
        if (!test_ids.empty())
          std::erase_if(truth, [&](const synth::GroundTruth& g) { return !test_ids.count(g.case_id); });
        const double realized = synth::realized_gain(truth, committed.cost, summary.treated_cases);
        const double best = synth::oracle_best_percent(truth, committed.cost);
        const double treated_pct = truth.empty() ? 0 : 100.0 * summary.treated_cases.size() / truth.size();
        std::cout << "realized gain: " << format_double(realized)
                  << "\noracle gain at the same fraction (" << format_double(treated_pct)
                  << "%): " << format_double(synth::oracle_policy_gain(truth, committed.cost, treated_pct))
                  << "\noracle best gain (" << format_double(best)
                  << "%): " << format_double(synth::oracle_policy_gain(truth, committed.cost, best)) << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
