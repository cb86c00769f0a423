// Command-line driver for the transaction-graph feature pipeline.

#include "txg/binary_io.hpp"
#include "txg/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace {

using namespace txg;

enum Exit { kOk = 0, kConfig = 2, kData = 3, kStage = 4 };

struct Globals {
  std::string config;
  std::size_t workers = 0;
  std::optional<std::uint64_t> seed;
  std::string cache_dir;
  bool no_cache = false;
  std::string report;
  std::optional<std::size_t> memory_budget_mb;
  std::string data;
  std::string schema;
};

PipelineConfig resolve(const Globals& g) {
  PipelineConfig c = g.config.empty() ? PipelineConfig::parse("") : PipelineConfig::load(g.config);
  if (!g.data.empty()) c.dataset = g.data;
  if (!g.schema.empty()) c.schema = parse_schema(g.schema);
  if (g.workers > 0) c.workers = g.workers;
  if (g.seed) {
    c.leiden.seed = *g.seed;
    c.anomaly.seed = *g.seed;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) c.seeds[i] = *g.seed + i;
  }
  if (!g.cache_dir.empty()) c.cache_dir = g.cache_dir;
  if (g.no_cache) c.use_cache = false;
  if (g.memory_budget_mb) c.memory_budget_bytes = *g.memory_budget_mb << 20;
  c.validate();
  return c;
}

std::ofstream open_out(const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  return out;
}

void write_report(const Globals& g, nlohmann::json j, Pipeline& p) {
  j["stages"] = timing_json(p.records());
  j["stage_bodies_executed"] = p.bodies_executed();
  j["cache_mismatches"] = p.cache_mismatches();
  if (!g.report.empty()) open_out(g.report) << j.dump(2) << '\n';
  std::cout << j.dump(2) << '\n';
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const SchemaError*>(&e)) return kData;
  return kStage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transaction graph feature pipeline"};
  app.require_subcommand(0, 1);
  Globals g;
  app.add_option("--config", g.config, "INI configuration file");
  app.add_option("--workers", g.workers, "Worker threads (default: config, else all cores)");
  app.add_option("--seed", g.seed, "Base seed; model seeds become seed, seed+1, ...");
  app.add_option("--cache-dir", g.cache_dir, "Stage cache directory");
  app.add_flag("--no-cache", g.no_cache, "Recompute every stage and compare with existing cache entries");
  app.add_option("--report", g.report, "Write the JSON report to this path");
  app.add_option("--memory-budget", g.memory_budget_mb, "In-memory slice budget in MiB; also caps spill readers");
  app.add_option("--data", g.data, "Transaction CSV (overrides data.path)");
  app.add_option("--schema", g.schema, "ibm_aml, eth_phishing or generic (overrides data.schema)");
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the documented default configuration and exit");

  auto* ingest = app.add_subcommand("ingest", "Parse and cache the dataset, print statistics");
  std::string canonical_csv;
  ingest->add_option("--out", canonical_csv, "Also write the canonical generic CSV");

  auto* features = app.add_subcommand("features", "Run every feature stage");
  std::string features_dir;
  features->add_option("--out", features_dir, "Export CSV tables to this directory");

  auto* train = app.add_subcommand("train", "Train on the configured split");
  std::string model_out;
  train->add_option("--model", model_out, "Write the first-seed model file");

  auto* evaluate = app.add_subcommand("evaluate", "Score the test split with a saved model");
  std::string model_in, eval_predictions;
  evaluate->add_option("--model", model_in, "Model file")->required();
  evaluate->add_option("--predictions", eval_predictions, "Predictions CSV output");

  auto* ablation = app.add_subcommand("ablation", "Cumulative feature-group ablation");
  std::string groups_arg;
  ablation->add_option("--groups", groups_arg, "Comma-separated group order (default: model.groups)");

  auto* bench_cmd = app.add_subcommand("bench", "Worker scaling of the flow and subgraph stages");
  std::vector<std::size_t> bench_workers{1, 3};
  std::string plots;
  bench_cmd->add_option("--workers-list", bench_workers, "Worker settings")->delimiter(',');
  bench_cmd->add_option("--plots", plots, "Plot-ready scaling CSV output");

  auto* run_all = app.add_subcommand("run-all", "Run the nine stages end to end");
  std::string predictions_out, timing_out;
  run_all->add_option("--predictions", predictions_out, "Predictions CSV output");
  run_all->add_option("--timing", timing_out, "Per-stage timing CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  if (print_config) {
    std::cout << PipelineConfig::documented_defaults();
    return kOk;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << "error: a subcommand is required (see --help)\n";
    return kConfig;
  }

  try {
    Pipeline p(resolve(g));
    nlohmann::json j;
    j["command"] = app.get_subcommands().front()->get_name();

    if (*ingest) {
      const auto& d = p.dataset();
      j["dataset"] = stats_json(d.meta);
      if (!canonical_csv.empty()) {
        auto out = open_out(canonical_csv);
        write_generic_csv(d, out);
      }
    } else if (*features) {
      const auto& fm = p.feature_matrix();
      j["feature_matrix"] = {{"rows", fm.rows()}, {"columns", fm.columns()}, {"node_columns", fm.node_columns}};
      if (!features_dir.empty()) {
        const std::filesystem::path dir(features_dir);
        const auto& ids = p.dataset().ids;
        {
          auto out = open_out((dir / "aggregated_edges.csv").string());
          write_aggregated_csv(p.aggregated(), out, &ids);
        }
        {
          auto out = open_out((dir / "memberships.csv").string());
          write_membership_csv(p.membership(), out);
        }
        {
          auto out = open_out((dir / "flows.csv").string());
          write_flow_csv(p.flows(), out);
        }
        {
          auto out = open_out((dir / "temporal_flows.csv").string());
          write_flow_csv(p.temporal_flows(), out);
        }
        {
          auto out = open_out((dir / "community_features.csv").string());
          write_community_features_csv(p.community_features(), out);
        }
        {
          auto out = open_out((dir / "anomaly_scores.csv").string());
          write_scores_csv(p.anomaly_scores(), out, &ids);
        }
      }
    } else if (*train) {
      const auto& r = p.train();
      j["evaluation"] = r.report.to_json();
      if (!model_out.empty()) io::write_file(model_out, r.model_bytes);
    } else if (*evaluate) {
      const Gbdt model = Gbdt::load(io::read_file(model_in));
      const FeatureMatrix fm = p.feature_matrix().select_groups(p.config().groups);
      const Split s = p.split();
      const FeatureMatrix test = fm.select_rows(s.test);
      const Eigen::VectorXd prob = model.predict_proba(test.values, p.config().workers);
      std::vector<Prediction> rows;
      for (std::size_t i = 0; i < test.rows(); ++i)
        rows.push_back({test.tx_id[i], prob[static_cast<Eigen::Index>(i)],
                        static_cast<std::uint8_t>(prob[static_cast<Eigen::Index>(i)] >= model.threshold()),
                        test.label[i]});
      std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.tx_id < b.tx_id; });
      const std::span<const double> ps(prob.data(), static_cast<std::size_t>(prob.size()));
      const Metrics m = confusion_metrics(ps, test.label, model.threshold());
      j["evaluation"] = {{"threshold", model.threshold()}, {"precision", m.precision}, {"recall", m.recall},
                         {"f1", m.f1},                     {"tp", m.tp},               {"fp", m.fp},
                         {"fn", m.fn},                     {"tn", m.tn}};
      if (!eval_predictions.empty()) {
        auto out = open_out(eval_predictions);
        write_predictions_csv(rows, out);
      }
    } else if (*ablation) {
      std::vector<FeatureGroup> groups = p.config().groups;
      if (!groups_arg.empty()) {
        groups.clear();
        std::stringstream ss(groups_arg);
        std::string item;
        while (std::getline(ss, item, ',')) groups.push_back(parse_feature_group(item));
      }
      const auto rows =
          ablation_run(p.feature_matrix(), p.split(), groups, p.config().model, p.config().seeds, p.config().workers);
      j["ablation"] = ablation_json(rows);
    } else if (*bench_cmd) {
      const auto rows = bench(p, bench_workers);
      j["bench"] = timing_json(rows);
      if (!plots.empty()) {
        auto out = open_out(plots);
        emit_plots_data(rows, out);
      }
    } else if (*run_all) {
      const auto& r = p.train();
      j["evaluation"] = r.report.to_json();
      if (!predictions_out.empty()) {
        auto out = open_out(predictions_out);
        write_predictions_csv(r.predictions, out);
      }
      if (!timing_out.empty()) {
        auto out = open_out(timing_out);
        write_timing_csv(p.records(), out);
      }
    }
    write_report(g, std::move(j), p);
    if (p.cache_mismatches() > 0) {
      std::cerr << "error: " << p.cache_mismatches() << " stage output(s) differ from their cache entries\n";
      return kStage;
    }
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  }
}
