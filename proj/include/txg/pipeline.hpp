#pragma once

#include "txg/anomaly.hpp"
#include "txg/communities.hpp"
#include "txg/flow.hpp"
#include "txg/graph.hpp"
#include "txg/ingest.hpp"
#include "txg/model.hpp"
#include "txg/subgraph_features.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace txg {

struct PipelineConfig {
  std::filesystem::path dataset;
  Schema schema = Schema::Generic;
  SplitSpec split;
  LeidenParams leiden;
  EgoParams ego;
  FlowParams flow;
  std::size_t exact_diameter_cap = 10000;
  std::size_t memory_budget_bytes = std::size_t{1} << 30;
  std::size_t max_spill_readers = 4;
  IsolationForestParams anomaly;
  GbdtParams model;
  std::vector<FeatureGroup> groups{FeatureGroup::Transaction, FeatureGroup::RandomWalk, FeatureGroup::Modularity,
                                   FeatureGroup::Flows, FeatureGroup::Anomaly};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t workers = 1;
  std::filesystem::path cache_dir = ".txg-cache";
  bool use_cache = true;

  /// Reads an INI file (sections: data, split, communities, flow, features,
  /// anomaly, model, run). Unknown keys are errors.
  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig parse(std::string_view ini_text);
  /// The full configuration as an INI file with every default documented.
  static std::string documented_defaults();

  /// Throws ConfigError for values outside their documented ranges.
  void validate() const;
};

enum class Stage : std::uint8_t {
  Ingest,
  Graphs,
  Communities,
  Flow,
  TemporalFlow,
  SubgraphFeatures,
  Anomaly,
  Assemble,
  TrainEvaluate,
};
inline constexpr std::size_t kStageCount = 9;
std::string_view stage_name(Stage s);

/// Raised when a stage body fails for a reason other than bad config or data.
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& cause);
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

struct StageRecord {
  std::string stage;
  std::size_t workers = 1;
  double seconds = 0.0;
  std::string x_metric;  // nodes, aggregated_edges or edges
  std::size_t x_value = 0;
  std::string status;    // ran, cached, verified, mismatch
};

struct TrainResult {
  EvalReport report;
  std::vector<Prediction> predictions;
  std::vector<char> model_bytes;
};

/// Nine cached stages. Outputs are loaded or computed lazily: asking for a
/// late stage whose cache entry exists touches nothing upstream.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  const PipelineConfig& config() const { return cfg_; }

  const Dataset& dataset();
  const MultiGraph& multigraph();
  const AggregatedGraph& aggregated();
  const Partition& partition();
  const std::vector<EgoCommunity>& egos();
  const FlowTable& flows();
  const FlowTable& temporal_flows();
  const CommunityFeatureTable& community_features();
  const NodeFeatures& node_features();
  const Eigen::VectorXd& anomaly_scores();
  const FeatureMatrix& feature_matrix();
  const TrainResult& train();

  Split split();
  std::vector<AccountType> account_types();
  MembershipTable membership();

  /// Cache key of a stage: hash of its parameters and its inputs' keys.
  std::uint64_t key(Stage s);
  std::filesystem::path cache_path(Stage s);

  const std::vector<StageRecord>& records() const { return records_; }
  std::size_t bodies_executed() const { return bodies_; }
  std::size_t cache_mismatches() const { return mismatches_; }

 private:
  template <typename Compute, typename Save, typename Load>
  void run_stage(Stage s, bool& ready, Compute&& compute, Save&& save, Load&& load);
  std::pair<std::string, std::size_t> cardinality(Stage s);

  PipelineConfig cfg_;
  std::array<std::optional<std::uint64_t>, kStageCount> keys_;
  std::optional<std::uint64_t> input_hash_;
  std::vector<StageRecord> records_;
  std::size_t bodies_ = 0;
  std::size_t mismatches_ = 0;

  std::array<bool, kStageCount> ready_{};
  Dataset dataset_;
  MultiGraph mg_;
  AggregatedGraph ag_;
  Partition partition_;
  std::vector<EgoCommunity> egos_;
  FlowTable flows_;
  FlowTable temporal_;
  CommunityFeatureTable community_features_;
  NodeFeatures node_features_;
  Eigen::VectorXd scores_;
  FeatureMatrix features_;
  TrainResult train_;
};

/// Builds node features and the transaction matrix for a dataset in memory
/// with the given config, bypassing the cache. Used by the leakage audit.
FeatureMatrix build_feature_matrix(const Dataset& d, const PipelineConfig& cfg);

/// Runs the flow, temporal flow and subgraph feature stage bodies once per
/// worker setting and records their wall time.
std::vector<StageRecord> bench(Pipeline& p, std::span<const std::size_t> worker_settings);

/// CSV: stage,workers,seconds,x_metric,x_value,status.
void write_timing_csv(std::span<const StageRecord> rows, std::ostream& out);
nlohmann::json timing_json(std::span<const StageRecord> rows);

/// Plot-ready scaling CSV with columns stage,x_metric,x_value,workers,seconds.
/// Throws on an empty record list.
void emit_plots_data(std::span<const StageRecord> rows, std::ostream& out);

}  // namespace txg
