#pragma once

#include "txg/anomaly.hpp"
#include "txg/common.hpp"
#include "txg/ingest.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace txg {

enum class FeatureGroup : std::uint8_t { Transaction = 0, RandomWalk = 1, Modularity = 2, Flows = 3, Anomaly = 4 };
std::string_view feature_group_name(FeatureGroup g);
FeatureGroup parse_feature_group(std::string_view name);

/// Transaction-level design matrix.
///
/// Column layout: base block (transaction columns, unseen-endpoint flags and the
/// score imputation flag), then every node feature joined on the source
/// (`src_` prefix), then the same joined on the target (`tgt_`), then the six
/// interaction columns. Rows follow dataset row order.
struct FeatureMatrix {
  std::vector<std::string> names;
  std::vector<FeatureGroup> groups;
  MatrixXdr values;
  std::vector<TxId> tx_id;
  std::vector<std::uint8_t> label;
  std::size_t base_columns = 0;
  std::size_t node_columns = 0;  // per endpoint

  std::size_t rows() const { return tx_id.size(); }
  std::size_t columns() const { return names.size(); }

  FeatureMatrix select_rows(std::span<const std::size_t> rows) const;
  FeatureMatrix select_groups(std::span<const FeatureGroup> keep) const;
  bool operator==(const FeatureMatrix&) const;
};

/// Joins node features on both endpoints. Nodes absent from `nf` get the
/// column medians and an unseen flag. `scores` is aligned with `nf.nodes`.
FeatureMatrix assemble_features(const Dataset& d, const NodeFeatures& nf, const Eigen::VectorXd& scores);

std::vector<char> serialize_feature_matrix(const FeatureMatrix& m);
FeatureMatrix deserialize_feature_matrix(std::span<const char> bytes);

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;  // harmonic mean of precision and recall, 0 when both are 0
};

/// Minority-class metrics; a row is predicted positive when score >= threshold.
Metrics confusion_metrics(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold);
Metrics confusion_metrics(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> labels);

struct ThresholdChoice {
  double threshold = 0.5;
  Metrics metrics;
};

/// Threshold among the observed scores that maximizes F1; ties keep the
/// highest threshold. Without positives nothing is predicted positive.
ThresholdChoice best_f1_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// "mean ± std" of fractions rendered as percentages with two decimals;
/// std uses n-1 in the denominator and is 0 for a single value.
std::string format_mean_std(std::span<const double> fractions);

// ---------------------------------------------------------------------------
// Gradient-boosted trees

struct GbdtParams {
  int rounds = 500;
  int max_depth = 8;
  double learning_rate = 0.1;
  int early_stopping = 50;   // rounds without validation F1 improvement
  double subsample = 0.8;    // row fraction per tree
  double colsample = 0.8;    // column fraction per tree
  double lambda = 1.0;       // L2 on leaf values
  double min_child_weight = 1.0;
  int max_bins = 255;
  bool balance_classes = true;  // positive weight = negatives / positives
};

class Gbdt {
 public:
  struct Node {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;     // left when x < threshold
    std::uint8_t missing_left = 1;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    double value = 0.0;         // leaf output, learning rate applied
  };
  using Tree = std::vector<Node>;

  /// Trains with logistic loss and early stopping on validation F1 at the
  /// best validation threshold. Throws when the training labels have one class.
  static Gbdt fit(const MatrixXdr& train, std::span<const std::uint8_t> train_labels, const MatrixXdr& valid,
                  std::span<const std::uint8_t> valid_labels, const GbdtParams& params, std::uint64_t seed,
                  std::size_t workers = 1);

  Eigen::VectorXd margin(const MatrixXdr& x, std::size_t workers = 1) const;
  Eigen::VectorXd predict_proba(const MatrixXdr& x, std::size_t workers = 1) const;

  double threshold() const { return threshold_; }
  double valid_f1() const { return valid_f1_; }
  std::size_t rounds() const { return trees_.size(); }
  std::size_t columns() const { return columns_; }

  std::vector<char> save() const;
  static Gbdt load(std::span<const char> bytes);

 private:
  std::size_t columns_ = 0;
  double base_margin_ = 0.0;
  double threshold_ = 0.5;
  double valid_f1_ = 0.0;
  std::vector<Tree> trees_;
};

// ---------------------------------------------------------------------------
// Evaluation

struct SeedResult {
  std::uint64_t seed = 0;
  std::size_t rounds = 0;
  double threshold = 0.5;
  double valid_f1 = 0.0;
  Metrics test;
};

struct EvalReport {
  std::size_t train_rows = 0, valid_rows = 0, test_rows = 0;
  std::vector<SeedResult> seeds;

  std::vector<double> values(double Metrics::*field) const;
  nlohmann::json to_json() const;
};

struct Prediction {
  TxId tx_id = 0;
  double score = 0.0;
  std::uint8_t predicted = 0;
  std::uint8_t label = 0;
};

struct TrainOutput {
  EvalReport report;
  std::vector<Prediction> predictions;  // test rows, first seed, sorted by tx_id
  Gbdt model;                           // first seed
};

/// Trains one model per seed on the split and scores the test rows with the
/// threshold chosen on validation.
TrainOutput train_evaluate(const FeatureMatrix& fm, const Split& split, const GbdtParams& params,
                           std::span<const std::uint64_t> seeds, std::size_t workers = 1);

/// CSV: tx_id,score,prediction,label with scores printed round-trip exact.
void write_predictions_csv(std::span<const Prediction> rows, std::ostream& out);

// ---------------------------------------------------------------------------
// Ablation and leakage audit

struct AblationRow {
  std::string label;  // e.g. "transaction+random_walk"
  std::vector<FeatureGroup> groups;
  std::size_t columns = 0;
  std::vector<double> f1;  // per seed
  std::vector<double> recall;
};

/// One run per cumulative prefix of `groups`, plus a standalone
/// transaction+anomaly run when both groups are listed and no prefix equals it.
std::vector<AblationRow> ablation_run(const FeatureMatrix& fm, const Split& split, std::span<const FeatureGroup> groups,
                                      const GbdtParams& params, std::span<const std::uint64_t> seeds,
                                      std::size_t workers = 1);

nlohmann::json ablation_json(std::span<const AblationRow> rows);

struct LeakageAudit {
  bool passed = true;
  std::size_t endpoint_violations = 0;  // account mode: train rows touching non-train accounts
  std::size_t changed_cells = 0;        // train-row cells that moved under label perturbation
  std::string detail;
};

/// Rebuilds the features with every non-train label flipped and checks that
/// the train rows are unchanged; in account mode also checks that train rows
/// only touch train accounts.
LeakageAudit leakage_audit(const Dataset& d, const Split& split,
                           const std::function<FeatureMatrix(const Dataset&)>& build);

}  // namespace txg
