#pragma once

#include "txg/common.hpp"
#include "txg/communities.hpp"
#include "txg/flow.hpp"
#include "txg/graph.hpp"
#include "txg/subgraph_features.hpp"

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace txg {

/// Average path length of an unsuccessful BST search over n points:
/// 2 H(n-1) - 2 (n-1) / n with exact harmonic numbers, c(1) = 0, c(2) = 1.
double average_path_length(std::size_t n);

struct IsolationForestParams {
  std::size_t trees = 100;
  std::size_t sample_size = 256;
  std::uint64_t seed = 42;
};

class IsolationForest {
 public:
  struct Node {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;     // go left when x < threshold
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::uint32_t size = 0;     // training rows reaching the node
    std::uint8_t missing_left = 1;
  };
  using Tree = std::vector<Node>;

  /// Needs at least 2 rows. NaN entries are routed to the heavier child.
  static IsolationForest fit(const MatrixXdr& x, const IsolationForestParams& params, std::size_t workers = 1);

  /// Path length of one row in one tree, including the c(size) leaf correction.
  double path_length(std::size_t tree, std::span<const double> row) const;

  /// 2^(-E[h] / c(sample_size)) per row, clamped to [0, 1].
  Eigen::VectorXd score(const MatrixXdr& x, std::size_t workers = 1) const;

  std::size_t columns() const { return columns_; }
  std::size_t sample_size() const { return sample_size_; }
  const std::vector<Tree>& trees() const { return trees_; }

  std::vector<char> save() const;
  static IsolationForest load(std::span<const char> bytes);

  bool operator==(const IsolationForest&) const;

 private:
  std::size_t columns_ = 0;
  std::size_t sample_size_ = 0;
  std::vector<Tree> trees_;
};

/// Node-level feature matrix: row i describes `nodes[i]`; one group tag per column.
struct NodeFeatures {
  std::vector<NodeId> nodes;
  std::vector<std::string> names;
  std::vector<std::string> groups;  // random_walk, modularity or flows
  MatrixXdr values;

  std::size_t columns() const { return names.size(); }
  bool operator==(const NodeFeatures&) const = default;
};

/// Inputs of node feature assembly. Flow tables must cover every node in id
/// order; `egos` may cover any subset (rows without an ego community are NaN).
struct NodeFeatureInputs {
  const AggregatedGraph* graph = nullptr;
  const Partition* partition = nullptr;
  std::span<const EgoCommunity> egos;
  const CommunityFeatureTable* community_features = nullptr;
  const FlowTable* flows = nullptr;
  const FlowTable* temporal_flows = nullptr;
  std::span<const AccountType> types;
};

NodeFeatures assemble_node_features(const NodeFeatureInputs& in);

/// Per-transaction interaction columns built from endpoint scores.
struct InteractionFeatures {
  static const std::vector<std::string>& names();  // src_score .. abs_diff
  MatrixXdr values;                                // rows x 6
  Eigen::VectorXd imputed;                         // 1 when an endpoint score was imputed
};

/// `scores` is indexed by node id. Endpoints outside it (or with a NaN score) receive the median score.
InteractionFeatures interaction_features(const Eigen::VectorXd& scores, std::span<const NodeId> sources,
                                         std::span<const NodeId> targets);

/// CSV: node,score (raw account names when ids are given).
void write_scores_csv(const Eigen::VectorXd& scores, std::ostream& out, const IdMap* ids = nullptr);

std::vector<char> serialize_node_features(const NodeFeatures& f, const Eigen::VectorXd& scores);
std::pair<NodeFeatures, Eigen::VectorXd> deserialize_node_features(std::span<const char> bytes);

}  // namespace txg
