#pragma once

#include "txg/common.hpp"
#include "txg/communities.hpp"
#include "txg/flow.hpp"
#include "txg/graph.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace txg {

/// Multigraph edges with both endpoints inside a member set.
struct EdgeSlice {
  std::vector<NodeId> members;  // sorted, unique
  std::vector<NodeId> source;
  std::vector<NodeId> target;
  std::vector<double> amount;
  std::vector<Timestamp> timestamp;

  std::size_t edge_count() const { return source.size(); }
  bool operator==(const EdgeSlice&) const = default;
};

EdgeSlice induced_subgraph(const MultiGraph& g, std::span<const NodeId> members);

struct DegreeStats {
  Summary in;
  Summary out;
  Summary total;
};

/// Degrees count distinct neighbours inside the slice (simple directed
/// projection); members without edges contribute zeros.
DegreeStats degree_stats(const EdgeSlice& s);

struct Diameter {
  int value = 0;
  bool approximate = false;
};

/// Longest shortest path on the undirected simple projection, max over
/// components. Above `exact_node_cap` members a double-sweep lower bound is used.
Diameter diameter(const EdgeSlice& s, std::size_t exact_node_cap = 10000);

/// Pearson correlation of endpoint degrees over undirected simple edges; empty
/// when undefined (no edges or all degrees equal).
std::optional<double> assortativity(const EdgeSlice& s);

struct Biconnectivity {
  std::size_t components = 0;
  std::size_t articulation_points = 0;
};

/// Blocks (biconnected components with at least one edge) and articulation
/// points of the undirected simple projection.
Biconnectivity biconnected_components(const EdgeSlice& s);

struct Turnover {
  Summary edge_amount;  // over aggregated (source, target) pairs inside the slice
  double internal_volume = 0.0;
  double boundary_in = 0.0;
  double boundary_out = 0.0;
  double boundary_turnover = 0.0;  // |boundary_in - boundary_out|
};

Turnover turnover(const EdgeSlice& s, const MultiGraph& g);

struct TimeFeatures {
  double mean = 0.0;    // amount-weighted mean of shifted timestamps
  double std = 0.0;     // amount-weighted standard deviation
  double median = 0.0;  // lower weighted median
  bool unweighted_fallback = false;
};

/// Weighted time statistics for amounts `w` and shifted times `chi`. Falls back
/// to unweighted statistics when the amounts sum to zero.
template <typename DerivedW, typename DerivedX>
TimeFeatures weighted_time_stats(const Eigen::DenseBase<DerivedW>& w, const Eigen::DenseBase<DerivedX>& chi) {
  TimeFeatures f;
  const Eigen::Index n = chi.size();
  if (n == 0) {
    f.mean = f.std = f.median = kMissing;
    return f;
  }
  Eigen::VectorXd weights = w.derived().template cast<double>();
  const Eigen::VectorXd x = chi.derived().template cast<double>();
  double total = compensated_sum(weights);
  if (!(total > 0)) {
    weights.setOnes();
    total = static_cast<double>(n);
    f.unweighted_fallback = true;
  }
  f.mean = compensated_sum(weights.cwiseProduct(x)) / total;
  f.std = std::sqrt(std::max(0.0, compensated_sum(weights.cwiseProduct((x.array() - f.mean).square().matrix())) / total));

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return x[a] < x[b]; });
  CompensatedSum<double> cum;
  f.median = x[order.back()];
  for (auto i : order) {
    cum.add(weights[i]);
    if (cum.value() >= 0.5 * total) {
      f.median = x[i];
      break;
    }
  }
  return f;
}

/// Time features of a slice, with timestamps shifted by the dataset minimum.
TimeFeatures weighted_time_features(const EdgeSlice& s, Timestamp global_min);

/// Full feature block of one community.
struct CommunityFeatures {
  CommunityKey key;
  std::size_t member_count = 0;
  std::size_t edge_count = 0;
  std::size_t pair_count = 0;
  std::array<std::size_t, 5> type_counts{};  // indexed by AccountType
  DegreeStats degrees;
  Diameter diam;
  std::optional<double> assort;
  Biconnectivity bicon;
  Turnover turn;
  TimeFeatures time;

  /// Stable column names and numeric encoding (missing values as NaN).
  static const std::vector<std::string>& names();
  void write_row(std::span<double> out) const;
};

CommunityFeatures community_features(const EdgeSlice& s, const CommunityKey& key, const MultiGraph& g,
                                     std::span<const AccountType> types, std::size_t exact_diameter_cap = 10000);

/// Spill store: one data file holding concatenated per-community slices and a
/// manifest ("TXGS", version, count, then type/id/offset/length per entry).
class SpillStore {
 public:
  struct Entry {
    CommunityKey key;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
  };

  explicit SpillStore(std::filesystem::path dir);

  void append(const CommunityKey& key, const EdgeSlice& slice);
  void finish();  // writes the manifest
  static SpillStore open(const std::filesystem::path& dir);

  EdgeSlice read(std::size_t index) const;
  const std::vector<Entry>& entries() const { return entries_; }
  const std::filesystem::path& dir() const { return dir_; }

  static std::vector<char> encode(const EdgeSlice& s);
  static EdgeSlice decode(std::span<const char> bytes);

 private:
  SpillStore() = default;

  std::filesystem::path dir_;
  std::vector<Entry> entries_;
  std::uint64_t written_ = 0;
};

struct FeatureMapParams {
  std::size_t workers = 1;
  std::size_t exact_diameter_cap = 10000;
  std::size_t memory_budget_bytes = std::size_t{1} << 30;  // in-memory slices up to this size
  std::size_t max_spill_readers = 4;
  std::filesystem::path spill_dir;  // required only when spilling
};

struct CommunityFeatureTable {
  std::vector<CommunityFeatures> rows;  // sorted by key
  bool spilled = false;

  const CommunityFeatures* find(const CommunityKey& key) const;
};

/// Groups the membership table by community and computes one feature row per
/// community in parallel. Output is independent of the worker count.
CommunityFeatureTable parallel_feature_map(const MembershipTable& table, const MultiGraph& g,
                                           std::span<const AccountType> types, const FeatureMapParams& params);

void write_community_features_csv(const CommunityFeatureTable& t, std::ostream& out);
std::vector<char> serialize_community_features(const CommunityFeatureTable& t);
CommunityFeatureTable deserialize_community_features(std::span<const char> bytes);

}  // namespace txg
