#pragma once

#include "txg/common.hpp"
#include "txg/graph.hpp"

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

namespace txg {

/// Disjoint community assignment. Ids are dense, numbered in order of each
/// community's smallest node id.
struct Partition {
  std::vector<std::uint32_t> assignment;
  std::size_t community_count = 0;
  double modularity_score = 0.0;

  bool operator==(const Partition&) const = default;
};

/// Undirected weighted projection used by the modularity objective: one entry
/// per unordered pair {u, v}, weight = W(u->v) + W(v->u).
struct UndirectedGraph {
  std::size_t node_count = 0;
  std::vector<std::size_t> offsets;
  std::vector<NodeId> neighbor;
  std::vector<double> weight;
  std::vector<double> strength;  // weighted degree
  double total_weight = 0.0;     // m, sum of undirected edge weights
};

UndirectedGraph undirected_projection(const AggregatedGraph& ag);

struct LeidenParams {
  double resolution = 1.0;
  std::uint64_t seed = 42;
  double randomness = 0.01;
  int max_iterations = 10;
};

Partition leiden_partition(const AggregatedGraph& ag, const LeidenParams& params = {});

/// Newman modularity of `assignment` on the undirected projection.
double modularity(const AggregatedGraph& ag, std::span<const std::uint32_t> assignment, double resolution = 1.0);
double modularity(const UndirectedGraph& g, std::span<const std::uint32_t> assignment, double resolution = 1.0);

struct EgoParams {
  int n_hops = 2;
  double restart = 0.15;
  std::size_t top_k_per_hop = 50;
  std::size_t max_size = 500;
};

/// Overlapping node-centred community: members sorted ascending with their
/// accumulated walk mass in `member_rank`.
struct EgoCommunity {
  NodeId seed = 0;
  std::vector<NodeId> members;
  std::vector<double> member_rank;

  bool operator==(const EgoCommunity&) const = default;
};

EgoCommunity ego_community(const AggregatedGraph& ag, NodeId seed, const EgoParams& params = {});

/// Ego community for every seed; output order follows `seeds`.
std::vector<EgoCommunity> ego_communities(const AggregatedGraph& ag, std::span<const NodeId> seeds,
                                          const EgoParams& params, std::size_t workers);

enum class CommunityType : std::uint8_t { Leiden = 0, Ego = 1 };
std::string_view community_type_name(CommunityType t);

struct CommunityKey {
  CommunityType type = CommunityType::Leiden;
  std::uint64_t id = 0;

  auto operator<=>(const CommunityKey&) const = default;
};

/// Flat (community, member) rows. Ego communities are keyed by seed id.
struct MembershipTable {
  std::vector<CommunityKey> community;
  std::vector<NodeId> node;

  std::size_t size() const { return node.size(); }
};

MembershipTable community_membership_table(const Partition& p, std::span<const EgoCommunity> egos);

void write_membership_csv(const MembershipTable& t, std::ostream& out);

std::vector<char> serialize_communities(const Partition& p, std::span<const EgoCommunity> egos);
std::pair<Partition, std::vector<EgoCommunity>> deserialize_communities(std::span<const char> bytes);

}  // namespace txg
