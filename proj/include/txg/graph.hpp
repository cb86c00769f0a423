#pragma once

#include "txg/common.hpp"
#include "txg/ingest.hpp"

#include <ostream>
#include <span>
#include <vector>

namespace txg {

/// Directed transaction multigraph in columnar CSR form.
///
/// Edges are stored sorted by (source, timestamp, tx_id); `out_offsets` indexes
/// them by source. `in_order` lists edge indices sorted by (target, timestamp,
/// tx_id) and `in_offsets` indexes that list by target.
struct MultiGraph {
  std::size_t node_count = 0;
  std::vector<NodeId> source;
  std::vector<NodeId> target;
  std::vector<double> amount;
  std::vector<Timestamp> timestamp;
  std::vector<TxId> tx_id;
  std::vector<std::size_t> out_offsets;
  std::vector<std::size_t> in_order;
  std::vector<std::size_t> in_offsets;
  std::size_t dropped_self_loops = 0;
  Timestamp min_timestamp = 0;

  std::size_t edge_count() const { return source.size(); }
  std::size_t out_begin(NodeId v) const { return out_offsets[v]; }
  std::size_t out_end(NodeId v) const { return out_offsets[v + 1]; }
  std::size_t out_degree(NodeId v) const { return out_end(v) - out_begin(v); }
  std::span<const std::size_t> in_edges(NodeId v) const {
    return {in_order.data() + in_offsets[v], in_offsets[v + 1] - in_offsets[v]};
  }
  std::size_t in_degree(NodeId v) const { return in_offsets[v + 1] - in_offsets[v]; }

  bool operator==(const MultiGraph&) const = default;
};

/// One edge per distinct (source, target) pair with total amount and weight.
struct AggregatedGraph {
  std::size_t node_count = 0;
  std::vector<NodeId> source;
  std::vector<NodeId> target;
  std::vector<double> amount;  // A(s->t)
  std::vector<double> weight;  // W(s->t) = A/S_s + A/R_t
  std::vector<std::uint32_t> tx_count;
  std::vector<std::size_t> out_offsets;
  std::vector<std::size_t> in_order;
  std::vector<std::size_t> in_offsets;
  std::vector<double> sent;      // S
  std::vector<double> received;  // R

  std::size_t edge_count() const { return source.size(); }
  std::size_t out_begin(NodeId v) const { return out_offsets[v]; }
  std::size_t out_end(NodeId v) const { return out_offsets[v + 1]; }
  std::size_t out_degree(NodeId v) const { return out_end(v) - out_begin(v); }
  std::span<const std::size_t> in_edges(NodeId v) const {
    return {in_order.data() + in_offsets[v], in_offsets[v + 1] - in_offsets[v]};
  }
  std::size_t in_degree(NodeId v) const { return in_offsets[v + 1] - in_offsets[v]; }

  /// Index of the aggregated edge s->t, or npos.
  std::size_t find_edge(NodeId s, NodeId t) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  bool operator==(const AggregatedGraph&) const = default;
};

/// Self-loops are dropped; their count is kept in `dropped_self_loops`.
MultiGraph build_multigraph(const Dataset& d);

/// Builds a multigraph from raw edge columns (already free of self-loops or not).
MultiGraph build_multigraph(std::size_t node_count, std::span<const Transaction> rows);

AggregatedGraph aggregate(const MultiGraph& g);

/// Weight A/S + A/R of an existing aggregated edge; terms with a zero denominator are 0.
double edge_weight(const AggregatedGraph& ag, NodeId s, NodeId t);

/// The sender-share plus receiver-share weight for given totals.
inline double pair_weight(double amount, double sent, double received) {
  return (sent > 0 ? amount / sent : 0.0) + (received > 0 ? amount / received : 0.0);
}

/// Every edge flipped; S and R swap roles.
AggregatedGraph reverse(const AggregatedGraph& ag);
MultiGraph reverse(const MultiGraph& g);

/// CSV edge list: source,target,A,W (raw account names when ids are given).
void write_aggregated_csv(const AggregatedGraph& ag, std::ostream& out, const IdMap* ids = nullptr);

std::vector<char> serialize_graphs(const MultiGraph& mg, const AggregatedGraph& ag);
std::pair<MultiGraph, AggregatedGraph> deserialize_graphs(std::span<const char> bytes);

}  // namespace txg
