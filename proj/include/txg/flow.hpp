#pragma once

#include "txg/common.hpp"
#include "txg/graph.hpp"

#include <ostream>
#include <span>
#include <string_view>
#include <vector>

namespace txg {

enum class FlowKind : std::uint8_t { Dispenser = 0, Passthrough = 1, Sink = 2 };
std::string_view flow_kind_name(FlowKind k);

/// Statistics of the carried amounts on the frontier after one hop.
struct HopStats {
  int hop = 0;
  std::size_t reached = 0;  // distinct frontier nodes
  double sum = 0.0;
  double max = 0.0;
  double mean = 0.0;

  bool operator==(const HopStats&) const = default;
};

struct FlowProfile {
  NodeId node = 0;
  FlowKind kind = FlowKind::Dispenser;
  std::vector<HopStats> per_hop;
  double passthrough_ratio = kMissing;  // set for Passthrough only

  bool operator==(const FlowProfile& o) const {
    return node == o.node && kind == o.kind && per_hop == o.per_hop &&
           (passthrough_ratio == o.passthrough_ratio || (is_missing(passthrough_ratio) && is_missing(o.passthrough_ratio)));
  }
};

struct FlowParams {
  int hops = 5;
  std::size_t top_n = 50;
  double theta_pass = 0.8;
  double theta_ratio = 0.1;
  bool strict_chronology = false;
};

/// Money pushed out of `node`: hop-by-hop running minimum of edge amounts,
/// clipped by the node's total debit, keeping the top_n largest carried flows.
FlowProfile dispense_flow(const AggregatedGraph& ag, NodeId node, int hops = 5, std::size_t top_n = 50);

/// Mirror of dispense_flow on in-edges, clipped by total credit.
FlowProfile sink_flow(const AggregatedGraph& ag, NodeId node, int hops = 5, std::size_t top_n = 50);

/// Element-wise minimum of the dispense and sink statistics, plus
/// min(S, R) / max(S, R, eps).
FlowProfile passthrough_flow(const AggregatedGraph& ag, NodeId node, int hops = 5, std::size_t top_n = 50);

/// Same recurrence on raw transactions; a continuation is joined only when it
/// happens no earlier than the previous transaction (later, if strict).
FlowProfile temporal_flow(const MultiGraph& mg, NodeId node, FlowKind kind, int hops = 5, std::size_t top_n = 50,
                          bool strict_chronology = false);

double passthrough_ratio(double sent, double received);

enum class AccountType : std::uint8_t { Dispenser = 0, Passthrough = 1, Sink = 2, Mixed = 3, Inactive = 4 };
std::string_view account_type_name(AccountType t);

AccountType classify_account_type(double sent, double received, double theta_pass, double theta_ratio);
AccountType classify_account_type(const AggregatedGraph& ag, NodeId node, double theta_pass, double theta_ratio);
std::vector<AccountType> classify_accounts(const AggregatedGraph& ag, double theta_pass, double theta_ratio);

/// All three profiles for a list of nodes.
struct FlowTable {
  int hops = 0;
  std::vector<NodeId> nodes;
  std::vector<FlowProfile> dispenser;
  std::vector<FlowProfile> passthrough;
  std::vector<FlowProfile> sink;

  bool operator==(const FlowTable&) const = default;
};

FlowTable compute_flow_table(const AggregatedGraph& ag, std::span<const NodeId> nodes, const FlowParams& p,
                             std::size_t workers);
FlowTable compute_temporal_flow_table(const MultiGraph& mg, std::span<const NodeId> nodes, const FlowParams& p,
                                      std::size_t workers);

/// CSV rows: node,profile,hop,reached,sum,max,mean.
void write_flow_csv(const FlowTable& t, std::ostream& out);

std::vector<char> serialize_flow_table(const FlowTable& t);
FlowTable deserialize_flow_table(std::span<const char> bytes);

}  // namespace txg
