#include "txg/flow.hpp"

#include "txg/binary_io.hpp"
#include "txg/parallel.hpp"

#include <algorithm>
#include <cstdio>

namespace txg {

std::string_view flow_kind_name(FlowKind k) {
  switch (k) {
    case FlowKind::Dispenser: return "dispenser";
    case FlowKind::Passthrough: return "passthrough";
    case FlowKind::Sink: return "sink";
  }
  return "dispenser";
}

std::string_view account_type_name(AccountType t) {
  switch (t) {
    case AccountType::Dispenser: return "dispenser";
    case AccountType::Passthrough: return "passthrough";
    case AccountType::Sink: return "sink";
    case AccountType::Mixed: return "mixed";
    case AccountType::Inactive: return "inactive";
  }
  return "mixed";
}

namespace {

struct Carried {
  NodeId node;        // frontier node (where the carried amount currently sits)
  double amount;
  std::size_t edge;   // multigraph edge index, temporal variant only
};

HopStats frontier_stats(int hop, const std::vector<Carried>& frontier, std::vector<NodeId>& scratch) {
  HopStats s;
  s.hop = hop;
  if (frontier.empty()) return s;
  scratch.clear();
  CompensatedSum<double> sum;
  for (const auto& c : frontier) {
    scratch.push_back(c.node);
    sum.add(c.amount);
    s.max = std::max(s.max, c.amount);
  }
  std::sort(scratch.begin(), scratch.end());
  s.reached = static_cast<std::size_t>(std::unique(scratch.begin(), scratch.end()) - scratch.begin());
  s.sum = sum.value();
  s.mean = s.sum / static_cast<double>(frontier.size());
  return s;
}

void keep_top(std::vector<Carried>& frontier, std::size_t top_n) {
  std::stable_sort(frontier.begin(), frontier.end(), [](const Carried& a, const Carried& b) {
    return a.amount != b.amount ? a.amount > b.amount : a.node < b.node;
  });
  if (frontier.size() > top_n) frontier.resize(top_n);
}

FlowProfile static_flow(const AggregatedGraph& ag, NodeId node, bool forward, int hops, std::size_t top_n) {
  if (node >= ag.node_count) throw DataError("flow: unknown node " + std::to_string(node));
  if (hops < 1) throw ConfigError("flow: hops must be >= 1");
  FlowProfile prof;
  prof.node = node;
  prof.kind = forward ? FlowKind::Dispenser : FlowKind::Sink;
  const double origin_total = forward ? ag.sent[node] : ag.received[node];

  auto for_each_edge = [&](NodeId u, auto&& fn) {
    if (forward) {
      for (std::size_t e = ag.out_begin(u); e < ag.out_end(u); ++e) fn(ag.target[e], ag.amount[e]);
    } else {
      for (std::size_t e : ag.in_edges(u)) fn(ag.source[e], ag.amount[e]);
    }
  };

  std::vector<Carried> frontier;
  std::vector<NodeId> scratch;
  for_each_edge(node, [&](NodeId v, double a) { frontier.push_back({v, a, 0}); });
  keep_top(frontier, top_n);
  prof.per_hop.push_back(frontier_stats(1, frontier, scratch));

  std::vector<Carried> next;
  for (int hop = 2; hop <= hops; ++hop) {
    next.clear();
    for (const auto& c : frontier) {
      const double prev = std::min(c.amount, origin_total);
      for_each_edge(c.node, [&](NodeId v, double a) { next.push_back({v, std::min(a, prev), 0}); });
    }
    keep_top(next, top_n);
    std::swap(frontier, next);
    prof.per_hop.push_back(frontier_stats(hop, frontier, scratch));
  }
  return prof;
}

FlowProfile elementwise_min(const FlowProfile& a, const FlowProfile& b) {
  FlowProfile p;
  p.node = a.node;
  p.kind = FlowKind::Passthrough;
  for (std::size_t h = 0; h < a.per_hop.size(); ++h) {
    const auto& x = a.per_hop[h];
    const auto& y = b.per_hop[h];
    p.per_hop.push_back({x.hop, std::min(x.reached, y.reached), std::min(x.sum, y.sum), std::min(x.max, y.max),
                         std::min(x.mean, y.mean)});
  }
  return p;
}

}  // namespace

FlowProfile dispense_flow(const AggregatedGraph& ag, NodeId node, int hops, std::size_t top_n) {
  return static_flow(ag, node, true, hops, top_n);
}

FlowProfile sink_flow(const AggregatedGraph& ag, NodeId node, int hops, std::size_t top_n) {
  return static_flow(ag, node, false, hops, top_n);
}

double passthrough_ratio(double sent, double received) {
  constexpr double eps = 1e-12;
  return std::min(sent, received) / std::max({sent, received, eps});
}

FlowProfile passthrough_flow(const AggregatedGraph& ag, NodeId node, int hops, std::size_t top_n) {
  auto p = elementwise_min(dispense_flow(ag, node, hops, top_n), sink_flow(ag, node, hops, top_n));
  p.passthrough_ratio = passthrough_ratio(ag.sent[node], ag.received[node]);
  return p;
}

FlowProfile temporal_flow(const MultiGraph& mg, NodeId node, FlowKind kind, int hops, std::size_t top_n,
                          bool strict) {
  if (node >= mg.node_count) throw DataError("temporal_flow: unknown node " + std::to_string(node));
  if (hops < 1) throw ConfigError("temporal_flow: hops must be >= 1");
  if (kind == FlowKind::Passthrough) {
    auto p = elementwise_min(temporal_flow(mg, node, FlowKind::Dispenser, hops, top_n, strict),
                             temporal_flow(mg, node, FlowKind::Sink, hops, top_n, strict));
    CompensatedSum<double> sent, received;
    for (std::size_t e = mg.out_begin(node); e < mg.out_end(node); ++e) sent.add(mg.amount[e]);
    for (std::size_t e : mg.in_edges(node)) received.add(mg.amount[e]);
    p.passthrough_ratio = passthrough_ratio(sent.value(), received.value());
    return p;
  }
  const bool forward = kind == FlowKind::Dispenser;
  FlowProfile prof;
  prof.node = node;
  prof.kind = kind;

  CompensatedSum<double> total;
  std::vector<Carried> frontier;
  if (forward) {
    for (std::size_t e = mg.out_begin(node); e < mg.out_end(node); ++e) {
      total.add(mg.amount[e]);
      frontier.push_back({mg.target[e], mg.amount[e], e});
    }
  } else {
    for (std::size_t e : mg.in_edges(node)) {
      total.add(mg.amount[e]);
      frontier.push_back({mg.source[e], mg.amount[e], e});
    }
  }
  const double origin_total = total.value();
  std::vector<NodeId> scratch;
  keep_top(frontier, top_n);
  prof.per_hop.push_back(frontier_stats(1, frontier, scratch));

  std::vector<Carried> next;
  for (int hop = 2; hop <= hops; ++hop) {
    next.clear();
    for (const auto& c : frontier) {
      const double prev = std::min(c.amount, origin_total);
      const Timestamp t = mg.timestamp[c.edge];
      if (forward) {
        // Out-edges of c.node are timestamp-sorted.
        const auto b = mg.timestamp.begin() + static_cast<std::ptrdiff_t>(mg.out_begin(c.node));
        const auto e = mg.timestamp.begin() + static_cast<std::ptrdiff_t>(mg.out_end(c.node));
        const auto first = strict ? std::upper_bound(b, e, t) : std::lower_bound(b, e, t);
        for (auto it = first; it != e; ++it) {
          const auto idx = static_cast<std::size_t>(it - mg.timestamp.begin());
          next.push_back({mg.target[idx], std::min(mg.amount[idx], prev), idx});
        }
      } else {
        // Going backwards in time: predecessors must not be later than t.
        for (std::size_t idx : mg.in_edges(c.node)) {
          const Timestamp u = mg.timestamp[idx];
          if (strict ? u >= t : u > t) break;
          next.push_back({mg.source[idx], std::min(mg.amount[idx], prev), idx});
        }
      }
    }
    keep_top(next, top_n);
    std::swap(frontier, next);
    prof.per_hop.push_back(frontier_stats(hop, frontier, scratch));
  }
  return prof;
}

AccountType classify_account_type(double s, double r, double theta_pass, double theta_ratio) {
  if (!(theta_pass > 0 && theta_pass < 1 && theta_ratio > 0 && theta_ratio < 1))
    throw ConfigError("classify_account_type: thresholds must be in (0, 1)");
  if (s == 0.0 && r == 0.0) return AccountType::Inactive;
  if (std::min(s, r) / std::max(s, r) >= theta_pass) return AccountType::Passthrough;
  if (r / (s + r) <= theta_ratio) return AccountType::Dispenser;
  if (s / (s + r) <= theta_ratio) return AccountType::Sink;
  return AccountType::Mixed;
}

AccountType classify_account_type(const AggregatedGraph& ag, NodeId node, double theta_pass, double theta_ratio) {
  if (node >= ag.node_count) throw DataError("classify_account_type: unknown node " + std::to_string(node));
  return classify_account_type(ag.sent[node], ag.received[node], theta_pass, theta_ratio);
}

std::vector<AccountType> classify_accounts(const AggregatedGraph& ag, double theta_pass, double theta_ratio) {
  std::vector<AccountType> out(ag.node_count);
  for (NodeId v = 0; v < ag.node_count; ++v) out[v] = classify_account_type(ag, v, theta_pass, theta_ratio);
  return out;
}

FlowTable compute_flow_table(const AggregatedGraph& ag, std::span<const NodeId> nodes, const FlowParams& p,
                             std::size_t workers) {
  FlowTable t;
  t.hops = p.hops;
  t.nodes.assign(nodes.begin(), nodes.end());
  t.dispenser.resize(nodes.size());
  t.passthrough.resize(nodes.size());
  t.sink.resize(nodes.size());
  parallel_for(nodes.size(), workers, [&](std::size_t i) {
    const NodeId v = nodes[i];
    t.dispenser[i] = dispense_flow(ag, v, p.hops, p.top_n);
    t.sink[i] = sink_flow(ag, v, p.hops, p.top_n);
    t.passthrough[i] = elementwise_min(t.dispenser[i], t.sink[i]);
    t.passthrough[i].passthrough_ratio = passthrough_ratio(ag.sent[v], ag.received[v]);
  });
  return t;
}

FlowTable compute_temporal_flow_table(const MultiGraph& mg, std::span<const NodeId> nodes, const FlowParams& p,
                                      std::size_t workers) {
  FlowTable t;
  t.hops = p.hops;
  t.nodes.assign(nodes.begin(), nodes.end());
  t.dispenser.resize(nodes.size());
  t.passthrough.resize(nodes.size());
  t.sink.resize(nodes.size());
  parallel_for(nodes.size(), workers, [&](std::size_t i) {
    const NodeId v = nodes[i];
    t.dispenser[i] = temporal_flow(mg, v, FlowKind::Dispenser, p.hops, p.top_n, p.strict_chronology);
    t.sink[i] = temporal_flow(mg, v, FlowKind::Sink, p.hops, p.top_n, p.strict_chronology);
    t.passthrough[i] = elementwise_min(t.dispenser[i], t.sink[i]);
    CompensatedSum<double> sent, received;
    for (std::size_t e = mg.out_begin(v); e < mg.out_end(v); ++e) sent.add(mg.amount[e]);
    for (std::size_t e : mg.in_edges(v)) received.add(mg.amount[e]);
    t.passthrough[i].passthrough_ratio = passthrough_ratio(sent.value(), received.value());
  });
  return t;
}

void write_flow_csv(const FlowTable& t, std::ostream& out) {
  out << "node,profile,hop,reached,sum,max,mean\n";
  char buf[160];
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    for (const auto* prof : {&t.dispenser[i], &t.passthrough[i], &t.sink[i]}) {
      for (const auto& h : prof->per_hop) {
        std::snprintf(buf, sizeof buf, "%u,%s,%d,%zu,%.17g,%.17g,%.17g\n", t.nodes[i],
                      std::string(flow_kind_name(prof->kind)).c_str(), h.hop, h.reached, h.sum, h.max, h.mean);
        out << buf;
      }
    }
  }
}

namespace {

void write_profiles(io::Writer& w, const std::vector<FlowProfile>& profiles) {
  for (const auto& p : profiles) {
    w.pod(p.passthrough_ratio);
    for (const auto& h : p.per_hop) {
      w.pod<std::uint64_t>(h.reached);
      w.pod(h.sum);
      w.pod(h.max);
      w.pod(h.mean);
    }
  }
}

std::vector<FlowProfile> read_profiles(io::Reader& r, const std::vector<NodeId>& nodes, int hops, FlowKind kind) {
  std::vector<FlowProfile> out(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    auto& p = out[i];
    p.node = nodes[i];
    p.kind = kind;
    p.passthrough_ratio = r.pod<double>();
    for (int h = 1; h <= hops; ++h) {
      HopStats s;
      s.hop = h;
      s.reached = r.pod<std::uint64_t>();
      s.sum = r.pod<double>();
      s.max = r.pod<double>();
      s.mean = r.pod<double>();
      p.per_hop.push_back(s);
    }
  }
  return out;
}

}  // namespace

std::vector<char> serialize_flow_table(const FlowTable& t) {
  io::Writer w;
  w.magic("TXGF", 1);
  w.pod<std::int32_t>(t.hops);
  w.array(t.nodes);
  write_profiles(w, t.dispenser);
  write_profiles(w, t.passthrough);
  write_profiles(w, t.sink);
  return w.release();
}

FlowTable deserialize_flow_table(std::span<const char> bytes) {
  io::Reader r(bytes);
  if (r.magic("TXGF") != 1) throw DataError("unsupported flow cache version");
  FlowTable t;
  t.hops = r.pod<std::int32_t>();
  t.nodes = r.array<NodeId>();
  t.dispenser = read_profiles(r, t.nodes, t.hops, FlowKind::Dispenser);
  t.passthrough = read_profiles(r, t.nodes, t.hops, FlowKind::Passthrough);
  t.sink = read_profiles(r, t.nodes, t.hops, FlowKind::Sink);
  return t;
}

}  // namespace txg
