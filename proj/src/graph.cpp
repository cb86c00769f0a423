#include "txg/graph.hpp"

#include "txg/binary_io.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <tuple>

namespace txg {

namespace {

std::vector<std::size_t> offsets_from_keys(std::size_t node_count, std::span<const NodeId> sorted_keys) {
  std::vector<std::size_t> off(node_count + 1, 0);
  for (NodeId k : sorted_keys) ++off[k + 1];
  std::partial_sum(off.begin(), off.end(), off.begin());
  return off;
}

}  // namespace

MultiGraph build_multigraph(std::size_t node_count, std::span<const Transaction> rows) {
  MultiGraph g;
  g.node_count = node_count;
  std::vector<const Transaction*> kept;
  kept.reserve(rows.size());
  bool first = true;
  for (const auto& t : rows) {
    if (first || t.timestamp < g.min_timestamp) g.min_timestamp = t.timestamp;
    first = false;
    if (t.source == t.target) {
      ++g.dropped_self_loops;
      continue;
    }
    if (t.source >= node_count || t.target >= node_count) throw DataError("build_multigraph: node id out of range");
    kept.push_back(&t);
  }
  std::sort(kept.begin(), kept.end(), [](const Transaction* a, const Transaction* b) {
    return std::tie(a->source, a->timestamp, a->tx_id) < std::tie(b->source, b->timestamp, b->tx_id);
  });
  const std::size_t m = kept.size();
  g.source.resize(m);
  g.target.resize(m);
  g.amount.resize(m);
  g.timestamp.resize(m);
  g.tx_id.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    g.source[i] = kept[i]->source;
    g.target[i] = kept[i]->target;
    g.amount[i] = kept[i]->amount;
    g.timestamp[i] = kept[i]->timestamp;
    g.tx_id[i] = kept[i]->tx_id;
  }
  g.out_offsets = offsets_from_keys(node_count, g.source);

  g.in_order.resize(m);
  std::iota(g.in_order.begin(), g.in_order.end(), 0);
  std::sort(g.in_order.begin(), g.in_order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(g.target[a], g.timestamp[a], g.tx_id[a]) < std::tie(g.target[b], g.timestamp[b], g.tx_id[b]);
  });
  std::vector<NodeId> in_keys(m);
  for (std::size_t i = 0; i < m; ++i) in_keys[i] = g.target[g.in_order[i]];
  g.in_offsets = offsets_from_keys(node_count, in_keys);
  return g;
}

MultiGraph build_multigraph(const Dataset& d) { return build_multigraph(d.node_count(), d.transactions); }

AggregatedGraph aggregate(const MultiGraph& g) {
  AggregatedGraph ag;
  ag.node_count = g.node_count;
  ag.sent.assign(g.node_count, 0.0);
  ag.received.assign(g.node_count, 0.0);

  // Within one source the edges are time-ordered; regroup by target with a
  // stable sort so each group is summed in (timestamp, tx_id) order.
  std::vector<std::size_t> idx;
  for (NodeId s = 0; s < g.node_count; ++s) {
    const std::size_t b = g.out_begin(s), e = g.out_end(s);
    idx.resize(e - b);
    std::iota(idx.begin(), idx.end(), b);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return g.target[x] < g.target[y]; });
    for (std::size_t i = 0; i < idx.size();) {
      const NodeId t = g.target[idx[i]];
      CompensatedSum<double> total;
      std::uint32_t count = 0;
      for (; i < idx.size() && g.target[idx[i]] == t; ++i) {
        total.add(g.amount[idx[i]]);
        ++count;
      }
      ag.source.push_back(s);
      ag.target.push_back(t);
      ag.amount.push_back(total.value());
      ag.tx_count.push_back(count);
    }
  }
  const std::size_t m = ag.source.size();
  ag.out_offsets = offsets_from_keys(g.node_count, ag.source);

  ag.in_order.resize(m);
  std::iota(ag.in_order.begin(), ag.in_order.end(), 0);
  std::stable_sort(ag.in_order.begin(), ag.in_order.end(),
                   [&](std::size_t a, std::size_t b) { return ag.target[a] < ag.target[b]; });
  std::vector<NodeId> in_keys(m);
  for (std::size_t i = 0; i < m; ++i) in_keys[i] = ag.target[ag.in_order[i]];
  ag.in_offsets = offsets_from_keys(g.node_count, in_keys);

  for (NodeId v = 0; v < g.node_count; ++v) {
    CompensatedSum<double> s, r;
    for (std::size_t e = ag.out_begin(v); e < ag.out_end(v); ++e) s.add(ag.amount[e]);
    for (std::size_t e : ag.in_edges(v)) r.add(ag.amount[e]);
    ag.sent[v] = s.value();
    ag.received[v] = r.value();
  }
  ag.weight.resize(m);
  for (std::size_t e = 0; e < m; ++e)
    ag.weight[e] = pair_weight(ag.amount[e], ag.sent[ag.source[e]], ag.received[ag.target[e]]);
  return ag;
}

std::size_t AggregatedGraph::find_edge(NodeId s, NodeId t) const {
  if (s >= node_count) return npos;
  const auto b = target.begin() + static_cast<std::ptrdiff_t>(out_begin(s));
  const auto e = target.begin() + static_cast<std::ptrdiff_t>(out_end(s));
  const auto it = std::lower_bound(b, e, t);
  if (it == e || *it != t) return npos;
  return static_cast<std::size_t>(it - target.begin());
}

double edge_weight(const AggregatedGraph& ag, NodeId s, NodeId t) {
  const auto e = ag.find_edge(s, t);
  if (e == AggregatedGraph::npos)
    throw DataError("edge_weight: no aggregated edge " + std::to_string(s) + " -> " + std::to_string(t));
  return pair_weight(ag.amount[e], ag.sent[s], ag.received[t]);
}

AggregatedGraph reverse(const AggregatedGraph& ag) {
  AggregatedGraph r;
  r.node_count = ag.node_count;
  r.sent = ag.received;
  r.received = ag.sent;
  const std::size_t m = ag.edge_count();
  // Reversed edges in (new source = old target, new target = old source) order
  // are exactly the old in_order.
  r.source.resize(m);
  r.target.resize(m);
  r.amount.resize(m);
  r.weight.resize(m);
  r.tx_count.resize(m);
  std::vector<std::size_t> new_index(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t e = ag.in_order[i];
    r.source[i] = ag.target[e];
    r.target[i] = ag.source[e];
    r.amount[i] = ag.amount[e];
    r.weight[i] = ag.weight[e];
    r.tx_count[i] = ag.tx_count[e];
    new_index[e] = i;
  }
  r.out_offsets = ag.in_offsets;
  r.in_offsets = ag.out_offsets;
  r.in_order.resize(m);
  for (std::size_t e = 0; e < m; ++e) r.in_order[e] = new_index[e];
  return r;
}

MultiGraph reverse(const MultiGraph& g) {
  std::vector<Transaction> rows(g.edge_count());
  for (std::size_t e = 0; e < g.edge_count(); ++e)
    rows[e] = {g.tx_id[e], g.timestamp[e], g.target[e], g.source[e], g.amount[e], 0};
  MultiGraph r = build_multigraph(g.node_count, rows);
  r.min_timestamp = g.min_timestamp;
  r.dropped_self_loops = g.dropped_self_loops;
  return r;
}

void write_aggregated_csv(const AggregatedGraph& ag, std::ostream& out, const IdMap* ids) {
  out << "source,target,A,W\n";
  char buf[96];
  for (std::size_t e = 0; e < ag.edge_count(); ++e) {
    if (ids)
      out << ids->name(ag.source[e]) << ',' << ids->name(ag.target[e]);
    else
      out << ag.source[e] << ',' << ag.target[e];
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", ag.amount[e], ag.weight[e]);
    out << buf;
  }
}

std::vector<char> serialize_graphs(const MultiGraph& g, const AggregatedGraph& ag) {
  io::Writer w;
  w.magic("TXGG", 1);
  w.pod<std::uint64_t>(g.node_count);
  w.array(g.source);
  w.array(g.target);
  w.array(g.amount);
  w.array(g.timestamp);
  w.array(g.tx_id);
  w.array(g.out_offsets);
  w.array(g.in_order);
  w.array(g.in_offsets);
  w.pod<std::uint64_t>(g.dropped_self_loops);
  w.pod<std::int64_t>(g.min_timestamp);
  w.pod<std::uint64_t>(ag.node_count);
  w.array(ag.source);
  w.array(ag.target);
  w.array(ag.amount);
  w.array(ag.weight);
  w.array(ag.tx_count);
  w.array(ag.out_offsets);
  w.array(ag.in_order);
  w.array(ag.in_offsets);
  w.array(ag.sent);
  w.array(ag.received);
  return w.release();
}

std::pair<MultiGraph, AggregatedGraph> deserialize_graphs(std::span<const char> bytes) {
  io::Reader r(bytes);
  if (r.magic("TXGG") != 1) throw DataError("unsupported graph cache version");
  MultiGraph g;
  g.node_count = r.pod<std::uint64_t>();
  g.source = r.array<NodeId>();
  g.target = r.array<NodeId>();
  g.amount = r.array<double>();
  g.timestamp = r.array<Timestamp>();
  g.tx_id = r.array<TxId>();
  g.out_offsets = r.array<std::size_t>();
  g.in_order = r.array<std::size_t>();
  g.in_offsets = r.array<std::size_t>();
  g.dropped_self_loops = r.pod<std::uint64_t>();
  g.min_timestamp = r.pod<std::int64_t>();
  AggregatedGraph ag;
  ag.node_count = r.pod<std::uint64_t>();
  ag.source = r.array<NodeId>();
  ag.target = r.array<NodeId>();
  ag.amount = r.array<double>();
  ag.weight = r.array<double>();
  ag.tx_count = r.array<std::uint32_t>();
  ag.out_offsets = r.array<std::size_t>();
  ag.in_order = r.array<std::size_t>();
  ag.in_offsets = r.array<std::size_t>();
  ag.sent = r.array<double>();
  ag.received = r.array<double>();
  return {std::move(g), std::move(ag)};
}

}  // namespace txg
