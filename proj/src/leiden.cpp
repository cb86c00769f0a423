// Leiden community detection (local moving, refinement, aggregation) on the
// undirected projection of the aggregated transaction graph.

#include "txg/binary_io.hpp"
#include "txg/communities.hpp"
#include "txg/random.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <tuple>

namespace txg {

UndirectedGraph undirected_projection(const AggregatedGraph& ag) {
  std::vector<std::tuple<NodeId, NodeId, double>> pairs;
  pairs.reserve(ag.edge_count());
  for (std::size_t e = 0; e < ag.edge_count(); ++e) {
    const NodeId a = std::min(ag.source[e], ag.target[e]);
    const NodeId b = std::max(ag.source[e], ag.target[e]);
    pairs.emplace_back(a, b, ag.weight[e]);
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
    return std::tie(std::get<0>(x), std::get<1>(x)) < std::tie(std::get<0>(y), std::get<1>(y));
  });
  std::vector<std::tuple<NodeId, NodeId, double>> merged;
  for (const auto& p : pairs) {
    if (!merged.empty() && std::get<0>(merged.back()) == std::get<0>(p) && std::get<1>(merged.back()) == std::get<1>(p))
      std::get<2>(merged.back()) += std::get<2>(p);
    else
      merged.push_back(p);
  }

  UndirectedGraph g;
  g.node_count = ag.node_count;
  g.offsets.assign(g.node_count + 1, 0);
  for (const auto& [a, b, w] : merged) {
    ++g.offsets[a + 1];
    ++g.offsets[b + 1];
  }
  std::partial_sum(g.offsets.begin(), g.offsets.end(), g.offsets.begin());
  g.neighbor.resize(g.offsets.back());
  g.weight.resize(g.offsets.back());
  std::vector<std::size_t> fill(g.offsets.begin(), g.offsets.end() - 1);
  for (const auto& [a, b, w] : merged) {
    g.neighbor[fill[a]] = b;
    g.weight[fill[a]++] = w;
    g.neighbor[fill[b]] = a;
    g.weight[fill[b]++] = w;
  }
  // Each row is filled in ascending neighbour order except that rows receive
  // "b" entries (from smaller a) before "a" entries; sort rows to restore order.
  for (NodeId v = 0; v < g.node_count; ++v) {
    const auto b = g.offsets[v], e = g.offsets[v + 1];
    std::vector<std::pair<NodeId, double>> row;
    row.reserve(e - b);
    for (auto i = b; i < e; ++i) row.emplace_back(g.neighbor[i], g.weight[i]);
    std::sort(row.begin(), row.end());
    for (auto i = b; i < e; ++i) std::tie(g.neighbor[i], g.weight[i]) = row[i - b];
  }
  g.strength.assign(g.node_count, 0.0);
  CompensatedSum<double> total;
  for (NodeId v = 0; v < g.node_count; ++v) {
    CompensatedSum<double> s;
    for (auto i = g.offsets[v]; i < g.offsets[v + 1]; ++i) s.add(g.weight[i]);
    g.strength[v] = s.value();
  }
  for (const auto& [a, b, w] : merged) total.add(w);
  g.total_weight = total.value();
  return g;
}

double modularity(const UndirectedGraph& g, std::span<const std::uint32_t> assignment, double resolution) {
  if (assignment.size() != g.node_count) throw DataError("modularity: assignment size does not match node count");
  if (!(g.total_weight > 0)) throw DataError("modularity: graph has no weighted edges");
  const std::uint32_t k = assignment.empty() ? 0 : *std::max_element(assignment.begin(), assignment.end()) + 1;
  std::vector<CompensatedSum<double>> internal(k), total(k);
  for (NodeId v = 0; v < g.node_count; ++v) {
    const auto c = assignment[v];
    total[c].add(g.strength[v]);
    for (auto i = g.offsets[v]; i < g.offsets[v + 1]; ++i)
      if (assignment[g.neighbor[i]] == c) internal[c].add(g.weight[i]);
  }
  const double two_m = 2.0 * g.total_weight;
  CompensatedSum<double> q;
  for (std::uint32_t c = 0; c < k; ++c) {
    const double tot = total[c].value() / two_m;
    q.add(internal[c].value() / two_m - resolution * tot * tot);
  }
  return q.value();
}

double modularity(const AggregatedGraph& ag, std::span<const std::uint32_t> assignment, double resolution) {
  return modularity(undirected_projection(ag), assignment, resolution);
}

namespace {

// Graph at one aggregation level. Adjacency excludes self-loops; node_weight
// carries the full strength of the original nodes folded into each node.
struct Level {
  std::size_t n = 0;
  std::vector<std::size_t> off;
  std::vector<std::uint32_t> nbr;
  std::vector<double> w;
  std::vector<double> node_weight;
};

class Leiden {
 public:
  Leiden(const UndirectedGraph& g, const LeidenParams& p)
      : params_(p), two_m_(2.0 * g.total_weight), rng_(p.seed) {
    base_.n = g.node_count;
    base_.off = g.offsets;
    base_.nbr.assign(g.neighbor.begin(), g.neighbor.end());
    base_.w = g.weight;
    base_.node_weight = g.strength;
  }

  std::vector<std::uint32_t> run(std::vector<std::uint32_t> initial) {
    Level level = base_;
    std::vector<std::uint32_t> comm = std::move(initial);
    std::vector<std::uint32_t> node_of(base_.n);
    std::iota(node_of.begin(), node_of.end(), 0u);

    while (true) {
      move_nodes(level, comm);
      const std::size_t count = renumber(comm);
      if (count == level.n) break;
      std::vector<std::uint32_t> refined = refine(level, comm);
      const std::size_t refined_count = renumber(refined);
      Level next = aggregate(level, refined, refined_count);
      std::vector<std::uint32_t> next_comm(refined_count);
      for (std::size_t v = 0; v < level.n; ++v) next_comm[refined[v]] = comm[v];
      for (auto& x : node_of) x = refined[x];
      level = std::move(next);
      comm = std::move(next_comm);
    }
    std::vector<std::uint32_t> out(base_.n);
    for (std::size_t v = 0; v < base_.n; ++v) out[v] = comm[node_of[v]];
    return out;
  }

 private:
  double gain(double k_v_c, double k_v, double k_c) const {
    return k_v_c - params_.resolution * k_v * k_c / two_m_;
  }

  static std::size_t renumber(std::vector<std::uint32_t>& comm) {
    std::vector<std::uint32_t> map(comm.size() + 1, UINT32_MAX);
    std::uint32_t next = 0;
    for (auto& c : comm) {
      if (map[c] == UINT32_MAX) map[c] = next++;
      c = map[c];
    }
    return next;
  }

  // Queue-based local moving phase.
  void move_nodes(const Level& g, std::vector<std::uint32_t>& comm) {
    const std::size_t n = g.n;
    std::vector<double> comm_weight(n, 0.0);
    std::vector<std::uint32_t> comm_size(n, 0);
    for (std::size_t v = 0; v < n; ++v) {
      comm_weight[comm[v]] += g.node_weight[v];
      ++comm_size[comm[v]];
    }
    std::vector<std::uint32_t> empty;
    for (std::uint32_t c = static_cast<std::uint32_t>(n); c-- > 0;)
      if (comm_size[c] == 0) empty.push_back(c);

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    shuffle(order, rng_);
    std::deque<std::uint32_t> queue(order.begin(), order.end());
    std::vector<char> queued(n, 1);

    std::vector<double> link(n, 0.0);
    std::vector<char> mark(n, 0);
    std::vector<std::uint32_t> touched;
    while (!queue.empty()) {
      const std::uint32_t v = queue.front();
      queue.pop_front();
      queued[v] = 0;
      const std::uint32_t own = comm[v];
      touched.clear();
      for (auto i = g.off[v]; i < g.off[v + 1]; ++i) {
        const auto c = comm[g.nbr[i]];
        if (!mark[c]) {
          mark[c] = 1;
          touched.push_back(c);
        }
        link[c] += g.w[i];
      }
      comm_weight[own] -= g.node_weight[v];
      --comm_size[own];

      std::uint32_t best = own;
      double best_gain = gain(link[own], g.node_weight[v], comm_weight[own]);
      std::sort(touched.begin(), touched.end());
      for (auto c : touched) {
        if (c == own) continue;
        const double gc = gain(link[c], g.node_weight[v], comm_weight[c]);
        if (gc > best_gain) {
          best_gain = gc;
          best = c;
        }
      }
      if (best_gain < 0.0 && comm_size[own] > 0) {
        best = empty.back();
        empty.pop_back();
        best_gain = 0.0;
      }
      for (auto c : touched) {
        link[c] = 0.0;
        mark[c] = 0;
      }

      comm[v] = best;
      comm_weight[best] += g.node_weight[v];
      ++comm_size[best];
      if (best != own) {
        if (comm_size[own] == 0) empty.push_back(own);
        for (auto i = g.off[v]; i < g.off[v + 1]; ++i) {
          const auto u = g.nbr[i];
          if (!queued[u] && comm[u] != best) {
            queued[u] = 1;
            queue.push_back(u);
          }
        }
      }
    }
  }

  // Refinement: merge singletons inside each community into well-connected
  // subcommunities, chosen randomly with probability ~ exp(gain / randomness).
  std::vector<std::uint32_t> refine(const Level& g, const std::vector<std::uint32_t>& comm) {
    const std::size_t n = g.n;
    std::vector<std::uint32_t> refined(n);
    std::iota(refined.begin(), refined.end(), 0u);
    std::vector<double> ref_weight(g.node_weight);
    std::vector<std::uint32_t> ref_size(n, 1);
    std::vector<double> ref_external(n, 0.0);
    std::vector<double> comm_total(n, 0.0);
    for (std::size_t v = 0; v < n; ++v) comm_total[comm[v]] += g.node_weight[v];
    for (std::size_t v = 0; v < n; ++v)
      for (auto i = g.off[v]; i < g.off[v + 1]; ++i)
        if (comm[g.nbr[i]] == comm[v]) ref_external[v] += g.w[i];
    const std::vector<double> node_external = ref_external;

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    shuffle(order, rng_);

    std::vector<double> link(n, 0.0);
    std::vector<char> mark(n, 0);
    std::vector<std::uint32_t> touched;
    std::vector<double> probs;
    for (const std::uint32_t v : order) {
      const double kv = g.node_weight[v];
      const double ks = comm_total[comm[v]];
      if (ref_size[refined[v]] != 1) continue;
      if (node_external[v] < params_.resolution * kv * (ks - kv) / two_m_) continue;

      touched.clear();
      for (auto i = g.off[v]; i < g.off[v + 1]; ++i) {
        const auto u = g.nbr[i];
        if (comm[u] != comm[v]) continue;
        const auto r = refined[u];
        if (!mark[r]) {
          mark[r] = 1;
          touched.push_back(r);
        }
        link[r] += g.w[i];
      }
      const std::uint32_t own = refined[v];
      std::sort(touched.begin(), touched.end());

      // Candidates: v's own (now empty) singleton with gain 0, and every
      // well-connected refined community with non-negative gain.
      std::vector<std::pair<std::uint32_t, double>> cands{{own, 0.0}};
      double max_gain = 0.0;
      for (auto r : touched) {
        if (r == own) continue;
        const double kr = ref_weight[r];
        if (ref_external[r] < params_.resolution * kr * (ks - kr) / two_m_) continue;
        const double gr = gain(link[r], kv, kr);
        if (gr < 0.0) continue;
        cands.emplace_back(r, gr);
        max_gain = std::max(max_gain, gr);
      }
      std::uint32_t chosen = own;
      if (cands.size() > 1) {
        probs.resize(cands.size());
        double total = 0.0;
        for (std::size_t i = 0; i < cands.size(); ++i) {
          probs[i] = std::exp((cands[i].second - max_gain) / params_.randomness);
          total += probs[i];
        }
        double draw = uniform01(rng_) * total;
        chosen = cands.back().first;
        for (std::size_t i = 0; i < cands.size(); ++i) {
          draw -= probs[i];
          if (draw < 0.0) {
            chosen = cands[i].first;
            break;
          }
        }
      }
      if (chosen != own) {
        refined[v] = chosen;
        ref_weight[own] = 0.0;
        ref_size[own] = 0;
        ref_weight[chosen] += kv;
        ++ref_size[chosen];
        ref_external[chosen] += node_external[v] - 2.0 * link[chosen];
      }
      for (auto r : touched) {
        link[r] = 0.0;
        mark[r] = 0;
      }
    }
    return refined;
  }

  static Level aggregate(const Level& g, const std::vector<std::uint32_t>& part, std::size_t count) {
    Level out;
    out.n = count;
    out.node_weight.assign(count, 0.0);
    for (std::size_t v = 0; v < g.n; ++v) out.node_weight[part[v]] += g.node_weight[v];

    std::vector<std::vector<std::size_t>> members(count);
    for (std::size_t v = 0; v < g.n; ++v) members[part[v]].push_back(v);
    out.off.assign(count + 1, 0);
    std::vector<double> link(count, 0.0);
    std::vector<char> mark(count, 0);
    std::vector<std::uint32_t> touched;
    for (std::uint32_t c = 0; c < count; ++c) {
      touched.clear();
      for (auto v : members[c])
        for (auto i = g.off[v]; i < g.off[v + 1]; ++i) {
          const auto d = part[g.nbr[i]];
          if (d == c) continue;
          if (!mark[d]) {
            mark[d] = 1;
            touched.push_back(d);
          }
          link[d] += g.w[i];
        }
      std::sort(touched.begin(), touched.end());
      for (auto d : touched) {
        out.nbr.push_back(d);
        out.w.push_back(link[d]);
        link[d] = 0.0;
        mark[d] = 0;
      }
      out.off[c + 1] = out.nbr.size();
    }
    return out;
  }

  LeidenParams params_;
  double two_m_;
  Rng rng_;
  Level base_;
};

}  // namespace

Partition leiden_partition(const AggregatedGraph& ag, const LeidenParams& params) {
  if (ag.node_count == 0) throw DataError("leiden_partition: empty graph");
  if (!(params.resolution > 0)) throw ConfigError("leiden_partition: resolution must be > 0");
  const UndirectedGraph g = undirected_projection(ag);

  Partition p;
  p.assignment.resize(g.node_count);
  std::iota(p.assignment.begin(), p.assignment.end(), 0u);
  if (!(g.total_weight > 0)) {
    p.community_count = g.node_count;
    p.modularity_score = 0.0;
    return p;
  }

  Leiden leiden(g, params);
  double best_q = modularity(g, p.assignment, params.resolution);
  for (int it = 0; it < params.max_iterations; ++it) {
    auto next = leiden.run(p.assignment);
    const double q = modularity(g, next, params.resolution);
    if (q <= best_q + 1e-12) {
      if (q >= best_q) p.assignment = std::move(next);
      break;
    }
    best_q = q;
    p.assignment = std::move(next);
  }

  // Dense ids in order of each community's smallest node.
  std::vector<std::uint32_t> map(g.node_count, UINT32_MAX);
  std::uint32_t next_id = 0;
  for (auto& c : p.assignment) {
    if (map[c] == UINT32_MAX) map[c] = next_id++;
    c = map[c];
  }
  p.community_count = next_id;
  p.modularity_score = modularity(g, p.assignment, params.resolution);
  return p;
}

}  // namespace txg
