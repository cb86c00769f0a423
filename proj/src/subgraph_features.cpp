#include "txg/subgraph_features.hpp"

#include "txg/binary_io.hpp"
#include "txg/parallel.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <semaphore>

namespace txg {

EdgeSlice induced_subgraph(const MultiGraph& g, std::span<const NodeId> members) {
  EdgeSlice s;
  s.members.assign(members.begin(), members.end());
  std::sort(s.members.begin(), s.members.end());
  s.members.erase(std::unique(s.members.begin(), s.members.end()), s.members.end());
  for (NodeId v : s.members) {
    if (v >= g.node_count) throw DataError("induced_subgraph: unknown node " + std::to_string(v));
    for (std::size_t e = g.out_begin(v); e < g.out_end(v); ++e) {
      if (!std::binary_search(s.members.begin(), s.members.end(), g.target[e])) continue;
      s.source.push_back(v);
      s.target.push_back(g.target[e]);
      s.amount.push_back(g.amount[e]);
      s.timestamp.push_back(g.timestamp[e]);
    }
  }
  return s;
}

namespace {

std::uint32_t local_index(const EdgeSlice& s, NodeId v) {
  return static_cast<std::uint32_t>(std::lower_bound(s.members.begin(), s.members.end(), v) - s.members.begin());
}

// Undirected simple projection in local indices.
std::vector<std::vector<std::uint32_t>> undirected_adjacency(const EdgeSlice& s) {
  std::vector<std::vector<std::uint32_t>> adj(s.members.size());
  for (std::size_t e = 0; e < s.edge_count(); ++e) {
    const auto a = local_index(s, s.source[e]);
    const auto b = local_index(s, s.target[e]);
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& row : adj) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }
  return adj;
}

// BFS distances from `src`; returns (farthest node, eccentricity).
std::pair<std::uint32_t, int> bfs_farthest(const std::vector<std::vector<std::uint32_t>>& adj, std::uint32_t src,
                                           std::vector<int>& dist, std::vector<std::uint32_t>& queue) {
  std::fill(dist.begin(), dist.end(), -1);
  queue.clear();
  queue.push_back(src);
  dist[src] = 0;
  std::uint32_t far = src;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const auto u = queue[head];
    if (dist[u] > dist[far] || (dist[u] == dist[far] && u < far)) far = u;
    for (auto v : adj[u])
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
  }
  return {far, dist[far]};
}

}  // namespace

DegreeStats degree_stats(const EdgeSlice& s) {
  const std::size_t n = s.members.size();
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  pairs.reserve(s.edge_count());
  for (std::size_t e = 0; e < s.edge_count(); ++e)
    pairs.emplace_back(local_index(s, s.source[e]), local_index(s, s.target[e]));
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  Eigen::VectorXd in = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (auto [a, b] : pairs) {
    out[a] += 1;
    in[b] += 1;
  }
  Eigen::VectorXd total = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  const auto adj = undirected_adjacency(s);
  for (std::size_t v = 0; v < n; ++v) total[static_cast<Eigen::Index>(v)] = static_cast<double>(adj[v].size());
  return {summarize(in), summarize(out), summarize(total)};
}

Diameter diameter(const EdgeSlice& s, std::size_t exact_node_cap) {
  Diameter d;
  if (s.edge_count() == 0) return d;
  const auto adj = undirected_adjacency(s);
  const std::size_t n = adj.size();
  std::vector<int> dist(n);
  std::vector<std::uint32_t> queue;
  if (n <= exact_node_cap) {
    for (std::uint32_t v = 0; v < n; ++v) d.value = std::max(d.value, bfs_farthest(adj, v, dist, queue).second);
    return d;
  }
  // Double sweep per component: a lower bound on each component's diameter.
  d.approximate = true;
  std::vector<char> done(n, 0);
  for (std::uint32_t v = 0; v < n; ++v) {
    if (done[v]) continue;
    const auto [far, _] = bfs_farthest(adj, v, dist, queue);
    for (auto u : queue) done[u] = 1;
    d.value = std::max(d.value, bfs_farthest(adj, far, dist, queue).second);
  }
  return d;
}

std::optional<double> assortativity(const EdgeSlice& s) {
  const auto adj = undirected_adjacency(s);
  CompensatedSum<double> sx, sxx, sxy;
  std::size_t count = 0;
  for (std::uint32_t u = 0; u < adj.size(); ++u)
    for (auto v : adj[u]) {
      const double x = static_cast<double>(adj[u].size());
      const double y = static_cast<double>(adj[v].size());
      sx.add(x);
      sxx.add(x * x);
      sxy.add(x * y);
      ++count;
    }
  if (count == 0) return std::nullopt;
  // Both orientations are present, so the x and y marginals coincide.
  const double n = static_cast<double>(count);
  const double mean = sx.value() / n;
  const double var = sxx.value() / n - mean * mean;
  if (var <= 1e-12 * std::max(1.0, mean * mean)) return std::nullopt;
  const double cov = sxy.value() / n - mean * mean;
  return std::clamp(cov / var, -1.0, 1.0);
}

Biconnectivity biconnected_components(const EdgeSlice& s) {
  const auto adj = undirected_adjacency(s);
  const std::size_t n = adj.size();
  Biconnectivity out;
  std::vector<int> disc(n, -1), low(n, 0);
  std::vector<char> is_ap(n, 0);
  int clock = 0;

  struct Frame {
    std::uint32_t v;
    std::uint32_t parent;
    std::size_t next;
  };
  std::vector<Frame> stack;
  for (std::uint32_t root = 0; root < n; ++root) {
    if (disc[root] >= 0) continue;
    std::size_t root_children = 0;
    disc[root] = low[root] = clock++;
    stack.push_back({root, UINT32_MAX, 0});
    while (!stack.empty()) {
      auto& f = stack.back();
      if (f.next < adj[f.v].size()) {
        const auto w = adj[f.v][f.next++];
        if (w == f.parent) continue;
        if (disc[w] >= 0) {
          low[f.v] = std::min(low[f.v], disc[w]);
        } else {
          disc[w] = low[w] = clock++;
          stack.push_back({w, f.v, 0});
        }
        continue;
      }
      const Frame done = f;
      stack.pop_back();
      if (stack.empty()) break;
      auto& p = stack.back();
      low[p.v] = std::min(low[p.v], low[done.v]);
      if (low[done.v] >= disc[p.v]) {
        ++out.components;
        if (p.v == root)
          ++root_children;
        else
          is_ap[p.v] = 1;
      }
    }
    if (root_children >= 2) is_ap[root] = 1;
  }
  out.articulation_points = static_cast<std::size_t>(std::count(is_ap.begin(), is_ap.end(), 1));
  return out;
}

Turnover turnover(const EdgeSlice& s, const MultiGraph& g) {
  Turnover t;
  std::vector<std::size_t> order(s.edge_count());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(s.source[a], s.target[a]) < std::tie(s.source[b], s.target[b]);
  });
  std::vector<double> pair_amounts;
  CompensatedSum<double> internal;
  for (std::size_t i = 0; i < order.size();) {
    const auto key = std::tie(s.source[order[i]], s.target[order[i]]);
    CompensatedSum<double> pair;
    for (; i < order.size() && std::tie(s.source[order[i]], s.target[order[i]]) == key; ++i) {
      pair.add(s.amount[order[i]]);
      internal.add(s.amount[order[i]]);
    }
    pair_amounts.push_back(pair.value());
  }
  t.edge_amount = summarize(pair_amounts);
  t.internal_volume = internal.value();

  CompensatedSum<double> in, out;
  auto member = [&](NodeId v) { return std::binary_search(s.members.begin(), s.members.end(), v); };
  for (NodeId v : s.members) {
    for (std::size_t e = g.out_begin(v); e < g.out_end(v); ++e)
      if (!member(g.target[e])) out.add(g.amount[e]);
    for (std::size_t e : g.in_edges(v))
      if (!member(g.source[e])) in.add(g.amount[e]);
  }
  t.boundary_in = in.value();
  t.boundary_out = out.value();
  t.boundary_turnover = std::abs(t.boundary_in - t.boundary_out);
  return t;
}

TimeFeatures weighted_time_features(const EdgeSlice& s, Timestamp global_min) {
  const auto n = static_cast<Eigen::Index>(s.edge_count());
  Eigen::VectorXd chi(n);
  for (Eigen::Index i = 0; i < n; ++i) chi[i] = static_cast<double>(s.timestamp[static_cast<std::size_t>(i)] - global_min);
  const Eigen::Map<const Eigen::VectorXd> amounts(s.amount.data(), n);
  return weighted_time_stats(amounts, chi);
}

const std::vector<std::string>& CommunityFeatures::names() {
  static const std::vector<std::string> n = [] {
    std::vector<std::string> v{"member_count", "edge_count",    "pair_count", "n_dispenser",
                               "n_passthrough", "n_sink",       "n_mixed",    "n_inactive"};
    for (const char* d : {"in_deg", "out_deg", "total_deg"})
      for (const char* s : {"min", "max", "mean", "std"}) v.push_back(std::string(d) + "_" + s);
    for (const char* x : {"diameter", "diameter_approx", "assortativity", "biconnected_components",
                          "articulation_points", "edge_amount_min", "edge_amount_max", "edge_amount_mean",
                          "edge_amount_sum", "internal_volume", "boundary_in", "boundary_out", "boundary_turnover",
                          "time_weighted_mean", "time_weighted_std", "time_weighted_median", "time_unweighted"})
      v.emplace_back(x);
    return v;
  }();
  return n;
}

void CommunityFeatures::write_row(std::span<double> o) const {
  std::size_t i = 0;
  auto put = [&](double x) { o[i++] = x; };
  put(static_cast<double>(member_count));
  put(static_cast<double>(edge_count));
  put(static_cast<double>(pair_count));
  for (auto c : type_counts) put(static_cast<double>(c));
  for (const Summary* s : {&degrees.in, &degrees.out, &degrees.total}) {
    put(s->min);
    put(s->max);
    put(s->mean);
    put(s->std);
  }
  put(diam.value);
  put(diam.approximate ? 1.0 : 0.0);
  put(assort ? *assort : kMissing);
  put(static_cast<double>(bicon.components));
  put(static_cast<double>(bicon.articulation_points));
  put(turn.edge_amount.min);
  put(turn.edge_amount.max);
  put(turn.edge_amount.mean);
  put(turn.edge_amount.sum);
  put(turn.internal_volume);
  put(turn.boundary_in);
  put(turn.boundary_out);
  put(turn.boundary_turnover);
  put(time.mean);
  put(time.std);
  put(time.median);
  put(time.unweighted_fallback ? 1.0 : 0.0);
}

namespace {

CommunityFeatures features_from_row(const CommunityKey& key, std::span<const double> r) {
  CommunityFeatures f;
  f.key = key;
  std::size_t i = 0;
  auto get = [&] { return r[i++]; };
  auto count = [&] { return static_cast<std::size_t>(get()); };
  f.member_count = count();
  f.edge_count = count();
  f.pair_count = count();
  for (auto& c : f.type_counts) c = count();
  for (Summary* s : {&f.degrees.in, &f.degrees.out, &f.degrees.total}) {
    s->min = get();
    s->max = get();
    s->mean = get();
    s->std = get();
  }
  f.diam.value = static_cast<int>(get());
  f.diam.approximate = get() != 0.0;
  const double a = get();
  if (!is_missing(a)) f.assort = a;
  f.bicon.components = count();
  f.bicon.articulation_points = count();
  f.turn.edge_amount.min = get();
  f.turn.edge_amount.max = get();
  f.turn.edge_amount.mean = get();
  f.turn.edge_amount.sum = get();
  f.turn.internal_volume = get();
  f.turn.boundary_in = get();
  f.turn.boundary_out = get();
  f.turn.boundary_turnover = get();
  f.time.mean = get();
  f.time.std = get();
  f.time.median = get();
  f.time.unweighted_fallback = get() != 0.0;
  return f;
}

}  // namespace

CommunityFeatures community_features(const EdgeSlice& s, const CommunityKey& key, const MultiGraph& g,
                                     std::span<const AccountType> types, std::size_t exact_diameter_cap) {
  CommunityFeatures f;
  f.key = key;
  f.member_count = s.members.size();
  f.edge_count = s.edge_count();
  for (NodeId v : s.members) ++f.type_counts[static_cast<std::size_t>(types[v])];
  f.degrees = degree_stats(s);
  f.diam = diameter(s, exact_diameter_cap);
  f.assort = assortativity(s);
  f.bicon = biconnected_components(s);
  f.turn = turnover(s, g);
  f.pair_count = 0;
  {
    std::vector<std::pair<NodeId, NodeId>> pairs;
    for (std::size_t e = 0; e < s.edge_count(); ++e) pairs.emplace_back(s.source[e], s.target[e]);
    std::sort(pairs.begin(), pairs.end());
    f.pair_count = static_cast<std::size_t>(std::unique(pairs.begin(), pairs.end()) - pairs.begin());
  }
  if (s.edge_count() == 0) {
    f.time.mean = f.time.std = f.time.median = kMissing;
  } else {
    f.time = weighted_time_features(s, g.min_timestamp);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Spill store

SpillStore::SpillStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  std::ofstream(dir_ / "slices.bin", std::ios::binary | std::ios::trunc);
}

std::vector<char> SpillStore::encode(const EdgeSlice& s) {
  io::Writer w;
  w.array(s.members);
  w.array(s.source);
  w.array(s.target);
  w.array(s.amount);
  w.array(s.timestamp);
  return w.release();
}

EdgeSlice SpillStore::decode(std::span<const char> bytes) {
  io::Reader r(bytes);
  EdgeSlice s;
  s.members = r.array<NodeId>();
  s.source = r.array<NodeId>();
  s.target = r.array<NodeId>();
  s.amount = r.array<double>();
  s.timestamp = r.array<Timestamp>();
  return s;
}

void SpillStore::append(const CommunityKey& key, const EdgeSlice& slice) {
  const auto bytes = encode(slice);
  std::ofstream out(dir_ / "slices.bin", std::ios::binary | std::ios::app);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("spill store: write failed in " + dir_.string());
  entries_.push_back({key, written_, bytes.size()});
  written_ += bytes.size();
}

void SpillStore::finish() {
  io::Writer w;
  w.magic("TXGS", 1);
  w.pod<std::uint64_t>(entries_.size());
  for (const auto& e : entries_) {
    w.pod(static_cast<std::uint8_t>(e.key.type));
    w.pod<std::uint64_t>(e.key.id);
    w.pod(e.offset);
    w.pod(e.length);
  }
  io::write_file(dir_ / "manifest.bin", w.bytes());
}

SpillStore SpillStore::open(const std::filesystem::path& dir) {
  const auto bytes = io::read_file(dir / "manifest.bin");
  io::Reader r(bytes);
  if (r.magic("TXGS") != 1) throw DataError("unsupported spill manifest version");
  SpillStore s;
  s.dir_ = dir;
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    Entry e;
    e.key.type = static_cast<CommunityType>(r.pod<std::uint8_t>());
    e.key.id = r.pod<std::uint64_t>();
    e.offset = r.pod<std::uint64_t>();
    e.length = r.pod<std::uint64_t>();
    s.entries_.push_back(e);
  }
  return s;
}

EdgeSlice SpillStore::read(std::size_t index) const {
  const auto& e = entries_.at(index);
  std::ifstream in(dir_ / "slices.bin", std::ios::binary);
  if (!in) throw DataError("spill store: cannot open slices in " + dir_.string());
  in.seekg(static_cast<std::streamoff>(e.offset));
  std::vector<char> bytes(e.length);
  in.read(bytes.data(), static_cast<std::streamsize>(e.length));
  if (!in) throw DataError("spill store: truncated slice file");
  return decode(bytes);
}

// ---------------------------------------------------------------------------
// Parallel map

const CommunityFeatures* CommunityFeatureTable::find(const CommunityKey& key) const {
  auto it = std::lower_bound(rows.begin(), rows.end(), key,
                             [](const CommunityFeatures& f, const CommunityKey& k) { return f.key < k; });
  return it != rows.end() && it->key == key ? &*it : nullptr;
}

CommunityFeatureTable parallel_feature_map(const MembershipTable& table, const MultiGraph& g,
                                           std::span<const AccountType> types, const FeatureMapParams& params) {
  if (params.workers < 1) throw ConfigError("parallel_feature_map: workers must be >= 1");
  if (types.size() != g.node_count) throw ConfigError("parallel_feature_map: account types size mismatch");

  // Group rows by community key.
  std::vector<std::size_t> order(table.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return table.community[a] < table.community[b]; });
  std::vector<CommunityKey> keys;
  std::vector<std::vector<NodeId>> members;
  for (std::size_t i : order) {
    if (keys.empty() || keys.back() != table.community[i]) {
      keys.push_back(table.community[i]);
      members.emplace_back();
    }
    const NodeId v = table.node[i];
    if (v >= g.node_count)
      throw DataError("community " + std::string(community_type_name(keys.back().type)) + ":" +
                      std::to_string(keys.back().id) + " references unknown node " + std::to_string(v));
    members.back().push_back(v);
  }

  // Upper bound on slice bytes: every member's out-edges.
  std::size_t estimate = 0;
  for (const auto& m : members)
    for (NodeId v : m) estimate += g.out_degree(v) * 32 + 4;

  CommunityFeatureTable result;
  result.rows.resize(keys.size());
  if (estimate <= params.memory_budget_bytes) {
    parallel_for(keys.size(), params.workers, [&](std::size_t i) {
      const EdgeSlice s = induced_subgraph(g, members[i]);
      result.rows[i] = community_features(s, keys[i], g, types, params.exact_diameter_cap);
    });
    return result;
  }

  if (params.spill_dir.empty()) throw ConfigError("parallel_feature_map: slices exceed memory budget and no spill dir");
  result.spilled = true;
  SpillStore store(params.spill_dir);
  // Materialize in bounded batches, then map over the stored slices.
  const std::size_t batch = std::max<std::size_t>(1, params.workers * 64);
  for (std::size_t b = 0; b < keys.size(); b += batch) {
    const std::size_t e = std::min(keys.size(), b + batch);
    auto slices = parallel_map<EdgeSlice>(e - b, params.workers,
                                          [&](std::size_t i) { return induced_subgraph(g, members[b + i]); });
    for (std::size_t i = 0; i < slices.size(); ++i) store.append(keys[b + i], slices[i]);
  }
  store.finish();
  const SpillStore reader = SpillStore::open(params.spill_dir);
  std::counting_semaphore<1024> readers(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(params.max_spill_readers, 1, 1024)));
  parallel_for(keys.size(), params.workers, [&](std::size_t i) {
    readers.acquire();
    EdgeSlice s;
    try {
      s = reader.read(i);
    } catch (...) {
      readers.release();
      throw;
    }
    readers.release();
    result.rows[i] = community_features(s, keys[i], g, types, params.exact_diameter_cap);
  });
  return result;
}

void write_community_features_csv(const CommunityFeatureTable& t, std::ostream& out) {
  out << "community_id,type";
  for (const auto& n : CommunityFeatures::names()) out << ',' << n;
  out << '\n';
  std::vector<double> row(CommunityFeatures::names().size());
  char buf[64];
  for (const auto& f : t.rows) {
    f.write_row(row);
    out << f.key.id << ',' << community_type_name(f.key.type);
    for (double x : row) {
      if (is_missing(x)) {
        out << ',';
      } else {
        std::snprintf(buf, sizeof buf, ",%.17g", x);
        out << buf;
      }
    }
    out << '\n';
  }
}

std::vector<char> serialize_community_features(const CommunityFeatureTable& t) {
  io::Writer w;
  w.magic("TXGQ", 1);
  w.pod<std::uint8_t>(t.spilled ? 1 : 0);
  const std::size_t cols = CommunityFeatures::names().size();
  MatrixXdr m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols));
  std::vector<std::uint8_t> types;
  std::vector<std::uint64_t> ids;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    t.rows[i].write_row(std::span<double>(m.row(static_cast<Eigen::Index>(i)).data(), cols));
    types.push_back(static_cast<std::uint8_t>(t.rows[i].key.type));
    ids.push_back(t.rows[i].key.id);
  }
  w.array(types);
  w.array(ids);
  w.matrix(m);
  return w.release();
}

CommunityFeatureTable deserialize_community_features(std::span<const char> bytes) {
  io::Reader r(bytes);
  if (r.magic("TXGQ") != 1) throw DataError("unsupported community feature cache version");
  CommunityFeatureTable t;
  t.spilled = r.pod<std::uint8_t>() != 0;
  const auto types = r.array<std::uint8_t>();
  const auto ids = r.array<std::uint64_t>();
  const MatrixXdr m = r.matrix();
  if (static_cast<std::size_t>(m.cols()) != CommunityFeatures::names().size())
    throw DataError("community feature cache: column count mismatch");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const CommunityKey key{static_cast<CommunityType>(types[i]), ids[i]};
    t.rows.push_back(features_from_row(
        key, std::span<const double>(m.row(static_cast<Eigen::Index>(i)).data(), static_cast<std::size_t>(m.cols()))));
  }
  return t;
}

}  // namespace txg
