#include "txg/anomaly.hpp"

#include "txg/binary_io.hpp"
#include "txg/parallel.hpp"
#include "txg/random.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace txg {

double average_path_length(std::size_t n) {
  if (n <= 1) return 0.0;
  double harmonic = 0.0;
  for (std::size_t i = n - 1; i >= 1; --i) harmonic += 1.0 / static_cast<double>(i);
  const double m = static_cast<double>(n);
  return 2.0 * harmonic - 2.0 * (m - 1.0) / m;
}

namespace {

class TreeBuilder {
 public:
  TreeBuilder(const MatrixXdr& x, Rng& rng, int height_limit) : x_(x), rng_(rng), limit_(height_limit) {}

  IsolationForest::Tree build(std::vector<std::size_t> rows) {
    tree_.clear();
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  std::uint32_t grow(std::span<std::size_t> rows, int depth) {
    const auto id = static_cast<std::uint32_t>(tree_.size());
    tree_.push_back({});
    tree_[id].size = static_cast<std::uint32_t>(rows.size());
    if (depth >= limit_ || rows.size() <= 1) return id;

    // Candidate features: those with two distinct observed values in this node.
    std::vector<std::pair<std::int32_t, std::pair<double, double>>> candidates;
    for (Eigen::Index f = 0; f < x_.cols(); ++f) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (auto r : rows) {
        const double v = x_(static_cast<Eigen::Index>(r), f);
        if (is_missing(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (lo < hi) candidates.push_back({static_cast<std::int32_t>(f), {lo, hi}});
    }
    if (candidates.empty()) return id;

    const auto& [feature, range] = candidates[uniform_index(rng_, candidates.size())];
    double threshold = range.first + uniform01(rng_) * (range.second - range.first);
    if (!(threshold > range.first)) threshold = std::nextafter(range.first, range.second);

    auto goes_left = [&](std::size_t r) { return x_(static_cast<Eigen::Index>(r), feature) < threshold; };
    std::size_t left_mass = 0, right_mass = 0;
    for (auto r : rows) {
      const double v = x_(static_cast<Eigen::Index>(r), feature);
      if (is_missing(v)) continue;
      (goes_left(r) ? left_mass : right_mass) += 1;
    }
    const bool missing_left = left_mass >= right_mass;
    auto mid = std::stable_partition(rows.begin(), rows.end(), [&](std::size_t r) {
      const double v = x_(static_cast<Eigen::Index>(r), feature);
      return is_missing(v) ? missing_left : v < threshold;
    });
    const auto split = static_cast<std::size_t>(mid - rows.begin());

    const auto left = grow(rows.subspan(0, split), depth + 1);
    const auto right = grow(rows.subspan(split), depth + 1);
    auto& node = tree_[id];
    node.feature = feature;
    node.threshold = threshold;
    node.left = left;
    node.right = right;
    node.missing_left = missing_left ? 1 : 0;
    return id;
  }

  const MatrixXdr& x_;
  Rng& rng_;
  int limit_;
  IsolationForest::Tree tree_;
};

}  // namespace

IsolationForest IsolationForest::fit(const MatrixXdr& x, const IsolationForestParams& params, std::size_t workers) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < 2) throw DataError("isolation forest needs at least 2 rows");
  if (params.trees < 1) throw ConfigError("isolation forest needs at least 1 tree");
  if (params.sample_size < 2) throw ConfigError("isolation forest sample_size must be >= 2");

  IsolationForest forest;
  forest.columns_ = static_cast<std::size_t>(x.cols());
  forest.sample_size_ = std::min(params.sample_size, n);
  const int limit = static_cast<int>(std::ceil(std::log2(static_cast<double>(forest.sample_size_))));

  forest.trees_ = parallel_map<Tree>(params.trees, workers, [&](std::size_t t) {
    Rng rng(derive_seed(params.seed, t));
    // Partial Fisher-Yates: first sample_size entries are a uniform sample.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < forest.sample_size_; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
    idx.resize(forest.sample_size_);
    std::sort(idx.begin(), idx.end());
    return TreeBuilder(x, rng, limit).build(std::move(idx));
  });
  return forest;
}

double IsolationForest::path_length(std::size_t tree, std::span<const double> row) const {
  const auto& nodes = trees_.at(tree);
  std::uint32_t id = 0;
  int depth = 0;
  while (nodes[id].feature >= 0) {
    const auto& nd = nodes[id];
    const double v = row[static_cast<std::size_t>(nd.feature)];
    const bool left = is_missing(v) ? nd.missing_left != 0 : v < nd.threshold;
    id = left ? nd.left : nd.right;
    ++depth;
  }
  return depth + average_path_length(nodes[id].size);
}

Eigen::VectorXd IsolationForest::score(const MatrixXdr& x, std::size_t workers) const {
  if (static_cast<std::size_t>(x.cols()) != columns_)
    throw DataError("isolation forest: expected " + std::to_string(columns_) + " columns, got " +
                    std::to_string(x.cols()));
  const double c = average_path_length(sample_size_);
  Eigen::VectorXd s(x.rows());
  parallel_for(static_cast<std::size_t>(x.rows()), workers, [&](std::size_t r) {
    const std::span<const double> row(x.row(static_cast<Eigen::Index>(r)).data(), columns_);
    CompensatedSum<double> total;
    for (std::size_t t = 0; t < trees_.size(); ++t) total.add(path_length(t, row));
    const double mean = total.value() / static_cast<double>(trees_.size());
    s[static_cast<Eigen::Index>(r)] = std::clamp(c > 0 ? std::exp2(-mean / c) : 0.5, 0.0, 1.0);
  });
  return s;
}

std::vector<char> IsolationForest::save() const {
  io::Writer w;
  w.magic("TXGI", 1);
  w.pod<std::uint64_t>(columns_);
  w.pod<std::uint64_t>(sample_size_);
  w.pod<std::uint64_t>(trees_.size());
  for (const auto& t : trees_) {
    w.pod<std::uint64_t>(t.size());
    for (const auto& n : t) {
      w.pod(n.feature);
      w.pod(n.threshold);
      w.pod(n.left);
      w.pod(n.right);
      w.pod(n.size);
      w.pod(n.missing_left);
    }
  }
  return w.release();
}

IsolationForest IsolationForest::load(std::span<const char> bytes) {
  io::Reader r(bytes);
  if (r.magic("TXGI") != 1) throw DataError("unsupported isolation forest version");
  IsolationForest f;
  f.columns_ = r.pod<std::uint64_t>();
  f.sample_size_ = r.pod<std::uint64_t>();
  f.trees_.resize(r.pod<std::uint64_t>());
  for (auto& t : f.trees_) {
    t.resize(r.pod<std::uint64_t>());
    for (auto& n : t) {
      n.feature = r.pod<std::int32_t>();
      n.threshold = r.pod<double>();
      n.left = r.pod<std::uint32_t>();
      n.right = r.pod<std::uint32_t>();
      n.size = r.pod<std::uint32_t>();
      n.missing_left = r.pod<std::uint8_t>();
      if (n.feature >= static_cast<std::int64_t>(f.columns_) || n.left >= t.size() || n.right >= t.size())
        throw DataError("isolation forest file is corrupt");
    }
  }
  return f;
}

bool IsolationForest::operator==(const IsolationForest& o) const {
  if (columns_ != o.columns_ || sample_size_ != o.sample_size_ || trees_.size() != o.trees_.size()) return false;
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    if (trees_[t].size() != o.trees_[t].size()) return false;
    for (std::size_t i = 0; i < trees_[t].size(); ++i) {
      const auto& a = trees_[t][i];
      const auto& b = o.trees_[t][i];
      if (a.feature != b.feature || a.threshold != b.threshold || a.left != b.left || a.right != b.right ||
          a.size != b.size || a.missing_left != b.missing_left)
        return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Node features

NodeFeatures assemble_node_features(const NodeFeatureInputs& in) {
  if (!in.graph || !in.partition || !in.community_features || !in.flows || !in.temporal_flows)
    throw ConfigError("assemble_node_features: missing input");
  const auto& ag = *in.graph;
  const std::size_t n = ag.node_count;
  if (in.partition->assignment.size() != n || in.types.size() != n)
    throw DataError("assemble_node_features: inputs disagree on node count");
  for (const FlowTable* t : {in.flows, in.temporal_flows}) {
    if (t->nodes.size() != n) throw DataError("assemble_node_features: flow table must cover every node");
    for (std::size_t v = 0; v < n; ++v)
      if (t->nodes[v] != v) throw DataError("assemble_node_features: flow table not in node order");
  }

  NodeFeatures out;
  const auto& cf_names = CommunityFeatures::names();
  for (const char* prefix : {"ego_", "leiden_"})
    for (const auto& c : cf_names) {
      out.names.push_back(prefix + c);
      out.groups.push_back(prefix[0] == 'e' ? "random_walk" : "modularity");
    }
  const int hops = in.flows->hops;
  for (const char* table : {"flow_", "tflow_"}) {
    for (const char* profile : {"dispenser", "passthrough", "sink"})
      for (int h = 1; h <= hops; ++h)
        for (const char* stat : {"reached", "sum", "max", "mean"})
          out.names.push_back(std::string(table) + profile + "_h" + std::to_string(h) + "_" + stat);
    out.names.push_back(std::string(table) + "passthrough_ratio");
  }
  for (const char* x : {"sent", "received", "out_degree", "in_degree", "type_dispenser", "type_passthrough",
                        "type_sink", "type_mixed", "type_inactive"})
    out.names.emplace_back(x);
  out.groups.resize(out.names.size(), "flows");

  const std::size_t cols = out.names.size();
  const std::size_t block = cf_names.size();
  out.nodes.resize(n);
  std::iota(out.nodes.begin(), out.nodes.end(), NodeId{0});
  out.values = MatrixXdr::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols), kMissing);

  std::vector<const EgoCommunity*> ego_of(n, nullptr);
  for (const auto& e : in.egos) {
    if (e.seed >= n) throw DataError("assemble_node_features: ego seed out of range");
    ego_of[e.seed] = &e;
  }

  for (std::size_t v = 0; v < n; ++v) {
    double* row = out.values.row(static_cast<Eigen::Index>(v)).data();
    if (ego_of[v]) {
      const auto* f = in.community_features->find({CommunityType::Ego, v});
      if (!f) throw DataError("missing features for ego community " + std::to_string(v));
      f->write_row({row, block});
    }
    {
      const auto c = in.partition->assignment[v];
      const auto* f = in.community_features->find({CommunityType::Leiden, c});
      if (!f) throw DataError("missing features for leiden community " + std::to_string(c));
      f->write_row({row + block, block});
    }
    std::size_t k = 2 * block;
    for (const FlowTable* t : {in.flows, in.temporal_flows}) {
      for (const auto* profiles : {&t->dispenser, &t->passthrough, &t->sink})
        for (const auto& h : (*profiles)[v].per_hop) {
          row[k++] = static_cast<double>(h.reached);
          row[k++] = h.sum;
          row[k++] = h.max;
          row[k++] = h.mean;
        }
      row[k++] = t->passthrough[v].passthrough_ratio;
    }
    row[k++] = ag.sent[v];
    row[k++] = ag.received[v];
    row[k++] = static_cast<double>(ag.out_degree(static_cast<NodeId>(v)));
    row[k++] = static_cast<double>(ag.in_degree(static_cast<NodeId>(v)));
    for (int t = 0; t < 5; ++t) row[k++] = static_cast<int>(in.types[v]) == t ? 1.0 : 0.0;
    if (k != cols) throw Error("assemble_node_features: column bookkeeping mismatch");
  }
  return out;
}

const std::vector<std::string>& InteractionFeatures::names() {
  static const std::vector<std::string> n{"src_score", "tgt_score", "score_product",
                                          "score_max", "score_min", "score_abs_diff"};
  return n;
}

InteractionFeatures interaction_features(const Eigen::VectorXd& scores, std::span<const NodeId> sources,
                                         std::span<const NodeId> targets) {
  if (sources.size() != targets.size()) throw DataError("interaction_features: endpoint columns differ in length");
  std::vector<double> known;
  for (Eigen::Index i = 0; i < scores.size(); ++i)
    if (!is_missing(scores[i])) known.push_back(scores[i]);
  double median = 0.5;
  if (!known.empty()) {
    std::sort(known.begin(), known.end());
    const std::size_t m = known.size() / 2;
    median = known.size() % 2 ? known[m] : 0.5 * (known[m - 1] + known[m]);
  }

  InteractionFeatures f;
  const auto rows = static_cast<Eigen::Index>(sources.size());
  f.values.resize(rows, 6);
  f.imputed = Eigen::VectorXd::Zero(rows);
  auto lookup = [&](NodeId v, Eigen::Index r) {
    if (static_cast<Eigen::Index>(v) < scores.size() && !is_missing(scores[v])) return scores[v];
    f.imputed[r] = 1.0;
    return median;
  };
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double s = lookup(sources[static_cast<std::size_t>(r)], r);
    const double t = lookup(targets[static_cast<std::size_t>(r)], r);
    f.values.row(r) << s, t, s * t, std::max(s, t), std::min(s, t), std::abs(s - t);
  }
  return f;
}

void write_scores_csv(const Eigen::VectorXd& scores, std::ostream& out, const IdMap* ids) {
  out << "node,score\n";
  char buf[64];
  for (Eigen::Index v = 0; v < scores.size(); ++v) {
    std::snprintf(buf, sizeof buf, "%.17g", scores[v]);
    if (ids)
      out << ids->name(static_cast<NodeId>(v));
    else
      out << v;
    out << ',' << buf << '\n';
  }
}

std::vector<char> serialize_node_features(const NodeFeatures& f, const Eigen::VectorXd& scores) {
  io::Writer w;
  w.magic("TXGN", 1);
  w.pod<std::uint64_t>(f.names.size());
  for (std::size_t i = 0; i < f.names.size(); ++i) {
    w.string(f.names[i]);
    w.string(f.groups[i]);
  }
  w.array(f.nodes);
  w.matrix(f.values);
  w.array(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())));
  return w.release();
}

std::pair<NodeFeatures, Eigen::VectorXd> deserialize_node_features(std::span<const char> bytes) {
  io::Reader r(bytes);
  if (r.magic("TXGN") != 1) throw DataError("unsupported node feature cache version");
  NodeFeatures f;
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    f.names.push_back(r.string());
    f.groups.push_back(r.string());
  }
  f.nodes = r.array<NodeId>();
  f.values = r.matrix();
  const auto s = r.array<double>();
  return {std::move(f), Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()))};
}

}  // namespace txg
