#include "txg/model.hpp"

#include "txg/binary_io.hpp"
#include "txg/parallel.hpp"
#include "txg/random.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <unordered_map>

namespace txg {

std::string_view feature_group_name(FeatureGroup g) {
  switch (g) {
    case FeatureGroup::Transaction: return "transaction";
    case FeatureGroup::RandomWalk: return "random_walk";
    case FeatureGroup::Modularity: return "modularity";
    case FeatureGroup::Flows: return "flows";
    case FeatureGroup::Anomaly: return "anomaly";
  }
  return "?";
}

FeatureGroup parse_feature_group(std::string_view name) {
  for (int g = 0; g < 5; ++g)
    if (feature_group_name(static_cast<FeatureGroup>(g)) == name) return static_cast<FeatureGroup>(g);
  throw ConfigError("unknown feature group '" + std::string(name) +
                    "' (expected transaction, random_walk, modularity, flows or anomaly)");
}

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

MatrixXdr take_rows(const MatrixXdr& m, std::span<const std::size_t> rows) {
  MatrixXdr out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

template <typename T>
std::vector<T> take(const std::vector<T>& v, std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(v[r]);
  return out;
}

double column_median(const MatrixXdr& m, Eigen::Index c) {
  std::vector<double> v;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    if (!is_missing(m(r, c))) v.push_back(m(r, c));
  if (v.empty()) return kMissing;
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

double sigmoid(double m) { return 1.0 / (1.0 + std::exp(-m)); }

}  // namespace

// ---------------------------------------------------------------------------
// Feature matrix

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> rows) const {
  FeatureMatrix out;
  out.names = names;
  out.groups = groups;
  out.base_columns = base_columns;
  out.node_columns = node_columns;
  out.values = take_rows(values, rows);
  out.tx_id = take(tx_id, rows);
  out.label = take(label, rows);
  return out;
}

FeatureMatrix FeatureMatrix::select_groups(std::span<const FeatureGroup> keep) const {
  std::vector<Eigen::Index> cols;
  for (std::size_t c = 0; c < names.size(); ++c)
    if (std::find(keep.begin(), keep.end(), groups[c]) != keep.end()) cols.push_back(static_cast<Eigen::Index>(c));
  FeatureMatrix out;
  out.tx_id = tx_id;
  out.label = label;
  out.values.resize(values.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.values.col(static_cast<Eigen::Index>(j)) = values.col(cols[j]);
    out.names.push_back(names[static_cast<std::size_t>(cols[j])]);
    out.groups.push_back(groups[static_cast<std::size_t>(cols[j])]);
    const auto c = static_cast<std::size_t>(cols[j]);
    if (c < base_columns) ++out.base_columns;
  }
  out.node_columns = 0;
  for (std::size_t j = 0; j < out.names.size(); ++j)
    if (out.names[j].rfind("src_", 0) == 0 && out.names[j] != "src_unseen" && out.names[j] != "src_score")
      ++out.node_columns;
  return out;
}

bool FeatureMatrix::operator==(const FeatureMatrix& o) const {
  if (names != o.names || groups != o.groups || tx_id != o.tx_id || label != o.label ||
      base_columns != o.base_columns || node_columns != o.node_columns || values.rows() != o.values.rows() ||
      values.cols() != o.values.cols())
    return false;
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (!same_bits(values.data()[i], o.values.data()[i])) return false;
  return true;
}

FeatureMatrix assemble_features(const Dataset& d, const NodeFeatures& nf, const Eigen::VectorXd& scores) {
  if (static_cast<std::size_t>(nf.values.rows()) != nf.nodes.size() ||
      static_cast<std::size_t>(nf.values.cols()) != nf.names.size() || nf.groups.size() != nf.names.size())
    throw DataError("assemble_features: node feature table is inconsistent");
  if (static_cast<std::size_t>(scores.size()) != nf.nodes.size())
    throw DataError("assemble_features: scores are not aligned with node features");

  std::unordered_map<NodeId, std::size_t> row_of;
  std::size_t max_node = d.node_count();
  for (std::size_t i = 0; i < nf.nodes.size(); ++i) {
    if (!row_of.emplace(nf.nodes[i], i).second)
      throw DataError("assemble_features: duplicate node feature row for node " + std::to_string(nf.nodes[i]));
    max_node = std::max<std::size_t>(max_node, nf.nodes[i] + 1);
  }
  Eigen::VectorXd node_scores = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(max_node), kMissing);
  for (std::size_t i = 0; i < nf.nodes.size(); ++i) node_scores[nf.nodes[i]] = scores[static_cast<Eigen::Index>(i)];

  FeatureMatrix fm;
  for (const char* n : {"amount", "hour_of_day", "day_of_week", "trend_days"}) fm.names.emplace_back(n);
  for (const auto& [name, _] : d.extras) fm.names.push_back("x_" + name);
  fm.names.emplace_back("src_unseen");
  fm.names.emplace_back("tgt_unseen");
  fm.groups.assign(fm.names.size(), FeatureGroup::Transaction);
  fm.names.emplace_back("score_imputed");
  fm.groups.push_back(FeatureGroup::Anomaly);
  fm.base_columns = fm.names.size();
  fm.node_columns = nf.names.size();
  for (const char* side : {"src_", "tgt_"})
    for (std::size_t c = 0; c < nf.names.size(); ++c) {
      fm.names.push_back(side + nf.names[c]);
      fm.groups.push_back(parse_feature_group(nf.groups[c]));
    }
  for (const auto& n : InteractionFeatures::names()) {
    fm.names.push_back(n);
    fm.groups.push_back(FeatureGroup::Anomaly);
  }

  const std::size_t rows = d.size();
  std::vector<NodeId> src(rows), tgt(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    src[r] = d.transactions[r].source;
    tgt[r] = d.transactions[r].target;
  }
  const auto inter = interaction_features(node_scores, src, tgt);

  Eigen::VectorXd medians(nf.values.cols());
  for (Eigen::Index c = 0; c < nf.values.cols(); ++c) medians[c] = column_median(nf.values, c);

  fm.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(fm.names.size()));
  const auto ncols = static_cast<Eigen::Index>(nf.names.size());
  const auto base = static_cast<Eigen::Index>(fm.base_columns);
  const Timestamp t0 = d.meta.min_timestamp;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& t = d.transactions[r];
    auto row = fm.values.row(static_cast<Eigen::Index>(r));
    const Timestamp sec = ((t.timestamp % 86400) + 86400) % 86400;
    const Timestamp day = (t.timestamp - sec) / 86400;
    Eigen::Index k = 0;
    row[k++] = t.amount;
    row[k++] = static_cast<double>(sec) / 3600.0;
    row[k++] = static_cast<double>(((day + 3) % 7 + 7) % 7);  // Monday = 0
    row[k++] = static_cast<double>(t.timestamp - t0) / 86400.0;
    for (const auto& [_, col] : d.extras) row[k++] = col[r];
    Eigen::Index offset = base;
    for (const NodeId v : {t.source, t.target}) {
      const auto it = row_of.find(v);
      if (it == row_of.end()) {
        row[k] = 1.0;
        row.segment(offset, ncols) = medians.transpose();
      } else {
        row[k] = 0.0;
        row.segment(offset, ncols) = nf.values.row(static_cast<Eigen::Index>(it->second));
      }
      ++k;
      offset += ncols;
    }
    row[k++] = inter.imputed[static_cast<Eigen::Index>(r)];
    row.segment(offset, 6) = inter.values.row(static_cast<Eigen::Index>(r));
    fm.tx_id.push_back(t.tx_id);
    fm.label.push_back(t.label);
  }
  return fm;
}

std::vector<char> serialize_feature_matrix(const FeatureMatrix& m) {
  io::Writer w;
  w.magic("TXGM", 1);
  w.pod<std::uint64_t>(m.names.size());
  for (std::size_t c = 0; c < m.names.size(); ++c) {
    w.string(m.names[c]);
    w.pod(static_cast<std::uint8_t>(m.groups[c]));
  }
  w.pod<std::uint64_t>(m.base_columns);
  w.pod<std::uint64_t>(m.node_columns);
  w.array(m.tx_id);
  w.array(m.label);
  w.matrix(m.values);
  return w.release();
}

FeatureMatrix deserialize_feature_matrix(std::span<const char> bytes) {
  io::Reader r(bytes);
  if (r.magic("TXGM") != 1) throw DataError("unsupported feature matrix version");
  FeatureMatrix m;
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t c = 0; c < n; ++c) {
    m.names.push_back(r.string());
    m.groups.push_back(static_cast<FeatureGroup>(r.pod<std::uint8_t>()));
  }
  m.base_columns = r.pod<std::uint64_t>();
  m.node_columns = r.pod<std::uint64_t>();
  m.tx_id = r.array<TxId>();
  m.label = r.array<std::uint8_t>();
  m.values = r.matrix();
  return m;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

Metrics finish(Metrics m) {
  m.precision = m.tp + m.fp ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
  m.recall = m.tp + m.fn ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

}  // namespace

Metrics confusion_metrics(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> labels) {
  if (predicted.size() != labels.size()) throw DataError("confusion_metrics: length mismatch");
  Metrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predicted[i] != 0, y = labels[i] != 0;
    (p ? (y ? m.tp : m.fp) : (y ? m.fn : m.tn)) += 1;
  }
  return finish(m);
}

Metrics confusion_metrics(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold) {
  std::vector<std::uint8_t> p(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) p[i] = scores[i] >= threshold ? 1 : 0;
  return confusion_metrics(p, labels);
}

ThresholdChoice best_f1_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DataError("best_f1_threshold: length mismatch");
  const std::size_t positives = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto y) { return y != 0; }));
  ThresholdChoice best;
  if (scores.empty()) return best;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  if (positives == 0) {
    best.threshold = std::nextafter(scores[order.front()], std::numeric_limits<double>::infinity());
    best.metrics = confusion_metrics(scores, labels, best.threshold);
    return best;
  }
  // F1 = 2tp / (predicted + positives); compared as exact rationals so ties keep the higher cut.
  std::size_t tp = 0, predicted = 0, best_tp = 0, best_den = 1;
  bool have = false;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      ++predicted;
      tp += labels[order[i]] != 0;
    }
    const std::size_t den = predicted + positives;
    if (!have || tp * best_den > best_tp * den) {
      have = true;
      best_tp = tp;
      best_den = den;
      best.threshold = s;
    }
  }
  best.metrics = confusion_metrics(scores, labels, best.threshold);
  return best;
}

std::string format_mean_std(std::span<const double> fractions) {
  if (fractions.empty()) throw DataError("format_mean_std: no values");
  const double n = static_cast<double>(fractions.size());
  const double mean = compensated_sum_range(fractions) / n;
  double ss = 0.0;
  for (double f : fractions) ss += (f - mean) * (f - mean);
  const double sd = fractions.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * mean, 100.0 * sd);
  return buf;
}

// ---------------------------------------------------------------------------
// Gradient-boosted trees

namespace {

constexpr int kBins = 256;

struct BinnedData {
  std::vector<std::vector<double>> edges;  // per feature; left when x < edges[b - 1] <=> bin <= b
  DenseRows<std::uint8_t> bins;            // 0 = missing
};

std::vector<double> bin_edges(const MatrixXdr& x, Eigen::Index f, int max_bins) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    if (!is_missing(x(r, f))) v.push_back(x(r, f));
  std::sort(v.begin(), v.end());
  std::vector<double> uniq = v;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::vector<double> edges;
  if (uniq.size() <= static_cast<std::size_t>(max_bins)) {
    for (std::size_t i = 1; i < uniq.size(); ++i) {
      const double mid = uniq[i - 1] + 0.5 * (uniq[i] - uniq[i - 1]);
      edges.push_back(mid > uniq[i - 1] ? mid : uniq[i]);
    }
    return edges;
  }
  for (int q = 1; q < max_bins; ++q) {
    const double e = v[static_cast<std::size_t>(q) * v.size() / static_cast<std::size_t>(max_bins)];
    if (e > v.front() && (edges.empty() || e > edges.back())) edges.push_back(e);
  }
  return edges;
}

std::uint8_t bin_of(const std::vector<double>& edges, double v) {
  if (is_missing(v)) return 0;
  return static_cast<std::uint8_t>(1 + (std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()));
}

BinnedData bin_matrix(const MatrixXdr& x, int max_bins, std::size_t workers) {
  BinnedData b;
  b.edges.resize(static_cast<std::size_t>(x.cols()));
  parallel_for(static_cast<std::size_t>(x.cols()), workers,
               [&](std::size_t f) { b.edges[f] = bin_edges(x, static_cast<Eigen::Index>(f), max_bins); });
  b.bins.resize(x.rows(), x.cols());
  parallel_for(static_cast<std::size_t>(x.rows()), workers, [&](std::size_t r) {
    for (Eigen::Index f = 0; f < x.cols(); ++f)
      b.bins(static_cast<Eigen::Index>(r), f) = bin_of(b.edges[static_cast<std::size_t>(f)], x(static_cast<Eigen::Index>(r), f));
  });
  return b;
}

struct SplitChoice {
  double gain = 0.0;
  std::int32_t feature = -1;  // index into the tree's feature list
  int bin = 0;                // left bins are 1..bin
  bool missing_left = true;
};

class TreeGrower {
 public:
  TreeGrower(const BinnedData& data, const std::vector<double>& grad, const std::vector<double>& hess,
             std::vector<std::int32_t> features, const GbdtParams& p, std::size_t workers)
      : data_(data), g_(grad), h_(hess), features_(std::move(features)), p_(p), workers_(workers) {}

  Gbdt::Tree grow(std::vector<std::uint32_t> rows) {
    tree_.clear();
    std::vector<double> hist = histogram(rows);
    double G = 0, H = 0;
    for (auto r : rows) {
      G += g_[r];
      H += h_[r];
    }
    node(rows, 0, hist, G, H);
    return std::move(tree_);
  }

 private:
  std::size_t stride() const { return features_.size() * kBins; }

  // Interleaved (g, h) per (feature slot, bin).
  std::vector<double> histogram(std::span<const std::uint32_t> rows) const {
    std::vector<double> hist(2 * stride(), 0.0);
    const std::size_t nf = features_.size();
    const std::size_t blocks = std::min<std::size_t>(workers_, std::max<std::size_t>(1, nf / 8));
    const std::size_t per = (nf + blocks - 1) / blocks;
    parallel_for(blocks, workers_, [&](std::size_t b) {
      const std::size_t lo = b * per, hi = std::min(nf, lo + per);
      for (auto r : rows) {
        const std::uint8_t* row = data_.bins.row(r).data();
        const double g = g_[r], h = h_[r];
        for (std::size_t j = lo; j < hi; ++j) {
          double* cell = &hist[2 * (j * kBins + row[features_[j]])];
          cell[0] += g;
          cell[1] += h;
        }
      }
    });
    return hist;
  }

  SplitChoice best_split(const std::vector<double>& hist, double G, double H) const {
    const double parent = G * G / (H + p_.lambda);
    std::vector<SplitChoice> per(features_.size());
    parallel_for(features_.size(), workers_, [&](std::size_t j) {
      const double* cell = &hist[2 * j * kBins];
      const double gm = cell[0], hm = cell[1];
      const int nbins = static_cast<int>(data_.edges[static_cast<std::size_t>(features_[j])].size()) + 1;
      SplitChoice best;
      double gl = 0, hl = 0;
      for (int b = 1; b < nbins; ++b) {
        gl += cell[2 * b];
        hl += cell[2 * b + 1];
        for (const bool ml : {true, false}) {
          const double GL = gl + (ml ? gm : 0.0), HL = hl + (ml ? hm : 0.0);
          const double GR = G - GL, HR = H - HL;
          if (HL < p_.min_child_weight || HR < p_.min_child_weight) continue;
          const double gain = GL * GL / (HL + p_.lambda) + GR * GR / (HR + p_.lambda) - parent;
          if (gain > best.gain) best = {gain, static_cast<std::int32_t>(j), b, ml};
        }
      }
      per[j] = best;
    });
    SplitChoice best;
    for (const auto& s : per)
      if (s.feature >= 0 && s.gain > best.gain) best = s;
    return best;
  }

  std::uint32_t node(std::span<std::uint32_t> rows, int depth, const std::vector<double>& hist, double G, double H) {
    const auto id = static_cast<std::uint32_t>(tree_.size());
    tree_.push_back({});
    tree_[id].value = -G / (H + p_.lambda) * p_.learning_rate;
    if (depth >= p_.max_depth || rows.size() < 2 || H < 2 * p_.min_child_weight) return id;
    const SplitChoice s = best_split(hist, G, H);
    if (s.feature < 0 || !(s.gain > 1e-12)) return id;

    const auto f = features_[static_cast<std::size_t>(s.feature)];
    auto mid = std::stable_partition(rows.begin(), rows.end(), [&](std::uint32_t r) {
      const auto b = data_.bins(r, f);
      return b == 0 ? s.missing_left : b <= s.bin;
    });
    auto left = rows.subspan(0, static_cast<std::size_t>(mid - rows.begin()));
    auto right = rows.subspan(left.size());
    if (left.empty() || right.empty()) return id;

    double GL = 0, HL = 0;
    for (auto r : left) {
      GL += g_[r];
      HL += h_[r];
    }
    const bool left_small = left.size() <= right.size();
    std::vector<double> small = histogram(left_small ? left : right);
    std::vector<double> large(hist.size());
    for (std::size_t i = 0; i < hist.size(); ++i) large[i] = hist[i] - small[i];
    const auto& hl = left_small ? small : large;
    const auto& hr = left_small ? large : small;

    const auto l = node(left, depth + 1, hl, GL, HL);
    const auto r = node(right, depth + 1, hr, G - GL, H - HL);
    auto& nd = tree_[id];
    nd.feature = f;
    nd.threshold = data_.edges[static_cast<std::size_t>(f)][static_cast<std::size_t>(s.bin - 1)];
    nd.missing_left = s.missing_left ? 1 : 0;
    nd.left = l;
    nd.right = r;
    return id;
  }

  const BinnedData& data_;
  const std::vector<double>& g_;
  const std::vector<double>& h_;
  std::vector<std::int32_t> features_;
  const GbdtParams& p_;
  std::size_t workers_;
  Gbdt::Tree tree_;
};

double tree_output(const Gbdt::Tree& t, const double* row) {
  std::uint32_t id = 0;
  while (t[id].feature >= 0) {
    const auto& n = t[id];
    const double v = row[n.feature];
    id = (is_missing(v) ? n.missing_left != 0 : v < n.threshold) ? n.left : n.right;
  }
  return t[id].value;
}

}  // namespace

Gbdt Gbdt::fit(const MatrixXdr& train, std::span<const std::uint8_t> train_labels, const MatrixXdr& valid,
               std::span<const std::uint8_t> valid_labels, const GbdtParams& p, std::uint64_t seed,
               std::size_t workers) {
  const auto n = static_cast<std::size_t>(train.rows());
  if (train_labels.size() != n || valid_labels.size() != static_cast<std::size_t>(valid.rows()))
    throw DataError("gbdt: label length mismatch");
  if (valid.cols() != train.cols()) throw DataError("gbdt: train and validation column counts differ");
  if (p.rounds < 1 || p.max_depth < 1 || !(p.learning_rate > 0) || p.early_stopping < 1 || !(p.subsample > 0) ||
      p.subsample > 1 || !(p.colsample > 0) || p.colsample > 1 || p.max_bins < 2 || p.max_bins > 255)
    throw ConfigError("gbdt: parameter out of range");
  const std::size_t pos = static_cast<std::size_t>(std::count_if(train_labels.begin(), train_labels.end(), [](auto y) { return y != 0; }));
  if (pos == 0 || pos == n) throw DataError("gbdt: training data has a single class");

  Gbdt model;
  model.columns_ = static_cast<std::size_t>(train.cols());
  const double pos_weight = p.balance_classes ? static_cast<double>(n - pos) / static_cast<double>(pos) : 1.0;
  {
    const double wp = pos_weight * static_cast<double>(pos), wn = static_cast<double>(n - pos);
    model.base_margin_ = std::log(wp / wn);
  }

  const BinnedData data = bin_matrix(train, p.max_bins, workers);
  std::vector<double> margin(n, model.base_margin_), grad(n), hess(n);
  Eigen::VectorXd valid_margin = Eigen::VectorXd::Constant(valid.rows(), model.base_margin_);
  Rng rng(derive_seed(seed, 0x9bd7));

  std::vector<std::uint32_t> all_rows(n);
  std::iota(all_rows.begin(), all_rows.end(), 0u);
  std::vector<std::int32_t> all_features(model.columns_);
  std::iota(all_features.begin(), all_features.end(), 0);
  const auto row_take = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(p.subsample * static_cast<double>(n))));
  const auto col_take = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(p.colsample * static_cast<double>(model.columns_))));

  double best_f1 = -1.0;
  std::size_t best_rounds = 0;
  std::vector<double> vscores(static_cast<std::size_t>(valid.rows()));
  for (int round = 0; round < p.rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double w = train_labels[i] ? pos_weight : 1.0;
      const double prob = sigmoid(margin[i]);
      grad[i] = w * (prob - (train_labels[i] ? 1.0 : 0.0));
      hess[i] = std::max(w * prob * (1.0 - prob), 1e-16);
    }
    std::vector<std::uint32_t> rows = all_rows;
    if (row_take < n) {
      for (std::size_t i = 0; i < row_take; ++i) std::swap(rows[i], rows[i + uniform_index(rng, n - i)]);
      rows.resize(row_take);
      std::sort(rows.begin(), rows.end());
    }
    std::vector<std::int32_t> features = all_features;
    if (col_take < model.columns_) {
      for (std::size_t i = 0; i < col_take; ++i)
        std::swap(features[i], features[i + uniform_index(rng, model.columns_ - i)]);
      features.resize(col_take);
      std::sort(features.begin(), features.end());
    }

    Tree tree = TreeGrower(data, grad, hess, std::move(features), p, workers).grow(std::move(rows));
    parallel_for(n, workers, [&](std::size_t i) { margin[i] += tree_output(tree, train.row(static_cast<Eigen::Index>(i)).data()); });
    parallel_for(static_cast<std::size_t>(valid.rows()), workers, [&](std::size_t i) {
      valid_margin[static_cast<Eigen::Index>(i)] += tree_output(tree, valid.row(static_cast<Eigen::Index>(i)).data());
    });
    model.trees_.push_back(std::move(tree));

    for (std::size_t i = 0; i < vscores.size(); ++i) vscores[i] = valid_margin[static_cast<Eigen::Index>(i)];
    const double f1 = best_f1_threshold(vscores, valid_labels).metrics.f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best_rounds = model.trees_.size();
    } else if (model.trees_.size() - best_rounds >= static_cast<std::size_t>(p.early_stopping)) {
      break;
    }
  }
  model.trees_.resize(best_rounds);

  const Eigen::VectorXd vp = model.predict_proba(valid, workers);
  const auto choice = best_f1_threshold(std::span<const double>(vp.data(), static_cast<std::size_t>(vp.size())), valid_labels);
  model.threshold_ = choice.threshold;
  model.valid_f1_ = choice.metrics.f1;
  return model;
}

Eigen::VectorXd Gbdt::margin(const MatrixXdr& x, std::size_t workers) const {
  if (static_cast<std::size_t>(x.cols()) != columns_)
    throw DataError("gbdt: expected " + std::to_string(columns_) + " columns, got " + std::to_string(x.cols()));
  Eigen::VectorXd m(x.rows());
  parallel_for(static_cast<std::size_t>(x.rows()), workers, [&](std::size_t i) {
    const double* row = x.row(static_cast<Eigen::Index>(i)).data();
    double s = base_margin_;
    for (const auto& t : trees_) s += tree_output(t, row);
    m[static_cast<Eigen::Index>(i)] = s;
  });
  return m;
}

Eigen::VectorXd Gbdt::predict_proba(const MatrixXdr& x, std::size_t workers) const {
  return margin(x, workers).unaryExpr([](double m) { return sigmoid(m); });
}

std::vector<char> Gbdt::save() const {
  io::Writer w;
  w.magic("TXGB", 1);
  w.pod<std::uint64_t>(columns_);
  w.pod(base_margin_);
  w.pod(threshold_);
  w.pod(valid_f1_);
  w.pod<std::uint64_t>(trees_.size());
  for (const auto& t : trees_) {
    w.pod<std::uint64_t>(t.size());
    for (const auto& n : t) {
      w.pod(n.feature);
      w.pod(n.threshold);
      w.pod(n.missing_left);
      w.pod(n.left);
      w.pod(n.right);
      w.pod(n.value);
    }
  }
  return w.release();
}

Gbdt Gbdt::load(std::span<const char> bytes) {
  io::Reader r(bytes);
  if (r.magic("TXGB") != 1) throw DataError("unsupported model file version");
  Gbdt m;
  m.columns_ = r.pod<std::uint64_t>();
  m.base_margin_ = r.pod<double>();
  m.threshold_ = r.pod<double>();
  m.valid_f1_ = r.pod<double>();
  m.trees_.resize(r.pod<std::uint64_t>());
  for (auto& t : m.trees_) {
    t.resize(r.pod<std::uint64_t>());
    for (auto& n : t) {
      n.feature = r.pod<std::int32_t>();
      n.threshold = r.pod<double>();
      n.missing_left = r.pod<std::uint8_t>();
      n.left = r.pod<std::uint32_t>();
      n.right = r.pod<std::uint32_t>();
      n.value = r.pod<double>();
      if (n.feature >= static_cast<std::int64_t>(m.columns_) || n.left >= t.size() || n.right >= t.size())
        throw DataError("model file is corrupt");
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<double> EvalReport::values(double Metrics::*field) const {
  std::vector<double> v;
  for (const auto& s : seeds) v.push_back(s.test.*field);
  return v;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["split"] = {{"train", train_rows}, {"valid", valid_rows}, {"test", test_rows}};
  j["seeds"] = nlohmann::json::array();
  for (const auto& s : seeds) {
    j["seeds"].push_back({{"seed", s.seed},
                          {"rounds", s.rounds},
                          {"threshold", s.threshold},
                          {"valid_f1", s.valid_f1},
                          {"tp", s.test.tp},
                          {"fp", s.test.fp},
                          {"fn", s.test.fn},
                          {"tn", s.test.tn},
                          {"precision", s.test.precision},
                          {"recall", s.test.recall},
                          {"f1", s.test.f1}});
  }
  for (const auto& [name, field] : {std::pair{"f1", &Metrics::f1}, std::pair{"recall", &Metrics::recall},
                                    std::pair{"precision", &Metrics::precision}}) {
    const auto v = values(field);
    if (v.empty()) continue;
    j["summary"][name] = format_mean_std(v);
  }
  return j;
}

TrainOutput train_evaluate(const FeatureMatrix& fm, const Split& split, const GbdtParams& params,
                           std::span<const std::uint64_t> seeds, std::size_t workers) {
  if (seeds.empty()) throw ConfigError("train_evaluate: at least one seed is required");
  if (split.train.empty() || split.valid.empty() || split.test.empty())
    throw DataError("train_evaluate: every split must be non-empty");
  const MatrixXdr xtr = take_rows(fm.values, split.train);
  const MatrixXdr xva = take_rows(fm.values, split.valid);
  const MatrixXdr xte = take_rows(fm.values, split.test);
  const auto ytr = take(fm.label, split.train);
  const auto yva = take(fm.label, split.valid);
  const auto yte = take(fm.label, split.test);

  TrainOutput out;
  out.report.train_rows = split.train.size();
  out.report.valid_rows = split.valid.size();
  out.report.test_rows = split.test.size();
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    Gbdt model = Gbdt::fit(xtr, ytr, xva, yva, params, seeds[k], workers);
    const Eigen::VectorXd p = model.predict_proba(xte, workers);
    const std::span<const double> ps(p.data(), static_cast<std::size_t>(p.size()));
    SeedResult r;
    r.seed = seeds[k];
    r.rounds = model.rounds();
    r.threshold = model.threshold();
    r.valid_f1 = model.valid_f1();
    r.test = confusion_metrics(ps, yte, model.threshold());
    out.report.seeds.push_back(r);
    if (k == 0) {
      for (std::size_t i = 0; i < split.test.size(); ++i) {
        const auto row = split.test[i];
        out.predictions.push_back({fm.tx_id[row], ps[i], static_cast<std::uint8_t>(ps[i] >= model.threshold()),
                                   fm.label[row]});
      }
      std::sort(out.predictions.begin(), out.predictions.end(),
                [](const Prediction& a, const Prediction& b) { return a.tx_id < b.tx_id; });
      out.model = std::move(model);
    }
  }
  return out;
}

void write_predictions_csv(std::span<const Prediction> rows, std::ostream& out) {
  out << "tx_id,score,prediction,label\n";
  char buf[64];
  for (const auto& p : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", p.score);
    out << p.tx_id << ',' << buf << ',' << int(p.predicted) << ',' << int(p.label) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Ablation and leakage audit

std::vector<AblationRow> ablation_run(const FeatureMatrix& fm, const Split& split, std::span<const FeatureGroup> groups,
                                      const GbdtParams& params, std::span<const std::uint64_t> seeds,
                                      std::size_t workers) {
  if (groups.empty()) throw ConfigError("ablation_run: no feature groups given");
  for (std::size_t i = 0; i < groups.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (groups[i] == groups[j]) throw ConfigError("ablation_run: group listed twice");

  std::vector<std::vector<FeatureGroup>> runs;
  for (std::size_t k = 1; k <= groups.size(); ++k) runs.emplace_back(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(k));
  const bool has_tx = std::find(groups.begin(), groups.end(), FeatureGroup::Transaction) != groups.end();
  const bool has_an = std::find(groups.begin(), groups.end(), FeatureGroup::Anomaly) != groups.end();
  if (has_tx && has_an) {
    std::vector<FeatureGroup> pair{FeatureGroup::Transaction, FeatureGroup::Anomaly};
    const bool duplicate = std::any_of(runs.begin(), runs.end(), [&](auto r) {
      std::sort(r.begin(), r.end());
      return r == pair;
    });
    if (!duplicate) runs.push_back(pair);
  }

  std::vector<AblationRow> rows;
  for (const auto& run : runs) {
    AblationRow row;
    row.groups = run;
    for (std::size_t i = 0; i < run.size(); ++i) row.label += (i ? "+" : "") + std::string(feature_group_name(run[i]));
    const FeatureMatrix sub = fm.select_groups(run);
    row.columns = sub.columns();
    if (sub.columns() == 0) throw ConfigError("ablation_run: '" + row.label + "' selects no columns");
    const auto out = train_evaluate(sub, split, params, seeds, workers);
    row.f1 = out.report.values(&Metrics::f1);
    row.recall = out.report.values(&Metrics::recall);
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json ablation_json(std::span<const AblationRow> rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json groups = nlohmann::json::array();
    for (auto g : r.groups) groups.push_back(std::string(feature_group_name(g)));
    j.push_back({{"label", r.label},
                 {"groups", groups},
                 {"columns", r.columns},
                 {"f1", r.f1},
                 {"recall", r.recall},
                 {"f1_summary", format_mean_std(r.f1)},
                 {"recall_summary", format_mean_std(r.recall)}});
  }
  return j;
}

LeakageAudit leakage_audit(const Dataset& d, const Split& split,
                           const std::function<FeatureMatrix(const Dataset&)>& build) {
  LeakageAudit audit;
  if (!split.account_part.empty()) {
    for (auto r : split.train) {
      const auto& t = d.transactions[r];
      if (split.account_part[t.source] != SplitPart::Train || split.account_part[t.target] != SplitPart::Train)
        ++audit.endpoint_violations;
    }
  }

  Dataset perturbed = d;
  for (const auto* part : {&split.valid, &split.test})
    for (auto r : *part) perturbed.transactions[r].label ^= 1;
  perturbed.meta = dataset_stats(perturbed);

  const FeatureMatrix a = build(d);
  const FeatureMatrix b = build(perturbed);
  if (a.values.cols() != b.values.cols() || a.values.rows() != b.values.rows()) {
    audit.passed = false;
    audit.detail = "feature shape changed under label perturbation";
    return audit;
  }
  for (auto r : split.train)
    for (Eigen::Index c = 0; c < a.values.cols(); ++c)
      if (!same_bits(a.values(static_cast<Eigen::Index>(r), c), b.values(static_cast<Eigen::Index>(r), c)))
        ++audit.changed_cells;

  audit.passed = audit.endpoint_violations == 0 && audit.changed_cells == 0;
  audit.detail = std::to_string(split.train.size()) + " train rows checked, " +
                 std::to_string(audit.endpoint_violations) + " endpoint violations, " +
                 std::to_string(audit.changed_cells) + " changed cells";
  return audit;
}

}  // namespace txg
