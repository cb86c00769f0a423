#include "fixtures.hpp"
#include "txg/model.hpp"
#include "txg/random.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace txg;

namespace {

NodeFeatures three_columns(std::vector<NodeId> nodes) {
  NodeFeatures nf;
  nf.nodes = std::move(nodes);
  nf.names = {"f0", "f1", "f2"};
  nf.groups = {"random_walk", "modularity", "flows"};
  nf.values = MatrixXdr(static_cast<Eigen::Index>(nf.nodes.size()), 3);
  for (Eigen::Index i = 0; i < nf.values.rows(); ++i)
    for (Eigen::Index j = 0; j < 3; ++j) nf.values(i, j) = static_cast<double>(10 * i + j);
  return nf;
}

Dataset two_rows() {
  IdMap ids;
  for (const char* n : {"a", "b", "c"}) ids.intern(n);
  return make_dataset({{1, 100, 0, 1, 5.0, 0}, {2, 200, 1, 2, 7.0, 1}}, ids);
}

// Two Gaussian blobs; `gap` controls the overlap.
void blobs(std::size_t n, double positive_rate, double gap, std::uint64_t seed, MatrixXdr& x,
           std::vector<std::uint8_t>& y) {
  Rng rng(seed);
  x.resize(static_cast<Eigen::Index>(n), 2);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = uniform01(rng) < positive_rate ? 1 : 0;
    for (Eigen::Index j = 0; j < 2; ++j) {
      const double u1 = std::max(uniform01(rng), 1e-300), u2 = uniform01(rng);
      const double z = std::sqrt(-2 * std::log(u1)) * std::cos(6.283185307179586 * u2);
      x(static_cast<Eigen::Index>(i), j) = z + (y[i] ? gap : 0.0);
    }
  }
}

}  // namespace

TEST(Assemble, ColumnArithmetic) {
  const auto d = two_rows();
  const auto nf = three_columns({0, 1, 2});
  Eigen::VectorXd s(3);
  s << 0.2, 0.5, 0.9;
  const auto fm = assemble_features(d, nf, s);
  EXPECT_EQ(fm.rows(), 2u);
  EXPECT_EQ(fm.base_columns, 7u);
  EXPECT_EQ(fm.node_columns, 3u);
  EXPECT_EQ(fm.columns(), fm.base_columns + 3 + 3 + 6);
  // Source and target joins have equal width.
  std::size_t src = 0, tgt = 0;
  for (const auto& n : fm.names) {
    src += n.rfind("src_f", 0) == 0;
    tgt += n.rfind("tgt_f", 0) == 0;
  }
  EXPECT_EQ(src, tgt);
  EXPECT_EQ(fm.values(1, 0), 7.0);
  const auto col = [&](const std::string& name) {
    return static_cast<Eigen::Index>(std::find(fm.names.begin(), fm.names.end(), name) - fm.names.begin());
  };
  EXPECT_EQ(fm.values(1, col("src_f2")), 12.0);
  EXPECT_EQ(fm.values(1, col("tgt_f0")), 20.0);
  EXPECT_DOUBLE_EQ(fm.values(1, col("score_product")), 0.45);
}

TEST(Assemble, CalendarColumns) {
  IdMap ids;
  ids.intern("a");
  ids.intern("b");
  // 1970-01-05 was a Monday; 13:30 UTC.
  const Timestamp monday = 4 * 86400 + 13 * 3600 + 1800;
  const auto d = make_dataset({{0, 0, 0, 1, 1.0, 0}, {1, monday, 0, 1, 1.0, 0}}, ids);
  const auto fm = assemble_features(d, three_columns({0, 1}), Eigen::VectorXd::Zero(2));
  EXPECT_EQ(fm.values(0, 2), 3.0);  // Thursday
  EXPECT_EQ(fm.values(1, 1), 13.5);
  EXPECT_EQ(fm.values(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(fm.values(1, 3), static_cast<double>(monday) / 86400.0);
}

TEST(Assemble, UnseenAccountImputed) {
  const auto d = two_rows();
  const auto nf = three_columns({0, 1});
  const auto fm = assemble_features(d, nf, Eigen::VectorXd::Constant(2, 0.3));
  const auto col = [&](const std::string& name) {
    return static_cast<Eigen::Index>(std::find(fm.names.begin(), fm.names.end(), name) - fm.names.begin());
  };
  EXPECT_EQ(fm.values(0, col("tgt_unseen")), 0.0);
  EXPECT_EQ(fm.values(1, col("tgt_unseen")), 1.0);
  EXPECT_EQ(fm.values(1, col("score_imputed")), 1.0);
  // Median of {0, 10} on column f0.
  EXPECT_EQ(fm.values(1, col("tgt_f0")), 5.0);
}

TEST(Assemble, DuplicateNodeRowRejected) {
  const auto nf = three_columns({0, 0, 1});
  EXPECT_THROW(assemble_features(two_rows(), nf, Eigen::VectorXd::Zero(3)), DataError);
}

TEST(Assemble, InputOrderDoesNotMatter) {
  auto d = fixture::random_dataset(20, 60, 3, 100000);
  std::vector<NodeId> nodes(20);
  std::iota(nodes.begin(), nodes.end(), NodeId{0});
  const auto nf = three_columns(nodes);
  const Eigen::VectorXd s = Eigen::VectorXd::LinSpaced(20, 0.0, 1.0);
  const auto a = assemble_features(d, nf, s);
  auto rows = d.transactions;
  Rng rng(1);
  shuffle(rows, rng);
  const auto b = assemble_features(make_dataset(rows, d.ids), nf, s);
  std::vector<std::size_t> order(a.rows());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return b.tx_id[i] < b.tx_id[j]; });
  const auto b_sorted = b.select_rows(order);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return a.tx_id[i] < a.tx_id[j]; });
  EXPECT_TRUE(a.select_rows(order) == b_sorted);
}

TEST(FeatureMatrix, SelectGroupsAndRoundTrip) {
  const auto fm = assemble_features(two_rows(), three_columns({0, 1, 2}), Eigen::VectorXd::Zero(3));
  const std::vector<FeatureGroup> tx{FeatureGroup::Transaction};
  const auto only = fm.select_groups(tx);
  EXPECT_EQ(only.columns(), 6u);
  EXPECT_TRUE(deserialize_feature_matrix(serialize_feature_matrix(fm)) == fm);
  EXPECT_EQ(parse_feature_group("random_walk"), FeatureGroup::RandomWalk);
  EXPECT_THROW(parse_feature_group("graph"), ConfigError);
}

TEST(Metrics, ConfusionArithmetic) {
  std::vector<std::uint8_t> pred, label;
  auto add = [&](int n, std::uint8_t p, std::uint8_t l) {
    for (int i = 0; i < n; ++i) {
      pred.push_back(p);
      label.push_back(l);
    }
  };
  add(7, 1, 1);
  add(3, 1, 0);
  add(3, 0, 1);
  add(20, 0, 0);
  const auto m = confusion_metrics(pred, label);
  EXPECT_EQ(m.tp, 7u);
  EXPECT_NEAR(m.precision, 0.7, 1e-12);
  EXPECT_NEAR(m.recall, 0.7, 1e-12);
  EXPECT_NEAR(m.f1, 0.7, 1e-12);
  EXPECT_NEAR(m.f1, 2 * m.precision * m.recall / (m.precision + m.recall), 1e-9);

  const auto perfect = confusion_metrics(label, label);
  EXPECT_EQ(perfect.f1, 1.0);
  EXPECT_EQ(perfect.recall, 1.0);
  const std::vector<std::uint8_t> none(label.size(), 0);
  const auto negative = confusion_metrics(none, label);
  EXPECT_EQ(negative.f1, 0.0);
  EXPECT_EQ(negative.recall, 0.0);
}

TEST(Metrics, BestThresholdBruteForce) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    for (int i = 0; i < 40; ++i) {
      s.push_back(static_cast<double>(uniform_index(rng, 12)) / 12.0);
      y.push_back(uniform01(rng) < 0.3 ? 1 : 0);
    }
    if (std::count(y.begin(), y.end(), 1) == 0) continue;
    // Exact rational comparison of 2tp / (2tp + fp + fn).
    double best = -1, best_t = 0;
    std::size_t num = 0, den = 1;
    bool have = false;
    for (double t : s) {
      const auto m = confusion_metrics(s, y, t);
      const std::size_t n = m.tp, d = 2 * m.tp + m.fp + m.fn;
      if (!have || n * den > num * d || (n * den == num * d && t > best_t)) {
        have = true;
        num = n;
        den = d;
        best = m.f1;
        best_t = t;
      }
    }
    const auto c = best_f1_threshold(s, y);
    EXPECT_DOUBLE_EQ(c.metrics.f1, best);
    EXPECT_EQ(c.threshold, best_t);

    // A strictly increasing transform keeps the chosen cut.
    std::vector<double> t;
    for (double v : s) t.push_back(std::exp(3 * v) - 5);
    EXPECT_DOUBLE_EQ(best_f1_threshold(t, y).metrics.f1, best);
  }
}

TEST(Metrics, NoPositivesPredictsNothing) {
  const std::vector<double> s{0.1, 0.9, 0.4};
  const std::vector<std::uint8_t> y{0, 0, 0};
  const auto c = best_f1_threshold(s, y);
  EXPECT_GT(c.threshold, 0.9);
  EXPECT_EQ(c.metrics.fp, 0u);
}

TEST(Metrics, MeanStdFormat) {
  const std::vector<double> f{0.80, 0.82, 0.84, 0.86, 0.88};
  EXPECT_EQ(format_mean_std(f), "84.00 ± 3.16");
  const std::vector<double> one{0.5};
  EXPECT_EQ(format_mean_std(one), "50.00 ± 0.00");
}

TEST(Gbdt, SeparableToyIsPerfect) {
  MatrixXdr x(200, 2);
  std::vector<std::uint8_t> y(200);
  Rng rng(5);
  for (Eigen::Index i = 0; i < 200; ++i) {
    x(i, 0) = uniform01(rng);
    x(i, 1) = uniform01(rng);
    y[static_cast<std::size_t>(i)] = x(i, 0) + x(i, 1) > 1.0 ? 1 : 0;
  }
  const auto m = Gbdt::fit(x, y, x, y, {.rounds = 200, .max_depth = 4, .early_stopping = 200}, 1);
  const auto p = m.predict_proba(x);
  const std::span<const double> ps(p.data(), 200);
  EXPECT_EQ(confusion_metrics(ps, y, m.threshold()).f1, 1.0);
}

TEST(Gbdt, DeterministicAndSaveLoad) {
  MatrixXdr x, v;
  std::vector<std::uint8_t> y, vy;
  blobs(600, 0.1, 1.5, 1, x, y);
  blobs(300, 0.1, 1.5, 2, v, vy);
  x(0, 1) = kMissing;
  const GbdtParams p{.rounds = 60};
  const auto a = Gbdt::fit(x, y, v, vy, p, 3, 1);
  const auto b = Gbdt::fit(x, y, v, vy, p, 3, 4);
  EXPECT_EQ(a.save(), b.save());
  const auto c = Gbdt::load(a.save());
  EXPECT_EQ(c.predict_proba(v), a.predict_proba(v));
  EXPECT_EQ(c.threshold(), a.threshold());
  EXPECT_LE(a.rounds(), 60u);
}

TEST(Gbdt, SingleClassRejected) {
  MatrixXdr x = MatrixXdr::Random(10, 2);
  const std::vector<std::uint8_t> y(10, 0);
  EXPECT_THROW(Gbdt::fit(x, y, x, y, {}, 1), DataError);
}

TEST(Gbdt, ClassWeightRaisesRecall) {
  MatrixXdr x, v, t;
  std::vector<std::uint8_t> y, vy, ty;
  blobs(3000, 0.03, 1.2, 7, x, y);
  blobs(1000, 0.03, 1.2, 8, v, vy);
  blobs(3000, 0.03, 1.2, 9, t, ty);
  GbdtParams p{.rounds = 40, .max_depth = 3};
  auto recall_at_half = [&](bool balance) {
    p.balance_classes = balance;
    const auto m = Gbdt::fit(x, y, v, vy, p, 1);
    const auto prob = m.predict_proba(t);
    return confusion_metrics(std::span<const double>(prob.data(), static_cast<std::size_t>(prob.size())), ty, 0.5)
        .recall;
  };
  EXPECT_GE(recall_at_half(true), recall_at_half(false));
}

namespace {

FeatureMatrix blob_matrix(std::size_t n, std::uint64_t seed) {
  FeatureMatrix fm;
  std::vector<std::uint8_t> y;
  blobs(n, 0.1, 3.0, seed, fm.values, y);
  fm.label = y;
  fm.names = {"amount", "src_f"};
  fm.groups = {FeatureGroup::Transaction, FeatureGroup::RandomWalk};
  fm.base_columns = 1;
  for (std::size_t i = 0; i < n; ++i) fm.tx_id.push_back(static_cast<TxId>(n - i));
  return fm;
}

}  // namespace

TEST(TrainEvaluate, ReportAndPredictions) {
  const auto fm = blob_matrix(1000, 4);
  Dataset d = fixture::random_dataset(10, 1000, 1);
  const auto split = temporal_split(d, {});
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto out = train_evaluate(fm, split, {.rounds = 30}, seeds);
  EXPECT_EQ(out.report.seeds.size(), 3u);
  EXPECT_EQ(out.report.train_rows, 600u);
  EXPECT_EQ(out.predictions.size(), 200u);
  EXPECT_TRUE(std::is_sorted(out.predictions.begin(), out.predictions.end(),
                             [](const auto& a, const auto& b) { return a.tx_id < b.tx_id; }));
  for (const auto& r : out.report.seeds) EXPECT_GE(r.test.f1, 0.8);
  const auto j = out.report.to_json();
  EXPECT_TRUE(j.contains("summary"));
  EXPECT_NE(j["summary"]["f1"].get<std::string>().find(" ± "), std::string::npos);

  std::ostringstream csv;
  write_predictions_csv(out.predictions, csv);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "tx_id,score,prediction,label");
}

TEST(Ablation, PrefixRows) {
  auto fm = blob_matrix(1000, 5);
  fm.names.push_back("score_product");
  fm.groups.push_back(FeatureGroup::Anomaly);
  fm.values.conservativeResize(Eigen::NoChange, 3);
  fm.values.col(2).setConstant(0.5);
  Dataset d = fixture::random_dataset(10, 1000, 1);
  const auto split = temporal_split(d, {});
  const std::vector<std::uint64_t> seeds{1};
  const GbdtParams p{.rounds = 10};

  const std::vector<FeatureGroup> one{FeatureGroup::Transaction};
  EXPECT_EQ(ablation_run(fm, split, one, p, seeds).size(), 1u);

  const std::vector<FeatureGroup> three{FeatureGroup::Transaction, FeatureGroup::RandomWalk, FeatureGroup::Anomaly};
  const auto rows = ablation_run(fm, split, three, p, seeds);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].label, "transaction");
  EXPECT_EQ(rows[2].label, "transaction+random_walk+anomaly");
  EXPECT_EQ(rows[3].label, "transaction+anomaly");
  EXPECT_EQ(rows[1].columns, 2u);

  const std::vector<FeatureGroup> dup{FeatureGroup::Transaction, FeatureGroup::Transaction};
  EXPECT_THROW(ablation_run(fm, split, dup, p, seeds), ConfigError);
}
