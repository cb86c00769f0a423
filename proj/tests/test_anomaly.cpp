#include "txg/anomaly.hpp"
#include "txg/random.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace txg;

namespace {

MatrixXdr cluster_with_outlier(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXdr x(static_cast<Eigen::Index>(n + 1), 3);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i)
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = uniform01(rng);
  x.row(static_cast<Eigen::Index>(n)) << 50.0, -40.0, 30.0;
  return x;
}

std::vector<double> ranks(const Eigen::VectorXd& v) {
  std::vector<std::size_t> order(static_cast<std::size_t>(v.size()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[static_cast<Eigen::Index>(a)] < v[static_cast<Eigen::Index>(b)]; });
  std::vector<double> r(order.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[static_cast<Eigen::Index>(order[j + 1])] == v[static_cast<Eigen::Index>(order[i])]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  return r;
}

double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const Eigen::Map<const Eigen::VectorXd> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
  const Eigen::Map<const Eigen::VectorXd> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  return xc.dot(yc) / std::sqrt(xc.squaredNorm() * yc.squaredNorm());
}

}  // namespace

TEST(PathLength, ClosedForm) {
  EXPECT_EQ(average_path_length(1), 0.0);
  EXPECT_DOUBLE_EQ(average_path_length(2), 1.0);
  // c(3) = 2 H(2) - 4/3 = 3 - 4/3.
  EXPECT_DOUBLE_EQ(average_path_length(3), 3.0 - 4.0 / 3.0);
  double h = 0;
  for (int i = 1; i <= 255; ++i) h += 1.0 / i;
  EXPECT_NEAR(average_path_length(256), 2 * h - 2.0 * 255 / 256, 1e-12);
}

TEST(IsolationForest, TwoPointToyScoresHalf) {
  MatrixXdr x(2, 1);
  x << 0.0, 1.0;
  const auto f = IsolationForest::fit(x, {.trees = 1, .sample_size = 2, .seed = 1});
  // Each point is isolated after one split: path length 1, c(2) = 1.
  const std::vector<double> row{0.0};
  EXPECT_DOUBLE_EQ(f.path_length(0, row), 1.0);
  const auto s = f.score(x);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(IsolationForest, OutlierScoresHighest) {
  const auto x = cluster_with_outlier(256, 3);
  const auto s = IsolationForest::fit(x, {}).score(x);
  Eigen::Index top = 0;
  s.maxCoeff(&top);
  EXPECT_EQ(top, 256);
  EXPECT_TRUE(s.allFinite());
  EXPECT_GE(s.minCoeff(), 0.0);
  EXPECT_LE(s.maxCoeff(), 1.0);
  // The outlier also has the shortest mean path in every forest size.
  for (std::size_t i = 0; i < 256; ++i) EXPECT_LT(s[static_cast<Eigen::Index>(i)], s[256]);
}

TEST(IsolationForest, IdenticalRowsScoreEqually) {
  MatrixXdr x = MatrixXdr::Constant(40, 4, 2.5);
  const auto s = IsolationForest::fit(x, {}).score(x);
  EXPECT_EQ(s.maxCoeff(), s.minCoeff());
}

TEST(IsolationForest, Deterministic) {
  const auto x = cluster_with_outlier(300, 4);
  const auto a = IsolationForest::fit(x, {.seed = 9}, 1);
  const auto b = IsolationForest::fit(x, {.seed = 9}, 4);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.score(x, 1), b.score(x, 3));
}

TEST(IsolationForest, RankingStableAcrossSeeds) {
  const auto x = cluster_with_outlier(500, 5);
  const auto base = IsolationForest::fit(x, {.seed = 1}).score(x);
  for (std::uint64_t seed = 2; seed <= 5; ++seed)
    EXPECT_GE(spearman(base, IsolationForest::fit(x, {.seed = seed}).score(x)), 0.9) << seed;
}

TEST(IsolationForest, ScalingPreservesRanking) {
  const auto x = cluster_with_outlier(400, 6);
  const MatrixXdr scaled = x * 1000.0;
  const auto a = IsolationForest::fit(x, {.seed = 3}).score(x);
  const auto b = IsolationForest::fit(scaled, {.seed = 3}).score(scaled);
  EXPECT_GE(spearman(a, b), 0.999);
}

TEST(IsolationForest, MissingValuesAndErrors) {
  auto x = cluster_with_outlier(100, 7);
  x(3, 1) = kMissing;
  const auto f = IsolationForest::fit(x, {});
  EXPECT_TRUE(f.score(x).allFinite());
  EXPECT_THROW(IsolationForest::fit(MatrixXdr(1, 3), {}), DataError);
  EXPECT_THROW(f.score(MatrixXdr::Zero(2, 5)), DataError);
}

TEST(IsolationForest, SaveLoadBitIdentical) {
  const auto x = cluster_with_outlier(200, 8);
  const auto f = IsolationForest::fit(x, {.trees = 30});
  const auto bytes = f.save();
  const auto g = IsolationForest::load(bytes);
  EXPECT_EQ(g, f);
  EXPECT_EQ(g.save(), bytes);
  EXPECT_EQ(g.score(x), f.score(x));
}

TEST(Interaction, Arithmetic) {
  Eigen::VectorXd scores(3);
  scores << 0.9, 0.1, 0.4;
  const std::vector<NodeId> src{0, 2, 0, 7};
  const std::vector<NodeId> tgt{1, 2, 9, 1};
  const auto f = interaction_features(scores, src, tgt);
  ASSERT_EQ(f.values.cols(), 6);
  ASSERT_EQ(InteractionFeatures::names().size(), 6u);
  EXPECT_DOUBLE_EQ(f.values(0, 0), 0.9);
  EXPECT_DOUBLE_EQ(f.values(0, 1), 0.1);
  EXPECT_NEAR(f.values(0, 2), 0.09, 1e-15);
  EXPECT_DOUBLE_EQ(f.values(0, 3), 0.9);
  EXPECT_DOUBLE_EQ(f.values(0, 4), 0.1);
  EXPECT_NEAR(f.values(0, 5), 0.8, 1e-15);
  EXPECT_EQ(f.values(1, 5), 0.0);
  EXPECT_EQ(f.imputed[0], 0.0);
  // Unknown endpoints take the median score 0.4.
  EXPECT_EQ(f.imputed[2], 1.0);
  EXPECT_DOUBLE_EQ(f.values(2, 1), 0.4);
  EXPECT_EQ(f.imputed[3], 1.0);
  EXPECT_DOUBLE_EQ(f.values(3, 0), 0.4);
}

TEST(NodeFeatures, SerializeRoundTrip) {
  NodeFeatures nf;
  nf.nodes = {0, 1};
  nf.names = {"a", "b"};
  nf.groups = {"flows", "modularity"};
  nf.values = MatrixXdr(2, 2);
  nf.values << 1, kMissing, 3, 4;
  Eigen::VectorXd s(2);
  s << 0.25, 0.75;
  const auto [back, scores] = deserialize_node_features(serialize_node_features(nf, s));
  EXPECT_EQ(back.names, nf.names);
  EXPECT_EQ(back.nodes, nf.nodes);
  EXPECT_TRUE(std::isnan(back.values(0, 1)));
  EXPECT_EQ(back.values(1, 1), 4.0);
  EXPECT_EQ(scores, s);
}
