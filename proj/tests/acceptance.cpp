// Acceptance driver: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Criterion 9 needs the external IBM AML HI-Small file and is
// reported as SKIP unless TXG_AML_HI_SMALL points at it.

#include "fixtures.hpp"
#include "oracles.hpp"
#include "txg/binary_io.hpp"
#include "txg/flow.hpp"
#include "txg/graph.hpp"
#include "txg/pipeline.hpp"
#include "txg/random.hpp"
#include "txg/subgraph_features.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <regex>
#include <sstream>
#include <thread>

using namespace txg;

namespace {

// Tolerances and budgets.
constexpr double kFlowTol = 1e-9;
constexpr double kConservationTol = 1e-6;
constexpr double kParallelTol = 1e-9;
constexpr double kFlowBudgetSeconds = 30.0;
constexpr double kMinSpeedup = 2.2;
constexpr double kScalingBudgetSeconds = 300.0;
constexpr double kMinF1 = 0.80;
constexpr double kAblationSlack = 0.01;
constexpr double kEndToEndBudgetSeconds = 600.0;
constexpr double kReferenceF1HiSmall = 0.7890;
constexpr double kExtendedBand = 0.05;

struct Outcome {
  enum Status { Pass, Fail, Skip } status = Pass;
  std::string detail;
};

Outcome pass(std::string detail) { return {Outcome::Pass, std::move(detail)}; }
Outcome fail(std::string detail) { return {Outcome::Fail, std::move(detail)}; }
Outcome check(bool ok, std::string detail) { return {ok ? Outcome::Pass : Outcome::Fail, std::move(detail)}; }

using clock_type = std::chrono::steady_clock;
double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << std::fixed << v;
  return s.str();
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<NodeId> all_nodes(std::size_t n) {
  std::vector<NodeId> v(n);
  std::iota(v.begin(), v.end(), NodeId{0});
  return v;
}

MultiGraph graph_of(std::size_t n, const std::vector<std::tuple<NodeId, NodeId, double, Timestamp>>& edges) {
  std::vector<Transaction> rows;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto [s, t, a, ts] = edges[i];
    rows.push_back({static_cast<TxId>(i), ts, s, t, a, 0});
  }
  return build_multigraph(n, rows);
}

EdgeSlice random_slice(Rng& rng, std::size_t max_nodes, double density) {
  const std::size_t n = 1 + uniform_index(rng, max_nodes);
  std::vector<std::tuple<NodeId, NodeId, double, Timestamp>> edges;
  for (NodeId u = 0; u < n; ++u)
    for (NodeId v = 0; v < n; ++v)
      if (u != v && uniform01(rng) < density) edges.emplace_back(u, v, 1.0, 0);
  return induced_subgraph(graph_of(n, edges), all_nodes(n));
}

bool conserved(const AggregatedGraph& ag) {
  const double s = compensated_sum_range(ag.sent);
  const double r = compensated_sum_range(ag.received);
  return std::abs(s - r) <= kConservationTol * std::max(1.0, std::abs(s));
}

bool close(double x, double y, double tol) {
  if (std::isnan(x) || std::isnan(y)) return std::isnan(x) && std::isnan(y);
  return std::abs(x - y) <= tol * std::max(1.0, std::abs(y));
}

// Random graph for the flow criteria: 5..20 accounts, 1..40 transactions over a
// short time span so equal timestamps occur.
Dataset small_random_graph(std::uint64_t seed) {
  Rng rng(seed ^ 0x5eedULL);
  const std::size_t nodes = 5 + uniform_index(rng, 16);
  const std::size_t edges = 1 + uniform_index(rng, 40);
  return fixture::random_dataset(nodes, edges, seed, 20);
}

std::filesystem::path write_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  write_generic_csv(d, out);
  return path;
}

// Shared 50k-transaction economy.
const Dataset& economy() {
  static const Dataset d = fixture::synthetic_economy({});
  return d;
}

// ---------------------------------------------------------------------------

Outcome flow_oracle() {
  const auto t0 = clock_type::now();
  const int hops = 5;
  std::size_t profiles = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto ds = small_random_graph(seed);
    const auto mg = build_multigraph(ds);
    const auto g = aggregate(mg);
    const auto totals = oracle::group_by(ds.transactions);
    for (NodeId v = 0; v < g.node_count; ++v) {
      std::string why;
      const auto where = [&](const char* what) {
        return "graph " + std::to_string(seed) + " node " + std::to_string(v) + " " + what + ": " + why;
      };
      if (!oracle::same_stats(dispense_flow(g, v, hops, kUnlimited), oracle::static_walks(totals, v, true, hops),
                              kFlowTol, &why))
        return fail(where("dispense"));
      if (!oracle::same_stats(sink_flow(g, v, hops, kUnlimited), oracle::static_walks(totals, v, false, hops), kFlowTol,
                              &why))
        return fail(where("sink"));
      for (const bool strict : {false, true}) {
        if (!oracle::same_stats(temporal_flow(mg, v, FlowKind::Dispenser, hops, kUnlimited, strict),
                                oracle::temporal_walks(ds.transactions, v, true, hops, strict), kFlowTol, &why))
          return fail(where("temporal dispense"));
        if (!oracle::same_stats(temporal_flow(mg, v, FlowKind::Sink, hops, kUnlimited, strict),
                                oracle::temporal_walks(ds.transactions, v, false, hops, strict), kFlowTol, &why))
          return fail(where("temporal sink"));
      }
      profiles += 6;
    }
  }
  const double secs = seconds_since(t0);
  return check(secs < kFlowBudgetSeconds,
               "200 graphs, " + std::to_string(profiles) + " profiles match walk enumeration in " + fmt(secs) + " s");
}

Outcome reversal_duality() {
  std::size_t nodes = 0;
  for (std::uint64_t seed = 1000; seed < 1100; ++seed) {
    const auto g = aggregate(build_multigraph(small_random_graph(seed)));
    const auto r = reverse(g);
    for (NodeId v = 0; v < g.node_count; ++v) {
      auto mirrored = dispense_flow(r, v);
      mirrored.kind = FlowKind::Sink;
      if (!(sink_flow(g, v) == mirrored))
        return fail("graph " + std::to_string(seed) + " node " + std::to_string(v) + " differs");
      ++nodes;
    }
  }
  return pass("100 graphs, " + std::to_string(nodes) + " nodes identical field for field");
}

Outcome weight_and_time_units() {
  std::vector<std::string> bad;
  const auto single = aggregate(graph_of(2, {{0, 1, 100, 0}}));
  if (edge_weight(single, 0, 1) != 2.0) bad.push_back("single-edge W");
  const auto split = aggregate(graph_of(3, {{0, 1, 100, 0}, {0, 2, 300, 0}}));
  if (edge_weight(split, 0, 1) != 1.25) bad.push_back("split-sender W");
  const Eigen::Vector2d w1(1, 1), x1(0, 10);
  if (weighted_time_stats(w1, x1).mean != 5.0) bad.push_back("symmetric TF");
  const Eigen::Vector2d w2(3, 1), x2(0, 4);
  if (weighted_time_stats(w2, x2).mean != 1.0) bad.push_back("weighted TF");

  std::size_t datasets = 0;
  auto conserve = [&](const Dataset& d, const std::string& name) {
    ++datasets;
    if (!conserved(aggregate(build_multigraph(d)))) bad.push_back("conservation on " + name);
  };
  for (std::uint64_t seed = 0; seed < 200; ++seed) conserve(small_random_graph(seed), "graph " + std::to_string(seed));
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    conserve(fixture::random_dataset(2000, 20000, seed, 1'000'000), "random " + std::to_string(seed));
  conserve(economy(), "economy");
  if (!bad.empty()) return fail(bad.front());
  return pass("W=2.0, W=1.25, TF=5.0, TF=1.0 exact; sent = received on " + std::to_string(datasets) + " datasets");
}

Outcome graph_metric_oracles() {
  Rng rng(4040);
  for (int c = 0; c < 500; ++c) {
    const auto s = random_slice(rng, 15, 0.05 + 0.25 * uniform01(rng));
    const auto adj = oracle::undirected_matrix(s);
    const auto b = biconnected_components(s);
    if (b.articulation_points != oracle::articulation_points(adj))
      return fail("case " + std::to_string(c) + ": articulation points differ");
    if (b.components != oracle::blocks(adj)) return fail("case " + std::to_string(c) + ": block count differs");
  }
  for (int c = 0; c < 200; ++c) {
    const auto s = random_slice(rng, 50, 0.01 + 0.08 * uniform01(rng));
    const auto d = diameter(s);
    if (d.approximate || d.value != oracle::diameter(oracle::undirected_matrix(s)))
      return fail("diameter case " + std::to_string(c) + " differs");
  }
  return pass("500 AP/block cases (<= 15 nodes) and 200 diameter cases (<= 50 nodes) match");
}

std::string table_difference(const CommunityFeatureTable& a, const CommunityFeatureTable& b) {
  if (a.rows.size() != b.rows.size()) return "row count";
  const std::size_t cols = CommunityFeatures::names().size();
  std::vector<double> x(cols), y(cols);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto &p = a.rows[i], &q = b.rows[i];
    if (!(p.key == q.key) || p.member_count != q.member_count || p.edge_count != q.edge_count ||
        p.pair_count != q.pair_count || p.type_counts != q.type_counts || p.diam.value != q.diam.value ||
        p.diam.approximate != q.diam.approximate || p.bicon.components != q.bicon.components ||
        p.bicon.articulation_points != q.bicon.articulation_points)
      return "integer fields of row " + std::to_string(i);
    p.write_row(x);
    q.write_row(y);
    for (std::size_t c = 0; c < cols; ++c)
      if (!close(x[c], y[c], kParallelTol)) return CommunityFeatures::names()[c] + " of row " + std::to_string(i);
  }
  return {};
}

std::string flow_difference(const FlowTable& a, const FlowTable& b) {
  if (a.nodes != b.nodes) return "node list";
  for (const auto part : {&FlowTable::dispenser, &FlowTable::passthrough, &FlowTable::sink}) {
    const auto &x = a.*part, &y = b.*part;
    if (x.size() != y.size()) return "profile count";
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].node != y[i].node || x[i].kind != y[i].kind || x[i].per_hop.size() != y[i].per_hop.size())
        return "profile " + std::to_string(i);
      if (!close(x[i].passthrough_ratio, y[i].passthrough_ratio, kParallelTol)) return "ratio " + std::to_string(i);
      for (std::size_t h = 0; h < x[i].per_hop.size(); ++h) {
        const auto &p = x[i].per_hop[h], &q = y[i].per_hop[h];
        if (p.hop != q.hop || p.reached != q.reached || !close(p.sum, q.sum, kParallelTol) ||
            !close(p.max, q.max, kParallelTol) || !close(p.mean, q.mean, kParallelTol))
          return "profile " + std::to_string(i) + " hop " + std::to_string(h + 1);
      }
    }
  }
  return {};
}

Outcome parallel_invariance() {
  const auto d = fixture::random_dataset(6000, 40000, 55, 86400 * 30);
  const auto mg = build_multigraph(d);
  const auto ag = aggregate(mg);
  const auto types = classify_accounts(ag, 0.8, 0.1);
  const auto communities = fixture::random_communities(5000, 6000, 1, 60, 56);
  const auto nodes = all_nodes(ag.node_count);
  const FlowParams fp;

  const auto features1 = parallel_feature_map(communities, mg, types, {.workers = 1});
  const auto flows1 = compute_flow_table(ag, nodes, fp, 1);
  const auto temporal1 = compute_temporal_flow_table(mg, nodes, fp, 1);
  for (const std::size_t w : {2, 8}) {
    const auto tag = " at " + std::to_string(w) + " workers";
    if (auto diff = table_difference(features1, parallel_feature_map(communities, mg, types, {.workers = w}));
        !diff.empty())
      return fail("community features differ in " + diff + tag);
    if (auto diff = flow_difference(flows1, compute_flow_table(ag, nodes, fp, w)); !diff.empty())
      return fail("flow table differs in " + diff + tag);
    if (auto diff = flow_difference(temporal1, compute_temporal_flow_table(mg, nodes, fp, w)); !diff.empty())
      return fail("temporal flow table differs in " + diff + tag);
  }
  return pass(std::to_string(features1.rows.size()) + " communities and " + std::to_string(nodes.size()) +
              " node flow profiles identical for workers 1, 2, 8");
}

Outcome scaling_shape() {
  const auto t0 = clock_type::now();
  const auto d = fixture::random_dataset(20000, 200000, 66, 86400 * 30);
  const auto mg = build_multigraph(d);
  const auto types = classify_accounts(aggregate(mg), 0.8, 0.1);
  const auto communities = fixture::random_communities(50000, 20000, 2, 60, 67);
  auto timed = [&](std::size_t workers) {
    const auto t = clock_type::now();
    const auto table = parallel_feature_map(communities, mg, types, {.workers = workers});
    return std::pair{seconds_since(t), table.rows.size()};
  };
  const auto [one, rows] = timed(1);
  const auto [three, rows3] = timed(3);
  const double speedup = one / three;
  const double total = seconds_since(t0);
  const auto detail = std::to_string(rows) + " communities: 1 worker " + fmt(one) + " s, 3 workers " + fmt(three) +
                      " s, speedup " + fmt(speedup, 2) + "x (need >= " + fmt(kMinSpeedup, 1) + "x) on " +
                      std::to_string(std::thread::hardware_concurrency()) + " hardware thread(s); total " + fmt(total) +
                      " s";
  return check(rows >= 50000 && rows3 == rows && speedup >= kMinSpeedup && total < kScalingBudgetSeconds, detail);
}

Outcome end_to_end(const std::filesystem::path& scratch) {
  const auto t0 = clock_type::now();
  PipelineConfig cfg;
  cfg.dataset = write_csv(economy(), scratch / "economy.csv");
  cfg.cache_dir = scratch / "cache";
  cfg.workers = std::max(1u, std::thread::hardware_concurrency());
  Pipeline p(cfg);
  const auto f1 = p.train().report.values(&Metrics::f1);
  const double full = mean(f1);

  const auto rows = ablation_run(p.feature_matrix(), p.split(), cfg.groups, cfg.model, cfg.seeds, cfg.workers);
  std::vector<const AblationRow*> prefixes;
  for (std::size_t k = 1; k <= cfg.groups.size(); ++k)
    for (const auto& r : rows)
      if (r.groups.size() == k && std::equal(r.groups.begin(), r.groups.end(), cfg.groups.begin()))
        prefixes.push_back(&r);
  bool direction = prefixes.size() == cfg.groups.size() && prefixes.size() >= 2 &&
                   mean(prefixes[0]->f1) < mean(prefixes[1]->f1);
  std::string ablation;
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    ablation += (i ? ", " : "") + prefixes[i]->label + " " + fmt(100 * mean(prefixes[i]->f1), 2);
    if (i >= 2 && mean(prefixes[i]->f1) < mean(prefixes[i - 1]->f1) - kAblationSlack) direction = false;
  }
  const double secs = seconds_since(t0);
  return check(full >= kMinF1 && direction && secs < kEndToEndBudgetSeconds,
               std::to_string(economy().size()) + " transactions, illicit rate " +
                   fmt(100 * economy().meta.illicit_rate, 2) + "%: F1 " + format_mean_std(f1) + " (need >= " +
                   fmt(100 * kMinF1, 0) + "); ablation [" + ablation + "]; " + fmt(secs, 1) + " s");
}

Outcome split_protocol(const std::filesystem::path& scratch) {
  std::vector<std::string> bad;
  // Transaction mode: pure index cut.
  const auto ten = fixture::random_dataset(5, 10, 1);
  const auto s = temporal_split(ten, {SplitMode::TransactionTemporal, 0.6, 0.2});
  if (s.train != std::vector<std::size_t>{0, 1, 2, 3, 4, 5} || s.valid != std::vector<std::size_t>{6, 7} ||
      s.test != std::vector<std::size_t>{8, 9})
    bad.push_back("transaction cut on 10 rows");
  for (std::size_t n = 5; n < 1000; ++n) {
    const auto [a, b] = split_cut_points(n, 0.6, 0.2);
    if (a != n * 60 / 100 || b != n * 80 / 100) bad.push_back("cut points at n=" + std::to_string(n));
  }

  // Account mode: 20 accounts first active at t = 1..20 -> 13 / 3 / 4.
  std::vector<Transaction> rows;
  IdMap ids;
  for (int i = 0; i < 20; ++i) {
    const auto v = ids.intern("acct" + std::to_string(100 + i));
    rows.push_back({i, 20 - i, v, v, 1.0, 0});
  }
  const auto accounts = make_dataset(rows, ids);
  const auto as = account_temporal_split(accounts, {SplitMode::AccountTemporal, 0.65, 0.15});
  auto names = [&](const std::vector<NodeId>& v) {
    std::vector<std::string> out;
    for (auto id : v) out.push_back(accounts.ids.name(id));
    std::sort(out.begin(), out.end());
    return out;
  };
  auto expect = [&](int from, int to) {
    std::vector<std::string> out;
    for (int i = from; i < to; ++i) out.push_back("acct" + std::to_string(100 + 19 - i));
    std::sort(out.begin(), out.end());
    return out;
  };
  if (names(as.train_accounts) != expect(0, 13) || names(as.valid_accounts) != expect(13, 16) ||
      names(as.test_accounts) != expect(16, 20))
    bad.push_back("account cut on 20 accounts");

  // Leakage audit on a small economy in account mode.
  const auto d = fixture::synthetic_economy({.transactions = 3000, .accounts = 400, .illicit_rate = 0.02});
  PipelineConfig cfg;
  cfg.dataset = write_csv(d, scratch / "audit.csv");
  cfg.split = {SplitMode::AccountTemporal, 0.65, 0.15};
  cfg.workers = 1;
  const auto audit = leakage_audit(d, make_split(d, cfg.split), [&](const Dataset& x) { return build_feature_matrix(x, cfg); });
  if (!audit.passed) bad.push_back("leakage audit: " + audit.detail);
  if (!bad.empty()) return fail(bad.front());
  return pass("6/2/2 and 13/3/4 cuts exact, floor cut points for n < 1000, leakage audit clean (" +
              std::to_string(audit.changed_cells) + " changed cells, " + std::to_string(audit.endpoint_violations) +
              " endpoint violations)");
}

Outcome extended_dataset(const std::filesystem::path& scratch) {
  const char* path = std::getenv("TXG_AML_HI_SMALL");
  if (!path || !*path) return {Outcome::Skip, "set TXG_AML_HI_SMALL to the IBM AML HI-Small transactions CSV"};
  const auto t0 = clock_type::now();
  PipelineConfig cfg;
  cfg.dataset = path;
  cfg.schema = Schema::IbmAml;
  cfg.cache_dir = scratch / "hi-small-cache";
  cfg.workers = std::max(1u, std::thread::hardware_concurrency());
  Pipeline p(cfg);
  const auto f1 = p.train().report.values(&Metrics::f1);
  const double m = mean(f1);
  return check(std::abs(m - kReferenceF1HiSmall) <= kExtendedBand,
               "F1 " + format_mean_std(f1) + " vs 78.90 +/- 5; " + fmt(seconds_since(t0), 1) + " s");
}

Outcome determinism(const std::filesystem::path& scratch) {
  const auto d = fixture::synthetic_economy({.transactions = 8000, .accounts = 800, .illicit_rate = 0.01, .seed = 3});
  const auto data = write_csv(d, scratch / "det.csv");
  const auto ini = scratch / "det.ini";
  std::ofstream(ini) << "[data]\npath = " << data.string() << "\n[model]\nrounds = 100\nearly_stopping = 20\n"
                     << "[run]\nworkers = 1\nseeds = 1,2,3,4,5\n";
  std::vector<std::string> predictions;
  nlohmann::json report;
  for (const char* run : {"a", "b"}) {
    const auto out = scratch / (std::string("predictions-") + run + ".csv");
    const auto rep = scratch / (std::string("report-") + run + ".json");
    const std::string cmd = std::string(TXG_BINARY) + " --config " + ini.string() + " --cache-dir " +
                            (scratch / (std::string("cache-") + run)).string() + " --report " + rep.string() +
                            " run-all --predictions " + out.string() + " > /dev/null";
    if (std::system(cmd.c_str()) != 0) return fail("run-all " + std::string(run) + " exited non-zero");
    const auto bytes = io::read_file(out);
    predictions.emplace_back(bytes.begin(), bytes.end());
    report = nlohmann::json::parse(std::ifstream(rep));
  }
  if (predictions[0] != predictions[1]) return fail("prediction files differ");
  if (predictions[0].find('\n') == predictions[0].size() - 1) return fail("prediction file has no rows");

  const auto& eval = report["evaluation"];
  std::vector<double> f1;
  for (const auto& s : eval["seeds"]) f1.push_back(s["f1"].get<double>());
  const auto summary = eval["summary"]["f1"].get<std::string>();
  static const std::regex shape(R"(^\d+\.\d{2} ± \d+\.\d{2}$)");
  const bool formatted = f1.size() == 5 && std::regex_match(summary, shape) && summary == format_mean_std(f1);
  return check(formatted, "two run-all invocations wrote identical predictions (" +
                              std::to_string(predictions[0].size()) + " bytes); five-seed F1 \"" + summary + "\"");
}

}  // namespace

int main() {
  const auto scratch = fixture::scratch_dir("acceptance");
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"flow features match walk enumeration", flow_oracle},
      {"sink flow is dispense flow on the reversed graph", reversal_duality},
      {"edge weight and time feature units, conservation", weight_and_time_units},
      {"articulation points, blocks and diameter oracles", graph_metric_oracles},
      {"worker-count invariance", parallel_invariance},
      {"subgraph feature scaling 1 -> 3 workers", scaling_shape},
      {"end-to-end synthetic economy and ablation", [&] { return end_to_end(scratch); }},
      {"split protocol and leakage audit", [&] { return split_protocol(scratch); }},
      {"extended run on HI-Small", [&] { return extended_dataset(scratch); }},
      {"run-all determinism and mean +/- std format", [&] { return determinism(scratch); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    static constexpr const char* label[] = {"PASS", "FAIL", "SKIP"};
    std::cout << "criterion " << (i + 1) << ' ' << label[o.status] << "  " << criteria[i].first << ": " << o.detail
              << std::endl;
    failures += o.status == Outcome::Fail;
  }
  std::error_code ec;
  std::filesystem::remove_all(scratch, ec);
  return failures == 0 ? 0 : 1;
}
